//! Strict JSON run configuration.
//!
//! A run config is an [`ExperimentConfig`] document with two extra top-level
//! keys, `output_dir` and `checkpoint`. Unknown keys and type mismatches are
//! reported with the JSON pointer of the offending value.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::train::{DatasetSource, ExperimentConfig};
use crate::util::write_atomic;

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub experiment: ExperimentConfig,
}

fn config_err(pointer: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        pointer: pointer.into(),
        message: message.into(),
    }
}

/// Field named in a serde message such as ``unknown field `x`, expected …``.
fn quoted_field(msg: &str, prefix: &str) -> Option<String> {
    let rest = &msg[msg.find(prefix)? + prefix.len()..];
    let rest = rest.strip_prefix('`')?;
    Some(rest[..rest.find('`')?].to_string())
}

fn escape_segment(s: &str) -> String {
    s.replace('~', "~0").replace('/', "~1")
}

fn pointer_of(path: &serde_path_to_error::Path, msg: &str) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{}", escape_segment(key))),
            Segment::Enum { variant } => out.push_str(&format!("/{}", escape_segment(variant))),
            Segment::Unknown => {}
        }
    }
    for prefix in ["unknown field ", "missing field ", "unknown variant "] {
        if let Some(f) = quoted_field(msg, prefix) {
            if !out.ends_with(&format!("/{}", escape_segment(&f))) {
                out.push('/');
                out.push_str(&escape_segment(&f));
            }
            break;
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

fn take_path(obj: &mut Map<String, Value>, key: &str) -> Result<Option<PathBuf>> {
    match obj.remove(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(PathBuf::from(s))),
        Some(other) => Err(config_err(format!("/{key}"), format!("expected a path string, got {other}"))),
    }
}

/// Parses a run config from JSON text. Relative dataset paths are resolved
/// against `base_dir`.
pub fn parse_config_str(text: &str, base_dir: &Path) -> Result<RunConfig> {
    let value: Value = serde_json::from_str(text).map_err(|e| config_err("/", e.to_string()))?;
    let Value::Object(mut obj) = value else {
        return Err(config_err("/", "config must be a JSON object"));
    };
    let output_dir = take_path(&mut obj, "output_dir")?.unwrap_or_else(|| PathBuf::from("out"));
    let checkpoint = take_path(&mut obj, "checkpoint")?;
    let mut experiment: ExperimentConfig = serde_path_to_error::deserialize(Value::Object(obj)).map_err(|e| {
        let msg = e.inner().to_string();
        config_err(pointer_of(e.path(), &msg), msg)
    })?;
    if let DatasetSource::File { path } = &mut experiment.dataset {
        if path.is_relative() {
            *path = base_dir.join(&*path);
        }
        if !path.exists() {
            return Err(config_err("/dataset/file/path", format!("{} does not exist", path.display())));
        }
    }
    experiment.validate().map_err(|e| match e {
        Error::Usage(m) => config_err("/", m),
        other => other,
    })?;
    Ok(RunConfig {
        output_dir,
        checkpoint,
        experiment,
    })
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_config_str(&text, base)
}

impl RunConfig {
    /// The fully resolved document, every default filled in.
    pub fn resolved_json(&self) -> Result<Value> {
        let mut v = serde_json::to_value(&self.experiment)?;
        let obj = v.as_object_mut().expect("config serializes to an object");
        obj.insert("output_dir".into(), Value::String(self.output_dir.display().to_string()));
        obj.insert(
            "checkpoint".into(),
            self.checkpoint
                .as_ref()
                .map_or(Value::Null, |p| Value::String(p.display().to_string())),
        );
        Ok(v)
    }

    /// Writes `resolved_config.json` into the output directory.
    pub fn write_resolved(&self) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.output_dir)?;
        let path = self.output_dir.join(RESOLVED_CONFIG_FILE);
        let text = serde_json::to_string_pretty(&self.resolved_json()?)? + "\n";
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }
}
