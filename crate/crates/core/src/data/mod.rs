//! Recordings, synthetic BOLD generation, windowing and the tensor container.

pub mod hrf;
pub mod io;
pub mod stimulus;
pub mod synth;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::STIMULUS_PIXELS;
use crate::tensor::Tensor;
use crate::util::write_atomic;

pub use hrf::{hrf, hrf_kernel};
pub use io::{load_tensors, save_tensors, TensorMap};
pub use stimulus::{gen_stimulus, Stimulus, StimulusKind};
pub use synth::{generate, synth_bold, weight_map, MapMode, SyntheticSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingMeta {
    pub seed: u64,
    pub noise_std: f64,
    pub mem_coef: f64,
    pub tr_seconds: f64,
    pub label_lag: usize,
    pub n_classes: usize,
    pub generator: String,
}

/// A `[P × T]` signal with per-frame targets.
///
/// A full recording has `tp == T` and `offset == 0`; windows produced by
/// [`window_slice`] remember where they started in their source.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub signal: Tensor,
    pub voxel_coords: Tensor,
    /// Class active at each frame, already shifted by `meta.label_lag`.
    pub classes: Option<Vec<usize>>,
    /// Stimulus shown at each frame, `[T × 100]`, not shifted.
    pub stimuli: Option<Tensor>,
    /// Lag-shifted stimulus for the last frame; set on windows only.
    pub pixel_target: Option<Vec<f64>>,
    pub tp: usize,
    pub offset: usize,
    pub meta: RecordingMeta,
}

impl Recording {
    pub fn new(
        signal: Tensor,
        voxel_coords: Tensor,
        classes: Option<Vec<usize>>,
        stimuli: Option<Tensor>,
        meta: RecordingMeta,
    ) -> Result<Self> {
        let (p, t) = signal.dims2()?;
        if !signal.is_finite() {
            return Err(Error::usage("recording signal is not finite"));
        }
        if voxel_coords.dims2()?.0 != p {
            return Err(Error::dim(format!(
                "{} voxel coordinates for {p} voxels",
                voxel_coords.shape()[0]
            )));
        }
        if let Some(c) = &classes {
            if c.len() != t {
                return Err(Error::dim(format!("{} labels for {t} frames", c.len())));
            }
        }
        if let Some(s) = &stimuli {
            if s.shape() != [t, STIMULUS_PIXELS] {
                return Err(Error::dim(format!("stimuli {:?}, expected [{t}, {STIMULUS_PIXELS}]", s.shape())));
            }
        }
        Ok(Recording {
            signal,
            voxel_coords,
            classes,
            stimuli,
            pixel_target: None,
            tp: t,
            offset: 0,
            meta,
        })
    }

    pub fn n_voxels(&self) -> usize {
        self.signal.shape()[0]
    }

    pub fn n_frames(&self) -> usize {
        self.signal.shape()[1]
    }

    /// Class at the last frame.
    pub fn label(&self) -> Option<usize> {
        self.classes.as_ref().and_then(|c| c.last().copied())
    }

    /// Stimulus category (0 random, 1 geometric) of the label.
    pub fn kind(&self) -> Option<StimulusKind> {
        self.label().map(StimulusKind::from_label)
    }

    /// Keeps only the listed voxels, in the given order.
    pub fn select_voxels(&self, idx: &[usize]) -> Result<Recording> {
        Ok(Recording {
            signal: self.signal.select_rows(idx)?,
            voxel_coords: self.voxel_coords.select_rows(idx)?,
            ..self.clone()
        })
    }
}

/// Windows at offsets `0, stride, 2·stride, …`, each labelled by its last frame.
pub fn window_slice(rec: &Recording, tp: usize, stride: usize) -> Result<Vec<Recording>> {
    let total = rec.n_frames();
    if tp == 0 || tp > total {
        return Err(Error::usage(format!("window length {tp} not in 1..={total}")));
    }
    if stride == 0 {
        return Err(Error::usage("window stride must be at least 1"));
    }
    let count = (total - tp) / stride + 1;
    (0..count)
        .map(|i| {
            let start = i * stride;
            let end = start + tp;
            let last = end - 1;
            let stimuli = rec
                .stimuli
                .as_ref()
                .map(|s| s.select_rows(&(start..end).collect::<Vec<_>>()))
                .transpose()?;
            let pixel_target = rec
                .stimuli
                .as_ref()
                .map(|s| s.row_slice(last.saturating_sub(rec.meta.label_lag)).to_vec());
            Ok(Recording {
                signal: rec.signal.slice_cols(start, end)?,
                voxel_coords: rec.voxel_coords.clone(),
                classes: rec.classes.as_ref().map(|c| c[start..end].to_vec()),
                stimuli,
                pixel_target,
                tp,
                offset: rec.offset + start,
                meta: rec.meta.clone(),
            })
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct DatasetSidecar {
    meta: RecordingMeta,
    has_labels: bool,
    has_stimuli: bool,
}

/// Writes a recording as a tensor container (`signal`, `coords`, `labels`,
/// `stimuli`) and a `.json` sidecar with its metadata.
pub fn save_dataset(path: &Path, rec: &Recording) -> Result<()> {
    let mut map = TensorMap::new();
    map.insert("signal".into(), rec.signal.clone());
    map.insert("coords".into(), rec.voxel_coords.clone());
    if let Some(c) = &rec.classes {
        map.insert(
            "labels".into(),
            Tensor::new(vec![c.len()], c.iter().map(|&x| x as f64).collect())?,
        );
    }
    if let Some(s) = &rec.stimuli {
        map.insert("stimuli".into(), s.clone());
    }
    save_tensors(path, &map)?;
    let sidecar = DatasetSidecar {
        meta: rec.meta.clone(),
        has_labels: rec.classes.is_some(),
        has_stimuli: rec.stimuli.is_some(),
    };
    write_atomic(&path.with_extension("json"), serde_json::to_string_pretty(&sidecar)?.as_bytes())
}

pub fn load_dataset(path: &Path) -> Result<Recording> {
    let mut map = load_tensors(path)?;
    let sidecar: DatasetSidecar = serde_json::from_slice(&std::fs::read(path.with_extension("json"))?)?;
    let mut take = |name: &str| {
        map.remove(name)
            .ok_or_else(|| Error::Malformed(format!("dataset has no `{name}` tensor")))
    };
    let signal = take("signal")?;
    let coords = take("coords")?;
    let classes = if sidecar.has_labels {
        let t = take("labels")?;
        let labels = t
            .data()
            .iter()
            .map(|&x| {
                if x >= 0.0 && x.fract() == 0.0 {
                    Ok(x as usize)
                } else {
                    Err(Error::Malformed(format!("label {x} is not a class id")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Some(labels)
    } else {
        None
    };
    let stimuli = if sidecar.has_stimuli { Some(take("stimuli")?) } else { None };
    Recording::new(signal, coords, classes, stimuli, sidecar.meta)
}
