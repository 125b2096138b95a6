use std::path::{Component, Path, PathBuf};

use nio_core::config::{parse_config, parse_config_str, RunConfig};
use nio_core::data::{generate, save_dataset, window_slice};
use nio_core::exec::Exec;
use nio_core::latent::{
    embed_2d, knn_eval, latent_embeddings, raw_embeddings, welch_ttest, write_embedding_csv, KnnResult,
};
use nio_core::model::{load_checkpoint, save_checkpoint, CheckpointMeta, ModelParams};
use nio_core::train::{
    evaluate, make_samples, run_experiment, split_windows, train as fit, DatasetSource, SignalScale,
};
use nio_core::util::{derive_seed, write_atomic};
use serde_json::json;

use crate::{Cell, Common, Failure};

const DEFAULT_CHECKPOINT: &str = "model.niot";

fn load(common: &Common) -> Result<RunConfig, Failure> {
    let mut run = match &common.config {
        Some(path) => {
            if !path.is_file() {
                return Err(Failure::Usage(format!("config {} does not exist", path.display())));
            }
            parse_config(path)?
        }
        None => parse_config_str("{}", Path::new("."))?,
    };
    if let Some(dir) = &common.out_dir {
        run.output_dir = dir.clone();
    }
    run.write_resolved()?;
    Ok(run)
}

fn cell_of(run: &RunConfig, cell: &Cell) -> (usize, u64) {
    let exp = &run.experiment;
    (cell.tp.unwrap_or(exp.tp_values[0]), cell.seed.unwrap_or(exp.seeds[0]))
}

/// A file name inside the output directory; anything that could escape it
/// is refused.
fn inside(dir: &Path, rel: &Path) -> Result<PathBuf, Failure> {
    if rel.as_os_str().is_empty() || !rel.components().all(|c| matches!(c, Component::Normal(_))) {
        return Err(Failure::Usage(format!(
            "{} must be a relative path inside the output directory",
            rel.display()
        )));
    }
    Ok(dir.join(rel))
}

fn checkpoint_path(run: &RunConfig) -> Result<PathBuf, Failure> {
    let rel = run.checkpoint.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_CHECKPOINT));
    inside(&run.output_dir, &rel)
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    Ok(write_atomic(path, bytes)?)
}

pub fn synth(common: &Common, seed: Option<u64>, name: &str) -> Result<(), Failure> {
    let run = load(common)?;
    let DatasetSource::Synthetic(spec) = &run.experiment.dataset else {
        return Err(Failure::Usage("synth needs a synthetic dataset in the config".into()));
    };
    let mut spec = spec.clone();
    if let Some(s) = seed {
        spec.seed = s;
    }
    let path = inside(&run.output_dir, Path::new(name))?;
    let rec = generate(&spec)?;
    save_dataset(&path, &rec)?;
    eprintln!(
        "synth: {} voxels × {} frames → {}",
        rec.n_voxels(),
        rec.n_frames(),
        path.display()
    );
    Ok(())
}

/// Trains on the train split of a cell; returns the parameters and the
/// standardization fitted on the training windows.
fn train_cell(run: &RunConfig, tp: usize, seed: u64) -> Result<(ModelParams, SignalScale, Vec<f64>), Failure> {
    let exp = &run.experiment;
    let windows = split_windows(exp, tp, seed)?;
    let scale = SignalScale::fit(windows.train.iter().map(|w| &w.signal));
    let samples = make_samples(&windows.train, exp.task, &scale)?;
    let mut params = ModelParams::init(&exp.model, derive_seed(seed, 12))?;
    let log = fit(&mut params, &samples, &windows.grid, &exp.solver, &exp.train_config(seed), Exec::default())?;
    if log.diverged > 0 {
        eprintln!("train: skipped {} diverged samples", log.diverged);
    }
    Ok((params, scale, log.epoch_losses))
}

pub fn train(common: &Common, cell: &Cell) -> Result<(), Failure> {
    let run = load(common)?;
    let (tp, seed) = cell_of(&run, cell);
    let ckpt = checkpoint_path(&run)?;
    eprintln!("train: tp {tp}, seed {seed}, {} epochs", run.experiment.epochs);
    let (params, scale, losses) = train_cell(&run, tp, seed)?;
    let meta = CheckpointMeta {
        model: run.experiment.model.clone(),
        solver: run.experiment.solver,
        scale,
    };
    std::fs::create_dir_all(&run.output_dir).map_err(|e| Failure::Runtime(e.to_string()))?;
    save_checkpoint(&ckpt, &params, &meta)?;
    let mut csv = String::from("epoch,loss\n");
    for (i, l) in losses.iter().enumerate() {
        csv.push_str(&format!("{},{}\n", i + 1, l));
    }
    write(&run.output_dir.join("loss.csv"), csv.as_bytes())?;
    eprintln!(
        "train: final loss {} → {}",
        losses.last().copied().unwrap_or(f64::NAN),
        ckpt.display()
    );
    Ok(())
}

fn read_checkpoint(run: &RunConfig, explicit: Option<PathBuf>) -> Result<(ModelParams, CheckpointMeta), Failure> {
    let path = match explicit {
        Some(p) => p,
        None => checkpoint_path(run)?,
    };
    if !path.is_file() {
        return Err(Failure::Usage(format!("checkpoint {} does not exist", path.display())));
    }
    Ok(load_checkpoint(&path)?)
}

pub fn eval(common: &Common, cell: &Cell, checkpoint: Option<PathBuf>) -> Result<(), Failure> {
    let run = load(common)?;
    let (tp, seed) = cell_of(&run, cell);
    let (params, meta) = read_checkpoint(&run, checkpoint)?;
    let mut exp = run.experiment.clone();
    exp.model = meta.model.clone();
    let windows = split_windows(&exp, tp, seed)?;
    let samples = make_samples(&windows.test, exp.task, &meta.scale)?;
    let ev = evaluate(
        &params,
        &samples,
        &windows.grid,
        &meta.solver,
        exp.task,
        meta.model.n_classes,
        Exec::default(),
    )?;
    let mut csv = String::from("metric,value\n");
    for (m, v) in &ev.metrics {
        csv.push_str(&format!("{m},{v}\n"));
    }
    write(&run.output_dir.join("metrics.csv"), csv.as_bytes())?;
    let metrics: serde_json::Map<String, serde_json::Value> =
        ev.metrics.iter().map(|(m, v)| (m.clone(), json!(v))).collect();
    let report = json!({
        "task": exp.task,
        "tp": tp,
        "seed": seed,
        "n_test": samples.len(),
        "metrics": metrics,
        "diverged": ev.diverged,
        "nonconverged": ev.nonconverged,
        "mean_iters": ev.mean_iters,
        "failed": ev.failed,
    });
    write(
        &run.output_dir.join("metrics.json"),
        (serde_json::to_string_pretty(&report).map_err(|e| Failure::Runtime(e.to_string()))? + "\n").as_bytes(),
    )?;
    if ev.failed {
        return Err(Failure::Runtime(format!(
            "solver diverged on {} of {} test windows",
            ev.diverged,
            samples.len()
        )));
    }
    eprintln!("eval: {} test windows → {}", samples.len(), run.output_dir.display());
    Ok(())
}

pub fn sweep(common: &Common) -> Result<(), Failure> {
    let run = load(common)?;
    let exp = &run.experiment;
    eprintln!(
        "sweep: {} cells ({} tp × {} seeds) on {} threads",
        exp.tp_values.len() * exp.seeds.len(),
        exp.tp_values.len(),
        exp.seeds.len(),
        nio_core::exec::current_threads()
    );
    let report = run_experiment(exp)?;
    report.write_to(&run.output_dir)?;
    let failed = report.cells.iter().filter(|c| c.failed).count();
    if failed > 0 {
        eprintln!("sweep: {failed} cells failed (solver divergence); see report.json");
    }
    eprintln!("sweep: wrote {}", run.output_dir.display());
    Ok(())
}

fn knn_json(r: &KnnResult) -> serde_json::Value {
    json!({"mean_acc": r.mean_acc, "std_acc": r.std_acc, "per_split": r.per_split})
}

pub fn embed(
    common: &Common,
    cell: &Cell,
    checkpoint: Option<PathBuf>,
    k: usize,
    splits: usize,
    test_frac: f64,
) -> Result<(), Failure> {
    let run = load(common)?;
    let (tp, seed) = cell_of(&run, cell);
    let exp = &run.experiment;
    let (params, model, solver, scale) = match checkpoint {
        Some(path) => {
            let (p, meta) = read_checkpoint(&run, Some(path))?;
            (p, meta.model, meta.solver, meta.scale)
        }
        None => {
            eprintln!("embed: no checkpoint given, training tp {tp}, seed {seed}");
            let (p, s, _) = train_cell(&run, tp, seed)?;
            (p, exp.model.clone(), exp.solver, s)
        }
    };
    let mut rec = exp.dataset.load(seed)?;
    if let Some(n) = exp.roi_voxels {
        rec = rec.select_voxels(&(0..n.min(rec.n_voxels())).collect::<Vec<_>>())?;
    }
    let windows = window_slice(&rec, tp, exp.stride)?;
    let grid = nio_core::train::grid_for(&rec, tp, &model)?;
    let raw = raw_embeddings(&windows)?;
    let latent = latent_embeddings(&params, &windows, &grid, &solver, &scale, Exec::default())?;
    let raw_knn = knn_eval(&raw, k, splits, test_frac, seed)?;
    let latent_knn = knn_eval(&latent, k, splits, test_frac, seed)?;
    let welch = match welch_ttest(&latent_knn.per_split, &raw_knn.per_split) {
        Ok(w) => json!({"t": w.t, "dof": w.dof, "p_two_sided": w.p_two_sided}),
        Err(_) => serde_json::Value::Null,
    };
    let (raw_xy, latent_xy) = (embed_2d(&raw)?, embed_2d(&latent)?);
    std::fs::create_dir_all(&run.output_dir).map_err(|e| Failure::Runtime(e.to_string()))?;
    write_embedding_csv(&run.output_dir.join("embedding.csv"), &[(&raw, &raw_xy), (&latent, &latent_xy)])?;
    let report = json!({
        "tp": tp,
        "seed": seed,
        "k": k,
        "n_splits": splits,
        "test_frac": test_frac,
        "n_points": raw.len(),
        "raw_data": knn_json(&raw_knn),
        "model_latent": knn_json(&latent_knn),
        "welch_latent_vs_raw": welch,
    });
    write(
        &run.output_dir.join("knn.json"),
        (serde_json::to_string_pretty(&report).map_err(|e| Failure::Runtime(e.to_string()))? + "\n").as_bytes(),
    )?;
    eprintln!(
        "embed: k-NN accuracy raw {:.4}, latent {:.4} → {}",
        raw_knn.mean_acc,
        latent_knn.mean_acc,
        run.output_dir.display()
    );
    Ok(())
}
