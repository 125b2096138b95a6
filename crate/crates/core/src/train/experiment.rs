//! Temporal-window sweeps: one trained model per `(tp, seed)` cell.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fit::{make_samples, predict, train, Prediction, Sample, SignalScale, Target, Task, TrainConfig};
use super::metrics::{macro_metrics, regression_metrics};
use crate::data::{generate, load_dataset, window_slice, Recording, SyntheticSpec};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::fixed_point::SolverConfig;
use crate::model::{ModelConfig, ModelParams};
use crate::quadrature::{make_grid, CoordGrid, SpaceLayout};
use crate::tensor::Tensor;
use crate::util::{derive_seed, mean, std_unbiased, write_atomic};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Generated per seed; the experiment seed is mixed into `spec.seed`.
    Synthetic(SyntheticSpec),
    /// A saved recording, shared by every seed.
    File { path: PathBuf },
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic(SyntheticSpec::default())
    }
}

impl DatasetSource {
    pub fn load(&self, seed: u64) -> Result<Recording> {
        match self {
            DatasetSource::Synthetic(spec) => generate(&SyntheticSpec {
                seed: derive_seed(spec.seed, seed),
                ..spec.clone()
            }),
            DatasetSource::File { path } => load_dataset(path),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub tp_values: Vec<usize>,
    pub seeds: Vec<u64>,
    pub stride: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub test_frac: f64,
    /// Keep only the first `n` voxels of every recording.
    pub roi_voxels: Option<usize>,
    pub dataset: DatasetSource,
    pub solver: SolverConfig,
    pub model: ModelConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: Task::DecodeClassify,
            tp_values: vec![1, 10, 20],
            seeds: vec![0, 1, 2],
            stride: 2,
            epochs: 50,
            batch_size: 16,
            learning_rate: 1e-3,
            test_frac: 0.2,
            roi_voxels: None,
            dataset: DatasetSource::default(),
            solver: SolverConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tp_values.is_empty() || self.seeds.is_empty() {
            return Err(Error::usage("tp_values and seeds must be non-empty"));
        }
        if self.tp_values.contains(&0) {
            return Err(Error::usage("tp values must be at least 1"));
        }
        if self.stride == 0 || self.batch_size == 0 {
            return Err(Error::usage("stride and batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::usage("learning_rate must be positive"));
        }
        if !(self.test_frac > 0.0 && self.test_frac < 1.0) {
            return Err(Error::usage("test_frac must lie in (0, 1)"));
        }
        if self.roi_voxels == Some(0) {
            return Err(Error::usage("roi_voxels must be positive"));
        }
        if let DatasetSource::Synthetic(spec) = &self.dataset {
            spec.validate()?;
            if self.task == Task::DecodeClassify && spec.n_classes > self.model.n_classes {
                return Err(Error::usage(format!(
                    "dataset has {} classes but the model only {}",
                    spec.n_classes, self.model.n_classes
                )));
            }
        }
        self.solver.validate()?;
        self.model.validate()
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed: derive_seed(seed, 13),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub tp: usize,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub tp: usize,
    pub metric: String,
    /// `None` when every seed of this window length failed.
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

/// Diagnostics for one `(tp, seed)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellLog {
    pub tp: usize,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub final_train_loss: f64,
    pub train_diverged: usize,
    pub test_diverged: usize,
    pub test_nonconverged: usize,
    pub mean_iters: f64,
    /// More than half of the test set diverged; no metric rows were emitted.
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub task: Task,
    pub rows: Vec<ReportRow>,
    pub aggregates: Vec<Aggregate>,
    pub cells: Vec<CellLog>,
}

/// Seeded 80/20-style split of `0..n` into (train, test) indices.
pub fn split_indices(n: usize, test_frac: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::usage(format!("need at least 2 windows to split, got {n}")));
    }
    let n_test = (((n as f64) * test_frac).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = idx.split_off(n - n_test);
    Ok((idx, test))
}

/// Grid for windows of `rec` with `tp` frames, using the recording's voxel
/// coordinates.
pub fn grid_for(rec: &Recording, tp: usize, model: &ModelConfig) -> Result<CoordGrid> {
    let (p, d_s) = rec.voxel_coords.dims2()?;
    make_grid(p, d_s, tp, SpaceLayout::Provided, Some(&rec.voxel_coords), model.time_rule)
}

/// Everything needed to train and evaluate one cell.
pub struct CellData {
    pub grid: CoordGrid,
    pub scale: SignalScale,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Train and test windows of one cell, before standardization.
pub struct CellWindows {
    pub grid: CoordGrid,
    pub train: Vec<Recording>,
    pub test: Vec<Recording>,
}

/// Loads the recording for `seed`, applies the ROI, slices windows of `tp`
/// frames and splits them.
pub fn split_windows(cfg: &ExperimentConfig, tp: usize, seed: u64) -> Result<CellWindows> {
    let mut rec = cfg.dataset.load(seed)?;
    if let Some(n) = cfg.roi_voxels {
        if n > rec.n_voxels() {
            return Err(Error::usage(format!("roi_voxels {n} exceeds {} voxels", rec.n_voxels())));
        }
        rec = rec.select_voxels(&(0..n).collect::<Vec<_>>())?;
    }
    let windows = window_slice(&rec, tp, cfg.stride)?;
    let (train_idx, test_idx) = split_indices(windows.len(), cfg.test_frac, derive_seed(seed, 11))?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| windows[i].clone()).collect::<Vec<_>>();
    Ok(CellWindows {
        grid: grid_for(&rec, tp, &cfg.model)?,
        train: pick(&train_idx),
        test: pick(&test_idx),
    })
}

pub fn prepare_cell(cfg: &ExperimentConfig, tp: usize, seed: u64) -> Result<CellData> {
    let w = split_windows(cfg, tp, seed)?;
    let scale = SignalScale::fit(w.train.iter().map(|r| &r.signal));
    Ok(CellData {
        train: make_samples(&w.train, cfg.task, &scale)?,
        test: make_samples(&w.test, cfg.task, &scale)?,
        grid: w.grid,
        scale,
    })
}

pub struct Evaluation {
    /// `(metric, value)` in the task's metric order; empty if the cell failed.
    pub metrics: Vec<(String, f64)>,
    pub diverged: usize,
    pub nonconverged: usize,
    pub mean_iters: f64,
    pub failed: bool,
}

/// Scores `params` on `samples`. Diverged samples are left out of the
/// metrics; more than half diverging marks the evaluation as failed.
pub fn evaluate(
    params: &ModelParams,
    samples: &[Sample],
    grid: &CoordGrid,
    solver: &SolverConfig,
    task: Task,
    n_classes: usize,
    exec: Exec,
) -> Result<Evaluation> {
    let results = exec.map(samples, |s| predict(params, s, grid, solver));
    let (mut diverged, mut nonconverged, mut iters) = (0, 0, 0usize);
    let mut ok = Vec::with_capacity(samples.len());
    for (s, r) in samples.iter().zip(results) {
        match r {
            Ok((pred, stats)) => {
                iters += stats.iters_used;
                nonconverged += usize::from(!stats.converged);
                ok.push((s, pred));
            }
            Err(Error::Divergence { .. }) => diverged += 1,
            Err(e) => return Err(e),
        }
    }
    let mean_iters = if ok.is_empty() { 0.0 } else { iters as f64 / ok.len() as f64 };
    let failed = 2 * diverged > samples.len() || ok.is_empty();
    let metrics = if failed { Vec::new() } else { score(&ok, task, n_classes)? };
    Ok(Evaluation {
        metrics,
        diverged,
        nonconverged,
        mean_iters,
        failed,
    })
}

fn score(ok: &[(&Sample, Prediction)], task: Task, n_classes: usize) -> Result<Vec<(String, f64)>> {
    let named = |pairs: &[(&'static str, f64)]| pairs.iter().map(|(n, v)| (n.to_string(), *v)).collect();
    match task {
        Task::DecodeClassify => {
            let (mut preds, mut labels) = (Vec::new(), Vec::new());
            for (s, p) in ok {
                if let (Target::Class(l), Prediction::Class(c)) = (&s.target, p) {
                    labels.push(*l);
                    preds.push(*c);
                }
            }
            Ok(named(&macro_metrics(&preds, &labels, n_classes)?.named()))
        }
        Task::DecodePixels => {
            let (mut preds, mut labels) = (Vec::new(), Vec::new());
            for (s, p) in ok {
                if let (Target::Pixels(t), Prediction::Pixels(b)) = (&s.target, p) {
                    labels.extend(t.iter().map(|&x| usize::from(x > 0.5)));
                    preds.extend(b.iter().map(|&x| x as usize));
                }
            }
            Ok(named(&macro_metrics(&preds, &labels, 2)?.named()))
        }
        Task::Encode => {
            // concatenate the test windows along time, per voxel
            let mut pred_cols: Vec<&Tensor> = Vec::new();
            let mut target_cols: Vec<&Tensor> = Vec::new();
            for (s, p) in ok {
                if let Prediction::Bold(b) = p {
                    pred_cols.push(b);
                    target_cols.push(&s.signal);
                }
            }
            let m = regression_metrics(&hcat(&pred_cols)?, &hcat(&target_cols)?)?;
            Ok(named(&[("r2_mean", m.r2_mean), ("pearson_mean", m.pearson_mean)]))
        }
    }
}

fn hcat(parts: &[&Tensor]) -> Result<Tensor> {
    let rows = parts.first().ok_or_else(|| Error::usage("nothing to concatenate"))?.dims2()?.0;
    let total: usize = parts.iter().map(|t| t.shape()[1]).sum();
    let mut data = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for t in parts {
            data.extend_from_slice(t.row_slice(r));
        }
    }
    Tensor::new(vec![rows, total], data)
}

/// Trains and scores one cell; `exec` parallelizes within the batch.
pub fn run_cell(cfg: &ExperimentConfig, tp: usize, seed: u64, exec: Exec) -> Result<(Vec<ReportRow>, CellLog)> {
    let data = prepare_cell(cfg, tp, seed)?;
    let mut params = ModelParams::init(&cfg.model, derive_seed(seed, 12))?;
    let log = train(&mut params, &data.train, &data.grid, &cfg.solver, &cfg.train_config(seed), exec)?;
    let eval = evaluate(&params, &data.test, &data.grid, &cfg.solver, cfg.task, cfg.model.n_classes, exec)?;
    let rows = eval
        .metrics
        .iter()
        .map(|(m, v)| ReportRow {
            tp,
            seed,
            metric: m.clone(),
            value: *v,
        })
        .collect();
    let cell = CellLog {
        tp,
        seed,
        n_train: data.train.len(),
        n_test: data.test.len(),
        final_train_loss: log.epoch_losses.last().copied().unwrap_or(f64::NAN),
        train_diverged: log.diverged,
        test_diverged: eval.diverged,
        test_nonconverged: eval.nonconverged,
        mean_iters: eval.mean_iters,
        failed: eval.failed,
    };
    Ok((rows, cell))
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    run_experiment_with(cfg, Exec::default())
}

/// Runs every `(tp, seed)` cell. Output order is `tp_values` × `seeds`
/// regardless of execution order.
pub fn run_experiment_with(cfg: &ExperimentConfig, exec: Exec) -> Result<ExperimentReport> {
    cfg.validate()?;
    let cells: Vec<(usize, u64)> = cfg
        .tp_values
        .iter()
        .flat_map(|&tp| cfg.seeds.iter().map(move |&s| (tp, s)))
        .collect();
    let results = exec.try_map(&cells, |&(tp, seed)| run_cell(cfg, tp, seed, exec))?;
    let mut rows = Vec::new();
    let mut logs = Vec::new();
    for (r, l) in results {
        rows.extend(r);
        logs.push(l);
    }
    let mut aggregates = Vec::new();
    let mut seen_tp = Vec::new();
    for &tp in &cfg.tp_values {
        if seen_tp.contains(&tp) {
            continue;
        }
        seen_tp.push(tp);
        for &metric in cfg.task.metric_names() {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.tp == tp && r.metric == metric)
                .map(|r| r.value)
                .collect();
            let (mean, std) = if vals.is_empty() {
                (None, None)
            } else {
                (Some(mean(&vals)), Some(std_unbiased(&vals)))
            };
            aggregates.push(Aggregate {
                tp,
                metric: metric.to_string(),
                mean,
                std,
            });
        }
    }
    Ok(ExperimentReport {
        task: cfg.task,
        rows,
        aggregates,
        cells: logs,
    })
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NaN".to_string(), |v| v.to_string())
}

impl ExperimentReport {
    pub fn rows_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["tp", "seed", "metric", "value"]).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([r.tp.to_string(), r.seed.to_string(), r.metric.clone(), r.value.to_string()])
                .map_err(csv_err)?;
        }
        w.into_inner().map_err(|e| Error::Malformed(e.to_string()))
    }

    pub fn aggregates_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["tp", "metric", "mean", "std"]).map_err(csv_err)?;
        for a in &self.aggregates {
            w.write_record([a.tp.to_string(), a.metric.clone(), fmt_opt(a.mean), fmt_opt(a.std)])
                .map_err(csv_err)?;
        }
        w.into_inner().map_err(|e| Error::Malformed(e.to_string()))
    }

    /// Mean of `metric` at `tp`, if any seed succeeded.
    pub fn mean_of(&self, tp: usize, metric: &str) -> Option<f64> {
        self.aggregates
            .iter()
            .find(|a| a.tp == tp && a.metric == metric)
            .and_then(|a| a.mean)
    }

    /// Writes `report.csv`, `aggregates.csv` and `report.json` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_atomic(&dir.join("report.csv"), &self.rows_csv()?)?;
        write_atomic(&dir.join("aggregates.csv"), &self.aggregates_csv()?)?;
        write_atomic(&dir.join("report.json"), serde_json::to_string_pretty(self)?.as_bytes())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Malformed(e.to_string())
}
