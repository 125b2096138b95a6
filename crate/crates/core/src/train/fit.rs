//! Turning windows into training samples, minibatch Adam, and prediction.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamHyper, AdamState};
use super::loss::{bce_pixels, cross_entropy, mse};
use crate::data::Recording;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::fixed_point::SolverConfig;
use crate::model::{classify, forward_decode, forward_encode, DecodeTask, ModelParams, SolveStats};
use crate::quadrature::CoordGrid;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::util::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    DecodeClassify,
    DecodePixels,
    Encode,
}

impl Task {
    pub fn metric_names(self) -> &'static [&'static str] {
        match self {
            Task::DecodeClassify | Task::DecodePixels => &["accuracy", "precision", "recall", "f1"],
            Task::Encode => &["r2_mean", "pearson_mean"],
        }
    }
}

/// Affine standardization applied to every signal value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalScale {
    pub mean: f64,
    pub std: f64,
}

impl Default for SignalScale {
    fn default() -> Self {
        SignalScale { mean: 0.0, std: 1.0 }
    }
}

impl SignalScale {
    pub fn fit<'a>(signals: impl IntoIterator<Item = &'a Tensor>) -> SignalScale {
        let (mut n, mut s, mut ss) = (0usize, 0.0, 0.0);
        for t in signals {
            for &x in t.data() {
                n += 1;
                s += x;
                ss += x * x;
            }
        }
        if n == 0 {
            return SignalScale::default();
        }
        let mean = s / n as f64;
        let var = (ss / n as f64 - mean * mean).max(0.0);
        let std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        SignalScale { mean, std }
    }

    pub fn apply(&self, t: &Tensor) -> Tensor {
        let data = t.data().iter().map(|x| (x - self.mean) / self.std).collect();
        Tensor::new(t.shape().to_vec(), data).expect("same shape")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Class(usize),
    Pixels(Vec<f64>),
    /// Encoding: the stimulus frames are the input, the signal is the target.
    Bold { stimuli: Tensor },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Standardized `[P × TP]` window.
    pub signal: Tensor,
    pub target: Target,
}

/// Builds samples for `task` from windows, standardizing with `scale`.
pub fn make_samples(windows: &[Recording], task: Task, scale: &SignalScale) -> Result<Vec<Sample>> {
    windows
        .iter()
        .map(|w| {
            let target = match task {
                Task::DecodeClassify => Target::Class(
                    w.label().ok_or_else(|| Error::usage("classification needs labelled windows"))?,
                ),
                Task::DecodePixels => Target::Pixels(
                    w.pixel_target
                        .clone()
                        .ok_or_else(|| Error::usage("pixel decoding needs stimulus frames"))?,
                ),
                Task::Encode => Target::Bold {
                    stimuli: w
                        .stimuli
                        .clone()
                        .ok_or_else(|| Error::usage("encoding needs stimulus frames"))?,
                },
            };
            Ok(Sample {
                signal: scale.apply(&w.signal),
                target,
            })
        })
        .collect()
}

/// Scalar loss of one sample plus solver statistics.
pub fn sample_loss<'t>(
    params: &ModelParams<Var<'t>>,
    sample: &Sample,
    grid: &CoordGrid,
    solver: &SolverConfig,
) -> Result<(Var<'t>, SolveStats)> {
    match &sample.target {
        Target::Class(c) => {
            let out = forward_decode(params, &sample.signal, grid, solver, DecodeTask::Classify)?;
            Ok((cross_entropy(out.logits, *c)?, out.stats))
        }
        Target::Pixels(px) => {
            let out = forward_decode(params, &sample.signal, grid, solver, DecodeTask::Pixels)?;
            Ok((bce_pixels(out.logits, px)?, out.stats))
        }
        Target::Bold { stimuli } => {
            let out = forward_encode(params, stimuli, grid, solver)?;
            let target = params.encoder.weight.tape().constant(sample.signal.clone())?;
            Ok((mse(out.bold, target)?, out.stats))
        }
    }
}

/// Loss and gradients (in `ModelParams::named` order) of one sample.
pub fn sample_gradients(
    params: &ModelParams,
    sample: &Sample,
    grid: &CoordGrid,
    solver: &SolverConfig,
) -> Result<(f64, Vec<Tensor>)> {
    let tape = Tape::new();
    let vars = params.bind(&tape)?;
    let (loss, _) = sample_loss(&vars, sample, grid, solver)?;
    let grads = tape.backward(loss)?;
    let g = vars.named().into_iter().map(|(_, v)| grads.get_or_zeros(*v)).collect();
    Ok((loss.item(), g))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean sample loss of each epoch.
    pub epoch_losses: Vec<f64>,
    /// Training samples skipped because the solver diverged.
    pub diverged: usize,
}

/// Batch-averaged gradient over `batch`; diverged samples are left out.
/// Returns `(loss sum, gradient sum, samples used)`.
fn batch_gradient(
    params: &ModelParams,
    samples: &[&Sample],
    grid: &CoordGrid,
    solver: &SolverConfig,
    exec: Exec,
) -> Result<(f64, Option<Vec<Tensor>>, usize)> {
    let results = exec.map(samples, |s| sample_gradients(params, s, grid, solver));
    let mut total: Option<Vec<Tensor>> = None;
    let (mut loss, mut used) = (0.0, 0);
    for r in results {
        let (l, g) = match r {
            Ok(x) => x,
            Err(Error::Divergence { .. }) => continue,
            Err(e) => return Err(e),
        };
        loss += l;
        used += 1;
        match &mut total {
            None => total = Some(g),
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(&g) {
                    for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                        *x += y;
                    }
                }
            }
        }
    }
    Ok((loss, total, used))
}

/// Minibatch Adam over `samples`, shuffled each epoch from `cfg.seed`.
pub fn train(
    params: &mut ModelParams,
    samples: &[Sample],
    grid: &CoordGrid,
    solver: &SolverConfig,
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<TrainLog> {
    if samples.is_empty() {
        return Err(Error::usage("no training samples"));
    }
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::usage("batch_size and learning_rate must be positive"));
    }
    let hyper = AdamHyper::with_lr(cfg.learning_rate);
    let mut state = AdamState::new(params.named().into_iter().map(|(_, t)| t));
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, epoch as u64));
        order.shuffle(&mut rng);
        let (mut epoch_loss, mut epoch_used) = (0.0, 0);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (loss, grads, used) = batch_gradient(params, &batch, grid, solver, exec)?;
            log.diverged += batch.len() - used;
            let Some(mut grads) = grads else { continue };
            for g in &mut grads {
                for x in g.data_mut() {
                    *x /= used as f64;
                }
            }
            step += 1;
            adam_step(&mut params.values_mut(), &grads, &mut state, &hyper, step)?;
            epoch_loss += loss;
            epoch_used += used;
        }
        log.epoch_losses.push(if epoch_used > 0 { epoch_loss / epoch_used as f64 } else { f64::NAN });
    }
    Ok(log)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Class(usize),
    Pixels(Vec<u8>),
    Bold(Tensor),
}

/// Model output for one sample; `Err(Divergence)` is passed through so
/// callers can count it.
pub fn predict(
    params: &ModelParams,
    sample: &Sample,
    grid: &CoordGrid,
    solver: &SolverConfig,
) -> Result<(Prediction, SolveStats)> {
    let tape = Tape::new();
    let vars = params.bind_constant(&tape)?;
    match &sample.target {
        Target::Class(_) => {
            let out = forward_decode(&vars, &sample.signal, grid, solver, DecodeTask::Classify)?;
            let (label, _) = classify(out.logits.value().data());
            Ok((Prediction::Class(label), out.stats))
        }
        Target::Pixels(_) => {
            let out = forward_decode(&vars, &sample.signal, grid, solver, DecodeTask::Pixels)?;
            let (_, binary) = crate::model::predict_stimulus(out.logits.value().data())?;
            Ok((Prediction::Pixels(binary), out.stats))
        }
        Target::Bold { stimuli } => {
            let out = forward_encode(&vars, stimuli, grid, solver)?;
            Ok((Prediction::Bold(out.bold.to_tensor()), out.stats))
        }
    }
}

/// The pooled fixed point (`[d_model]`) fed to the decoding heads.
pub fn pooled_latent(
    params: &ModelParams,
    signal: &Tensor,
    grid: &CoordGrid,
    solver: &SolverConfig,
) -> Result<Vec<f64>> {
    let tape = Tape::new();
    let vars = params.bind_constant(&tape)?;
    let out = forward_decode(&vars, signal, grid, solver, DecodeTask::Classify)?;
    let pooled = out.pooled.to_tensor();
    Ok(pooled.into_data())
}
