//! Encode/decode pipelines around the latent fixed-point operator.
//!
//! Decoding: signal → encoder (per grid point) → `u_lat` → fixed point `u*`
//! → quadrature-weighted pooling → class or pixel head.
//!
//! Encoding: stimulus frames → embedding broadcast over voxels → `u_lat` →
//! fixed point `u*` → decoder (per grid point) → predicted signal.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::io::{load_tensors, save_tensors};
use crate::error::{Error, Result};
use crate::fixed_point::{solve, SolverConfig};
use crate::operator::{apply_with, KernelParams, PointContext, KERNEL_FIELDS};
use crate::quadrature::{CoordGrid, QuadratureRule};
use crate::tape::{sigmoid, Tape, Var};
use crate::tensor::Tensor;

pub const STIMULUS_PIXELS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub pos_dim: usize,
    pub d_ff: usize,
    /// Number of stacked operator layers inside `T`.
    pub layers: usize,
    pub n_classes: usize,
    /// Scale γ of the kernel initialization (std `0.02·γ`).
    pub init_gain: f64,
    pub time_rule: QuadratureRule,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 8,
            pos_dim: 8,
            d_ff: 16,
            layers: 1,
            n_classes: 2,
            init_gain: 0.5,
            time_rule: QuadratureRule::Riemann,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d_ff == 0 || self.layers == 0 {
            return Err(Error::usage("d_model, d_ff and layers must be positive"));
        }
        if self.pos_dim == 0 || !self.pos_dim.is_multiple_of(2) {
            return Err(Error::usage(format!("pos_dim must be even, got {}", self.pos_dim)));
        }
        if self.n_classes < 2 {
            return Err(Error::usage("n_classes must be at least 2"));
        }
        if !(self.init_gain >= 0.0 && self.init_gain.is_finite()) {
            return Err(Error::usage("init_gain must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Affine<T> {
    /// `[d_in × d_out]`
    pub weight: T,
    /// `[1 × d_out]`
    pub bias: T,
}

impl<T> Affine<T> {
    fn try_map<U, E>(&self, prefix: &str, f: &mut impl FnMut(&str, &T) -> Result<U, E>) -> Result<Affine<U>, E> {
        Ok(Affine {
            weight: f(&format!("{prefix}.weight"), &self.weight)?,
            bias: f(&format!("{prefix}.bias"), &self.bias)?,
        })
    }
}

/// Every learnable parameter of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T = Tensor> {
    pub encoder: Affine<T>,
    pub decoder: Affine<T>,
    pub kernel: Vec<KernelParams<T>>,
    pub class_head: Affine<T>,
    pub pixel_head: Affine<T>,
    pub stim_embed: Affine<T>,
}

impl<T> ModelParams<T> {
    /// Applies `f` to every parameter with its flat name, in a fixed order.
    pub fn try_map<U, E>(&self, mut f: impl FnMut(&str, &T) -> Result<U, E>) -> Result<ModelParams<U>, E> {
        Ok(ModelParams {
            encoder: self.encoder.try_map("encoder", &mut f)?,
            decoder: self.decoder.try_map("decoder", &mut f)?,
            kernel: self
                .kernel
                .iter()
                .enumerate()
                .map(|(i, k)| k.try_map(|name, t| f(&format!("kernel.{i}.{name}"), t)))
                .collect::<Result<_, E>>()?,
            class_head: self.class_head.try_map("class_head", &mut f)?,
            pixel_head: self.pixel_head.try_map("pixel_head", &mut f)?,
            stim_embed: self.stim_embed.try_map("stim_embed", &mut f)?,
        })
    }

    /// `(name, parameter)` pairs in the same order as [`try_map`](Self::try_map).
    pub fn named(&self) -> Vec<(String, &T)> {
        let mut out = Vec::new();
        out.extend(affine_named("encoder", &self.encoder));
        out.extend(affine_named("decoder", &self.decoder));
        for (i, k) in self.kernel.iter().enumerate() {
            for (name, t) in KERNEL_FIELDS.iter().zip(k.fields()) {
                out.push((format!("kernel.{i}.{name}"), t));
            }
        }
        out.extend(affine_named("class_head", &self.class_head));
        out.extend(affine_named("pixel_head", &self.pixel_head));
        out.extend(affine_named("stim_embed", &self.stim_embed));
        out
    }

    pub fn values_mut(&mut self) -> Vec<&mut T> {
        let mut out: Vec<&mut T> = vec![
            &mut self.encoder.weight,
            &mut self.encoder.bias,
            &mut self.decoder.weight,
            &mut self.decoder.bias,
        ];
        for k in &mut self.kernel {
            out.extend(k.fields_mut());
        }
        out.extend([
            &mut self.class_head.weight,
            &mut self.class_head.bias,
            &mut self.pixel_head.weight,
            &mut self.pixel_head.bias,
            &mut self.stim_embed.weight,
            &mut self.stim_embed.bias,
        ]);
        out
    }
}

fn affine_named<'a, T>(prefix: &str, a: &'a Affine<T>) -> [(String, &'a T); 2] {
    [
        (format!("{prefix}.weight"), &a.weight),
        (format!("{prefix}.bias"), &a.bias),
    ]
}

fn gaussian(r: usize, c: usize, std: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let normal = Normal::new(0.0, std).expect("finite std");
    Tensor::new(vec![r, c], (0..r * c).map(|_| normal.sample(rng)).collect()).expect("shape")
}

fn affine_init(d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Affine<Tensor> {
    Affine {
        weight: gaussian(d_in, d_out, 1.0 / (d_in as f64).sqrt(), rng),
        bias: Tensor::zeros(&[1, d_out]),
    }
}

impl ModelParams<Tensor> {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.d_model;
        Ok(ModelParams {
            encoder: affine_init(1, d, &mut rng),
            decoder: affine_init(d, 1, &mut rng),
            kernel: (0..cfg.layers)
                .map(|_| KernelParams::init(d, cfg.pos_dim, cfg.d_ff, cfg.init_gain, &mut rng))
                .collect(),
            class_head: affine_init(d, cfg.n_classes, &mut rng),
            pixel_head: affine_init(d, STIMULUS_PIXELS, &mut rng),
            stim_embed: affine_init(STIMULUS_PIXELS, d, &mut rng),
        })
    }

    /// Records every parameter on `tape` as a differentiable leaf.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Result<ModelParams<Var<'t>>> {
        self.try_map(|_, t| tape.param(t.clone()))
    }

    /// Records every parameter on `tape` as a constant.
    pub fn bind_constant<'t>(&self, tape: &'t Tape) -> Result<ModelParams<Var<'t>>> {
        self.try_map(|_, t| tape.constant(t.clone()))
    }

    pub fn to_named_map(&self) -> BTreeMap<String, Tensor> {
        self.named().into_iter().map(|(n, t)| (n, t.clone())).collect()
    }

    /// Rebuilds parameters for `cfg` from a named map, checking every shape.
    pub fn from_named_map(cfg: &ModelConfig, map: &BTreeMap<String, Tensor>) -> Result<Self> {
        let template = Self::init(cfg, 0)?;
        let params = template.try_map(|name, t| {
            let stored = map
                .get(name)
                .ok_or_else(|| Error::Malformed(format!("missing parameter `{name}`")))?;
            if stored.shape() != t.shape() {
                return Err(Error::Malformed(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    stored.shape(),
                    t.shape()
                )));
            }
            Ok(stored.clone())
        })?;
        if map.len() != template.named().len() {
            return Err(Error::Malformed("checkpoint has unexpected extra parameters".into()));
        }
        Ok(params)
    }

    pub fn n_parameters(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }
}

/// Architecture hyperparameters stored next to a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub solver: SolverConfig,
    /// Signal standardization fitted on the training windows.
    #[serde(default)]
    pub scale: crate::train::SignalScale,
}

pub fn save_checkpoint(path: &Path, params: &ModelParams, meta: &CheckpointMeta) -> Result<()> {
    save_tensors(path, &params.to_named_map())?;
    let json = serde_json::to_string_pretty(meta)?;
    crate::util::write_atomic(&path.with_extension("json"), json.as_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, CheckpointMeta)> {
    let meta: CheckpointMeta = serde_json::from_slice(&std::fs::read(path.with_extension("json"))?)?;
    let params = ModelParams::from_named_map(&meta.model, &load_tensors(path)?)?;
    Ok((params, meta))
}

pub fn affine_map<'t>(weights: &Affine<Var<'t>>, input: Var<'t>) -> Result<Var<'t>> {
    input.matmul(weights.weight)?.add_row(weights.bias)
}

/// Argmax label (ties toward the lower index) and softmax probabilities.
pub fn classify(logits: &[f64]) -> (usize, Vec<f64>) {
    let mut label = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[label] {
            label = i;
        }
    }
    let m = logits[label];
    let exps: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    (label, exps.into_iter().map(|e| e / s).collect())
}

/// Pixel probabilities and the binarized stimulus (`p > 0.5`).
pub fn predict_stimulus(pixel_logits: &[f64]) -> Result<(Vec<f64>, Vec<u8>)> {
    if pixel_logits.len() != STIMULUS_PIXELS {
        return Err(Error::dim(format!(
            "expected {STIMULUS_PIXELS} pixel logits, got {}",
            pixel_logits.len()
        )));
    }
    let probs: Vec<f64> = pixel_logits.iter().map(|&x| sigmoid(x)).collect();
    let binary = probs.iter().map(|&p| u8::from(p > 0.5)).collect();
    Ok((probs, binary))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeTask {
    Classify,
    Pixels,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iters_used: usize,
    pub converged: bool,
    pub final_residual: f64,
}

pub struct DecodeOutput<'t> {
    pub logits: Var<'t>,
    /// Quadrature-weighted mean of the fixed point rows, `[1 × d_model]`.
    pub pooled: Var<'t>,
    pub stats: SolveStats,
}

pub struct EncodeOutput<'t> {
    /// `[P × TP]`
    pub bold: Var<'t>,
    pub stats: SolveStats,
}

fn run_fixed_point<'t>(
    params: &ModelParams<Var<'t>>,
    u_lat: Var<'t>,
    ctx: &PointContext,
    cfg: &SolverConfig,
) -> Result<(Var<'t>, SolveStats)> {
    let op = |u: Var<'t>| {
        params
            .kernel
            .iter()
            .try_fold(u, |acc, layer| apply_with(layer, acc, ctx))
    };
    let res = solve(op, u_lat, cfg)?;
    let stats = SolveStats {
        iters_used: res.iters_used,
        converged: res.converged,
        final_residual: res.residual_history.last().copied().unwrap_or(0.0),
    };
    Ok((res.u_star, stats))
}

fn pos_dim(params: &ModelParams<Var<'_>>) -> Result<usize> {
    params
        .kernel
        .first()
        .map(|k| k.w_pos.shape()[0])
        .ok_or_else(|| Error::usage("model has no operator layers"))
}

/// Grid-point values of a `[P × TP]` window as a time-major `[P·TP × 1]` column.
pub fn window_points(signal: &Tensor) -> Result<Tensor> {
    let (p, tp) = signal.dims2()?;
    let mut col = Vec::with_capacity(p * tp);
    for t in 0..tp {
        for v in 0..p {
            col.push(signal.at(v, t));
        }
    }
    Tensor::new(vec![p * tp, 1], col)
}

pub fn forward_decode<'t>(
    params: &ModelParams<Var<'t>>,
    signal: &Tensor,
    grid: &CoordGrid,
    cfg: &SolverConfig,
    task: DecodeTask,
) -> Result<DecodeOutput<'t>> {
    let tape = params.encoder.weight.tape();
    let (p, tp) = signal.dims2()?;
    if (p, tp) != (grid.n_space(), grid.n_time()) {
        return Err(Error::dim(format!(
            "window [{p} × {tp}] does not match grid [{} × {}]",
            grid.n_space(),
            grid.n_time()
        )));
    }
    let ctx = PointContext::new(grid, pos_dim(params)?)?;
    let points = tape.constant(window_points(signal)?)?;
    let u_lat = affine_map(&params.encoder, points)?;
    let (u_star, stats) = run_fixed_point(params, u_lat, &ctx, cfg)?;
    let pool_w = tape.constant(Tensor::row(ctx.weights()))?;
    let pooled = pool_w.matmul(u_star)?;
    let head = match task {
        DecodeTask::Classify => &params.class_head,
        DecodeTask::Pixels => &params.pixel_head,
    };
    let logits = affine_map(head, pooled)?;
    Ok(DecodeOutput {
        logits,
        pooled,
        stats,
    })
}

pub fn forward_encode<'t>(
    params: &ModelParams<Var<'t>>,
    stimulus_seq: &Tensor,
    grid: &CoordGrid,
    cfg: &SolverConfig,
) -> Result<EncodeOutput<'t>> {
    let tape = params.encoder.weight.tape();
    let (frames, pixels) = stimulus_seq.dims2()?;
    if pixels != STIMULUS_PIXELS {
        return Err(Error::dim(format!("stimulus frames have {pixels} pixels, expected {STIMULUS_PIXELS}")));
    }
    if frames != grid.n_time() {
        return Err(Error::dim(format!(
            "{frames} stimulus frames but the grid has {} time points",
            grid.n_time()
        )));
    }
    let p = grid.n_space();
    let ctx = PointContext::new(grid, pos_dim(params)?)?;
    let stim = tape.constant(stimulus_seq.clone())?;
    let per_frame = affine_map(&params.stim_embed, stim)?;
    let broadcast: Vec<usize> = (0..frames).flat_map(|t| std::iter::repeat_n(t, p)).collect();
    let u_lat = per_frame.gather_rows(&broadcast)?;
    let (u_star, stats) = run_fixed_point(params, u_lat, &ctx, cfg)?;
    let bold = affine_map(&params.decoder, u_star)?
        .reshape(&[frames, p])?
        .transpose()?;
    Ok(EncodeOutput { bold, stats })
}
