use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::hrf::hrf_kernel;
use super::stimulus::{gen_stimulus, StimulusKind, SIDE};
use super::{Recording, RecordingMeta};
use crate::error::{Error, Result};
use crate::model::STIMULUS_PIXELS;
use crate::tensor::Tensor;
use crate::util::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapMode {
    /// Each voxel reads a 3×3 pixel neighbourhood.
    #[default]
    Sparse,
    /// Each voxel reads every pixel with small random weights.
    Distributed,
}

/// Block-design synthetic experiment.
///
/// Blocks of `block_len` frames are assigned classes in balanced, shuffled
/// order. Class `c` shows stimuli of kind `c % 2`. With two classes each block
/// draws fresh stimuli (a new one every `frames_per_stimulus` frames if set);
/// with more classes every class keeps one fixed prototype.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_voxels: usize,
    pub n_classes: usize,
    pub n_blocks: usize,
    pub block_len: usize,
    pub frames_per_stimulus: Option<usize>,
    pub label_lag: usize,
    pub tr_seconds: f64,
    pub noise_std: f64,
    pub mem_coef: f64,
    pub map: MapMode,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_voxels: 256,
            n_classes: 2,
            n_blocks: 4,
            block_len: 100,
            frames_per_stimulus: None,
            label_lag: 3,
            tr_seconds: 2.0,
            noise_std: 2.0,
            mem_coef: 0.8,
            map: MapMode::Sparse,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_voxels == 0 || self.n_blocks == 0 || self.block_len == 0 {
            return Err(Error::usage("n_voxels, n_blocks and block_len must be positive"));
        }
        if self.n_classes < 2 {
            return Err(Error::usage("n_classes must be at least 2"));
        }
        if self.frames_per_stimulus == Some(0) {
            return Err(Error::usage("frames_per_stimulus must be positive"));
        }
        check_drive_params(self.tr_seconds, self.noise_std, self.mem_coef)
    }

    pub fn n_frames(&self) -> usize {
        self.n_blocks * self.block_len
    }
}

fn check_drive_params(tr_seconds: f64, noise_std: f64, mem_coef: f64) -> Result<()> {
    if !(tr_seconds > 0.0) {
        return Err(Error::usage(format!("TR must be positive, got {tr_seconds}")));
    }
    if !(noise_std >= 0.0) {
        return Err(Error::usage(format!("noise_std must be non-negative, got {noise_std}")));
    }
    if !(0.0..1.0).contains(&mem_coef) {
        return Err(Error::usage(format!("mem_coef {mem_coef} not in [0, 1)")));
    }
    Ok(())
}

/// Random voxel positions in `[0,1)²` and the matching `[P × 100]` map.
/// Sparse voxels read the 3×3 neighbourhood around the pixel under them.
pub fn weight_map(n_voxels: usize, mode: MapMode, seed: u64) -> Result<(Tensor, Tensor)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords = Vec::with_capacity(n_voxels * 2);
    let mut w = vec![0.0; n_voxels * STIMULUS_PIXELS];
    for p in 0..n_voxels {
        let (y, x): (f64, f64) = (rng.random(), rng.random());
        coords.extend([y, x]);
        let row = &mut w[p * STIMULUS_PIXELS..(p + 1) * STIMULUS_PIXELS];
        match mode {
            MapMode::Sparse => {
                let (r, c) = ((y * SIDE as f64) as isize, (x * SIDE as f64) as isize);
                for dr in -1..=1 {
                    for dc in -1..=1 {
                        let (rr, cc) = (r + dr, c + dc);
                        if (0..SIDE as isize).contains(&rr) && (0..SIDE as isize).contains(&cc) {
                            row[rr as usize * SIDE + cc as usize] = rng.random_range(0.5..1.5) / 9.0;
                        }
                    }
                }
            }
            MapMode::Distributed => {
                for v in row.iter_mut() {
                    *v = rng.random_range(0.0..2.0) / 100.0;
                }
            }
        }
    }
    Ok((
        Tensor::new(vec![n_voxels, 2], coords)?,
        Tensor::new(vec![n_voxels, STIMULUS_PIXELS], w)?,
    ))
}

/// BOLD signal `[P × T]` for a stimulus sequence.
///
/// Neural drive follows `n(k) = W·s(k) + mem_coef·n(k−1)`; it is convolved
/// with the HRF sampled every TR and Gaussian noise is added.
pub fn synth_bold(
    stim_frames: &Tensor,
    w_map: &Tensor,
    tr_seconds: f64,
    noise_std: f64,
    mem_coef: f64,
    seed: u64,
) -> Result<Tensor> {
    check_drive_params(tr_seconds, noise_std, mem_coef)?;
    let (t_total, pix) = stim_frames.dims2()?;
    let (p, wpix) = w_map.dims2()?;
    if pix != wpix {
        return Err(Error::dim(format!(
            "stimulus frames {:?} vs map {:?}",
            stim_frames.shape(),
            w_map.shape()
        )));
    }
    // drive[k][p]
    let drive = stim_frames.matmul(&w_map.transpose()?)?;
    let kernel = hrf_kernel(tr_seconds)?;
    let noise = Normal::new(0.0, noise_std).map_err(|e| Error::usage(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; p * t_total];
    let mut neural = vec![0.0; t_total];
    for v in 0..p {
        for k in 0..t_total {
            let prev = if k > 0 { neural[k - 1] } else { 0.0 };
            neural[k] = drive.at(k, v) + mem_coef * prev;
        }
        for k in 0..t_total {
            out[v * t_total + k] = kernel
                .iter()
                .take(k + 1)
                .enumerate()
                .map(|(m, h)| h * neural[k - m])
                .sum();
        }
    }
    // noise drawn frame-major so that a voxel subset sees the same values
    if noise_std > 0.0 {
        for k in 0..t_total {
            for v in 0..p {
                out[v * t_total + k] += noise.sample(&mut rng);
            }
        }
    }
    Tensor::new(vec![p, t_total], out)
}

/// Generates a labelled recording from a block design.
pub fn generate(spec: &SyntheticSpec) -> Result<Recording> {
    spec.validate()?;
    let mut order_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 1));
    let mut block_classes: Vec<usize> = (0..spec.n_blocks).map(|b| b % spec.n_classes).collect();
    block_classes.shuffle(&mut order_rng);

    let stim_seed = derive_seed(spec.seed, 2);
    let prototypes: Vec<Vec<f64>> = (0..spec.n_classes)
        .map(|c| gen_stimulus(StimulusKind::from_label(c), derive_seed(stim_seed, c as u64)).as_f64())
        .collect();

    let t_total = spec.n_frames();
    let mut stimuli = Vec::with_capacity(t_total * STIMULUS_PIXELS);
    let mut frame_classes = Vec::with_capacity(t_total);
    let mut counter = 0u64;
    for &c in &block_classes {
        let chunk = spec.frames_per_stimulus.unwrap_or(spec.block_len);
        let mut current = Vec::new();
        for f in 0..spec.block_len {
            if f % chunk == 0 {
                current = if spec.n_classes == 2 {
                    counter += 1;
                    gen_stimulus(StimulusKind::from_label(c), derive_seed(stim_seed, 1_000 + counter)).as_f64()
                } else {
                    prototypes[c].clone()
                };
            }
            stimuli.extend_from_slice(&current);
            frame_classes.push(c);
        }
    }
    let stimuli = Tensor::new(vec![t_total, STIMULUS_PIXELS], stimuli)?;
    let lag = spec.label_lag.min(t_total);
    let classes: Vec<usize> = (0..t_total)
        .map(|k| frame_classes[k.saturating_sub(lag)])
        .collect();

    let (coords, w_map) = weight_map(spec.n_voxels, spec.map, derive_seed(spec.seed, 3))?;
    let signal = synth_bold(
        &stimuli,
        &w_map,
        spec.tr_seconds,
        spec.noise_std,
        spec.mem_coef,
        derive_seed(spec.seed, 4),
    )?;
    let meta = RecordingMeta {
        seed: spec.seed,
        noise_std: spec.noise_std,
        mem_coef: spec.mem_coef,
        tr_seconds: spec.tr_seconds,
        label_lag: spec.label_lag,
        n_classes: spec.n_classes,
        generator: match spec.map {
            MapMode::Sparse => "synthetic-sparse".into(),
            MapMode::Distributed => "synthetic-distributed".into(),
        },
    };
    Recording::new(signal, coords, Some(classes), Some(stimuli), meta)
}
