//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion outside `KNOWN_UNATTAINABLE` fails.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nio_core::data::io::{decode_tensors, encode_tensors};
use nio_core::data::{generate, window_slice, MapMode, SyntheticSpec};
use nio_core::exec::Exec;
use nio_core::fixed_point::{solve, SolverConfig};
use nio_core::gradcheck::grad_check;
use nio_core::latent::{
    knn_eval, latent_embeddings, raw_embeddings, welch_ttest, KNN_NEIGHBORS, KNN_SPLITS, KNN_TEST_FRAC,
};
use nio_core::model::{forward_decode, forward_encode, DecodeTask, ModelConfig, ModelParams, STIMULUS_PIXELS};
use nio_core::operator::{operator_apply, KernelParams};
use nio_core::quadrature::{integrate, make_grid, quadrature_weights, QuadratureRule, SpaceLayout};
use nio_core::train::*;
use nio_core::util::derive_seed;
use nio_core::{Error, Tape, Tensor, Var};

/// Criteria that cannot pass as stated; reported, but not counted as failures.
/// 3: the trapezoid rule integrates sin(2πs) over a whole period exactly, so
/// both errors are rounding noise and their ratio carries no information.
const KNOWN_UNATTAINABLE: &[usize] = &[3];

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn e2s(e: Error) -> String {
    e.to_string()
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Contract `y` against a fixed random weight so every output entry matters.
fn contract<'t>(tape: &'t Tape, y: Var<'t>, seed: u64) -> nio_core::Result<Var<'t>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(random(&y.shape(), &mut rng, -1.0, 1.0))?;
    y.mul(w)?.sum()
}

// 1 ----------------------------------------------------------------------

type UnaryOp = for<'t> fn(Var<'t>) -> nio_core::Result<Var<'t>>;

fn gradient_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(&[3, 4], &mut rng, -1.0, 1.0);
    let away_from_zero = Tensor::new(
        vec![3, 4],
        x.data().iter().map(|v| if v.abs() < 0.1 { v + 0.3 } else { *v }).collect(),
    )
    .unwrap();
    let eps = 1e-6;
    let mut worst_elem: (f64, &str) = (0.0, "");
    let mut record = |name: &'static str, err: f64| {
        if err > worst_elem.0 || worst_elem.1.is_empty() {
            worst_elem = (err.max(worst_elem.0), name);
        }
        err
    };

    let unary: &[(&'static str, UnaryOp, bool)] = &[
        ("tanh", |v| v.tanh(), false),
        ("sigmoid", |v| v.sigmoid(), false),
        ("abs", |v| v.abs(), true),
        ("square", |v| v.square(), false),
        ("neg", |v| v.neg(), false),
        ("scale", |v| v.scale(-1.7), false),
        ("softmax0", |v| v.softmax(0), false),
        ("softmax1", |v| v.softmax(1), false),
        ("log_softmax0", |v| v.log_softmax(0), false),
        ("log_softmax1", |v| v.log_softmax(1), false),
        ("transpose", |v| v.transpose(), false),
        ("reshape", |v| v.reshape(&[2, 6]), false),
        ("gather_rows", |v| v.gather_rows(&[2, 0, 2, 1]), false),
        ("sum", |v| v.sum(), false),
        ("mean", |v| v.mean(), false),
        ("select", |v| v.select(5), false),
        ("bce_with_logits", |v| v.bce_with_logits(&[1.0, 0.0, 0.3, 1.0, 0.0, 1.0, 0.5, 0.0, 1.0, 1.0, 0.0, 0.2]), false),
    ];
    for (i, (name, op, avoid_zero)) in unary.iter().enumerate() {
        let input = if *avoid_zero { &away_from_zero } else { &x };
        let err = grad_check(|t, v| contract(t, op(v)?, 100 + i as u64), input, eps).map_err(e2s)?;
        record(name, err);
    }

    // binary ops, each input checked separately
    let other = random(&[3, 4], &mut rng, -1.0, 1.0);
    let right = random(&[4, 2], &mut rng, -1.0, 1.0);
    let row = random(&[1, 4], &mut rng, -1.0, 1.0);
    type Binary = for<'t> fn(Var<'t>, Var<'t>) -> nio_core::Result<Var<'t>>;
    let binary: &[(&'static str, Binary, &Tensor, &Tensor)] = &[
        ("add", |a, b| a.add(b), &x, &other),
        ("sub", |a, b| a.sub(b), &x, &other),
        ("mul", |a, b| a.mul(b), &x, &other),
        ("matmul", |a, b| a.matmul(b), &x, &right),
        ("add_row", |a, b| a.add_row(b), &x, &row),
    ];
    for (i, (name, op, a, b)) in binary.iter().enumerate() {
        let seed = 200 + i as u64;
        let ea = grad_check(
            |t, v| {
                let bv = t.constant((*b).clone())?;
                contract(t, op(v, bv)?, seed)
            },
            a,
            eps,
        )
        .map_err(e2s)?;
        let eb = grad_check(
            |t, v| {
                let av = t.constant((*a).clone())?;
                contract(t, op(av, v)?, seed)
            },
            b,
            eps,
        )
        .map_err(e2s)?;
        record(name, ea.max(eb));
    }
    let elem_ok = worst_elem.0 < 1e-4;

    // composed pipelines on 2 voxels × 2 frames, per parameter
    let model = ModelConfig {
        d_model: 4,
        pos_dim: 2,
        d_ff: 4,
        init_gain: 20.0,
        ..ModelConfig::default()
    };
    let solver = SolverConfig {
        max_iters: 3,
        tol: 1e-300,
        divergence_factor: 1e12,
        ..SolverConfig::default()
    };
    let params = ModelParams::init(&model, 5).map_err(e2s)?;
    let coords = Tensor::from_rows(&[vec![0.1, 0.7], vec![0.8, 0.2]]).unwrap();
    let grid = make_grid(2, 2, 2, SpaceLayout::Provided, Some(&coords), QuadratureRule::Trapezoid).map_err(e2s)?;
    let signal = random(&[2, 2], &mut rng, -1.0, 1.0);
    let stimuli = Tensor::new(
        vec![2, STIMULUS_PIXELS],
        (0..2 * STIMULUS_PIXELS).map(|_| f64::from(rng.random_range(0..2u8))).collect(),
    )
    .unwrap();
    let pixel_target: Vec<f64> = (0..STIMULUS_PIXELS).map(|i| f64::from(i % 3 == 0)).collect();

    let composed = Composed {
        params: &params,
        signal: &signal,
        stimuli: &stimuli,
        pixel_target: &pixel_target,
        grid: &grid,
        solver: &solver,
    };
    let named: Vec<(String, Tensor)> = params.named().into_iter().map(|(n, t)| (n, t.clone())).collect();
    let mut worst_comp: (f64, String) = (0.0, String::new());
    for (pipeline, kind) in [("decode", 0), ("pixels", 1), ("encode", 2)] {
        for (name, value) in &named {
            let unused = match kind {
                0 => name.starts_with("pixel_head") || name.starts_with("stim_embed") || name.starts_with("decoder"),
                1 => name.starts_with("class_head") || name.starts_with("stim_embed") || name.starts_with("decoder"),
                _ => name.starts_with("class_head") || name.starts_with("pixel_head") || name.starts_with("encoder"),
            };
            if unused {
                continue;
            }
            let err = grad_check(|t, v| composed.loss(t, v, name, kind), value, 1e-5).map_err(e2s)?;
            if err > worst_comp.0 {
                worst_comp = (err, format!("{pipeline}/{name}"));
            }
        }
    }
    let comp_ok = worst_comp.0 < 1e-3;
    check(
        elem_ok && comp_ok,
        format!(
            "elementary max rel err {:.2e} ({}), composed max rel err {:.2e} ({})",
            worst_elem.0, worst_elem.1, worst_comp.0, worst_comp.1
        ),
    )
}

struct Composed<'a> {
    params: &'a ModelParams,
    signal: &'a Tensor,
    stimuli: &'a Tensor,
    pixel_target: &'a [f64],
    grid: &'a nio_core::quadrature::CoordGrid,
    solver: &'a SolverConfig,
}

impl Composed<'_> {
    /// Loss of pipeline `kind` with parameter `name` replaced by `v`.
    fn loss<'t>(&self, tape: &'t Tape, v: Var<'t>, name: &str, kind: usize) -> nio_core::Result<Var<'t>> {
        let vars = self.params.try_map(|n, t| if n == name { Ok(v) } else { tape.constant(t.clone()) })?;
        match kind {
            0 => {
                let out = forward_decode(&vars, self.signal, self.grid, self.solver, DecodeTask::Classify)?;
                cross_entropy(out.logits, 1)
            }
            1 => {
                let out = forward_decode(&vars, self.signal, self.grid, self.solver, DecodeTask::Pixels)?;
                bce_pixels(out.logits, self.pixel_target)
            }
            _ => {
                let out = forward_encode(&vars, self.stimuli, self.grid, self.solver)?;
                mse(out.bold, tape.constant(self.signal.clone())?)
            }
        }
    }
}

// 2 ----------------------------------------------------------------------

fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    m.qr().q()
}

fn fixed_point_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = SolverConfig {
        max_iters: 1000,
        tol: 1e-12,
        ..SolverConfig::default()
    };
    let mut worst_err: f64 = 0.0;
    let mut worst_ratio: f64 = 0.0;
    for n in [1usize, 4] {
        for l in [0.3, 0.5, 0.9] {
            let q = if n == 1 { DMatrix::from_element(1, 1, 1.0) } else { random_orthogonal(n, &mut rng) };
            let a = q * l;
            let u_lat: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let a_t = Tensor::new(vec![n, n], a.transpose().as_slice().to_vec()).unwrap(); // row-major
            let tape = Tape::new();
            let av = tape.constant(a_t).map_err(e2s)?;
            let ul = tape.constant(Tensor::row(&u_lat)).map_err(e2s)?;
            let res = solve(|u| u.matmul(av), ul, &cfg).map_err(e2s)?;
            if !res.converged {
                return Err(format!("n={n} L={l} did not converge"));
            }
            let h = &res.residual_history;
            for (k, r) in h.iter().enumerate() {
                worst_ratio = worst_ratio.max(r / (l.powi(k as i32) * h[0]));
            }
            let ident = DMatrix::<f64>::identity(n, n);
            let inv = (ident - &a).try_inverse().ok_or("singular I - A")?;
            let expected = DMatrix::from_row_slice(1, n, &u_lat) * inv;
            let got = res.u_star.to_tensor();
            for j in 0..n {
                worst_err = worst_err.max((got.data()[j] - expected[(0, j)]).abs());
            }
        }
    }
    let diverges = {
        let tape = Tape::new();
        let av = tape.constant(Tensor::new(vec![1, 1], vec![2.0]).unwrap()).map_err(e2s)?;
        let ul = tape.constant(Tensor::row(&[1.0])).map_err(e2s)?;
        let cfg = SolverConfig {
            max_iters: 100,
            ..SolverConfig::default()
        };
        matches!(solve(|u| u.matmul(av), ul, &cfg), Err(Error::Divergence { .. }))
    };
    check(
        worst_err < 1e-6 && worst_ratio <= 1.01 && diverges,
        format!(
            "max |u* - oracle| {worst_err:.2e}, max r_k/(L^k r_0) {worst_ratio:.6}, L=2 divergence raised: {diverges}"
        ),
    )
}

// 3 ----------------------------------------------------------------------

fn trapezoid_error(f: impl Fn(f64) -> f64, exact: f64, n: usize) -> f64 {
    let w = quadrature_weights(n, QuadratureRule::Trapezoid).unwrap();
    let s: Vec<f64> = (0..n).map(|k| f(k as f64 / (n - 1) as f64)).collect();
    (integrate(&s, &w).unwrap() - exact).abs()
}

fn quadrature_convergence() -> Outcome {
    let sine = |s: f64| (2.0 * std::f64::consts::PI * s).sin();
    let (e17, e33) = (trapezoid_error(sine, 0.0, 17), trapezoid_error(sine, 0.0, 33));
    let ratio = e17 / e33;
    // the same refinement on a non-periodic integrand shows second-order convergence
    let (x17, x33) = (
        trapezoid_error(f64::exp, std::f64::consts::E - 1.0, 17),
        trapezoid_error(f64::exp, std::f64::consts::E - 1.0, 33),
    );
    check(
        (3.5..=4.5).contains(&ratio),
        format!(
            "sin(2πs): errors {e17:.2e} / {e33:.2e} = {ratio:.3} (rounding only, integral is exact); \
             exp(s) for reference: ratio {:.3}",
            x17 / x33
        ),
    )
}

// 4 ----------------------------------------------------------------------

fn operator_symmetry() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (p, tp, d) = (7usize, 3usize, 4usize);
    let coords = random(&[p, 2], &mut rng, 0.0, 1.0);
    let grid = make_grid(p, 2, tp, SpaceLayout::Provided, Some(&coords), QuadratureRule::Trapezoid).map_err(e2s)?;
    let kernel = KernelParams::init(d, 4, 6, 10.0, &mut rng);
    let u = random(&[p * tp, d], &mut rng, -1.0, 1.0);

    let apply = |k: &KernelParams<Tensor>, u: &Tensor, g: &nio_core::quadrature::CoordGrid| -> nio_core::Result<Tensor> {
        let tape = Tape::new();
        let kv = k.try_map(|_, t| tape.constant(t.clone()))?;
        let uv = tape.constant(u.clone())?;
        Ok(operator_apply(&kv, uv, g)?.to_tensor())
    };
    let base = apply(&kernel, &u, &grid).map_err(e2s)?;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let mut perm: Vec<usize> = (0..p).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
        let rows: Vec<usize> = (0..tp).flat_map(|t| perm.iter().map(move |&i| t * p + i)).collect();
        let out = apply(&kernel, &u.select_rows(&rows).unwrap(), &grid.permute_space(&perm).map_err(e2s)?)
            .map_err(e2s)?;
        worst = worst.max(out.max_abs_diff(&base.select_rows(&rows).unwrap()));
    }

    let mut zero = kernel.clone();
    zero.w_v = Tensor::zeros(zero.w_v.shape());
    zero.mlp_w2 = Tensor::zeros(zero.mlp_w2.shape());
    zero.mlp_b2 = Tensor::zeros(zero.mlp_b2.shape());
    let t_zero = apply(&zero, &u, &grid).map_err(e2s)?;
    let zero_exact = t_zero.data().iter().all(|&v| v == 0.0);
    let solved_exact = {
        let tape = Tape::new();
        let kv = zero.try_map(|_, t| tape.constant(t.clone())).map_err(e2s)?;
        let ul = tape.constant(u.clone()).map_err(e2s)?;
        let res = solve(|v| operator_apply(&kv, v, &grid), ul, &SolverConfig::default()).map_err(e2s)?;
        res.u_star.to_tensor() == u && res.converged && res.iters_used == 1
    };
    check(
        worst < 1e-12 && zero_exact && solved_exact,
        format!("max equivariance gap {worst:.2e} over 50 permutations; T ≡ 0 exact: {zero_exact}; u* = u_lat exact: {solved_exact}"),
    )
}

// 5 ----------------------------------------------------------------------

#[allow(clippy::needless_range_loop)]
fn confusion_oracle(preds: &[usize], labels: &[usize], k: usize) -> [f64; 4] {
    let mut cm = vec![vec![0usize; k]; k];
    for (&p, &l) in preds.iter().zip(labels) {
        cm[l][p] += 1;
    }
    let div = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let (mut sp, mut sr, mut sf) = (0.0, 0.0, 0.0);
    for c in 0..k {
        let predicted: usize = (0..k).map(|l| cm[l][c]).sum();
        let actual: usize = cm[c].iter().sum();
        let p = div(cm[c][c], predicted);
        let r = div(cm[c][c], actual);
        sp += p;
        sr += r;
        sf += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    }
    let correct: usize = (0..k).map(|c| cm[c][c]).sum();
    [div(correct, preds.len()), sp / k as f64, sr / k as f64, sf / k as f64]
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mismatches = 0;
    for draw in 0..1000 {
        let k = if draw % 2 == 0 { 2 } else { 10 };
        let n = rng.random_range(1..60);
        let preds: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let m = macro_metrics(&preds, &labels, k).map_err(e2s)?;
        if [m.accuracy, m.precision, m.recall, m.f1] != confusion_oracle(&preds, &labels, k) {
            mismatches += 1;
        }
    }

    let target = Tensor::from_rows(&[vec![1.0, -2.0, 3.0, -2.0], vec![0.5, -0.5, 1.5, -1.5]]).unwrap();
    let neg = Tensor::new(vec![2, 4], target.data().iter().map(|v| -v).collect()).unwrap();
    let rm = regression_metrics(&neg, &target).map_err(e2s)?;
    let reg_ok = (rm.r2_mean + 3.0).abs() < 1e-12 && (rm.pearson_mean + 1.0).abs() < 1e-12;

    let w = welch_ttest(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 3.0, 4.0, 5.0, 6.0]).map_err(e2s)?;
    let welch_ok = (w.t + 1.0).abs() < 1e-3 && (w.dof - 8.0).abs() < 1e-3 && (w.p_two_sided - 0.3466).abs() < 1e-3;
    check(
        mismatches == 0 && reg_ok && welch_ok,
        format!(
            "{mismatches}/1000 confusion-oracle mismatches; R² {:.6}, r {:.6}; Welch t {:.4}, dof {:.4}, p {:.4}",
            rm.r2_mean, rm.pearson_mean, w.t, w.dof, w.p_two_sided
        ),
    )
}

// 6 ----------------------------------------------------------------------

fn overfit() -> Outcome {
    let spec = SyntheticSpec {
        n_voxels: 16,
        ..SyntheticSpec::default()
    };
    let rec = generate(&spec).map_err(e2s)?;
    let windows = window_slice(&rec, 4, 2).map_err(e2s)?;
    let window = &windows[windows.len() / 2];
    let scale = SignalScale::fit([&window.signal]);
    let sample = make_samples(std::slice::from_ref(window), Task::DecodeClassify, &scale).map_err(e2s)?.remove(0);
    let model = ModelConfig::default();
    let solver = SolverConfig::default();
    let grid = grid_for(&rec, 4, &model).map_err(e2s)?;
    let mut params = ModelParams::init(&model, 6).map_err(e2s)?;
    let hyper = AdamHyper::with_lr(0.01);
    let mut state = AdamState::new(params.named().into_iter().map(|(_, t)| t));
    let mut loss = f64::NAN;
    for step in 1..=200 {
        let (l, grads) = sample_gradients(&params, &sample, &grid, &solver).map_err(e2s)?;
        loss = l;
        adam_step(&mut params.values_mut(), &grads, &mut state, &hyper, step).map_err(e2s)?;
    }
    // loss after the final update
    let final_loss = sample_gradients(&params, &sample, &grid, &solver).map_err(e2s)?.0;
    check(final_loss < 0.01, format!("cross-entropy {:.3e} at step 200, {:.3e} after it", loss + 0.0, final_loss + 0.0))
}

// 7, 8, 9 -----------------------------------------------------------------

/// The synthetic long-memory decoding setting used by the trend criteria.
fn trend_config() -> ExperimentConfig {
    ExperimentConfig {
        seeds: vec![0, 1, 2],
        epochs: 8,
        learning_rate: 1e-2,
        dataset: DatasetSource::Synthetic(SyntheticSpec {
            n_voxels: 32,
            mem_coef: 0.8,
            map: MapMode::Distributed,
            ..SyntheticSpec::default()
        }),
        ..ExperimentConfig::default()
    }
}

fn temporal_trend() -> Outcome {
    let cfg = ExperimentConfig {
        tp_values: vec![1, 10],
        ..trend_config()
    };
    let rep = run_experiment(&cfg).map_err(e2s)?;
    let a1 = rep.mean_of(1, "accuracy").ok_or("tp=1 cells all failed")?;
    let a10 = rep.mean_of(10, "accuracy").ok_or("tp=10 cells all failed")?;
    check(
        a10 - a1 >= 0.05 && a10 >= 0.90,
        format!("mean accuracy tp=1 {a1:.4}, tp=10 {a10:.4}, gain {:.4}", a10 - a1),
    )
}

fn spatial_trend() -> Outcome {
    let full = ExperimentConfig {
        tp_values: vec![1],
        ..trend_config()
    };
    let half = ExperimentConfig {
        roi_voxels: Some(16),
        ..full.clone()
    };
    let a_full = run_experiment(&full).map_err(e2s)?.mean_of(1, "accuracy").ok_or("all-voxel cells failed")?;
    let a_half = run_experiment(&half).map_err(e2s)?.mean_of(1, "accuracy").ok_or("half-ROI cells failed")?;
    check(a_full >= a_half, format!("mean accuracy all 32 voxels {a_full:.4}, first 16 voxels {a_half:.4}"))
}

/// KNN on raw windows and on trained latents of a held-out
/// recording, averaged over seeds.
fn knn_pair(cfg: &ExperimentConfig, seed: u64) -> nio_core::Result<(f64, f64)> {
    let tp = 1;
    let data = prepare_cell(cfg, tp, seed)?;
    let mut params = ModelParams::init(&cfg.model, derive_seed(seed, 12))?;
    train(&mut params, &data.train, &data.grid, &cfg.solver, &cfg.train_config(seed), Exec::default())?;
    let DatasetSource::Synthetic(spec) = &cfg.dataset else { unreachable!() };
    let held_out = generate(&SyntheticSpec {
        seed: derive_seed(seed, 900),
        ..spec.clone()
    })?;
    let windows = window_slice(&held_out, tp, cfg.stride)?;
    let raw = knn_eval(&raw_embeddings(&windows)?, KNN_NEIGHBORS, KNN_SPLITS, KNN_TEST_FRAC, seed)?;
    let latent = knn_eval(
        &latent_embeddings(&params, &windows, &data.grid, &cfg.solver, &data.scale, Exec::default())?,
        KNN_NEIGHBORS,
        KNN_SPLITS,
        KNN_TEST_FRAC,
        seed,
    )?;
    Ok((raw.mean_acc, latent.mean_acc))
}

fn latent_trend() -> Outcome {
    let cfg = ExperimentConfig {
        tp_values: vec![1],
        ..trend_config()
    };
    let mut raw = Vec::new();
    let mut latent = Vec::new();
    for &seed in &cfg.seeds {
        let (r, l) = knn_pair(&cfg, seed).map_err(e2s)?;
        let again = knn_pair(&cfg, seed).map_err(e2s)?;
        if again != (r, l) {
            return Err(format!("seed {seed}: KNN pipeline is not deterministic"));
        }
        raw.push(r);
        latent.push(l);
    }
    let (mr, ml) = (nio_core::util::mean(&raw), nio_core::util::mean(&latent));
    check(ml > mr, format!("KNN mean accuracy raw {mr:.4}, latent {ml:.4} (per seed raw {raw:.3?}, latent {latent:.3?})"))
}

// 10 ---------------------------------------------------------------------

fn random_tensor_map(rng: &mut ChaCha8Rng) -> BTreeMap<String, Tensor> {
    let mut map = BTreeMap::new();
    for i in 0..rng.random_range(0..6) {
        let rank = rng.random_range(0..4);
        let shape: Vec<usize> = (0..rank).map(|_| rng.random_range(1..5)).collect();
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| match rng.random_range(0..6) {
                0 => -0.0,
                1 => f64::MIN_POSITIVE / 3.0,
                2 => f64::MAX * rng.random_range(-1.0..1.0),
                _ => rng.random_range(-1e3..1e3),
            })
            .collect();
        let name: String = (0..rng.random_range(1..12)).map(|_| rng.random_range('a'..='z')).collect();
        map.insert(format!("{name}.{i}"), Tensor::new(shape, data).unwrap());
    }
    map
}

fn determinism_and_format() -> Outcome {
    let cfg = ExperimentConfig {
        tp_values: vec![1, 3],
        seeds: vec![0, 1],
        epochs: 2,
        learning_rate: 1e-2,
        dataset: DatasetSource::Synthetic(SyntheticSpec {
            n_voxels: 12,
            ..SyntheticSpec::default()
        }),
        ..ExperimentConfig::default()
    };
    let a = run_experiment(&cfg).map_err(e2s)?;
    let b = run_experiment(&cfg).map_err(e2s)?;
    let c = run_experiment_with(&cfg, Exec::Sequential).map_err(e2s)?;
    let csvs = |r: &ExperimentReport| (r.rows_csv().unwrap(), r.aggregates_csv().unwrap());
    let sweep_ok = csvs(&a) == csvs(&b) && csvs(&a) == csvs(&c);

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut roundtrip_failures = 0;
    for _ in 0..100 {
        let map = random_tensor_map(&mut rng);
        let back = decode_tensors(&encode_tensors(&map).map_err(e2s)?).map_err(e2s)?;
        let same = back.len() == map.len()
            && map.iter().zip(&back).all(|((ka, ta), (kb, tb))| {
                ka == kb
                    && ta.shape() == tb.shape()
                    && ta.data().iter().zip(tb.data()).all(|(x, y)| x.to_bits() == y.to_bits())
            });
        roundtrip_failures += usize::from(!same);
    }

    let mut map = BTreeMap::new();
    map.insert("w".to_string(), Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
    let good = encode_tensors(&map).map_err(e2s)?;
    let mut bad_magic = good.clone();
    bad_magic[0] = b'X';
    let mut bad_version = good.clone();
    bad_version[4] = 2;
    let mut flipped = good.clone();
    let mid = good.len() - 8;
    flipped[mid] ^= 0x10;
    let modes = [
        matches!(decode_tensors(&bad_magic), Err(Error::BadMagic { .. })),
        matches!(decode_tensors(&bad_version), Err(Error::UnsupportedVersion(2))),
        matches!(decode_tensors(&good[..good.len() - 3]), Err(Error::Truncated { .. })),
        matches!(decode_tensors(&flipped), Err(Error::ChecksumMismatch { .. })),
    ];
    check(
        sweep_ok && roundtrip_failures == 0 && modes.iter().all(|&m| m),
        format!(
            "repeat sweep byte-identical (parallel, parallel, sequential): {sweep_ok}; \
             {roundtrip_failures}/100 roundtrip failures; corruption modes [magic, version, truncated, checksum] {modes:?}"
        ),
    )
}

// -------------------------------------------------------------------------

type Criterion = (usize, &'static str, Duration, fn() -> Outcome);

fn main() {
    // the libtest harness passes flags such as --nocapture; none apply here
    let criteria: [Criterion; 10] = [
        (1, "gradient suite", Duration::from_secs(60), gradient_suite),
        (2, "fixed-point oracle", Duration::from_secs(5), fixed_point_oracle),
        (3, "quadrature convergence", Duration::from_secs(1), quadrature_convergence),
        (4, "operator symmetry", Duration::from_secs(60), operator_symmetry),
        (5, "metric oracles", Duration::from_secs(60), metric_oracles),
        (6, "overfit sanity", Duration::from_secs(30), overfit),
        (7, "temporal-context trend", Duration::from_secs(600), temporal_trend),
        (8, "spatial-context trend", Duration::from_secs(600), spatial_trend),
        (9, "latent-structure trend", Duration::from_secs(300), latent_trend),
        (10, "determinism and format", Duration::from_secs(600), determinism_and_format),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    let mut hard_failures = Vec::new();
    for (id, name, budget, run) in criteria {
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let (pass, detail) = match outcome {
            Ok(d) if elapsed <= budget => (true, d),
            Ok(d) => (false, format!("{d}; over the {budget:?} budget")),
            Err(d) => (false, d),
        };
        let tag = match (pass, KNOWN_UNATTAINABLE.contains(&id)) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known unattainable)",
            (false, false) => {
                hard_failures.push(id);
                "FAIL"
            }
        };
        println!("[{id:>2}] {tag:<4} {name}: {detail} [{:.2?}]", elapsed);
    }
    if !hard_failures.is_empty() {
        println!("failed criteria: {hard_failures:?}");
        std::process::exit(1);
    }
}
