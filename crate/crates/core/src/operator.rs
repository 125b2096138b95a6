//! The learned nonlocal operator
//!
//! `T(u)(x,t) = ∫₀¹ ∫_Ω K_θ(u(z,s), x, t, z, s) dz ds`
//!
//! realized as attention over grid points. Attention rows are reweighted by
//! the quadrature weight of each source point and renormalized, so the
//! attention sum is a quadrature rule for the integral. Coordinates enter
//! through sinusoidal features projected into the latent width and added to
//! the input.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::quadrature::CoordGrid;
use crate::tape::Var;
use crate::tensor::Tensor;

/// Parameters of one operator layer. Generic over storage so the same layout
/// serves plain tensors and tape variables.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelParams<T> {
    /// `[pos_dim × d_model]`
    pub w_pos: T,
    pub w_q: T,
    pub w_k: T,
    pub w_v: T,
    pub w_out: T,
    /// `[d_model × d_ff]`
    pub mlp_w1: T,
    pub mlp_b1: T,
    /// `[d_ff × d_model]`
    pub mlp_w2: T,
    pub mlp_b2: T,
}

pub const KERNEL_FIELDS: [&str; 9] = [
    "w_pos", "w_q", "w_k", "w_v", "w_out", "mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2",
];

impl<T> KernelParams<T> {
    pub fn fields(&self) -> [&T; 9] {
        [
            &self.w_pos, &self.w_q, &self.w_k, &self.w_v, &self.w_out,
            &self.mlp_w1, &self.mlp_b1, &self.mlp_w2, &self.mlp_b2,
        ]
    }

    pub fn fields_mut(&mut self) -> [&mut T; 9] {
        [
            &mut self.w_pos, &mut self.w_q, &mut self.w_k, &mut self.w_v, &mut self.w_out,
            &mut self.mlp_w1, &mut self.mlp_b1, &mut self.mlp_w2, &mut self.mlp_b2,
        ]
    }

    pub fn try_map<U, E>(&self, mut f: impl FnMut(&str, &T) -> Result<U, E>) -> Result<KernelParams<U>, E> {
        Ok(KernelParams {
            w_pos: f("w_pos", &self.w_pos)?,
            w_q: f("w_q", &self.w_q)?,
            w_k: f("w_k", &self.w_k)?,
            w_v: f("w_v", &self.w_v)?,
            w_out: f("w_out", &self.w_out)?,
            mlp_w1: f("mlp_w1", &self.mlp_w1)?,
            mlp_b1: f("mlp_b1", &self.mlp_b1)?,
            mlp_w2: f("mlp_w2", &self.mlp_w2)?,
            mlp_b2: f("mlp_b2", &self.mlp_b2)?,
        })
    }
}

impl KernelParams<Tensor> {
    /// Gaussian projections with standard deviation `0.02 · gain`, zero biases.
    pub fn init(d_model: usize, pos_dim: usize, d_ff: usize, gain: f64, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, 0.02 * gain).expect("finite std");
        let mut gauss = |r: usize, c: usize| {
            let data = (0..r * c).map(|_| normal.sample(rng)).collect();
            Tensor::new(vec![r, c], data).expect("shape")
        };
        KernelParams {
            w_pos: gauss(pos_dim, d_model),
            w_q: gauss(d_model, d_model),
            w_k: gauss(d_model, d_model),
            w_v: gauss(d_model, d_model),
            w_out: gauss(d_model, d_model),
            mlp_w1: gauss(d_model, d_ff),
            mlp_b1: Tensor::zeros(&[1, d_ff]),
            mlp_w2: gauss(d_ff, d_model),
            mlp_b2: Tensor::zeros(&[1, d_model]),
        }
    }

    pub fn d_model(&self) -> usize {
        self.w_q.shape()[0]
    }

    pub fn pos_dim(&self) -> usize {
        self.w_pos.shape()[0]
    }

    pub fn is_finite(&self) -> bool {
        self.fields().iter().all(|t| t.is_finite())
    }
}

/// Sinusoidal features of `coords [n × d]`.
///
/// Feature pair `j` is `(sin ω c, cos ω c)` of coordinate dimension `j mod d`
/// with `ω = 2π · 2^(j div d)`: dimensions are cycled, and every dimension
/// sees the lowest frequency `2π` before any dimension gets a higher one.
pub fn positional_encode(coords: &Tensor, pos_dim: usize) -> Result<Tensor> {
    if pos_dim == 0 || !pos_dim.is_multiple_of(2) {
        return Err(Error::usage(format!("pos_dim must be even and positive, got {pos_dim}")));
    }
    let (n, d) = coords.dims2()?;
    let mut out = Vec::with_capacity(n * pos_dim);
    for i in 0..n {
        let row = coords.row_slice(i);
        for j in 0..pos_dim / 2 {
            let omega = 2.0 * PI * f64::powi(2.0, (j / d) as i32);
            let phase = omega * row[j % d];
            out.push(phase.sin());
            out.push(phase.cos());
        }
    }
    Tensor::new(vec![n, pos_dim], out)
}

/// Per-grid constants shared by every operator application on that grid.
#[derive(Debug, Clone)]
pub struct PointContext {
    features: Tensor,
    log_weights: Tensor,
    weights: Vec<f64>,
}

impl PointContext {
    pub fn new(grid: &CoordGrid, pos_dim: usize) -> Result<Self> {
        let features = positional_encode(&grid.point_coords(), pos_dim)?;
        let weights = grid.point_weights();
        if weights.iter().any(|&w| w <= 0.0) {
            return Err(Error::usage("quadrature weights must be positive"));
        }
        let log_weights = Tensor::row(&weights.iter().map(|w| w.ln()).collect::<Vec<_>>());
        Ok(PointContext {
            features,
            log_weights,
            weights,
        })
    }

    pub fn n_points(&self) -> usize {
        self.weights.len()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    /// Product quadrature weight of every point.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

pub fn operator_apply<'t>(
    params: &KernelParams<Var<'t>>,
    u: Var<'t>,
    grid: &CoordGrid,
) -> Result<Var<'t>> {
    let ctx = PointContext::new(grid, params.w_pos.shape()[0])?;
    apply_with(params, u, &ctx)
}

/// `operator_apply` with precomputed grid constants.
pub fn apply_with<'t>(params: &KernelParams<Var<'t>>, u: Var<'t>, ctx: &PointContext) -> Result<Var<'t>> {
    let tape = u.tape();
    let (rows, d_model) = u.value().dims2()?;
    if rows != ctx.n_points() {
        return Err(Error::dim(format!(
            "operator input has {rows} rows but the grid has {} points",
            ctx.n_points()
        )));
    }
    let pe = tape.constant(ctx.features.clone())?;
    let h = u.add(pe.matmul(params.w_pos)?)?;

    let q = h.matmul(params.w_q)?.scale(1.0 / (d_model as f64).sqrt())?;
    let k = h.matmul(params.w_k)?;
    let v = h.matmul(params.w_v)?;
    // softmax(s + ln w) == softmax(s) ∘ w, renormalized per row
    let log_w = tape.constant(ctx.log_weights.clone())?;
    let attn = q.matmul(k.transpose()?)?.add_row(log_w)?.softmax(1)?;
    let mixed = attn.matmul(v)?.matmul(params.w_out)?;

    let hidden = mixed.matmul(params.mlp_w1)?.add_row(params.mlp_b1)?.tanh()?;
    mixed.add(hidden.matmul(params.mlp_w2)?.add_row(params.mlp_b2)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{integrate, make_grid, QuadratureRule, SpaceLayout};
    use crate::tape::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid() -> CoordGrid {
        make_grid(5, 2, 3, SpaceLayout::Uniform, None, QuadratureRule::Trapezoid).unwrap()
    }

    fn random_u(n: usize, d: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(vec![n, d], data).unwrap()
    }

    #[test]
    fn encoding_examples() {
        let c = Tensor::new(vec![1, 1], vec![0.0]).unwrap();
        let f = positional_encode(&c, 6).unwrap();
        for j in 0..3 {
            assert_eq!((f.data()[2 * j], f.data()[2 * j + 1]), (0.0, 1.0));
        }
        let c = Tensor::new(vec![1, 1], vec![0.5]).unwrap();
        let f = positional_encode(&c, 2).unwrap();
        assert!(f.data()[0].abs() < 1e-15);
        assert_eq!(f.data()[1], -1.0);
        assert!(positional_encode(&c, 3).is_err());
    }

    #[test]
    fn encoding_is_injective_on_unit_interval() {
        let c = Tensor::new(vec![2, 1], vec![0.2, 0.7]).unwrap();
        let f = positional_encode(&c, 4).unwrap();
        assert_ne!(f.row_slice(0), f.row_slice(1));
    }

    #[test]
    fn zero_value_path_annihilates() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = KernelParams::init(4, 4, 6, 20.0, &mut rng);
        p.w_v = Tensor::zeros(&[4, 4]);
        p.mlp_w2 = Tensor::zeros(&[6, 4]);
        let tape = Tape::new();
        let pv = p.try_map(|_, t| tape.constant(t.clone())).unwrap();
        let u = tape.constant(random_u(g.n_points(), 4, 1)).unwrap();
        let out = operator_apply(&pv, u, &g).unwrap();
        assert!(out.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn uniform_attention_is_weighted_mean() {
        let g = grid();
        let d = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut p = KernelParams::init(d, 4, 3, 20.0, &mut rng);
        p.w_q = Tensor::zeros(&[d, d]);
        p.w_k = Tensor::zeros(&[d, d]);
        p.w_v = Tensor::eye(d);
        p.w_out = Tensor::eye(d);
        p.mlp_w2 = Tensor::zeros(&[3, d]);
        let u = random_u(g.n_points(), d, 2);
        let h = {
            let pe = positional_encode(&g.point_coords(), 4).unwrap();
            let proj = pe.matmul(&p.w_pos).unwrap();
            let mut h = u.clone();
            h.data_mut().iter_mut().zip(proj.data()).for_each(|(a, b)| *a += b);
            h
        };
        let w = g.point_weights();
        let expected: Vec<f64> = (0..d)
            .map(|c| {
                let col: Vec<f64> = (0..g.n_points()).map(|i| h.at(i, c)).collect();
                integrate(&col, &w).unwrap()
            })
            .collect();

        let tape = Tape::new();
        let pv = p.try_map(|_, t| tape.constant(t.clone())).unwrap();
        let out = operator_apply(&pv, tape.constant(u).unwrap(), &g).unwrap().to_tensor();
        for i in 0..g.n_points() {
            for (c, e) in expected.iter().enumerate() {
                assert!((out.at(i, c) - e).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn row_mismatch_is_dimension_error() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = KernelParams::init(4, 4, 4, 0.5, &mut rng);
        let tape = Tape::new();
        let pv = p.try_map(|_, t| tape.constant(t.clone())).unwrap();
        let u = tape.constant(Tensor::zeros(&[3, 4])).unwrap();
        assert!(matches!(operator_apply(&pv, u, &g), Err(Error::Dimension(_))));
    }
}
