//! Space–time sample grids and the quadrature weights that turn sums over
//! grid points into integrals over `[0,1] × Ω`.
//!
//! Both measures are normalized to one, so every weight vector is a
//! probability vector. Grid points are ordered time-major: all spatial
//! points of frame 0, then frame 1, and so on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureRule {
    #[default]
    Riemann,
    Trapezoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaceLayout {
    /// Regular lattice with `side^d_s >= n_space` nodes at `k / side`.
    Uniform,
    /// Caller-supplied voxel coordinates, min–max rescaled per dimension.
    Provided,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordGrid {
    space_coords: Tensor,
    time_coords: Vec<f64>,
    space_weights: Vec<f64>,
    time_weights: Vec<f64>,
}

pub fn quadrature_weights(n: usize, rule: QuadratureRule) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::usage("quadrature needs at least one node"));
    }
    if n == 1 {
        return Ok(vec![1.0]);
    }
    Ok(match rule {
        QuadratureRule::Riemann => vec![1.0 / n as f64; n],
        QuadratureRule::Trapezoid => {
            let h = 1.0 / (n - 1) as f64;
            let mut w = vec![h; n];
            w[0] = 0.5 * h;
            w[n - 1] = 0.5 * h;
            w
        }
    })
}

pub fn integrate(samples: &[f64], weights: &[f64]) -> Result<f64> {
    if samples.len() != weights.len() {
        return Err(Error::dim(format!(
            "integrate: {} samples vs {} weights",
            samples.len(),
            weights.len()
        )));
    }
    Ok(samples.iter().zip(weights).map(|(s, w)| s * w).sum())
}

/// Evenly spaced time nodes covering `[0,1]`; a single frame sits at 0.5.
pub fn time_coords(n_time: usize) -> Vec<f64> {
    match n_time {
        0 => Vec::new(),
        1 => vec![0.5],
        n => (0..n).map(|k| k as f64 / (n - 1) as f64).collect(),
    }
}

fn uniform_lattice(n_space: usize, d_s: usize) -> Tensor {
    let mut side = 1usize;
    while side.pow(d_s as u32) < n_space {
        side += 1;
    }
    let mut data = Vec::with_capacity(n_space * d_s);
    for i in 0..n_space {
        let mut rest = i;
        for _ in 0..d_s {
            data.push((rest % side) as f64 / side as f64);
            rest /= side;
        }
    }
    Tensor::new(vec![n_space, d_s], data).expect("lattice shape")
}

fn rescale_min_max(coords: &Tensor) -> Tensor {
    let (n, d) = coords.dims2().expect("checked by caller");
    let mut out = coords.clone();
    for j in 0..d {
        let col = (0..n).map(|i| coords.at(i, j));
        let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
        for i in 0..n {
            out.data_mut()[i * d + j] = if hi > lo {
                (coords.at(i, j) - lo) / (hi - lo)
            } else {
                0.5
            };
        }
    }
    out
}

pub fn make_grid(
    n_space: usize,
    d_s: usize,
    n_time: usize,
    layout: SpaceLayout,
    provided: Option<&Tensor>,
    time_rule: QuadratureRule,
) -> Result<CoordGrid> {
    if n_space == 0 || n_time == 0 || d_s == 0 {
        return Err(Error::usage(format!(
            "grid needs n_space, d_s, n_time >= 1 (got {n_space}, {d_s}, {n_time})"
        )));
    }
    let space_coords = match layout {
        SpaceLayout::Uniform => uniform_lattice(n_space, d_s),
        SpaceLayout::Provided => {
            let coords = provided
                .ok_or_else(|| Error::usage("provided layout requires voxel coordinates"))?;
            if coords.shape() != [n_space, d_s] {
                return Err(Error::dim(format!(
                    "provided coordinates {:?}, expected [{n_space}, {d_s}]",
                    coords.shape()
                )));
            }
            if !coords.is_finite() {
                return Err(Error::usage("provided coordinates must be finite"));
            }
            rescale_min_max(coords)
        }
    };
    Ok(CoordGrid {
        space_coords,
        time_coords: time_coords(n_time),
        space_weights: quadrature_weights(n_space, QuadratureRule::Riemann)?,
        time_weights: quadrature_weights(n_time, time_rule)?,
    })
}

impl CoordGrid {
    pub fn n_space(&self) -> usize {
        self.space_weights.len()
    }

    pub fn n_time(&self) -> usize {
        self.time_weights.len()
    }

    pub fn n_points(&self) -> usize {
        self.n_space() * self.n_time()
    }

    pub fn d_s(&self) -> usize {
        self.space_coords.shape()[1]
    }

    pub fn space_coords(&self) -> &Tensor {
        &self.space_coords
    }

    pub fn time_coords(&self) -> &[f64] {
        &self.time_coords
    }

    pub fn space_weights(&self) -> &[f64] {
        &self.space_weights
    }

    pub fn time_weights(&self) -> &[f64] {
        &self.time_weights
    }

    /// `[P·T × (d_s + 1)]` coordinates `(x, t)` of every grid point, time-major.
    pub fn point_coords(&self) -> Tensor {
        let (p, d) = (self.n_space(), self.d_s());
        let mut data = Vec::with_capacity(self.n_points() * (d + 1));
        for &t in &self.time_coords {
            for i in 0..p {
                data.extend_from_slice(self.space_coords.row_slice(i));
                data.push(t);
            }
        }
        Tensor::new(vec![self.n_points(), d + 1], data).expect("point coords")
    }

    /// Product weights `space_w[z] · time_w[s]` of every grid point, time-major.
    pub fn point_weights(&self) -> Vec<f64> {
        self.time_weights
            .iter()
            .flat_map(|wt| self.space_weights.iter().map(move |ws| ws * wt))
            .collect()
    }

    /// The same grid with spatial points reordered: new point `i` is old point `perm[i]`.
    pub fn permute_space(&self, perm: &[usize]) -> Result<CoordGrid> {
        let mut seen = vec![false; self.n_space()];
        if perm.len() != self.n_space() || !perm.iter().all(|&i| i < seen.len() && !std::mem::replace(&mut seen[i], true)) {
            return Err(Error::usage("not a permutation of the spatial points"));
        }
        Ok(CoordGrid {
            space_coords: self.space_coords.select_rows(perm)?,
            time_coords: self.time_coords.clone(),
            space_weights: perm.iter().map(|&i| self.space_weights[i]).collect(),
            time_weights: self.time_weights.clone(),
        })
    }
}
