//! Damped Picard iteration for `u = T(u) + u_lat`.
//!
//! Every iterate is recorded on the tape, so gradients of a loss on `u*`
//! flow back through the unrolled iterations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::Var;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Relaxation weight α of the new iterate, in `(0, 1]`.
    pub damping: f64,
    pub tol: f64,
    pub divergence_factor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iters: 8,
            damping: 1.0,
            tol: 1e-6,
            divergence_factor: 1e3,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::usage("solver max_iters must be at least 1"));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::usage(format!("solver damping {} not in (0, 1]", self.damping)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::usage("solver tol must be positive"));
        }
        if !(self.divergence_factor > 0.0) {
            return Err(Error::usage("solver divergence_factor must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct FixedPointResult<'t> {
    pub u_star: Var<'t>,
    /// Residual of the iterate entering each iteration; `len == iters_used`.
    pub residual_history: Vec<f64>,
    pub converged: bool,
    pub iters_used: usize,
}

fn rms_diff(a: &Tensor, b: &Tensor) -> f64 {
    let ss: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    (ss / a.numel() as f64).sqrt()
}

/// `‖T(u) + u_lat − u‖₂ / √numel`
pub fn residual<'t, F>(mut op: F, u: Var<'t>, u_lat: Var<'t>) -> Result<f64>
where
    F: FnMut(Var<'t>) -> Result<Var<'t>>,
{
    if u.shape() != u_lat.shape() {
        return Err(Error::dim(format!(
            "residual: u {:?} vs u_lat {:?}",
            u.shape(),
            u_lat.shape()
        )));
    }
    let image = op(u)?;
    if image.shape() != u.shape() {
        return Err(Error::dim("operator changed the shape of its input"));
    }
    let target = image.add(u_lat)?;
    let r = rms_diff(&target.value(), &u.value());
    Ok(r)
}

/// Iterates `u ← (1−α)·u + α·(T(u) + u_lat)` from `u = u_lat`.
///
/// Stops once the residual of the current iterate is at most `tol` (the
/// returned `u_star` is then one update past that iterate) or after
/// `max_iters` updates. Fails with [`Error::Divergence`] if a residual
/// exceeds `divergence_factor · (r₀ + 1)`.
pub fn solve<'t, F>(mut op: F, u_lat: Var<'t>, cfg: &SolverConfig) -> Result<FixedPointResult<'t>>
where
    F: FnMut(Var<'t>) -> Result<Var<'t>>,
{
    cfg.validate()?;
    let mut u = u_lat;
    let mut history = Vec::with_capacity(cfg.max_iters);
    let mut converged = false;
    for k in 0..cfg.max_iters {
        let image = op(u)?;
        if image.shape() != u.shape() {
            return Err(Error::dim(format!(
                "operator maps {:?} to {:?}",
                u.shape(),
                image.shape()
            )));
        }
        let target = image.add(u_lat)?;
        let r = rms_diff(&target.value(), &u.value());
        history.push(r);
        if !r.is_finite() || r > cfg.divergence_factor * (history[0] + 1.0) {
            return Err(Error::Divergence {
                iteration: k + 1,
                residual: r,
            });
        }
        u = if cfg.damping == 1.0 {
            target
        } else {
            u.scale(1.0 - cfg.damping)?.add(target.scale(cfg.damping)?)?
        };
        if r <= cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(FixedPointResult {
        u_star: u,
        iters_used: history.len(),
        residual_history: history,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::Tape;

    fn cfg(max_iters: usize) -> SolverConfig {
        SolverConfig {
            max_iters,
            ..SolverConfig::default()
        }
    }

    #[test]
    fn zero_operator_converges_immediately() {
        let tape = Tape::new();
        let u_lat = tape.constant(Tensor::row(&[1.0, -2.0])).unwrap();
        let res = solve(|u| u.scale(0.0), u_lat, &cfg(8)).unwrap();
        assert!(res.converged);
        assert_eq!(res.iters_used, 1);
        assert_eq!(res.residual_history, vec![0.0]);
        assert_eq!(*res.u_star.value(), *u_lat.value());
    }

    #[test]
    fn scalar_half_contraction() {
        let tape = Tape::new();
        let u_lat = tape.constant(Tensor::scalar(1.0)).unwrap();
        let res = solve(|u| u.scale(0.5), u_lat, &cfg(100)).unwrap();
        assert!(res.converged);
        assert!((res.u_star.item() - 2.0).abs() < 1e-6);
        for w in res.residual_history.windows(2) {
            assert!((w[1] / w[0] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn expansive_operator_diverges() {
        let tape = Tape::new();
        let u_lat = tape.constant(Tensor::scalar(1.0)).unwrap();
        let err = solve(|u| u.scale(2.0), u_lat, &cfg(100)).unwrap_err();
        assert!(matches!(err, Error::Divergence { iteration, .. } if iteration > 1));
    }

    #[test]
    fn damping_still_reaches_fixed_point() {
        let tape = Tape::new();
        let u_lat = tape.constant(Tensor::scalar(1.0)).unwrap();
        let c = SolverConfig {
            max_iters: 200,
            damping: 0.5,
            ..SolverConfig::default()
        };
        let res = solve(|u| u.scale(0.5), u_lat, &c).unwrap();
        assert!(res.converged);
        assert!((res.u_star.item() - 2.0).abs() < 1e-5);
    }

    #[test]
    fn residual_examples() {
        let tape = Tape::new();
        let one = tape.constant(Tensor::scalar(1.0)).unwrap();
        assert_eq!(residual(|u| u.scale(0.5), one, one).unwrap(), 0.5);
        let zero = tape.constant(Tensor::scalar(0.0)).unwrap();
        assert_eq!(residual(|u| u.scale(0.0), zero, zero).unwrap(), 0.0);
        let two = tape.constant(Tensor::row(&[0.0, 0.0])).unwrap();
        assert!(matches!(residual(Ok, one, two), Err(Error::Dimension(_))));
    }

    #[test]
    fn converged_solution_has_small_residual() {
        let tape = Tape::new();
        let u_lat = tape.constant(Tensor::row(&[0.3, -1.0, 2.0])).unwrap();
        let c = cfg(100);
        let res = solve(|u| u.scale(0.3), u_lat, &c).unwrap();
        assert!(residual(|u| u.scale(0.3), res.u_star, u_lat).unwrap() <= c.tol);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let tape = Tape::new();
        let u_lat = tape.constant(Tensor::scalar(1.0)).unwrap();
        for bad in [
            SolverConfig { max_iters: 0, ..Default::default() },
            SolverConfig { damping: 0.0, ..Default::default() },
            SolverConfig { damping: 1.5, ..Default::default() },
            SolverConfig { tol: 0.0, ..Default::default() },
        ] {
            assert!(matches!(solve(Ok, u_lat, &bad), Err(Error::Usage(_))));
        }
    }
}
