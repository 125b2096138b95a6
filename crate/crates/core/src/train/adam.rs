use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        AdamHyper { lr, ..Default::default() }
    }
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState { v: m.clone(), m }
    }
}

/// One bias-corrected Adam update at step `t` (1-based).
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    hyper: &AdamHyper,
    t: u64,
) -> Result<()> {
    if t == 0 {
        return Err(Error::usage("adam step counter starts at 1"));
    }
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::dim(format!(
            "adam: {} params, {} grads, {} state slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::dim(format!(
                "adam slot {i}: param {:?}, grad {:?}, state {:?}",
                p.shape(),
                g.shape(),
                state.m[i].shape()
            )));
        }
    }
    let bc1 = 1.0 - hyper.beta1.powf(t as f64);
    let bc2 = 1.0 - hyper.beta2.powf(t as f64);
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        for (mj, gj) in m.iter_mut().zip(g) {
            *mj = hyper.beta1 * *mj + (1.0 - hyper.beta1) * gj;
        }
        let v = state.v[i].data_mut();
        for (vj, gj) in v.iter_mut().zip(g) {
            *vj = hyper.beta2 * *vj + (1.0 - hyper.beta2) * gj * gj;
        }
        let (m, v) = (state.m[i].data(), state.v[i].data());
        for ((pj, mj), vj) in p.data_mut().iter_mut().zip(m).zip(v) {
            *pj -= hyper.lr * (mj / bc1) / ((vj / bc2).sqrt() + hyper.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = Tensor::row(&[1.0, -2.0]);
        let before = p.clone();
        let mut st = AdamState::new([&p]);
        adam_step(&mut [&mut p], &[Tensor::zeros(&[1, 2])], &mut st, &AdamHyper::default(), 1).unwrap();
        assert_eq!(p, before);
        assert!(st.m[0].data().iter().chain(st.v[0].data()).all(|&x| x == 0.0));
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let mut p = Tensor::row(&[0.0, 0.0, 0.0]);
        let g = Tensor::row(&[3.0, -0.5, 1e-3]);
        let mut st = AdamState::new([&p]);
        let h = AdamHyper::with_lr(0.01);
        adam_step(&mut [&mut p], std::slice::from_ref(&g), &mut st, &h, 1).unwrap();
        for (pj, gj) in p.data().iter().zip(g.data()) {
            assert!((pj + 0.01 * gj.signum()).abs() < 1e-7, "{pj}");
        }
    }

    #[test]
    fn deterministic_and_checked() {
        let run = || {
            let mut p = Tensor::row(&[0.5, 0.25]);
            let mut st = AdamState::new([&p]);
            for t in 1..=5 {
                let g = Tensor::row(&[p.data()[0] * 2.0, -1.0]);
                adam_step(&mut [&mut p], &[g], &mut st, &AdamHyper::default(), t).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
        let mut p = Tensor::row(&[0.0]);
        let mut st = AdamState::new([&p]);
        let h = AdamHyper::default();
        assert!(adam_step(&mut [&mut p], &[Tensor::zeros(&[1, 2])], &mut st, &h, 1).is_err());
        assert!(adam_step(&mut [&mut p], &[Tensor::zeros(&[1, 1])], &mut st, &h, 0).is_err());
    }
}
