use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::Var;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    BcePixels,
    Mse,
}

/// `−log softmax(logits)[target]` for a single row of logits.
pub fn cross_entropy<'t>(logits: Var<'t>, target: usize) -> Result<Var<'t>> {
    let n = logits.value().numel();
    if target >= n {
        return Err(Error::dim(format!("class {target} out of {n} logits")));
    }
    let flat = logits.reshape(&[1, n])?;
    flat.log_softmax(1)?.select(target)?.neg()
}

/// Mean logit-space binary cross-entropy over pixels.
pub fn bce_pixels<'t>(logits: Var<'t>, target: &[f64]) -> Result<Var<'t>> {
    logits.bce_with_logits(target)
}

pub fn mse<'t>(pred: Var<'t>, target: Var<'t>) -> Result<Var<'t>> {
    if pred.shape() != target.shape() {
        return Err(Error::dim(format!("mse: {:?} vs {:?}", pred.shape(), target.shape())));
    }
    pred.sub(target)?.square()?.mean()
}
