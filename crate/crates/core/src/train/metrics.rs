use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ClassMetrics {
    pub fn named(&self) -> [(&'static str, f64); 4] {
        [
            ("accuracy", self.accuracy),
            ("precision", self.precision),
            ("recall", self.recall),
            ("f1", self.f1),
        ]
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy plus macro-averaged precision, recall and F1 over all
/// `n_classes` (0/0 counts as 0).
pub fn macro_metrics(preds: &[usize], labels: &[usize], n_classes: usize) -> Result<ClassMetrics> {
    if preds.len() != labels.len() {
        return Err(Error::usage(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    if preds.is_empty() || n_classes == 0 {
        return Err(Error::usage("macro metrics need at least one sample and one class"));
    }
    if let Some(bad) = preds.iter().chain(labels).find(|&&c| c >= n_classes) {
        return Err(Error::usage(format!("class {bad} out of range for {n_classes} classes")));
    }
    let mut tp = vec![0usize; n_classes];
    let mut pred_count = vec![0usize; n_classes];
    let mut true_count = vec![0usize; n_classes];
    for (&p, &l) in preds.iter().zip(labels) {
        pred_count[p] += 1;
        true_count[l] += 1;
        if p == l {
            tp[p] += 1;
        }
    }
    let (mut prec, mut rec, mut f1) = (0.0, 0.0, 0.0);
    for c in 0..n_classes {
        let p = ratio(tp[c], pred_count[c]);
        let r = ratio(tp[c], true_count[c]);
        prec += p;
        rec += r;
        f1 += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    }
    let k = n_classes as f64;
    Ok(ClassMetrics {
        accuracy: ratio(tp.iter().sum(), preds.len()),
        precision: prec / k,
        recall: rec / k,
        f1: f1 / k,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub r2_mean: f64,
    pub pearson_mean: f64,
    /// Voxels left out of `r2_mean` (constant target).
    pub skipped_r2: usize,
    /// Voxels left out of `pearson_mean` (constant target or prediction).
    pub skipped_pearson: usize,
}

/// Per-voxel R² and Pearson r over time (rows are voxels), averaged over voxels.
pub fn regression_metrics(pred: &Tensor, target: &Tensor) -> Result<RegressionMetrics> {
    if pred.shape() != target.shape() {
        return Err(Error::dim(format!("pred {:?} vs target {:?}", pred.shape(), target.shape())));
    }
    let (p, _) = target.dims2()?;
    let (mut r2_sum, mut r2_n, mut r_sum, mut r_n) = (0.0, 0usize, 0.0, 0usize);
    for v in 0..p {
        let y = target.row_slice(v);
        let yhat = pred.row_slice(v);
        let n = y.len() as f64;
        let my = y.iter().sum::<f64>() / n;
        let mp = yhat.iter().sum::<f64>() / n;
        let ss_tot: f64 = y.iter().map(|a| (a - my).powi(2)).sum();
        if ss_tot == 0.0 {
            continue;
        }
        let ss_res: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum();
        r2_sum += 1.0 - ss_res / ss_tot;
        r2_n += 1;
        let ss_pred: f64 = yhat.iter().map(|b| (b - mp).powi(2)).sum();
        if ss_pred > 0.0 {
            let cov: f64 = y.iter().zip(yhat).map(|(a, b)| (a - my) * (b - mp)).sum();
            r_sum += cov / (ss_tot * ss_pred).sqrt();
            r_n += 1;
        }
    }
    if r2_n == 0 {
        return Err(Error::Degenerate("every voxel has a constant target".into()));
    }
    Ok(RegressionMetrics {
        r2_mean: r2_sum / r2_n as f64,
        pearson_mean: if r_n == 0 { 0.0 } else { r_sum / r_n as f64 },
        skipped_r2: p - r2_n,
        skipped_pearson: p - r_n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_confusion_example() {
        let m = macro_metrics(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        assert_eq!(m.accuracy, 0.75);
        assert!((m.precision - 0.75).abs() < 1e-12);
        assert!((m.recall - 5.0 / 6.0).abs() < 1e-12);
        // F1: class 0 → 2/3, class 1 → 0.8
        assert!((m.f1 - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_absent_classes() {
        let m = macro_metrics(&[0, 1, 1], &[0, 1, 1], 2).unwrap();
        assert_eq!(m.named().map(|x| x.1), [1.0; 4]);
        let m = macro_metrics(&[0, 1], &[0, 1], 3).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn bad_inputs() {
        assert!(matches!(macro_metrics(&[0], &[0, 1], 2), Err(Error::Usage(_))));
        assert!(matches!(macro_metrics(&[2], &[0], 2), Err(Error::Usage(_))));
    }

    #[test]
    fn regression_cases() {
        let y = Tensor::from_rows(&[vec![1.0, -1.0, 2.0, -2.0]]).unwrap();
        let m = regression_metrics(&y, &y).unwrap();
        assert_eq!((m.r2_mean, m.pearson_mean), (1.0, 1.0));
        let neg = Tensor::new(vec![1, 4], y.data().iter().map(|x| -x).collect()).unwrap();
        let m = regression_metrics(&neg, &y).unwrap();
        assert!((m.r2_mean + 3.0).abs() < 1e-12);
        assert!((m.pearson_mean + 1.0).abs() < 1e-12);
        let flat = Tensor::zeros(&[1, 4]);
        let m = regression_metrics(&flat, &y).unwrap();
        assert_eq!(m.r2_mean, 0.0);
        assert_eq!(m.skipped_pearson, 1);
        assert!(matches!(regression_metrics(&y, &flat), Err(Error::Degenerate(_))));
    }
}
