//! PCA, k-nearest-neighbour evaluation with Monte Carlo splits, Welch's
//! t-test and 2-D embeddings of raw windows or model latents.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Recording;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::fixed_point::SolverConfig;
use crate::model::ModelParams;
use crate::quadrature::CoordGrid;
use crate::tensor::Tensor;
use crate::train::fit::{pooled_latent, SignalScale};
use crate::util::{derive_seed, mean, std_unbiased, write_atomic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    RawData,
    ModelLatent,
}

impl EmbeddingSource {
    pub fn as_str(self) -> &'static str {
        match self {
            EmbeddingSource::RawData => "raw_data",
            EmbeddingSource::ModelLatent => "model_latent",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    /// `[n × d]`
    pub points: Tensor,
    /// 0 = random, 1 = geometric.
    pub labels: Vec<usize>,
    /// Stable identities used for splits and tie-breaking.
    pub ids: Vec<u64>,
    pub source: EmbeddingSource,
}

impl EmbeddingSet {
    pub fn new(points: Tensor, labels: Vec<usize>, source: EmbeddingSource) -> Result<Self> {
        let ids = (0..labels.len() as u64).collect();
        Self::with_ids(points, labels, ids, source)
    }

    pub fn with_ids(points: Tensor, labels: Vec<usize>, ids: Vec<u64>, source: EmbeddingSource) -> Result<Self> {
        let (n, _) = points.dims2()?;
        if labels.len() != n || ids.len() != n {
            return Err(Error::dim(format!(
                "{n} points, {} labels, {} ids",
                labels.len(),
                ids.len()
            )));
        }
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::usage("embedding ids must be unique"));
        }
        Ok(EmbeddingSet { points, labels, ids, source })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    /// `[k × d]`, orthonormal rows.
    pub components: Tensor,
    /// `[n × k]`
    pub projected: Tensor,
    /// Variance along each component, nonincreasing.
    pub explained_variance: Vec<f64>,
    /// Total variance of the centered data (trace of the covariance).
    pub total_variance: f64,
    pub mean: Vec<f64>,
}

impl Pca {
    pub fn explained_ratio(&self) -> Vec<f64> {
        self.explained_variance
            .iter()
            .map(|v| if self.total_variance > 0.0 { v / self.total_variance } else { 0.0 })
            .collect()
    }
}

/// Principal components of the rows of `x` via the covariance eigensystem.
/// Each component's largest-magnitude entry is made positive.
pub fn pca(x: &Tensor, n_components: usize) -> Result<Pca> {
    let (n, d) = x.dims2()?;
    if n_components == 0 || n_components > n.min(d) {
        return Err(Error::usage(format!(
            "n_components {n_components} not in 1..={}",
            n.min(d)
        )));
    }
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row_slice(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| x.at(i, j) - mean[j]);
    let denom = (n.max(2) - 1) as f64;
    let cov = (centered.transpose() * &centered) / denom;
    let total_variance = cov.trace();
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let mut components = Vec::with_capacity(n_components * d);
    let mut explained = Vec::with_capacity(n_components);
    for &c in order.iter().take(n_components) {
        let col = eig.eigenvectors.column(c);
        let mut big = 0;
        for j in 1..d {
            if col[j].abs() > col[big].abs() {
                big = j;
            }
        }
        let sign = if col[big] < 0.0 { -1.0 } else { 1.0 };
        components.extend(col.iter().map(|v| sign * v));
        explained.push(eig.eigenvalues[c].max(0.0));
    }
    let components = Tensor::new(vec![n_components, d], components)?;
    let mut projected = vec![0.0; n * n_components];
    for i in 0..n {
        for c in 0..n_components {
            projected[i * n_components + c] = (0..d).map(|j| centered[(i, j)] * components.at(c, j)).sum();
        }
    }
    Ok(Pca {
        components,
        projected: Tensor::new(vec![n, n_components], projected)?,
        explained_variance: explained,
        total_variance,
        mean,
    })
}

pub const KNN_NEIGHBORS: usize = 5;
pub const KNN_SPLITS: usize = 10;
pub const KNN_TEST_FRAC: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnResult {
    pub mean_acc: f64,
    pub std_acc: f64,
    pub per_split: Vec<f64>,
}

fn knn_predict(e: &EmbeddingSet, train: &[usize], query: usize, k: usize) -> usize {
    let q = e.points.row_slice(query);
    let mut dist: Vec<(f64, u64, usize)> = train
        .iter()
        .map(|&i| {
            let d2 = e.points.row_slice(i).iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
            (d2, e.ids[i], i)
        })
        .collect();
    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let n_labels = e.labels.iter().max().map_or(1, |m| m + 1);
    let mut votes = vec![0usize; n_labels];
    for &(_, _, i) in dist.iter().take(k) {
        votes[e.labels[i]] += 1;
    }
    // first maximum = lowest label among ties
    let mut best = 0;
    for (label, &v) in votes.iter().enumerate() {
        if v > votes[best] {
            best = label;
        }
    }
    best
}

/// Euclidean k-NN accuracy over `n_splits` seeded random splits.
///
/// Splits are drawn over point identities, so permuting rows together with
/// their ids and labels leaves every split accuracy unchanged.
pub fn knn_eval(e: &EmbeddingSet, k: usize, n_splits: usize, test_frac: f64, seed: u64) -> Result<KnnResult> {
    let n = e.len();
    if k == 0 || n_splits == 0 {
        return Err(Error::usage("k and n_splits must be at least 1"));
    }
    if !(test_frac > 0.0 && test_frac < 1.0) {
        return Err(Error::usage(format!("test_frac {test_frac} not in (0, 1)")));
    }
    if n < 2 {
        return Err(Error::usage("k-NN needs at least two points"));
    }
    let n_test = ((n as f64 * test_frac).round() as usize).clamp(1, n - 1);
    if n - n_test < k {
        return Err(Error::usage(format!("train split of {} points is smaller than k = {k}", n - n_test)));
    }
    let mut by_id: Vec<usize> = (0..n).collect();
    by_id.sort_by_key(|&i| e.ids[i]);
    let splits: Vec<u64> = (0..n_splits as u64).collect();
    let per_split = Exec::default().map(&splits, |&s| {
        let mut order = by_id.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, s)));
        let (test, train) = order.split_at(n_test);
        let correct = test
            .iter()
            .filter(|&&q| knn_predict(e, train, q, k) == e.labels[q])
            .count();
        correct as f64 / n_test as f64
    });
    Ok(KnnResult {
        mean_acc: mean(&per_split),
        std_acc: std_unbiased(&per_split),
        per_split,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub dof: f64,
    pub p_two_sided: f64,
}

fn sample_var(xs: &[f64]) -> f64 {
    let s = std_unbiased(xs);
    s * s
}

/// Two-sample t-test with unequal variances and Welch–Satterthwaite dof.
pub fn welch_ttest(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::usage("welch t-test needs at least two values per sample"));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (sample_var(a) / na, sample_var(b) / nb);
    if va == 0.0 && vb == 0.0 {
        return Err(Error::Degenerate("both samples have zero variance".into()));
    }
    let t = (mean(a) - mean(b)) / (va + vb).sqrt();
    let dof = (va + vb).powi(2) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    let p = if t == 0.0 {
        1.0
    } else {
        reg_incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t))
    };
    Ok(WelchResult {
        t,
        dof,
        p_two_sided: p.clamp(0.0, 1.0),
    })
}

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=500 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-15 {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn reg_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Two-dimensional view: PCA to 2, preceded by PCA to at most 100
/// dimensions when the input is wider than that.
pub fn embed_2d(e: &EmbeddingSet) -> Result<Tensor> {
    let (n, d) = e.points.dims2()?;
    if n < 3 {
        return Err(Error::usage(format!("embedding needs at least 3 points, got {n}")));
    }
    if d > 100 {
        let stage = pca(&e.points, 100.min(n))?;
        return Ok(pca(&stage.projected, 2)?.projected);
    }
    Ok(pca(&e.points, 2)?.projected)
}

/// Flattened `[P·TP]` windows, mean-centered across windows.
pub fn raw_embeddings(windows: &[Recording]) -> Result<EmbeddingSet> {
    let first = windows.first().ok_or_else(|| Error::usage("no windows"))?;
    let d = first.signal.numel();
    let mut data = Vec::with_capacity(windows.len() * d);
    let mut labels = Vec::with_capacity(windows.len());
    for w in windows {
        if w.signal.numel() != d {
            return Err(Error::dim("windows differ in size"));
        }
        data.extend_from_slice(w.signal.data());
        labels.push(w.kind().ok_or_else(|| Error::usage("windows need labels"))?.label());
    }
    let n = windows.len();
    for j in 0..d {
        let m = (0..n).map(|i| data[i * d + j]).sum::<f64>() / n as f64;
        for i in 0..n {
            data[i * d + j] -= m;
        }
    }
    EmbeddingSet::new(Tensor::new(vec![n, d], data)?, labels, EmbeddingSource::RawData)
}

/// Pooled fixed points of the decoding pipeline for every window.
pub fn latent_embeddings(
    params: &ModelParams,
    windows: &[Recording],
    grid: &CoordGrid,
    solver: &SolverConfig,
    scale: &SignalScale,
    exec: Exec,
) -> Result<EmbeddingSet> {
    let rows = exec.try_map(windows, |w| pooled_latent(params, &scale.apply(&w.signal), grid, solver))?;
    let labels = windows
        .iter()
        .map(|w| w.kind().map(|k| k.label()).ok_or_else(|| Error::usage("windows need labels")))
        .collect::<Result<Vec<_>>>()?;
    let d = rows.first().map_or(0, Vec::len);
    let data: Vec<f64> = rows.into_iter().flatten().collect();
    EmbeddingSet::new(Tensor::new(vec![labels.len(), d], data)?, labels, EmbeddingSource::ModelLatent)
}

/// CSV `x,y,label,source` for the 2-D view of each set.
pub fn embedding_csv(sets: &[(&EmbeddingSet, &Tensor)]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Malformed(e.to_string());
    w.write_record(["x", "y", "label", "source"]).map_err(err)?;
    for (set, xy) in sets {
        for i in 0..set.len() {
            w.write_record([
                xy.at(i, 0).to_string(),
                xy.at(i, 1).to_string(),
                set.labels[i].to_string(),
                set.source.as_str().to_string(),
            ])
            .map_err(err)?;
        }
    }
    w.into_inner().map_err(|e| Error::Malformed(e.to_string()))
}

pub fn write_embedding_csv(path: &std::path::Path, sets: &[(&EmbeddingSet, &Tensor)]) -> Result<()> {
    write_atomic(path, &embedding_csv(sets)?)
}
