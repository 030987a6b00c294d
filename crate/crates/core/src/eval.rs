//! Ridge regression, nested cross-validation and held-out error analyses.

use std::collections::HashMap;

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agreement::{bootstrap_spearman, BootstrapCI};
use crate::data::{AcceptabilityMatrix, CountsTable, FeatureMatrix, RowKey};
use crate::rng;
use crate::stats::Undefined;
use crate::{Error, Result};

/// Penalties tried by the inner cross-validation by default.
pub const DEFAULT_ALPHA_GRID: [f64; 8] = [0.01, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0];

// ---------------------------------------------------------------------------
// Ridge
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    /// Features × targets, on the standardized feature scale.
    pub weights: DMatrix<f64>,
    pub intercept: Vec<f64>,
    pub alpha: f64,
    pub feature_mean: Vec<f64>,
    /// Population standard deviation of each feature; 1 for constants.
    pub feature_scale: Vec<f64>,
}

impl RidgeModel {
    pub fn predict(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let z = standardize(x, &self.feature_mean, &self.feature_scale);
        let mut p = z * &self.weights;
        for mut row in p.row_iter_mut() {
            for (t, y) in row.iter_mut().enumerate() {
                *y += self.intercept[t];
            }
        }
        p
    }
}

fn column_moments(x: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = x.nrows() as f64;
    let mean: Vec<f64> = x.column_iter().map(|c| c.sum() / n).collect();
    let scale = x
        .column_iter()
        .zip(&mean)
        .map(|(c, m)| {
            let sd = (c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
            if sd > 1e-12 * (1.0 + m.abs()) {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

fn standardize(x: &DMatrix<f64>, mean: &[f64], scale: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - mean[j]) / scale[j])
}

/// Ridge fits for several penalties sharing one eigendecomposition of the
/// standardized Gram matrix.
struct RidgePath {
    mean: Vec<f64>,
    scale: Vec<f64>,
    y_mean: Vec<f64>,
    q: DMatrix<f64>,
    eig: Vec<f64>,
    /// `Qᵀ Zᵀ Y_c`
    qzy: DMatrix<f64>,
}

impl RidgePath {
    fn new(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Self {
        let (mean, scale) = column_moments(x);
        let z = standardize(x, &mean, &scale);
        let n = y.nrows() as f64;
        let y_mean: Vec<f64> = y.column_iter().map(|c| c.sum() / n).collect();
        let yc = DMatrix::from_fn(y.nrows(), y.ncols(), |i, t| y[(i, t)] - y_mean[t]);
        let eigen = SymmetricEigen::new(z.transpose() * &z);
        let qzy = eigen.eigenvectors.transpose() * (z.transpose() * yc);
        RidgePath {
            mean,
            scale,
            y_mean,
            q: eigen.eigenvectors,
            eig: eigen.eigenvalues.iter().map(|e| e.max(0.0)).collect(),
            qzy,
        }
    }

    fn model(&self, alpha: f64) -> RidgeModel {
        let top = self.eig.iter().cloned().fold(0.0, f64::max);
        let cutoff = top * 1e-12 * self.eig.len().max(1) as f64;
        let mut scaled = self.qzy.clone();
        let mut deficient = false;
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            let d = self.eig[i] + alpha;
            if alpha == 0.0 && self.eig[i] <= cutoff {
                deficient = true;
                row.fill(0.0);
            } else {
                row /= d;
            }
        }
        if deficient {
            warn!("rank-deficient features with alpha = 0; using the minimum-norm solution");
        }
        RidgeModel {
            weights: &self.q * scaled,
            intercept: self.y_mean.clone(),
            alpha,
            feature_mean: self.mean.clone(),
            feature_scale: self.scale.clone(),
        }
    }
}

/// Closed-form ridge on standardized features and centered targets; the
/// intercept is not penalized. `alpha = 0` falls back to the pseudoinverse
/// when the features are rank deficient.
pub fn ridge_fit(x: &DMatrix<f64>, y: &DMatrix<f64>, alpha: f64) -> Result<RidgeModel> {
    if x.nrows() != y.nrows() {
        return Err(Error::Domain(format!("{} feature rows but {} target rows", x.nrows(), y.nrows())));
    }
    if x.nrows() == 0 {
        return Err(Error::Domain("ridge fit on zero rows".into()));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Domain(format!("ridge penalty must be finite and >= 0, got {alpha}")));
    }
    Ok(RidgePath::new(x, y).model(alpha))
}

// ---------------------------------------------------------------------------
// Variance explained
// ---------------------------------------------------------------------------

/// Residual and total sums of squares per target column, the latter around
/// the given baseline (training) means.
pub fn ss_parts(pred: &DMatrix<f64>, truth: &DMatrix<f64>, baseline: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let t = truth.ncols();
    let mut res = vec![0.0; t];
    let mut tot = vec![0.0; t];
    for i in 0..truth.nrows() {
        for j in 0..t {
            res[j] += (truth[(i, j)] - pred[(i, j)]).powi(2);
            tot[j] += (truth[(i, j)] - baseline[j]).powi(2);
        }
    }
    (res, tot)
}

fn ratio_r2(res: f64, tot: f64) -> std::result::Result<f64, Undefined> {
    if tot > 0.0 {
        Ok(1.0 - res / tot)
    } else {
        Err(Undefined::new("zero total sum of squares"))
    }
}

/// `1 − SS_res / SS_tot` pooled over every cell, with `SS_tot` around the
/// baseline (training-set) target means.
pub fn r2(pred: &DMatrix<f64>, truth: &DMatrix<f64>, baseline: &[f64]) -> std::result::Result<f64, Undefined> {
    let (res, tot) = ss_parts(pred, truth, baseline);
    ratio_r2(res.iter().sum(), tot.iter().sum())
}

/// The same ratio computed column by column.
pub fn per_frame_r2(pred: &DMatrix<f64>, truth: &DMatrix<f64>, baseline: &[f64]) -> Vec<std::result::Result<f64, Undefined>> {
    let (res, tot) = ss_parts(pred, truth, baseline);
    res.iter().zip(&tot).map(|(r, t)| ratio_r2(*r, *t)).collect()
}

// ---------------------------------------------------------------------------
// Cross-validation
// ---------------------------------------------------------------------------

/// Regression problem with aligned rows.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub rows: Vec<RowKey>,
    pub targets: Vec<String>,
}

/// Pairs features with acceptabilities. Verb-level features predict the
/// verb's whole row; item-level features predict the single item value.
/// Rows without a complete target are dropped with a warning.
pub fn align_targets(features: &FeatureMatrix, acc: &AcceptabilityMatrix) -> Result<Dataset> {
    let item_level = features.is_item_level();
    let targets: Vec<String> = if item_level {
        vec!["acceptability".to_string()]
    } else {
        acc.frames.iter().map(String::from).collect()
    };
    let mut keep = Vec::new();
    let mut yv = Vec::new();
    for (i, key) in features.keys.iter().enumerate() {
        let row: Option<Vec<f64>> = match key {
            RowKey::Verb(v) => acc.verbs.get(v).map(|r| acc.acceptability.row(r).iter().copied().collect()),
            RowKey::Item(v, f) => match (acc.verbs.get(v), acc.frames.get(f)) {
                (Some(r), Some(c)) => Some(vec![acc.acceptability[(r, c)]]),
                _ => None,
            },
        };
        if let Some(row) = row.filter(|r| r.iter().all(|x| x.is_finite())) {
            keep.push(i);
            yv.extend(row);
        }
    }
    let dropped = features.nrows() - keep.len();
    if dropped > 0 {
        warn!("{dropped} feature row(s) have no complete acceptability target and were dropped");
    }
    if keep.is_empty() {
        return Err(Error::Analysis("no feature rows match the acceptability targets".into()));
    }
    Ok(Dataset {
        x: features.values.select_rows(&keep),
        y: DMatrix::from_row_slice(keep.len(), targets.len(), &yv),
        rows: keep.iter().map(|&i| features.keys[i].clone()).collect(),
        targets,
    })
}

/// Seeded shuffle of `0..n` split into `k` contiguous folds.
pub fn fold_assignment(n: usize, k: usize, seed: u64, stream: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, stream));
    let base = n / k;
    let extra = n % k;
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        out.push(idx[start..start + len].to_vec());
        start += len;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub outer: usize,
    pub inner: usize,
    pub alpha_grid: Vec<f64>,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            outer: 10,
            inner: 10,
            alpha_grid: DEFAULT_ALPHA_GRID.to_vec(),
            seed: 0,
        }
    }
}

/// One held-out prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOut {
    pub verb: String,
    pub frame: String,
    pub fold: usize,
    pub truth: f64,
    pub pred: f64,
    pub abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CVReport {
    /// Free-form label of the representation evaluated.
    pub label: String,
    pub seed: u64,
    pub n_rows: usize,
    pub targets: Vec<String>,
    /// Pooled R² per outer fold.
    pub outer_fold_r2: Vec<f64>,
    pub mean_r2: f64,
    /// R² averaged over target columns, per outer fold.
    pub outer_fold_column_r2: Vec<f64>,
    pub mean_column_r2: f64,
    pub chosen_alpha: Vec<f64>,
    /// Per target column, residual over total sums of squares pooled across
    /// outer folds.
    pub per_frame_r2: Vec<(String, f64)>,
    /// Row indices (into the aligned dataset) held out by each outer fold.
    pub folds: Vec<Vec<usize>>,
    pub held_out: Vec<HeldOut>,
}

impl CVReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::data(path, e.line(), e.to_string()))
    }
}

fn finite_mean(xs: &[f64]) -> f64 {
    let v: Vec<f64> = xs.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn column_means(y: &DMatrix<f64>) -> Vec<f64> {
    let n = y.nrows() as f64;
    y.column_iter().map(|c| c.sum() / n).collect()
}

/// Picks the penalty with the best mean inner-fold R²; ties go to the larger
/// penalty.
fn select_alpha(x: &DMatrix<f64>, y: &DMatrix<f64>, cfg: &CvConfig, stream: u64) -> f64 {
    let folds = fold_assignment(x.nrows(), cfg.inner, cfg.seed, stream);
    let mut grid = cfg.alpha_grid.clone();
    grid.sort_by(f64::total_cmp);
    let scores: Vec<Vec<f64>> = folds
        .par_iter()
        .map(|test| {
            let train = complement(x.nrows(), test);
            let (xt, yt) = (x.select_rows(&train), y.select_rows(&train));
            let path = RidgePath::new(&xt, &yt);
            let base = column_means(&yt);
            let (xv, yv) = (x.select_rows(test), y.select_rows(test));
            grid.iter()
                .map(|&a| r2(&path.model(a).predict(&xv), &yv, &base).unwrap_or(f64::NAN))
                .collect()
        })
        .collect();
    let mut best = (f64::NEG_INFINITY, grid[grid.len() - 1]);
    for (g, &a) in grid.iter().enumerate() {
        let per: Vec<f64> = scores.iter().map(|s| s[g]).collect();
        let m = finite_mean(&per);
        if m.is_finite() && m >= best.0 {
            best = (m, a);
        }
    }
    best.1
}

fn complement(n: usize, test: &[usize]) -> Vec<usize> {
    let mut mask = vec![true; n];
    for &i in test {
        mask[i] = false;
    }
    (0..n).filter(|&i| mask[i]).collect()
}

struct FoldResult {
    r2: f64,
    column_r2: f64,
    alpha: f64,
    res: Vec<f64>,
    tot: Vec<f64>,
    pred: DMatrix<f64>,
}

/// Nested cross-validated ridge: the outer folds estimate held-out R², the
/// inner folds of each training split choose the penalty.
pub fn nested_cv(data: &Dataset, cfg: &CvConfig, label: &str) -> Result<CVReport> {
    let n = data.x.nrows();
    if cfg.alpha_grid.is_empty() {
        return Err(Error::Config("empty ridge penalty grid".into()));
    }
    if cfg.outer < 2 || cfg.inner < 2 {
        return Err(Error::Config("cross-validation needs at least two folds".into()));
    }
    let min_rows = cfg.outer.max(cfg.inner) * 2;
    if n < min_rows || n < cfg.outer {
        return Err(Error::Config(format!(
            "{n} rows are too few for {}-fold / {}-fold cross-validation",
            cfg.outer, cfg.inner
        )));
    }
    let folds = fold_assignment(n, cfg.outer, cfg.seed, 0);
    let results: Vec<FoldResult> = folds
        .par_iter()
        .enumerate()
        .map(|(k, test)| {
            let train = complement(n, test);
            // the held-out rows must never be part of the training split
            debug_assert!(test.iter().all(|i| train.binary_search(i).is_err()));
            let (xt, yt) = (data.x.select_rows(&train), data.y.select_rows(&train));
            let alpha = select_alpha(&xt, &yt, cfg, 1 + k as u64);
            let model = RidgePath::new(&xt, &yt).model(alpha);
            let base = column_means(&yt);
            let yv = data.y.select_rows(test);
            let pred = model.predict(&data.x.select_rows(test));
            let (res, tot) = ss_parts(&pred, &yv, &base);
            let r2 = ratio_r2(res.iter().sum(), tot.iter().sum()).unwrap_or(f64::NAN);
            let cols: Vec<f64> = res.iter().zip(&tot).map(|(r, t)| ratio_r2(*r, *t).unwrap_or(f64::NAN)).collect();
            FoldResult {
                r2,
                column_r2: finite_mean(&cols),
                alpha,
                res,
                tot,
                pred,
            }
        })
        .collect();

    let t = data.y.ncols();
    let mut res = vec![0.0; t];
    let mut tot = vec![0.0; t];
    let mut held_out = Vec::new();
    for (k, (fold, test)) in results.iter().zip(&folds).enumerate() {
        for j in 0..t {
            res[j] += fold.res[j];
            tot[j] += fold.tot[j];
        }
        for (r, &i) in test.iter().enumerate() {
            for j in 0..t {
                let (verb, frame) = match &data.rows[i] {
                    RowKey::Verb(v) => (v.clone(), data.targets[j].clone()),
                    RowKey::Item(v, f) => (v.clone(), f.clone()),
                };
                let (truth, pred) = (data.y[(i, j)], fold.pred[(r, j)]);
                held_out.push(HeldOut {
                    verb,
                    frame,
                    fold: k,
                    truth,
                    pred,
                    abs_error: (truth - pred).abs(),
                });
            }
        }
    }
    let outer_fold_r2: Vec<f64> = results.iter().map(|r| r.r2).collect();
    let outer_fold_column_r2: Vec<f64> = results.iter().map(|r| r.column_r2).collect();
    Ok(CVReport {
        label: label.to_string(),
        seed: cfg.seed,
        n_rows: n,
        targets: data.targets.clone(),
        mean_r2: outer_fold_r2.iter().sum::<f64>() / outer_fold_r2.len() as f64,
        mean_column_r2: finite_mean(&outer_fold_column_r2),
        outer_fold_r2,
        outer_fold_column_r2,
        chosen_alpha: results.iter().map(|r| r.alpha).collect(),
        per_frame_r2: data
            .targets
            .iter()
            .zip(res.iter().zip(&tot))
            .map(|(name, (r, t))| (name.clone(), ratio_r2(*r, *t).unwrap_or(f64::NAN)))
            .collect(),
        folds,
        held_out,
    })
}

// ---------------------------------------------------------------------------
// Error analyses
// ---------------------------------------------------------------------------

/// Per-item covariates for the error analysis.
pub fn variability_covariate(acc: &AcceptabilityMatrix) -> HashMap<(String, String), f64> {
    let mut out = HashMap::new();
    for (v, verb) in acc.verbs.iter().enumerate() {
        for (f, frame) in acc.frames.iter().enumerate() {
            let x = acc.variability[(v, f)];
            if x.is_finite() {
                out.insert((verb.to_string(), frame.to_string()), x);
            }
        }
    }
    out
}

/// Total count of each verb, as a per-item covariate for every frame in
/// `frames`.
pub fn frequency_covariate(counts: &CountsTable, frames: &[String]) -> HashMap<(String, String), f64> {
    let totals = counts.row_totals();
    let mut out = HashMap::new();
    for (v, verb) in counts.verbs.iter().enumerate() {
        for f in frames {
            out.insert((verb.to_string(), f.clone()), totals[v] as f64);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCorrelation {
    pub rho: f64,
    pub ci: BootstrapCI,
    pub n_items: usize,
}

/// Spearman correlation between held-out absolute error and a per-item
/// covariate, with a percentile bootstrap over items.
pub fn error_correlation(
    held_out: &[HeldOut],
    covariate: &HashMap<(String, String), f64>,
    replicates: usize,
    level: f64,
    seed: u64,
) -> Result<ErrorCorrelation> {
    let (mut errs, mut cov) = (Vec::new(), Vec::new());
    for h in held_out {
        if let Some(&c) = covariate.get(&(h.verb.clone(), h.frame.clone())) {
            errs.push(h.abs_error);
            cov.push(c);
        }
    }
    if errs.len() < 2 {
        return Err(Error::Analysis("fewer than two items have both an error and a covariate".into()));
    }
    let run = bootstrap_spearman(&cov, &errs, replicates, level, seed)?;
    Ok(ErrorCorrelation {
        rho: run.ci.point,
        ci: run.ci,
        n_items: errs.len(),
    })
}
