//! Direct normalizations of verb × frame counts: Dirichlet-Categorical and
//! Beta-Negative-Binomial MAP estimates, PMI and the G statistic.

use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CountsTable, FeatureMatrix, Vocab};
use crate::optim::FitDiagnostics;
use crate::stats::{digamma, ln_gamma, sigmoid, softplus, softplus_inv};
use crate::{Error, Result};

/// Smoothing values evaluated by default for every model.
pub const DEFAULT_GRID: [f64; 10] = [0.0, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0];

fn check_smoothing(name: &str, x: f64) -> Result<()> {
    if x.is_finite() && x >= 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be finite and nonnegative, got {x}")))
    }
}

// ---------------------------------------------------------------------------
// Dirichlet-Categorical
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DCParams {
    pub verbs: Vocab,
    pub frames: Vocab,
    /// Verbs × frames; each row is a distribution over frames.
    pub theta: DMatrix<f64>,
    pub lambda: f64,
}

/// Add-λ MAP estimate `θ_vf = (c_vf + λ) / (Σ_f c_vf + N_F λ)`.
pub fn dc_map(counts: &CountsTable, lambda: f64) -> Result<DCParams> {
    check_smoothing("lambda", lambda)?;
    let c = counts.dense();
    let nf = c.ncols() as f64;
    let mut theta = c.clone();
    for (v, mut row) in theta.row_iter_mut().enumerate() {
        let total: f64 = c.row(v).sum() + nf * lambda;
        if total <= 0.0 {
            return Err(Error::Domain(format!(
                "verb `{}` has no counts and lambda is 0",
                counts.verbs.name(v)
            )));
        }
        row.iter_mut().for_each(|x| *x = (*x + lambda) / total);
    }
    Ok(DCParams {
        verbs: counts.verbs.clone(),
        frames: counts.frames.clone(),
        theta,
        lambda,
    })
}

// ---------------------------------------------------------------------------
// Beta-Negative-Binomial
// ---------------------------------------------------------------------------

const PI_EPS: f64 = 1e-10;
const MAX_RATE: f64 = 1e8;

/// `log NegBin(c; π, r)` with pmf `Γ(c+r) / (Γ(r) c!) · π^c (1−π)^r`.
pub fn negbin_log_pmf(c: f64, pi: f64, r: f64) -> f64 {
    let head = ln_gamma(c + r) - ln_gamma(r) - ln_gamma(c + 1.0);
    let succ = if c > 0.0 { c * pi.ln() } else { 0.0 };
    head + succ + r * (-pi).ln_1p()
}

/// `log Beta(π; γ+1, γ+1)`.
pub fn beta_log_pdf(pi: f64, gamma: f64) -> f64 {
    let norm = 2.0 * ln_gamma(gamma + 1.0) - ln_gamma(2.0 * gamma + 2.0);
    gamma * (pi.ln() + (-pi).ln_1p()) - norm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BnbConfig {
    pub max_iters: usize,
    /// Relative change of the objective that stops the ascent.
    pub tolerance: f64,
}

impl Default for BnbConfig {
    fn default() -> Self {
        BnbConfig {
            max_iters: 1000,
            tolerance: 1e-12,
        }
    }
}

/// Per-verb log posterior in unconstrained coordinates `z_f = logit π_f`,
/// `ρ = softplus⁻¹ r`, with its gradient.
pub fn bnb_objective(counts: &[f64], z: &[f64], rho: f64, gamma: f64) -> (f64, Vec<f64>, f64) {
    let r = softplus(rho);
    let mut value = 0.0;
    let mut gz = Vec::with_capacity(z.len());
    let mut gr = 0.0;
    for (&c, &zf) in counts.iter().zip(z) {
        let pi = sigmoid(zf);
        value += negbin_log_pmf(c, pi, r) + beta_log_pdf(pi, gamma);
        gz.push((c + gamma) * (1.0 - pi) - (r + gamma) * pi);
        gr += digamma(c + r) - digamma(r) + (-pi).ln_1p();
    }
    (value, gz, gr * sigmoid(rho))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BNBParams {
    pub verbs: Vocab,
    pub frames: Vocab,
    /// Verbs × frames.
    pub pi: DMatrix<f64>,
    pub rate: Vec<f64>,
    pub gamma: f64,
    pub diagnostics: Vec<FitDiagnostics>,
}

/// Optimal `π` for each frame given the rate, clamped away from 0 and 1.
fn best_pi(counts: &[f64], r: f64, gamma: f64) -> Vec<f64> {
    counts
        .iter()
        .map(|&c| {
            let d = c + r + 2.0 * gamma;
            let p = if d > 0.0 { (c + gamma) / d } else { 0.5 };
            p.clamp(PI_EPS, 1.0 - PI_EPS)
        })
        .collect()
}

fn profile(counts: &[f64], r: f64, gamma: f64) -> (f64, f64, Vec<f64>) {
    let pi = best_pi(counts, r, gamma);
    let mut value = 0.0;
    let mut dr = 0.0;
    for (&c, &p) in counts.iter().zip(&pi) {
        value += negbin_log_pmf(c, p, r) + beta_log_pdf(p, gamma);
        dr += digamma(c + r) - digamma(r) + (-p).ln_1p();
    }
    (value, dr, pi)
}

/// MAP fit for one verb. `π` is maximized exactly for the current rate,
/// then the rate takes a gradient step in `ρ` that is halved until the
/// objective does not decrease, so the trace is monotone.
pub fn bnb_fit_verb(counts: &[f64], gamma: f64, cfg: &BnbConfig) -> (Vec<f64>, f64, FitDiagnostics) {
    let occupied: Vec<f64> = counts.iter().copied().filter(|&c| c > 0.0).collect();
    let r0 = if occupied.is_empty() {
        1.0
    } else {
        (occupied.iter().sum::<f64>() / occupied.len() as f64).max(0.1)
    };
    let rho_max = softplus_inv(MAX_RATE);
    let mut rho = softplus_inv(r0);
    let mut diag = FitDiagnostics::default();
    let initial: f64 = counts
        .iter()
        .map(|&c| negbin_log_pmf(c, 0.5, r0) + beta_log_pdf(0.5, gamma))
        .sum();
    diag.objective_trace.push(initial);
    let (mut value, mut dr, mut pi) = profile(counts, softplus(rho), gamma);
    diag.objective_trace.push(value);
    let mut step = 1.0;
    for it in 0..cfg.max_iters {
        diag.iterations = it + 1;
        let g = dr * sigmoid(rho);
        if g == 0.0 || (rho >= rho_max && g > 0.0) {
            diag.converged = true;
            break;
        }
        // scale so the first trial moves ρ by at most `step`
        let mut trial_step = step / (1.0 + g.abs());
        let mut accepted = None;
        for _ in 0..60 {
            let cand = (rho + trial_step * g).min(rho_max);
            let (v, d, p) = profile(counts, softplus(cand), gamma);
            if v >= value {
                accepted = Some((cand, v, d, p));
                break;
            }
            trial_step *= 0.5;
        }
        let Some((cand, v, d, p)) = accepted else {
            diag.converged = true;
            break;
        };
        let gain = v - value;
        rho = cand;
        value = v;
        dr = d;
        pi = p;
        diag.objective_trace.push(value);
        step = (step * 2.0).min(8.0);
        if gain <= cfg.tolerance * value.abs().max(1.0) {
            diag.converged = true;
            break;
        }
    }
    diag.final_objective = value;
    diag.gradient_norm = (dr * sigmoid(rho)).abs();
    (pi, softplus(rho), diag)
}

/// Per-verb MAP estimates of `(π_v, r_v)` under a symmetric
/// `Beta(γ+1, γ+1)` prior on each `π_vf` and a flat prior on `r_v`.
pub fn bnb_map(counts: &CountsTable, gamma: f64, cfg: &BnbConfig) -> Result<BNBParams> {
    check_smoothing("gamma", gamma)?;
    let c = counts.dense();
    let fits: Vec<(Vec<f64>, f64, FitDiagnostics)> = (0..c.nrows())
        .into_par_iter()
        .map(|v| {
            let row: Vec<f64> = c.row(v).iter().copied().collect();
            bnb_fit_verb(&row, gamma, cfg)
        })
        .collect();
    let at_bound = fits.iter().filter(|f| f.1 >= MAX_RATE * 0.999).count();
    if at_bound > 0 {
        warn!("{at_bound} verb(s) pushed the negative binomial rate to its upper bound (gamma = {gamma})");
    }
    let unconverged = fits.iter().filter(|f| !f.2.converged).count();
    if unconverged > 0 {
        warn!("{unconverged} verb(s) did not converge in {} iterations", cfg.max_iters);
    }
    let mut pi = DMatrix::zeros(c.nrows(), c.ncols());
    for (v, f) in fits.iter().enumerate() {
        for (j, p) in f.0.iter().enumerate() {
            pi[(v, j)] = *p;
        }
    }
    Ok(BNBParams {
        verbs: counts.verbs.clone(),
        frames: counts.frames.clone(),
        pi,
        rate: fits.iter().map(|f| f.1).collect(),
        gamma,
        diagnostics: fits.into_iter().map(|f| f.2).collect(),
    })
}

// ---------------------------------------------------------------------------
// PMI and G
// ---------------------------------------------------------------------------

/// How the joint `P(v, f)` behind PMI is smoothed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JointSmoothing {
    /// Add λ to every cell of the verbs × frames table.
    #[default]
    PerCell,
    /// Add-λ conditional `P(f|v)` per verb times the unsmoothed `P(v)`.
    PerVerb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoScores {
    pub verbs: Vocab,
    pub frames: Vocab,
    pub joint: DMatrix<f64>,
    /// `P(f|v)` from the same joint.
    pub conditional: DMatrix<f64>,
    /// Natural-log PMI; `-inf` where the smoothed joint is zero.
    pub pmi: DMatrix<f64>,
    /// `P(f|v) · PMI`, defined as 0 where PMI is `-inf`.
    pub g: DMatrix<f64>,
    pub lambda: f64,
    pub sentinel_cells: usize,
}

pub fn info_scores(counts: &CountsTable, lambda: f64, smoothing: JointSmoothing) -> Result<InfoScores> {
    check_smoothing("lambda", lambda)?;
    let c = counts.dense();
    let (nv, nf) = c.shape();
    let joint = match smoothing {
        JointSmoothing::PerCell => {
            let total = c.sum() + (nv * nf) as f64 * lambda;
            if total <= 0.0 {
                return Err(Error::Domain("empty count table".into()));
            }
            c.map(|x| (x + lambda) / total)
        }
        JointSmoothing::PerVerb => {
            let total = c.sum();
            if total <= 0.0 {
                return Err(Error::Domain("empty count table".into()));
            }
            let theta = dc_map(counts, lambda)?.theta;
            let mut j = theta;
            for v in 0..nv {
                let pv = c.row(v).sum() / total;
                j.row_mut(v).iter_mut().for_each(|x| *x *= pv);
            }
            j
        }
    };
    let pv: Vec<f64> = (0..nv).map(|v| joint.row(v).sum()).collect();
    let pf: Vec<f64> = (0..nf).map(|f| joint.column(f).sum()).collect();
    let mut pmi = DMatrix::zeros(nv, nf);
    let mut g = DMatrix::zeros(nv, nf);
    let mut cond = DMatrix::zeros(nv, nf);
    let mut sentinel_cells = 0;
    for v in 0..nv {
        for f in 0..nf {
            let pj = joint[(v, f)];
            if pj <= 0.0 {
                pmi[(v, f)] = f64::NEG_INFINITY;
                sentinel_cells += 1;
                continue;
            }
            let pc = pj / pv[v];
            let x = pj.ln() - pv[v].ln() - pf[f].ln();
            cond[(v, f)] = pc;
            pmi[(v, f)] = x;
            g[(v, f)] = pc * x;
        }
    }
    if sentinel_cells > 0 {
        warn!("{sentinel_cells} zero cell(s) have PMI of -inf at lambda = {lambda}");
    }
    Ok(InfoScores {
        verbs: counts.verbs.clone(),
        frames: counts.frames.clone(),
        joint,
        conditional: cond,
        pmi,
        g,
        lambda,
        sentinel_cells,
    })
}

/// PMI from the per-cell smoothed joint.
pub fn pmi(counts: &CountsTable, lambda: f64) -> Result<InfoScores> {
    info_scores(counts, lambda, JointSmoothing::PerCell)
}

/// G statistic; identical to [`pmi`], which computes both.
pub fn g_stat(counts: &CountsTable, lambda: f64) -> Result<InfoScores> {
    info_scores(counts, lambda, JointSmoothing::PerCell)
}

// ---------------------------------------------------------------------------
// Grids
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FreqModel {
    Dc,
    Bnb,
    Pmi,
    G,
}

impl FreqModel {
    pub fn name(self) -> &'static str {
        match self {
            FreqModel::Dc => "dc",
            FreqModel::Bnb => "bnb",
            FreqModel::Pmi => "pmi",
            FreqModel::G => "g",
        }
    }

    /// Name of the smoothing hyperparameter.
    pub fn hyperparameter(self) -> &'static str {
        match self {
            FreqModel::Bnb => "gamma",
            _ => "lambda",
        }
    }
}

impl std::str::FromStr for FreqModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dc" => Ok(FreqModel::Dc),
            "bnb" => Ok(FreqModel::Bnb),
            "pmi" => Ok(FreqModel::Pmi),
            "g" => Ok(FreqModel::G),
            _ => Err(Error::Config(format!("unknown frequency model `{s}` (dc, bnb, pmi, g)"))),
        }
    }
}

/// Treatment of `-inf` PMI cells in feature matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SentinelHandling {
    /// Replace by 0 and add a 0/1 indicator column for each affected frame.
    #[default]
    ZeroWithIndicator,
    /// Replace by 0 only.
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FreqConfig {
    pub joint_smoothing: JointSmoothing,
    pub sentinels: SentinelHandling,
    pub bnb: BnbConfig,
}

impl Default for FreqConfig {
    fn default() -> Self {
        FreqConfig {
            joint_smoothing: JointSmoothing::PerCell,
            sentinels: SentinelHandling::ZeroWithIndicator,
            bnb: BnbConfig::default(),
        }
    }
}

/// A verb-level representation tagged with the model that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Representation {
    pub model: String,
    pub hyperparameter: String,
    pub value: f64,
    pub features: FeatureMatrix,
}

impl Representation {
    /// File stem such as `bnb_gamma=0.1`.
    pub fn stem(&self) -> String {
        format!("{}_{}={}", self.model, self.hyperparameter, self.value)
    }

    pub fn metadata(&self) -> serde_json::Value {
        serde_json::json!({
            "model": self.model,
            "hyperparameter": self.hyperparameter,
            "value": self.value,
            "rows": self.features.nrows(),
            "dim": self.features.dim(),
        })
    }
}

fn frame_columns(frames: &Vocab) -> Vec<String> {
    frames.iter().map(String::from).collect()
}

fn with_sentinels(scores: &DMatrix<f64>, frames: &Vocab, handling: SentinelHandling) -> (Vec<String>, DMatrix<f64>) {
    let mut values = scores.map(|x| if x.is_finite() { x } else { 0.0 });
    let mut columns = frame_columns(frames);
    if handling == SentinelHandling::ZeroWithIndicator {
        let flagged: Vec<usize> = (0..scores.ncols())
            .filter(|&f| scores.column(f).iter().any(|x| !x.is_finite()))
            .collect();
        if !flagged.is_empty() {
            let base = values.ncols();
            values = values.insert_columns(base, flagged.len(), 0.0);
            for (k, &f) in flagged.iter().enumerate() {
                columns.push(format!("zero:{}", frames.name(f)));
                for v in 0..scores.nrows() {
                    if !scores[(v, f)].is_finite() {
                        values[(v, base + k)] = 1.0;
                    }
                }
            }
        }
    }
    (columns, values)
}

/// One representation for `model` at a single smoothing value.
pub fn representation(counts: &CountsTable, model: FreqModel, value: f64, cfg: &FreqConfig) -> Result<Representation> {
    let (columns, values) = match model {
        FreqModel::Dc => (frame_columns(&counts.frames), dc_map(counts, value)?.theta),
        FreqModel::Bnb => (frame_columns(&counts.frames), bnb_map(counts, value, &cfg.bnb)?.pi),
        FreqModel::Pmi => with_sentinels(&info_scores(counts, value, cfg.joint_smoothing)?.pmi, &counts.frames, cfg.sentinels),
        FreqModel::G => {
            let s = info_scores(counts, value, cfg.joint_smoothing)?;
            (frame_columns(&counts.frames), s.g)
        }
    };
    Ok(Representation {
        model: model.name().to_string(),
        hyperparameter: model.hyperparameter().to_string(),
        value,
        features: FeatureMatrix::for_verbs(&counts.verbs, columns, values)?,
    })
}

/// One representation per grid value, in grid order.
pub fn grid(counts: &CountsTable, model: FreqModel, values: &[f64], cfg: &FreqConfig) -> Result<Vec<Representation>> {
    if values.is_empty() {
        return Err(Error::Config("empty smoothing grid".into()));
    }
    values.iter().map(|&x| representation(counts, model, x, cfg)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[(&str, &str, u64)]) -> CountsTable {
        CountsTable::from_triples(rows.iter().copied()).0
    }

    #[test]
    fn dc_examples() {
        let t = table(&[("v", "a", 2), ("v", "b", 2)]);
        let th = dc_map(&t, 0.0).unwrap().theta;
        assert_eq!((th[(0, 0)], th[(0, 1)]), (0.5, 0.5));

        let t = table(&[("v", "a", 3), ("v", "b", 1), ("w", "c", 5)]);
        let th = dc_map(&t, 1.0).unwrap().theta;
        for (got, want) in th.row(0).iter().zip([4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0]) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn negbin_at_zero_count() {
        let (pi, r): (f64, f64) = (0.3, 2.5);
        assert!((negbin_log_pmf(0.0, pi, r) - r * (1.0 - pi).ln()).abs() < 1e-12);
    }

    #[test]
    fn pmi_diagonal_example() {
        let t = table(&[("a", "x", 10), ("a", "y", 0), ("b", "x", 0), ("b", "y", 10)]);
        let s = pmi(&t, 0.0).unwrap();
        assert!((s.pmi[(0, 0)] - 2f64.ln()).abs() < 1e-12);
        assert!((s.pmi[(1, 1)] - 2f64.ln()).abs() < 1e-12);
        assert_eq!(s.pmi[(0, 1)], f64::NEG_INFINITY);
        assert_eq!(s.sentinel_cells, 2);
        assert!((s.g[(0, 0)] - 2f64.ln()).abs() < 1e-12);
        assert_eq!(s.g[(0, 1)], 0.0);
    }

    #[test]
    fn sentinel_indicator_columns() {
        let t = table(&[("a", "x", 10), ("a", "y", 0), ("b", "x", 3), ("b", "y", 10)]);
        let r = representation(&t, FreqModel::Pmi, 0.0, &FreqConfig::default()).unwrap();
        assert_eq!(r.features.columns, vec!["x", "y", "zero:y"]);
        assert_eq!(r.features.values[(0, 2)], 1.0);
        assert_eq!(r.features.values[(0, 1)], 0.0);
        assert_eq!(r.features.values[(1, 2)], 0.0);
    }
}
