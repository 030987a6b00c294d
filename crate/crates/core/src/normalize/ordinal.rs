//! Cumulative-logit model with per-participant cutpoints.
//!
//! Each item carries a latent acceptability `a_vf = β_v + β_f + β_vf`;
//! participant `p` bins it with increasing cutpoints `c_p1 < … < c_p(K-1)`
//! and `P(r ≤ i) = σ(c_pi − a_vf)`.

use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{RatingsTable, Vocab};
use crate::optim::{l2_norm, Adam, FitDiagnostics};
use crate::stats::{log_sigmoid, sigmoid, softplus, softplus_inv};
use crate::{Error, Result};

use super::ParticipantQuality;

/// Records above this count are scored in parallel.
const PAR_THRESHOLD: usize = 4096;

/// Fitted ordinal model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrdinalModel {
    pub participants: Vocab,
    pub verbs: Vocab,
    pub frames: Vocab,
    pub scale_max: u8,
    pub beta_verb: Vec<f64>,
    pub beta_frame: Vec<f64>,
    /// Interaction terms, verbs × frames.
    pub beta_item: DMatrix<f64>,
    /// Per participant, `scale_max - 1` strictly increasing cutpoints.
    pub cutpoints: Vec<Vec<f64>>,
}

impl OrdinalModel {
    pub fn acceptability(&self, verb: usize, frame: usize) -> f64 {
        self.beta_verb[verb] + self.beta_frame[frame] + self.beta_item[(verb, frame)]
    }

    /// Distribution over ratings `1..=scale_max` for one participant and item.
    pub fn category_probs(&self, participant: usize, verb: usize, frame: usize) -> Vec<f64> {
        category_probabilities(&self.cutpoints[participant], self.acceptability(verb, frame))
    }

    /// `P(r = rating)` for named participant, verb and frame.
    pub fn response_probability(&self, participant: &str, verb: &str, frame: &str, rating: u8) -> Result<f64> {
        let lookup = |vocab: &Vocab, what: &str, name: &str| {
            vocab
                .get(name)
                .ok_or_else(|| Error::Domain(format!("unknown {what} `{name}`")))
        };
        let p = lookup(&self.participants, "participant", participant)?;
        let v = lookup(&self.verbs, "verb", verb)?;
        let f = lookup(&self.frames, "frame", frame)?;
        rating_probability(&self.cutpoints[p], self.acceptability(v, f), rating)
    }

    /// Mean over participants of the third cutpoint (or the last one on
    /// scales with fewer than four points).
    pub fn mean_anchor_cutpoint(&self) -> f64 {
        let j = anchor_index(self.scale_max as usize - 1);
        self.cutpoints.iter().map(|c| c[j]).sum::<f64>() / self.cutpoints.len() as f64
    }
}

/// `P(r = rating)` given cutpoints and latent acceptability.
pub fn rating_probability(cutpoints: &[f64], a: f64, rating: u8) -> Result<f64> {
    let k = cutpoints.len() + 1;
    if rating < 1 || rating as usize > k {
        return Err(Error::Domain(format!("rating {rating} outside [1, {k}]")));
    }
    Ok(bin_log_prob(cutpoints, a, rating as usize).0.exp())
}

pub fn category_probabilities(cutpoints: &[f64], a: f64) -> Vec<f64> {
    (1..=cutpoints.len() + 1)
        .map(|i| bin_log_prob(cutpoints, a, i).0.exp())
        .collect()
}

/// `log P(r = i)` and its derivatives with respect to the upper and lower
/// cutpoints of bin `i` (zero where the bin is open).
#[inline]
fn bin_log_prob(c: &[f64], a: f64, i: usize) -> (f64, f64, f64) {
    let k = c.len() + 1;
    if k == 1 {
        return (0.0, 0.0, 0.0);
    }
    if i == 1 {
        let x = c[0] - a;
        (log_sigmoid(x), sigmoid(-x), 0.0)
    } else if i == k {
        let y = c[k - 2] - a;
        (log_sigmoid(-y), 0.0, -sigmoid(y))
    } else {
        let x = c[i - 1] - a;
        let y = c[i - 2] - a;
        let gap = x - y;
        let lp = (-(-gap).exp_m1()).ln() + log_sigmoid(x) + log_sigmoid(-y);
        let inv = 1.0 / gap.exp_m1();
        (lp, inv + sigmoid(-x), -inv - sigmoid(y))
    }
}

fn anchor_index(m: usize) -> usize {
    2.min(m.saturating_sub(1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Rate of the Exponential prior on gaps between adjacent cutpoints.
    pub prior_rate: f64,
    /// L2 penalty on every β.
    pub smoothing: f64,
    pub learning_rate: f64,
    /// Step size at iteration t is `learning_rate / (1 + lr_decay * t)`.
    pub lr_decay: f64,
    pub max_iters: usize,
    /// Relative objective change that counts as converged...
    pub tolerance: f64,
    /// ...when measured over this many iterations.
    pub window: usize,
    /// Apply quality weights inside the variability mean as well as the fit.
    pub weight_variability: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            prior_rate: 1.0,
            smoothing: 0.1,
            learning_rate: 0.05,
            lr_decay: 0.0,
            max_iters: 5000,
            tolerance: 1e-8,
            window: 25,
            weight_variability: true,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.prior_rate > 0.0
            && self.smoothing > 0.0
            && self.learning_rate > 0.0
            && self.lr_decay >= 0.0
            && self.max_iters > 0
            && self.tolerance > 0.0
            && self.window > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("ordinal fit settings must be positive: {self:?}")))
        }
    }
}

/// The penalized log-likelihood as a function of one flat parameter vector.
///
/// Layout: `β_v`, `β_f`, `β_vf` (row-major verbs × frames), then per
/// participant an unconstrained anchor `d_p` followed by the raw gaps `h`.
/// The anchor cutpoint is `d_p − mean(d)`, so the mean anchor is exactly
/// zero; gaps are `softplus(h)`.
pub struct OrdinalProblem<'a> {
    ratings: &'a RatingsTable,
    weights: Vec<f64>,
    cfg: FitConfig,
    nv: usize,
    nf: usize,
    np: usize,
    m: usize,
}

impl<'a> OrdinalProblem<'a> {
    /// `weights` are per participant of `ratings`; they are divided by their
    /// maximum so any constant weighting reproduces the unweighted fit.
    pub fn new(ratings: &'a RatingsTable, weights: Option<&[f64]>, cfg: &FitConfig) -> Result<Self> {
        if ratings.records.is_empty() {
            return Err(Error::Domain("no ratings to fit".into()));
        }
        if ratings.scale_max < 2 {
            return Err(Error::Domain("rating scale needs at least two points".into()));
        }
        let np = ratings.participants.len();
        let weights = match weights {
            None => vec![1.0; np],
            Some(w) => {
                if w.len() != np {
                    return Err(Error::Domain(format!("{} weights for {np} participants", w.len())));
                }
                if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
                    return Err(Error::Domain("participant weights must be finite and nonnegative".into()));
                }
                let max = w.iter().cloned().fold(0.0, f64::max);
                if max <= 0.0 {
                    return Err(Error::Domain("all participant weights are zero".into()));
                }
                w.iter().map(|x| x / max).collect()
            }
        };
        Ok(OrdinalProblem {
            ratings,
            weights,
            cfg: cfg.clone(),
            nv: ratings.verbs.len(),
            nf: ratings.frames.len(),
            np,
            m: ratings.scale_max as usize - 1,
        })
    }

    pub fn n_params(&self) -> usize {
        self.cut_offset() + self.np * self.m
    }

    fn cut_offset(&self) -> usize {
        self.nv + self.nf + self.nv * self.nf
    }

    fn anchor_mean(&self, raw: &[f64]) -> f64 {
        let off = self.cut_offset();
        (0..self.np).map(|p| raw[off + p * self.m]).sum::<f64>() / self.np as f64
    }

    fn decode_cutpoints(&self, raw: &[f64]) -> Vec<Vec<f64>> {
        let off = self.cut_offset();
        let mean_d = self.anchor_mean(raw);
        let m = self.m;
        let a = anchor_index(m);
        (0..self.np)
            .map(|p| {
                let block = &raw[off + p * m..off + (p + 1) * m];
                let mut c = vec![0.0; m];
                c[a] = block[0] - mean_d;
                for j in a + 1..m {
                    c[j] = c[j - 1] + softplus(block[j]);
                }
                for j in (0..a).rev() {
                    c[j] = c[j + 1] - softplus(block[j + 1]);
                }
                c
            })
            .collect()
    }

    /// Starting point: zero effects, cutpoints at the logits of the pooled
    /// cumulative response proportions, shifted so the anchor sits at zero.
    pub fn initial(&self) -> Vec<f64> {
        let k = self.m + 1;
        let mut counts = vec![1.0; k];
        for r in &self.ratings.records {
            counts[r.rating as usize - 1] += 1.0;
        }
        let total: f64 = counts.iter().sum();
        let mut cum = 0.0;
        let mut c: Vec<f64> = (0..self.m)
            .map(|j| {
                cum += counts[j];
                let q = cum / total;
                (q / (1.0 - q)).ln()
            })
            .collect();
        for j in 1..self.m {
            if c[j] < c[j - 1] + 0.1 {
                c[j] = c[j - 1] + 0.1;
            }
        }
        let mut raw = vec![0.0; self.n_params()];
        let off = self.cut_offset();
        for p in 0..self.np {
            let block = &mut raw[off + p * self.m..off + (p + 1) * self.m];
            block[0] = 0.0;
            for j in 1..self.m {
                block[j] = softplus_inv(c[j] - c[j - 1]);
            }
        }
        raw
    }

    pub fn objective(&self, raw: &[f64]) -> f64 {
        self.evaluate(raw, false).0
    }

    pub fn objective_and_gradient(&self, raw: &[f64]) -> (f64, Vec<f64>) {
        let (f, g) = self.evaluate(raw, true);
        (f, g.expect("gradient requested"))
    }

    fn evaluate(&self, raw: &[f64], want_grad: bool) -> (f64, Option<Vec<f64>>) {
        let (nv, nf, m) = (self.nv, self.nf, self.m);
        let cuts = self.decode_cutpoints(raw);
        let a_of = |v: usize, f: usize| raw[v] + raw[nv + f] + raw[nv + nf + v * nf + f];

        let score = |r: &crate::data::RatingRecord| {
            let a = a_of(r.verb, r.frame);
            let (lp, du, dl) = bin_log_prob(&cuts[r.participant], a, r.rating as usize);
            let w = self.weights[r.participant];
            (w * lp, w * du, w * dl)
        };
        let recs = &self.ratings.records;
        let terms: Vec<(f64, f64, f64)> = if recs.len() >= PAR_THRESHOLD {
            recs.par_iter().map(score).collect()
        } else {
            recs.iter().map(score).collect()
        };

        let rate = self.cfg.prior_rate;
        let s = self.cfg.smoothing;
        let off = self.cut_offset();
        let mut value: f64 = terms.iter().map(|t| t.0).sum();
        for p in 0..self.np {
            for j in 1..m {
                value += rate.ln() - rate * softplus(raw[off + p * m + j]);
            }
        }
        value -= s * raw[..off].iter().map(|b| b * b).sum::<f64>();
        if !want_grad {
            return (value, None);
        }

        let mut grad = vec![0.0; raw.len()];
        let mut dcut = vec![vec![0.0; m]; self.np];
        for (r, &(_, du, dl)) in recs.iter().zip(&terms) {
            let i = r.rating as usize;
            let dc = &mut dcut[r.participant];
            if i <= m {
                dc[i - 1] += du;
            }
            if i >= 2 {
                dc[i - 2] += dl;
            }
            let da = -(du + dl);
            grad[r.verb] += da;
            grad[nv + r.frame] += da;
            grad[nv + nf + r.verb * nf + r.frame] += da;
        }
        for (g, b) in grad[..off].iter_mut().zip(&raw[..off]) {
            *g -= 2.0 * s * b;
        }
        let anchor = anchor_index(m);
        let mut dt = vec![0.0; self.np];
        for p in 0..self.np {
            let dc = &dcut[p];
            dt[p] = dc.iter().sum();
            for k in 0..m.saturating_sub(1) {
                // gap k separates cutpoints k and k + 1
                let dgap = if k >= anchor {
                    dc[k + 1..].iter().sum::<f64>()
                } else {
                    -dc[..=k].iter().sum::<f64>()
                } - rate;
                // the raw block stores the anchor first, so gap k lives at k + 1
                let h = raw[off + p * m + k + 1];
                grad[off + p * m + k + 1] = dgap * sigmoid(h);
            }
        }
        let mean_dt = dt.iter().sum::<f64>() / self.np as f64;
        for p in 0..self.np {
            grad[off + p * m] = dt[p] - mean_dt;
        }
        (value, Some(grad))
    }

    /// Builds the model for `raw`, re-centering `β_v` and `β_f` to sum to
    /// zero (the difference moves into the interaction terms, so every
    /// `a_vf` is unchanged).
    pub fn to_model(&self, raw: &[f64]) -> OrdinalModel {
        let (nv, nf) = (self.nv, self.nf);
        let mut bv = raw[..nv].to_vec();
        let mut bf = raw[nv..nv + nf].to_vec();
        let mut bvf = DMatrix::from_row_slice(nv, nf, &raw[nv + nf..nv + nf + nv * nf]);
        let mv = bv.iter().sum::<f64>() / nv as f64;
        bv.iter_mut().for_each(|b| *b -= mv);
        bf.iter_mut().for_each(|b| *b += mv);
        let mf = bf.iter().sum::<f64>() / nf as f64;
        bf.iter_mut().for_each(|b| *b -= mf);
        bvf.iter_mut().for_each(|b| *b += mf);
        OrdinalModel {
            participants: self.ratings.participants.clone(),
            verbs: self.ratings.verbs.clone(),
            frames: self.ratings.frames.clone(),
            scale_max: self.ratings.scale_max,
            beta_verb: bv,
            beta_frame: bf,
            beta_item: bvf,
            cutpoints: self.decode_cutpoints(raw),
        }
    }
}

/// Weighted log-likelihood of `ratings` under `model`, without prior or
/// smoothing terms.
pub fn log_likelihood(model: &OrdinalModel, ratings: &RatingsTable, weights: Option<&[f64]>) -> f64 {
    ratings
        .records
        .iter()
        .map(|r| {
            let w = weights.map_or(1.0, |w| w[r.participant]);
            let a = model.acceptability(r.verb, r.frame);
            w * bin_log_prob(&model.cutpoints[r.participant], a, r.rating as usize).0
        })
        .sum()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrdinalFit {
    pub model: OrdinalModel,
    pub diagnostics: FitDiagnostics,
}

/// Per-participant weights of `ratings` looked up by name in `quality`.
pub fn participant_weights(ratings: &RatingsTable, quality: &ParticipantQuality) -> Vec<f64> {
    ratings
        .participants
        .iter()
        .map(|p| {
            quality.get(p).unwrap_or_else(|| {
                warn!("participant `{p}` has no quality score; using 0.5");
                0.5
            })
        })
        .collect()
}

/// Maximizes the penalized (optionally quality-weighted) log-likelihood.
/// Non-convergence is reported through the diagnostics and a warning; the
/// best iterate is returned either way.
pub fn fit_ordinal_model(ratings: &RatingsTable, quality: Option<&ParticipantQuality>, cfg: &FitConfig) -> Result<OrdinalFit> {
    cfg.validate()?;
    let weights = quality.map(|q| participant_weights(ratings, q));
    let problem = OrdinalProblem::new(ratings, weights.as_deref(), cfg)?;
    let mut raw = problem.initial();
    let mut opt = Adam::new(raw.len(), cfg.learning_rate);
    let mut diag = FitDiagnostics::default();
    let mut best = (f64::NEG_INFINITY, raw.clone());
    for it in 0..cfg.max_iters {
        let (value, grad) = problem.objective_and_gradient(&raw);
        if !value.is_finite() {
            return Err(Error::Numerical(format!("ordinal objective became {value} at iteration {it}")));
        }
        if value > best.0 {
            best = (value, raw.clone());
        }
        diag.objective_trace.push(value);
        diag.iterations = it + 1;
        if diag.stalled(cfg.window, cfg.tolerance) {
            diag.converged = true;
            break;
        }
        opt.lr = cfg.learning_rate / (1.0 + cfg.lr_decay * it as f64);
        opt.ascend(&mut raw, &grad);
    }
    let (value, grad) = problem.objective_and_gradient(&best.1);
    diag.final_objective = value;
    diag.gradient_norm = l2_norm(&grad);
    if !diag.converged {
        warn!(
            "ordinal fit did not converge in {} iterations (objective {:.6}, gradient norm {:.3e})",
            cfg.max_iters, value, diag.gradient_norm
        );
    }
    Ok(OrdinalFit {
        model: problem.to_model(&best.1),
        diagnostics: diag,
    })
}
