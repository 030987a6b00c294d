//! Logistic factor analysis with a negative-binomial likelihood:
//! `c_vf ~ NegBin(σ(u_v · a_f), r_v)`.

use log::warn;
use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CountsTable, Vocab};
use crate::optim::{l2_norm, Adam, FitDiagnostics};
use crate::rng;
use crate::stats::{digamma, ln_gamma, sigmoid, softplus, softplus_inv};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LfaConfig {
    pub learning_rate: f64,
    pub max_iters: usize,
    pub tolerance: f64,
    pub window: usize,
    /// Standard deviation of the random initial factors.
    pub init_sd: f64,
    pub seed: u64,
}

impl Default for LfaConfig {
    fn default() -> Self {
        LfaConfig {
            learning_rate: 0.05,
            max_iters: 3000,
            tolerance: 1e-9,
            window: 25,
            init_sd: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LfaParams {
    pub verbs: Vocab,
    pub frames: Vocab,
    /// Verbs × K.
    pub u: DMatrix<f64>,
    /// K × frames.
    pub a: DMatrix<f64>,
    pub rate: Vec<f64>,
    pub diagnostics: FitDiagnostics,
}

impl LfaParams {
    /// `π_vf = σ(u_v · a_f)`.
    pub fn reconstruction(&self) -> DMatrix<f64> {
        (&self.u * &self.a).map(sigmoid)
    }
}

/// Log-likelihood and gradients with respect to `U`, `A` and the raw rates
/// `ρ` (`r = softplus(ρ)`).
pub fn lfa_objective(
    counts: &DMatrix<f64>,
    u: &DMatrix<f64>,
    a: &DMatrix<f64>,
    rho: &[f64],
) -> (f64, DMatrix<f64>, DMatrix<f64>, Vec<f64>) {
    let x = u * a;
    let (nv, nf) = counts.shape();
    let rows: Vec<(f64, Vec<f64>, f64)> = (0..nv)
        .into_par_iter()
        .map(|v| {
            let r = softplus(rho[v]);
            let dig_r = digamma(r);
            let (mut value, mut dr) = (0.0, 0.0);
            let mut grow = Vec::with_capacity(nf);
            for f in 0..nf {
                let c = counts[(v, f)];
                let pi = sigmoid(x[(v, f)]);
                // log π and log(1 − π) straight from the logit
                let lp = -softplus(-x[(v, f)]);
                let lq = -softplus(x[(v, f)]);
                value += ln_gamma(c + r) - ln_gamma(r) - ln_gamma(c + 1.0) + c * lp + r * lq;
                grow.push(c * (1.0 - pi) - r * pi);
                dr += digamma(c + r) - dig_r + lq;
            }
            (value, grow, dr * sigmoid(rho[v]))
        })
        .collect();
    let value = rows.iter().map(|r| r.0).sum();
    let g = DMatrix::from_fn(nv, nf, |v, f| rows[v].1[f]);
    let drho = rows.iter().map(|r| r.2).collect();
    let du = &g * a.transpose();
    let da = u.transpose() * &g;
    (value, du, da, drho)
}

fn pack(u: &DMatrix<f64>, a: &DMatrix<f64>, rho: &[f64]) -> Vec<f64> {
    u.iter().chain(a.iter()).chain(rho).copied().collect()
}

fn unpack(x: &[f64], nv: usize, nf: usize, k: usize) -> (DMatrix<f64>, DMatrix<f64>, Vec<f64>) {
    let u = DMatrix::from_column_slice(nv, k, &x[..nv * k]);
    let a = DMatrix::from_column_slice(k, nf, &x[nv * k..nv * k + k * nf]);
    (u, a, x[nv * k + k * nf..].to_vec())
}

/// Random start: factors from `N(0, init_sd²)`, rates at the mean count per
/// occupied cell of each verb.
pub fn lfa_init(counts: &CountsTable, k: usize, cfg: &LfaConfig) -> Result<LfaParams> {
    if k == 0 {
        return Err(Error::Config("LFA needs K >= 1".into()));
    }
    let c = counts.dense();
    let (nv, nf) = c.shape();
    let mut r = rng::named(cfg.seed, "lfa");
    let normal = Normal::new(0.0, cfg.init_sd).map_err(|e| Error::Config(e.to_string()))?;
    let u = DMatrix::from_fn(nv, k, |_, _| normal.sample(&mut r));
    let a = DMatrix::from_fn(k, nf, |_, _| normal.sample(&mut r));
    let rate = (0..nv)
        .map(|v| {
            let occ: Vec<f64> = c.row(v).iter().copied().filter(|&x| x > 0.0).collect();
            if occ.is_empty() {
                1.0
            } else {
                (occ.iter().sum::<f64>() / occ.len() as f64).max(0.1)
            }
        })
        .collect();
    Ok(LfaParams {
        verbs: counts.verbs.clone(),
        frames: counts.frames.clone(),
        u,
        a,
        rate,
        diagnostics: FitDiagnostics::default(),
    })
}

pub fn lfa_fit(counts: &CountsTable, k: usize, cfg: &LfaConfig) -> Result<LfaParams> {
    let start = lfa_init(counts, k, cfg)?;
    lfa_fit_from(counts, start, cfg)
}

/// Gradient ascent from `start`; the best iterate (including the start) is
/// returned.
pub fn lfa_fit_from(counts: &CountsTable, start: LfaParams, cfg: &LfaConfig) -> Result<LfaParams> {
    let c = counts.dense();
    let (nv, nf) = c.shape();
    let k = start.u.ncols();
    if start.u.nrows() != nv || start.a.shape() != (k, nf) || start.rate.len() != nv {
        return Err(Error::Domain("LFA starting point does not match the count table".into()));
    }
    let rho0: Vec<f64> = start.rate.iter().map(|&r| softplus_inv(r)).collect();
    let mut x = pack(&start.u, &start.a, &rho0);
    let mut opt = Adam::new(x.len(), cfg.learning_rate);
    let mut diag = FitDiagnostics::default();
    let mut best = (f64::NEG_INFINITY, x.clone());
    for it in 0..cfg.max_iters {
        let (u, a, rho) = unpack(&x, nv, nf, k);
        let (value, du, da, drho) = lfa_objective(&c, &u, &a, &rho);
        if !value.is_finite() {
            return Err(Error::Numerical(format!("LFA objective became {value} at iteration {it}")));
        }
        if value > best.0 {
            best = (value, x.clone());
        }
        diag.objective_trace.push(value);
        diag.iterations = it + 1;
        if diag.stalled(cfg.window, cfg.tolerance) {
            diag.converged = true;
            break;
        }
        opt.ascend(&mut x, &pack(&du, &da, &drho));
    }
    let (u, a, rho) = unpack(&best.1, nv, nf, k);
    let (value, du, da, drho) = lfa_objective(&c, &u, &a, &rho);
    diag.final_objective = value;
    diag.gradient_norm = l2_norm(&pack(&du, &da, &drho));
    if !diag.converged {
        warn!("LFA (K = {k}) did not converge in {} iterations", cfg.max_iters);
    }
    Ok(LfaParams {
        verbs: counts.verbs.clone(),
        frames: counts.frames.clone(),
        u,
        a,
        rate: rho.iter().map(|&p| softplus(p)).collect(),
        diagnostics: diag,
    })
}
