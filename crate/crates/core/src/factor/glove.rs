//! GloVe-style weighted least squares on log counts, verbs against frames.

use log::warn;
use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{CountsTable, Vocab};
use crate::optim::{l2_norm, Adam, FitDiagnostics};
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GloveConfig {
    pub c_cutoff: f64,
    pub alpha_exp: f64,
    pub learning_rate: f64,
    /// Step size at iteration t is `learning_rate / (1 + lr_decay * t)`.
    pub lr_decay: f64,
    pub max_iters: usize,
    pub tolerance: f64,
    pub window: usize,
    pub init_sd: f64,
    pub seed: u64,
}

impl Default for GloveConfig {
    fn default() -> Self {
        GloveConfig {
            c_cutoff: 10.0,
            alpha_exp: 0.75,
            learning_rate: 0.05,
            lr_decay: 1e-3,
            max_iters: 5000,
            tolerance: 1e-10,
            window: 25,
            init_sd: 0.1,
            seed: 0,
        }
    }
}

/// Weight `min(1, c / c_cutoff)^α` of a cell with count `c`.
pub fn glove_weight(c: f64, c_cutoff: f64, alpha_exp: f64) -> f64 {
    (c / c_cutoff).min(1.0).powf(alpha_exp)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GloveParams {
    pub verbs: Vocab,
    pub frames: Vocab,
    /// Verbs × K.
    pub w: DMatrix<f64>,
    /// Frames × K.
    pub w_ctx: DMatrix<f64>,
    pub b: Vec<f64>,
    pub b_ctx: Vec<f64>,
    pub c_cutoff: f64,
    pub alpha_exp: f64,
    pub diagnostics: FitDiagnostics,
}

/// Nonzero cells `(row, col, count)`.
pub type Cells = Vec<(usize, usize, f64)>;

pub fn nonzero_cells(counts: &CountsTable) -> Cells {
    counts
        .counts
        .iter()
        .filter(|(_, &c)| c > 0)
        .map(|(&(v, f), &c)| (v, f, c as f64))
        .collect()
}

/// Weighted squared error of the log-count reconstruction over `cells`.
pub fn glove_loss(
    cells: &[(usize, usize, f64)],
    w: &DMatrix<f64>,
    w_ctx: &DMatrix<f64>,
    b: &[f64],
    b_ctx: &[f64],
    c_cutoff: f64,
    alpha_exp: f64,
) -> f64 {
    cells
        .iter()
        .map(|&(i, j, c)| {
            let e = w.row(i).dot(&w_ctx.row(j)) + b[i] + b_ctx[j] - c.ln();
            glove_weight(c, c_cutoff, alpha_exp) * e * e
        })
        .sum()
}

pub fn glove_fit(counts: &CountsTable, k: usize, cfg: &GloveConfig) -> Result<GloveParams> {
    if k == 0 {
        return Err(Error::Config("GloVe needs K >= 1".into()));
    }
    let cells = nonzero_cells(counts);
    if cells.is_empty() {
        return Err(Error::Domain("GloVe needs at least one nonzero count".into()));
    }
    let (nv, nf) = (counts.verbs.len(), counts.frames.len());
    let mut r = rng::named(cfg.seed, "glove");
    let normal = Normal::new(0.0, cfg.init_sd).map_err(|e| Error::Config(e.to_string()))?;
    let n = nv * k + nf * k + nv + nf;
    let mut x: Vec<f64> = (0..nv * k + nf * k).map(|_| normal.sample(&mut r)).collect();
    x.resize(n, 0.0);
    let weights: Vec<f64> = cells.iter().map(|c| glove_weight(c.2, cfg.c_cutoff, cfg.alpha_exp)).collect();
    let wi = |i: usize, t: usize| i * k + t;
    let ci = |j: usize, t: usize| nv * k + j * k + t;
    let bi = |i: usize| nv * k + nf * k + i;
    let cj = |j: usize| nv * k + nf * k + nv + j;

    let eval = |x: &[f64], grad: &mut [f64]| -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for (&(i, j, c), &wt) in cells.iter().zip(&weights) {
            let mut dot = 0.0;
            for t in 0..k {
                dot += x[wi(i, t)] * x[ci(j, t)];
            }
            let e = dot + x[bi(i)] + x[cj(j)] - c.ln();
            loss += wt * e * e;
            // gradient of the negated loss, for ascent
            let g = -2.0 * wt * e;
            for t in 0..k {
                grad[wi(i, t)] += g * x[ci(j, t)];
                grad[ci(j, t)] += g * x[wi(i, t)];
            }
            grad[bi(i)] += g;
            grad[cj(j)] += g;
        }
        loss
    };

    let mut opt = Adam::new(n, cfg.learning_rate);
    let mut grad = vec![0.0; n];
    let mut diag = FitDiagnostics::default();
    let mut best = (f64::INFINITY, x.clone());
    for it in 0..cfg.max_iters {
        let loss = eval(&x, &mut grad);
        if loss < best.0 {
            best = (loss, x.clone());
        }
        diag.objective_trace.push(-loss);
        diag.iterations = it + 1;
        if diag.stalled(cfg.window, cfg.tolerance) || loss == 0.0 {
            diag.converged = true;
            break;
        }
        opt.lr = cfg.learning_rate / (1.0 + cfg.lr_decay * it as f64);
        opt.ascend(&mut x, &grad);
    }
    let loss = eval(&best.1, &mut grad);
    diag.final_objective = -loss;
    diag.gradient_norm = l2_norm(&grad);
    if !diag.converged {
        warn!("GloVe (K = {k}) did not converge in {} iterations", cfg.max_iters);
    }
    let x = best.1;
    Ok(GloveParams {
        verbs: counts.verbs.clone(),
        frames: counts.frames.clone(),
        w: DMatrix::from_row_slice(nv, k, &x[..nv * k]),
        w_ctx: DMatrix::from_row_slice(nf, k, &x[nv * k..nv * k + nf * k]),
        b: x[bi(0)..bi(0) + nv].to_vec(),
        b_ctx: x[cj(0)..cj(0) + nf].to_vec(),
        c_cutoff: cfg.c_cutoff,
        alpha_exp: cfg.alpha_exp,
        diagnostics: diag,
    })
}
