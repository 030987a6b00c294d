//! Latent Dirichlet allocation by batch mean-field variational EM, with
//! verbs as documents and frame counts as word multiplicities.

use log::warn;
use nalgebra::DMatrix;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CountsTable, Vocab};
use crate::rng;
use crate::stats::{digamma, ln_gamma};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LdaConfig {
    pub max_iters: usize,
    /// Mean absolute change in a document's γ that ends its inner loop.
    pub inner_tol: f64,
    pub max_inner: usize,
    /// Relative bound change that ends EM early.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for LdaConfig {
    fn default() -> Self {
        LdaConfig {
            max_iters: 100,
            inner_tol: 1e-4,
            max_inner: 100,
            tolerance: 1e-10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaParams {
    pub verbs: Vocab,
    pub frames: Vocab,
    /// Verbs × K, rows `P(k|v)`.
    pub theta: DMatrix<f64>,
    /// K × frames, rows `P(f|k)`.
    pub phi: DMatrix<f64>,
    pub k: usize,
    pub doc_prior: f64,
    pub topic_prior: f64,
    /// Evidence lower bound after each EM iteration.
    pub elbo_trace: Vec<f64>,
}

impl LdaParams {
    /// `P(f|v) = Σ_k θ_vk φ_kf`.
    pub fn reconstruction(&self) -> DMatrix<f64> {
        &self.theta * &self.phi
    }
}

/// `E[log x]` under Dirichlet(`conc`).
fn dirichlet_expectation(conc: &[f64]) -> Vec<f64> {
    let total = digamma(conc.iter().sum());
    conc.iter().map(|&c| digamma(c) - total).collect()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

struct Doc {
    words: Vec<(usize, f64)>,
}

/// Coordinate ascent on one document from `gamma`; returns the updated γ
/// and the expected topic-word counts.
fn e_step(doc: &Doc, gamma: &mut [f64], elog_beta: &DMatrix<f64>, alpha: f64, cfg: &LdaConfig) -> Vec<(usize, Vec<f64>)> {
    let k = gamma.len();
    let mut resp = vec![0.0; k];
    for _ in 0..cfg.max_inner {
        let elog_theta = dirichlet_expectation(gamma);
        let mut next = vec![alpha; k];
        for &(f, n) in &doc.words {
            for t in 0..k {
                resp[t] = elog_theta[t] + elog_beta[(t, f)];
            }
            let z = log_sum_exp(&resp);
            for t in 0..k {
                next[t] += n * (resp[t] - z).exp();
            }
        }
        let change = next.iter().zip(gamma.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>() / k as f64;
        gamma.copy_from_slice(&next);
        if change < cfg.inner_tol {
            break;
        }
    }
    let elog_theta = dirichlet_expectation(gamma);
    doc.words
        .iter()
        .map(|&(f, n)| {
            let r: Vec<f64> = (0..k).map(|t| elog_theta[t] + elog_beta[(t, f)]).collect();
            let z = log_sum_exp(&r);
            (f, r.iter().map(|x| n * (x - z).exp()).collect())
        })
        .collect()
}

fn elbo(docs: &[Doc], gammas: &[Vec<f64>], lambda: &DMatrix<f64>, alpha: f64, eta: f64) -> f64 {
    let (k, nf) = lambda.shape();
    let elog_beta = expected_log_beta(lambda);
    let doc_terms: f64 = docs
        .par_iter()
        .zip(gammas)
        .map(|(doc, g)| {
            let et = dirichlet_expectation(g);
            let mut s = 0.0;
            let mut r = vec![0.0; k];
            for &(f, n) in &doc.words {
                for t in 0..k {
                    r[t] = et[t] + elog_beta[(t, f)];
                }
                s += n * log_sum_exp(&r);
            }
            s += ln_gamma(k as f64 * alpha) - k as f64 * ln_gamma(alpha);
            for t in 0..k {
                s += (alpha - g[t]) * et[t] + ln_gamma(g[t]);
            }
            s - ln_gamma(g.iter().sum())
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    let mut topic_terms = 0.0;
    for t in 0..k {
        let row: Vec<f64> = lambda.row(t).iter().copied().collect();
        topic_terms += ln_gamma(nf as f64 * eta) - nf as f64 * ln_gamma(eta);
        for f in 0..nf {
            topic_terms += (eta - row[f]) * elog_beta[(t, f)] + ln_gamma(row[f]);
        }
        topic_terms -= ln_gamma(row.iter().sum());
    }
    doc_terms + topic_terms
}

fn expected_log_beta(lambda: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = lambda.clone();
    for t in 0..lambda.nrows() {
        let row: Vec<f64> = lambda.row(t).iter().copied().collect();
        for (f, e) in dirichlet_expectation(&row).into_iter().enumerate() {
            out[(t, f)] = e;
        }
    }
    out
}

/// Fits LDA with symmetric priors `1/K` on both θ and φ.
pub fn lda_fit(counts: &CountsTable, k: usize, cfg: &LdaConfig) -> Result<LdaParams> {
    if k == 0 {
        return Err(Error::Config("LDA needs K >= 1".into()));
    }
    let nf = counts.frames.len();
    if k > nf {
        warn!("LDA with K = {k} exceeds the {nf} frames");
    }
    let nv = counts.verbs.len();
    let mut docs: Vec<Doc> = (0..nv).map(|_| Doc { words: Vec::new() }).collect();
    for (&(v, f), &c) in &counts.counts {
        if c > 0 {
            docs[v].words.push((f, c as f64));
        }
    }
    let alpha = 1.0 / k as f64;
    let eta = 1.0 / k as f64;
    let mut r = rng::named(cfg.seed, "lda");
    let init = Gamma::new(100.0, 0.01).expect("valid gamma");
    let mut lambda = DMatrix::from_fn(k, nf, |_, _| init.sample(&mut r));
    let mut gammas: Vec<Vec<f64>> = vec![vec![1.0; k]; nv];
    let mut trace = Vec::new();
    for _ in 0..cfg.max_iters {
        let elog_beta = expected_log_beta(&lambda);
        let stats: Vec<Vec<(usize, Vec<f64>)>> = docs
            .par_iter()
            .zip(gammas.par_iter_mut())
            .map(|(doc, g)| e_step(doc, g, &elog_beta, alpha, cfg))
            .collect();
        lambda.fill(eta);
        for doc in &stats {
            for (f, resp) in doc {
                for t in 0..k {
                    lambda[(t, *f)] += resp[t];
                }
            }
        }
        let bound = elbo(&docs, &gammas, &lambda, alpha, eta);
        let done = trace
            .last()
            .is_some_and(|&prev: &f64| (bound - prev).abs() <= cfg.tolerance * bound.abs().max(1.0));
        trace.push(bound);
        if done {
            break;
        }
    }
    let theta = DMatrix::from_fn(nv, k, |v, t| gammas[v][t] / gammas[v].iter().sum::<f64>());
    let mut phi = lambda.clone();
    for mut row in phi.row_iter_mut() {
        let s: f64 = row.sum();
        row.iter_mut().for_each(|x| *x /= s);
    }
    Ok(LdaParams {
        verbs: counts.verbs.clone(),
        frames: counts.frames.clone(),
        theta,
        phi,
        k,
        doc_prior: alpha,
        topic_prior: eta,
        elbo_trace: trace,
    })
}
