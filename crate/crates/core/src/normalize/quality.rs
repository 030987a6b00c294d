//! Participant quality from pairwise agreement.
//!
//! Each pair correlation is entered once for each of its two members, and
//! `rho = μ + u_participant + v_list + ε` is fit by maximum likelihood with
//! crossed random intercepts. The participant BLUPs are z-scored and pushed
//! through the standard normal CDF.

use std::collections::HashMap;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::agreement::PairAgreement;
use crate::data::Vocab;
use crate::optim::nelder_mead;
use crate::stats::{mean, normal_cdf, sample_sd};
use crate::Result;

/// Quality score in `[0, 1]` per participant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantQuality {
    pub participants: Vocab,
    pub scores: Vec<f64>,
    /// Random-intercept predictions behind the scores (0 for unpaired).
    pub blups: Vec<f64>,
    /// Participants that appeared in no usable pair.
    pub unpaired: Vec<String>,
}

impl ParticipantQuality {
    pub fn get(&self, participant: &str) -> Option<f64> {
        self.participants.get(participant).map(|i| self.scores[i])
    }

    pub fn uniform(participants: &Vocab) -> Self {
        ParticipantQuality {
            participants: participants.clone(),
            scores: vec![1.0; participants.len()],
            blups: vec![0.0; participants.len()],
            unpaired: Vec::new(),
        }
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("participant\tscore\tblup\n");
        for (i, p) in self.participants.iter().enumerate() {
            s.push_str(&format!(
                "{p}\t{}\t{}\n",
                crate::data::fmt_real(self.scores[i]),
                crate::data::fmt_real(self.blups[i])
            ));
        }
        s
    }
}

/// Variance-component fit of the crossed random-intercept model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedModelFit {
    pub intercept: f64,
    pub residual_variance: f64,
    pub participant_variance: f64,
    pub list_variance: f64,
    pub participant_blups: Vec<f64>,
    pub list_blups: Vec<f64>,
    pub deviance: f64,
}

/// Observations `(y, group1, group2)` with group ids in `0..q1`, `0..q2`.
struct Crossed<'a> {
    y: &'a [f64],
    g1: &'a [usize],
    g2: &'a [usize],
    q1: usize,
    q2: usize,
}

struct Profile {
    deviance: f64,
    beta: f64,
    sigma2: f64,
    u1: Vec<f64>,
    u2: Vec<f64>,
}

impl Crossed<'_> {
    /// Profiled ML deviance at relative standard deviations `(s1, s2)`, in
    /// the spherical random-effects form `b = σ·s·u`.
    fn profile(&self, s1: f64, s2: f64) -> Option<Profile> {
        let n = self.y.len();
        let (q1, q2) = (self.q1, self.q2);
        let mut d1 = vec![0.0; q1];
        let mut d2 = vec![0.0; q2];
        let mut cross = DMatrix::<f64>::zeros(q1, q2);
        for i in 0..n {
            d1[self.g1[i]] += 1.0;
            d2[self.g2[i]] += 1.0;
            cross[(self.g1[i], self.g2[i])] += 1.0;
        }
        // A = Λ Z'Z Λ + I; the list block is diagonal so eliminate it.
        let a22: Vec<f64> = d2.iter().map(|d| s2 * s2 * d + 1.0).collect();
        let mut schur = DMatrix::<f64>::zeros(q1, q1);
        for i in 0..q1 {
            schur[(i, i)] = s1 * s1 * d1[i] + 1.0;
        }
        let scale = s1 * s1 * s2 * s2;
        for l in 0..q2 {
            let col: Vec<(usize, f64)> = (0..q1).filter(|&p| cross[(p, l)] != 0.0).map(|p| (p, cross[(p, l)])).collect();
            for &(p, x) in &col {
                for &(r, y) in &col {
                    schur[(p, r)] -= scale * x * y / a22[l];
                }
            }
        }
        let chol = schur.cholesky()?;
        let logdet = a22.iter().map(|x| x.ln()).sum::<f64>() + 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();

        let zt = |v: &[f64]| {
            let mut r1 = vec![0.0; q1];
            let mut r2 = vec![0.0; q2];
            for i in 0..n {
                r1[self.g1[i]] += s1 * v[i];
                r2[self.g2[i]] += s2 * v[i];
            }
            (r1, r2)
        };
        let solve = |r1: Vec<f64>, r2: Vec<f64>| {
            let s12 = s1 * s2;
            let mut rhs = DVector::from_vec(r1);
            for l in 0..q2 {
                let t = r2[l] / a22[l];
                for p in 0..q1 {
                    rhs[p] -= s12 * cross[(p, l)] * t;
                }
            }
            let x1 = chol.solve(&rhs);
            let x2: Vec<f64> = (0..q2)
                .map(|l| {
                    let mut t = r2[l];
                    for p in 0..q1 {
                        t -= s12 * cross[(p, l)] * x1[p];
                    }
                    t / a22[l]
                })
                .collect();
            (x1.as_slice().to_vec(), x2)
        };
        let ones = vec![1.0; n];
        let (o1, o2) = zt(&ones);
        let (y1, y2) = zt(self.y);
        let (a1, a2) = solve(o1.clone(), o2.clone());
        let (b1, b2) = solve(y1, y2);
        let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
        let denom = n as f64 - dot(&o1, &a1) - dot(&o2, &a2);
        let numer = self.y.iter().sum::<f64>() - dot(&o1, &b1) - dot(&o2, &b2);
        let beta = numer / denom;
        let u1: Vec<f64> = b1.iter().zip(&a1).map(|(b, a)| b - a * beta).collect();
        let u2: Vec<f64> = b2.iter().zip(&a2).map(|(b, a)| b - a * beta).collect();
        let mut rss = dot(&u1, &u1) + dot(&u2, &u2);
        for i in 0..n {
            let e = self.y[i] - beta - s1 * u1[self.g1[i]] - s2 * u2[self.g2[i]];
            rss += e * e;
        }
        let nf = n as f64;
        let rss = rss.max(1e-300);
        let deviance = logdet + nf * (1.0 + (2.0 * std::f64::consts::PI * rss / nf).ln());
        Some(Profile {
            deviance,
            beta,
            sigma2: rss / nf,
            u1,
            u2,
        })
    }
}

const LOG_S_RANGE: (f64, f64) = (-12.0, 6.0);

/// Maximum-likelihood fit of `y = μ + b1[g1] + b2[g2] + ε`.
pub fn fit_crossed_intercepts(y: &[f64], g1: &[usize], q1: usize, g2: &[usize], q2: usize) -> MixedModelFit {
    let model = Crossed { y, g1, g2, q1, q2 };
    let clamp = |x: f64| x.clamp(LOG_S_RANGE.0, LOG_S_RANGE.1);
    let dev = |t: &[f64]| {
        model
            .profile(clamp(t[0]).exp(), clamp(t[1]).exp())
            .map_or(f64::INFINITY, |p| p.deviance)
    };
    let (t, _) = nelder_mead(dev, &[-1.0, -1.0], 1.0, 400, 1e-10);
    let (s1, s2) = (clamp(t[0]).exp(), clamp(t[1]).exp());
    let p = model.profile(s1, s2).expect("deviance was finite at the optimum");
    let sigma = p.sigma2.sqrt();
    MixedModelFit {
        intercept: p.beta,
        residual_variance: p.sigma2,
        participant_variance: p.sigma2 * s1 * s1,
        list_variance: p.sigma2 * s2 * s2,
        participant_blups: p.u1.iter().map(|u| sigma * s1 * u).collect(),
        list_blups: p.u2.iter().map(|u| sigma * s2 * u).collect(),
        deviance: p.deviance,
    }
}

/// Quality scores for every participant in `participants` from a pairwise
/// agreement table. Pairs with undefined correlation are skipped;
/// participants left without any pair get 0.5.
pub fn participant_quality(pairs: &[PairAgreement], participants: &Vocab) -> Result<ParticipantQuality> {
    let mut present = Vocab::new();
    let mut lists = Vocab::new();
    let (mut y, mut g1, mut g2) = (Vec::new(), Vec::new(), Vec::new());
    for pair in pairs.iter().filter(|p| p.rho.is_finite()) {
        let l = lists.intern(&pair.list);
        for who in [&pair.p1, &pair.p2] {
            y.push(pair.rho);
            g1.push(present.intern(who));
            g2.push(l);
        }
    }
    let n = participants.len();
    let mut scores = vec![0.5; n];
    let mut blups = vec![0.0; n];
    let unpaired: Vec<String> = participants.iter().filter(|p| present.get(p).is_none()).map(String::from).collect();
    if !unpaired.is_empty() {
        warn!("{} participant(s) appear in no usable pair; assigned quality 0.5", unpaired.len());
    }
    let spread = if y.len() >= 2 { sample_sd(&y) } else { 0.0 };
    if present.len() >= 2 && spread > 1e-12 {
        let fit = fit_crossed_intercepts(&y, &g1, present.len(), &g2, lists.len());
        let b = &fit.participant_blups;
        let (m, sd) = (mean(b), sample_sd(b));
        let index: HashMap<&str, usize> = present.iter().enumerate().map(|(i, p)| (p, i)).collect();
        for (i, p) in participants.iter().enumerate() {
            if let Some(&j) = index.get(p) {
                blups[i] = b[j];
                if sd > 1e-10 * (1.0 + m.abs()) {
                    scores[i] = normal_cdf((b[j] - m) / sd);
                }
            }
        }
    }
    Ok(ParticipantQuality {
        participants: participants.clone(),
        scores,
        blups,
        unpaired,
    })
}
