//! Rank agreement between raters, percentile bootstrap intervals and the
//! model-based simulation of how much agreement to expect.

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{fmt_real, RatingsTable};
use crate::normalize::OrdinalModel;
use crate::rng;
use crate::stats::{average_ranks, mean, median, pearson, quantile_sorted, Undefined};
use crate::{Error, Result};

/// Spearman's rho with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> std::result::Result<f64, Undefined> {
    if x.len() != y.len() {
        return Err(Undefined::new("length mismatch"));
    }
    if x.len() < 2 {
        return Err(Undefined::new("fewer than two observations"));
    }
    pearson(&average_ranks(x), &average_ranks(y)).map_err(|u| match u.reason.as_str() {
        "zero variance" => Undefined::new("zero rank variance"),
        _ => u,
    })
}

/// Agreement between two participants on the items they both rated.
/// `rho` is NaN when undefined, with the reason in `note`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAgreement {
    pub list: String,
    pub p1: String,
    pub p2: String,
    pub rho: f64,
    pub n_items: usize,
    pub note: Option<String>,
}

pub fn pairs_to_tsv(pairs: &[PairAgreement]) -> String {
    let mut s = String::from("list\tp1\tp2\trho\tn_items\n");
    for p in pairs {
        s.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", p.list, p.p1, p.p2, fmt_real(p.rho), p.n_items));
    }
    s
}

/// Which rater pairs are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairMode {
    /// Pairs that rated the same list, over that list's items.
    #[default]
    CoList,
    /// Every pair of participants, over all items both rated.
    AllPairs,
}

#[derive(Debug, Clone)]
struct RaterPair {
    list: Option<usize>,
    p1: usize,
    p2: usize,
    /// Record indices of the two raters' responses, aligned by item.
    aligned: Vec<(usize, usize)>,
}

/// Precomputed pairing of raters so agreement can be recomputed cheaply for
/// any vector of per-record responses.
#[derive(Debug, Clone)]
pub struct AgreementPlan {
    pairs: Vec<RaterPair>,
}

impl AgreementPlan {
    pub fn new(ratings: &RatingsTable, mode: PairMode) -> Self {
        let mut pairs = Vec::new();
        match mode {
            PairMode::CoList => {
                // list -> participant -> item -> record
                let mut by_list: Vec<Vec<(usize, HashMap<(usize, usize), usize>)>> = vec![Vec::new(); ratings.lists.len()];
                for (i, r) in ratings.records.iter().enumerate() {
                    let raters = &mut by_list[r.list];
                    let slot = match raters.iter().position(|(p, _)| *p == r.participant) {
                        Some(s) => s,
                        None => {
                            raters.push((r.participant, HashMap::new()));
                            raters.len() - 1
                        }
                    };
                    raters[slot].1.insert((r.verb, r.frame), i);
                }
                for (l, raters) in by_list.iter().enumerate() {
                    for a in 0..raters.len() {
                        for b in a + 1..raters.len() {
                            pairs.push(Self::align(ratings, Some(l), &raters[a], &raters[b]));
                        }
                    }
                }
            }
            PairMode::AllPairs => {
                let mut by_p: Vec<(usize, HashMap<(usize, usize), usize>)> =
                    (0..ratings.participants.len()).map(|p| (p, HashMap::new())).collect();
                for (i, r) in ratings.records.iter().enumerate() {
                    by_p[r.participant].1.entry((r.verb, r.frame)).or_insert(i);
                }
                for a in 0..by_p.len() {
                    for b in a + 1..by_p.len() {
                        let pair = Self::align(ratings, None, &by_p[a], &by_p[b]);
                        if !pair.aligned.is_empty() {
                            pairs.push(pair);
                        }
                    }
                }
            }
        }
        AgreementPlan { pairs }
    }

    fn align(
        ratings: &RatingsTable,
        list: Option<usize>,
        a: &(usize, HashMap<(usize, usize), usize>),
        b: &(usize, HashMap<(usize, usize), usize>),
    ) -> RaterPair {
        let mut aligned: Vec<(usize, usize)> = a.1.iter().filter_map(|(k, &ia)| b.1.get(k).map(|&ib| (ia, ib))).collect();
        aligned.sort_unstable();
        let (p1, p2) = (a.0, b.0);
        let _ = ratings;
        RaterPair { list, p1, p2, aligned }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Spearman rho per pair with `values[record]` as the responses.
    pub fn correlations(&self, values: &[f64]) -> Vec<std::result::Result<f64, Undefined>> {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        self.pairs
            .iter()
            .map(|p| {
                xs.clear();
                ys.clear();
                for &(i, j) in &p.aligned {
                    xs.push(values[i]);
                    ys.push(values[j]);
                }
                spearman(&xs, &ys)
            })
            .collect()
    }

    /// Mean of the defined pair correlations, with the number left out.
    pub fn mean_correlation(&self, values: &[f64]) -> (f64, usize) {
        let rhos = self.correlations(values);
        let defined: Vec<f64> = rhos.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
        let m = if defined.is_empty() { f64::NAN } else { mean(&defined) };
        (m, rhos.len() - defined.len())
    }

    pub fn table(&self, ratings: &RatingsTable, values: &[f64]) -> Vec<PairAgreement> {
        self.pairs
            .iter()
            .zip(self.correlations(values))
            .map(|(p, r)| {
                let (rho, note) = match r {
                    Ok(x) => (x, None),
                    Err(u) => (f64::NAN, Some(u.reason)),
                };
                PairAgreement {
                    list: p.list.map_or_else(|| "*".to_string(), |l| ratings.lists.name(l).to_string()),
                    p1: ratings.participants.name(p.p1).to_string(),
                    p2: ratings.participants.name(p.p2).to_string(),
                    rho,
                    n_items: p.aligned.len(),
                    note,
                }
            })
            .collect()
    }
}

/// One row per unordered pair of participants per shared list.
pub fn pairwise_list_agreement(ratings: &RatingsTable) -> Vec<PairAgreement> {
    let values: Vec<f64> = ratings.records.iter().map(|r| r.rating as f64).collect();
    AgreementPlan::new(ratings, PairMode::CoList).table(ratings, &values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    #[default]
    Mean,
    Median,
}

impl Statistic {
    pub fn apply(self, xs: &[f64]) -> f64 {
        match self {
            Statistic::Mean => mean(xs),
            Statistic::Median => median(xs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCI {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
    pub replicates: usize,
    pub level: f64,
    /// The point estimate lies outside `[lo, hi]`.
    pub point_outside: bool,
}

/// An interval together with the replicate statistics it was read from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapRun {
    pub ci: BootstrapCI,
    pub replicate_stats: Vec<f64>,
    /// Replicates whose statistic was undefined and left out.
    pub skipped: usize,
}

fn percentile_ci(point: f64, mut stats: Vec<f64>, skipped: usize, level: f64) -> Result<BootstrapRun> {
    if stats.is_empty() {
        return Err(Error::Analysis("every bootstrap replicate was undefined".into()));
    }
    let replicate_stats = stats.clone();
    stats.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let lo = quantile_sorted(&stats, tail);
    let hi = quantile_sorted(&stats, 1.0 - tail);
    Ok(BootstrapRun {
        ci: BootstrapCI {
            point,
            lo,
            hi,
            replicates: replicate_stats.len() + skipped,
            level,
            point_outside: point < lo || point > hi,
        },
        replicate_stats,
        skipped,
    })
}

fn check_level(level: f64, replicates: usize) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("confidence level {level} not in (0, 1)")));
    }
    if replicates == 0 {
        return Err(Error::Config("bootstrap needs at least one replicate".into()));
    }
    Ok(())
}

fn resample(n: usize, seed: u64, b: usize) -> Vec<usize> {
    let mut r = rng::stream(seed, b as u64);
    (0..n).map(|_| r.random_range(0..n)).collect()
}

/// Percentile bootstrap of `statistic` over `samples`; replicate `b` always
/// draws from substream `b` of `seed`.
pub fn bootstrap_ci(samples: &[f64], statistic: Statistic, replicates: usize, level: f64, seed: u64) -> Result<BootstrapRun> {
    check_level(level, replicates)?;
    if samples.is_empty() {
        return Err(Error::Domain("bootstrap of an empty sample".into()));
    }
    let stats: Vec<f64> = (0..replicates)
        .into_par_iter()
        .map(|b| {
            let xs: Vec<f64> = resample(samples.len(), seed, b).into_iter().map(|i| samples[i]).collect();
            statistic.apply(&xs)
        })
        .collect();
    percentile_ci(statistic.apply(samples), stats, 0, level)
}

/// Spearman rho of paired observations with a bootstrap over the pairs.
pub fn bootstrap_spearman(x: &[f64], y: &[f64], replicates: usize, level: f64, seed: u64) -> Result<BootstrapRun> {
    check_level(level, replicates)?;
    let point = spearman(x, y).map_err(|u| Error::Analysis(u.to_string()))?;
    let stats: Vec<Option<f64>> = (0..replicates)
        .into_par_iter()
        .map(|b| {
            let idx = resample(x.len(), seed, b);
            let xs: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
            let ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
            spearman(&xs, &ys).ok()
        })
        .collect();
    let skipped = stats.iter().filter(|s| s.is_none()).count();
    percentile_ci(point, stats.into_iter().flatten().collect(), skipped, level)
}

/// Distribution of mean pairwise agreement under the fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    /// Mean over simulations, with the percentile interval of the
    /// per-simulation means.
    pub ci: BootstrapCI,
    pub sim_means: Vec<f64>,
    pub n_pairs: usize,
    /// Pair correlations left out as undefined, summed over simulations.
    pub undefined_pairs: usize,
}

impl SimulationSummary {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("sim\tmean_rho\n");
        for (i, m) in self.sim_means.iter().enumerate() {
            s.push_str(&format!("{i}\t{}\n", fmt_real(*m)));
        }
        s
    }
}

/// Replays the design in `ratings` `n_sims` times, drawing each response
/// from the model, and summarizes the mean pairwise Spearman agreement.
/// Simulation `s` uses substream `s` of `seed`.
pub fn simulate_expected_agreement(
    model: &OrdinalModel,
    ratings: &RatingsTable,
    mode: PairMode,
    n_sims: usize,
    level: f64,
    seed: u64,
) -> Result<SimulationSummary> {
    check_level(level, n_sims)?;
    let lookup = |vocab: &crate::data::Vocab, name: &str, what: &str| {
        vocab
            .get(name)
            .ok_or_else(|| Error::Domain(format!("design references unknown {what} `{name}`")))
    };
    // cumulative category distribution per record
    let cdfs: Vec<Vec<f64>> = ratings
        .records
        .iter()
        .map(|r| {
            let p = lookup(&model.participants, ratings.participants.name(r.participant), "participant")?;
            let v = lookup(&model.verbs, ratings.verbs.name(r.verb), "verb")?;
            let f = lookup(&model.frames, ratings.frames.name(r.frame), "frame")?;
            let mut acc = 0.0;
            Ok(model
                .category_probs(p, v, f)
                .into_iter()
                .map(|q| {
                    acc += q;
                    acc
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let plan = AgreementPlan::new(ratings, mode);
    let results: Vec<(f64, usize)> = (0..n_sims)
        .into_par_iter()
        .map(|s| {
            let mut r = rng::stream(seed, s as u64);
            let values: Vec<f64> = cdfs
                .iter()
                .map(|cdf| {
                    let u: f64 = r.random::<f64>() * cdf[cdf.len() - 1];
                    (cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1) + 1) as f64
                })
                .collect();
            plan.mean_correlation(&values)
        })
        .collect();
    let undefined_pairs = results.iter().map(|r| r.1).sum();
    let sim_means: Vec<f64> = results.iter().map(|r| r.0).collect();
    let finite: Vec<f64> = sim_means.iter().copied().filter(|m| m.is_finite()).collect();
    if finite.is_empty() {
        return Err(Error::Analysis("no simulation produced a defined agreement".into()));
    }
    let run = percentile_ci(mean(&finite), finite, 0, level)?;
    Ok(SimulationSummary {
        ci: run.ci,
        sim_means,
        n_pairs: plan.len(),
        undefined_pairs,
    })
}
