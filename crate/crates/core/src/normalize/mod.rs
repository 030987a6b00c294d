//! Ordinal-model normalization of Likert ratings.

mod ordinal;
mod quality;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use ordinal::{
    category_probabilities, fit_ordinal_model, log_likelihood, participant_weights, rating_probability, FitConfig,
    OrdinalFit, OrdinalModel, OrdinalProblem,
};
pub use quality::{fit_crossed_intercepts, participant_quality, MixedModelFit, ParticipantQuality};

use crate::data::{AcceptabilityMatrix, RatingsTable};
use crate::stats::{mean, pearson, sample_sd, Undefined};
use crate::{Error, Result};

/// Acceptability `a_vf` for every rated cell and its variability score: the
/// mean probability the model assigns to the responses actually given,
/// weighted by participant quality when `quality` is supplied.
pub fn acceptability_matrix(
    model: &OrdinalModel,
    ratings: &RatingsTable,
    quality: Option<&ParticipantQuality>,
) -> Result<AcceptabilityMatrix> {
    let (nv, nf) = (model.verbs.len(), model.frames.len());
    let weights = quality.map(|q| participant_weights(ratings, q));
    let mut num = DMatrix::<f64>::zeros(nv, nf);
    let mut den = DMatrix::<f64>::zeros(nv, nf);
    let mut plain = DMatrix::<f64>::zeros(nv, nf);
    let mut count = DMatrix::<f64>::zeros(nv, nf);
    for r in &ratings.records {
        let (p, v, f) = resolve(model, ratings, r)?;
        let prob = rating_probability(&model.cutpoints[p], model.acceptability(v, f), r.rating)?;
        let w = weights.as_ref().map_or(1.0, |w| w[r.participant]);
        num[(v, f)] += w * prob;
        den[(v, f)] += w;
        plain[(v, f)] += prob;
        count[(v, f)] += 1.0;
    }
    let mut acc = DMatrix::from_element(nv, nf, f64::NAN);
    let mut var = acc.clone();
    for v in 0..nv {
        for f in 0..nf {
            if count[(v, f)] > 0.0 {
                acc[(v, f)] = model.acceptability(v, f);
                var[(v, f)] = if den[(v, f)] > 0.0 {
                    num[(v, f)] / den[(v, f)]
                } else {
                    plain[(v, f)] / count[(v, f)]
                };
            }
        }
    }
    Ok(AcceptabilityMatrix {
        verbs: model.verbs.clone(),
        frames: model.frames.clone(),
        acceptability: acc,
        variability: var,
    })
}

fn resolve(model: &OrdinalModel, ratings: &RatingsTable, r: &crate::data::RatingRecord) -> Result<(usize, usize, usize)> {
    let find = |vocab: &crate::data::Vocab, name: &str, what: &str| {
        vocab
            .get(name)
            .ok_or_else(|| Error::Domain(format!("{what} `{name}` is not covered by the model")))
    };
    Ok((
        find(&model.participants, ratings.participants.name(r.participant), "participant")?,
        find(&model.verbs, ratings.verbs.name(r.verb), "verb")?,
        find(&model.frames, ratings.frames.name(r.frame), "frame")?,
    ))
}

/// Correlations of the model's acceptabilities with simpler normalizers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizerComparison {
    pub n_items: usize,
    /// Pearson r against the per-item mean raw rating.
    pub vs_mean_rating: Option<f64>,
    /// Pearson r against the per-item mean of per-participant z-scores.
    pub vs_zscore_mean: Option<f64>,
    /// Why a correlation is missing, when it is.
    pub degenerate: Vec<String>,
}

/// Compares `acc` with mean-rating and z-score normalizations of `ratings`.
/// Participants whose ratings have no spread contribute z-scores of 0.
pub fn compare_normalizers(ratings: &RatingsTable, acc: &AcceptabilityMatrix) -> NormalizerComparison {
    let np = ratings.participants.len();
    let mut by_p: Vec<Vec<f64>> = vec![Vec::new(); np];
    for r in &ratings.records {
        by_p[r.participant].push(r.rating as f64);
    }
    let moments: Vec<(f64, f64)> = by_p
        .iter()
        .map(|xs| {
            let m = mean(xs);
            let sd = if xs.len() > 1 { sample_sd(xs) } else { 0.0 };
            (m, sd)
        })
        .collect();
    let items = ratings.items();
    let index: std::collections::HashMap<(usize, usize), usize> = items.iter().enumerate().map(|(i, k)| (*k, i)).collect();
    let mut raw_sum = vec![0.0; items.len()];
    let mut z_sum = vec![0.0; items.len()];
    let mut n = vec![0.0; items.len()];
    for r in &ratings.records {
        let i = index[&(r.verb, r.frame)];
        let (m, sd) = moments[r.participant];
        raw_sum[i] += r.rating as f64;
        z_sum[i] += if sd > 0.0 { (r.rating as f64 - m) / sd } else { 0.0 };
        n[i] += 1.0;
    }
    let (mut a, mut mr, mut mz) = (Vec::new(), Vec::new(), Vec::new());
    for (i, &(v, f)) in items.iter().enumerate() {
        let (Some(av), Some(af)) = (acc.verbs.get(ratings.verbs.name(v)), acc.frames.get(ratings.frames.name(f))) else {
            continue;
        };
        let x = acc.acceptability[(av, af)];
        if x.is_finite() {
            a.push(x);
            mr.push(raw_sum[i] / n[i]);
            mz.push(z_sum[i] / n[i]);
        }
    }
    let mut degenerate = Vec::new();
    let mut keep = |r: std::result::Result<f64, Undefined>, what: &str| match r {
        Ok(x) => Some(x),
        Err(u) => {
            degenerate.push(format!("{what}: {}", u.reason));
            None
        }
    };
    let vs_mean_rating = keep(pearson(&a, &mr), "mean rating");
    let vs_zscore_mean = keep(pearson(&a, &mz), "z-scored mean");
    NormalizerComparison {
        n_items: a.len(),
        vs_mean_rating,
        vs_zscore_mean,
        degenerate,
    }
}
