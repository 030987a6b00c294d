//! Simulated ratings and counts from known parameters, for checking that
//! fits recover what generated the data.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::data::{CountsTable, RatingsTable, Vocab};
use crate::normalize::OrdinalModel;
use crate::rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub verb_sd: f64,
    pub frame_sd: f64,
    pub item_sd: f64,
    /// Distance between neighbouring base cutpoints.
    pub cutpoint_spacing: f64,
    /// Per-participant shift of all cutpoints.
    pub shift_sd: f64,
    /// Per-participant log-scale of the cutpoint spread.
    pub spread_sd: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            verb_sd: 3.0,
            frame_sd: 3.0,
            item_sd: 1.5,
            cutpoint_spacing: 2.0,
            shift_sd: 0.5,
            spread_sd: 0.2,
        }
    }
}

/// `<prefix>0 .. <prefix>{n-1}`.
pub fn vocab(prefix: &str, n: usize) -> Vocab {
    let mut v = Vocab::new();
    for i in 0..n {
        v.intern(&format!("{prefix}{i}"));
    }
    v
}

fn normal(sd: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, sd).map_err(|e| Error::Config(e.to_string()))
}

/// An ordinal model with Gaussian effects and jittered, evenly spaced
/// cutpoints centred on zero. Names are `p<i>`, `v<i>`, `f<i>`.
pub fn random_model(
    n_participants: usize,
    n_verbs: usize,
    n_frames: usize,
    scale_max: u8,
    spec: &SynthSpec,
    seed: u64,
) -> Result<OrdinalModel> {
    if scale_max < 2 {
        return Err(Error::Config("scale needs at least two points".into()));
    }
    let mut r = rng::named(seed, "synth-model");
    let (nv, nf) = (normal(spec.verb_sd)?, normal(spec.frame_sd)?);
    let ni = normal(spec.item_sd)?;
    let (shift, spread) = (normal(spec.shift_sd)?, normal(spec.spread_sd)?);
    let beta_verb = (0..n_verbs).map(|_| nv.sample(&mut r)).collect();
    let beta_frame = (0..n_frames).map(|_| nf.sample(&mut r)).collect();
    let beta_item = DMatrix::from_fn(n_verbs, n_frames, |_, _| ni.sample(&mut r));
    let m = scale_max as usize - 1;
    let centre = (m as f64 - 1.0) / 2.0;
    let cutpoints = (0..n_participants)
        .map(|_| {
            let (s, k) = (shift.sample(&mut r), spread.sample(&mut r).exp());
            (0..m)
                .map(|i| s + k * spec.cutpoint_spacing * (i as f64 - centre))
                .collect()
        })
        .collect();
    Ok(OrdinalModel {
        participants: vocab("p", n_participants),
        verbs: vocab("v", n_verbs),
        frames: vocab("f", n_frames),
        scale_max,
        beta_verb,
        beta_frame,
        beta_item,
        cutpoints,
    })
}

/// Shuffles every verb × frame item and deals it into `n_lists` lists of
/// (near) equal size.
pub fn random_lists(n_verbs: usize, n_frames: usize, n_lists: usize, seed: u64) -> Vec<Vec<(usize, usize)>> {
    let mut items: Vec<(usize, usize)> = (0..n_verbs).flat_map(|v| (0..n_frames).map(move |f| (v, f))).collect();
    items.shuffle(&mut rng::named(seed, "synth-lists"));
    let mut lists = vec![Vec::new(); n_lists.max(1)];
    for (i, it) in items.into_iter().enumerate() {
        lists[i % n_lists.max(1)].push(it);
    }
    lists
}

/// Draws one rating per item per rater. List `l` is rated by participants
/// `l·raters_per_list .. (l+1)·raters_per_list`.
pub fn sample_ratings(
    model: &OrdinalModel,
    lists: &[Vec<(usize, usize)>],
    raters_per_list: usize,
    seed: u64,
) -> Result<RatingsTable> {
    if lists.len() * raters_per_list > model.participants.len() {
        return Err(Error::Config(format!(
            "{} lists × {raters_per_list} raters need more than {} participants",
            lists.len(),
            model.participants.len()
        )));
    }
    let mut r = rng::named(seed, "synth-ratings");
    let mut rows: Vec<(String, String, String, String, u8)> = Vec::new();
    for (l, items) in lists.iter().enumerate() {
        for p in l * raters_per_list..(l + 1) * raters_per_list {
            for &(v, f) in items {
                let probs = model.category_probs(p, v, f);
                let u: f64 = r.random();
                let mut acc = 0.0;
                let mut rating = probs.len();
                for (i, q) in probs.iter().enumerate() {
                    acc += q;
                    if u < acc {
                        rating = i + 1;
                        break;
                    }
                }
                rows.push((
                    model.participants.name(p).to_string(),
                    format!("L{l}"),
                    model.verbs.name(v).to_string(),
                    model.frames.name(f).to_string(),
                    rating as u8,
                ));
            }
        }
    }
    RatingsTable::from_rows(
        rows.iter().map(|(p, l, v, f, x)| (p.as_str(), l.as_str(), v.as_str(), f.as_str(), *x)),
        model.scale_max,
    )
}

/// Negative-binomial counts `c_vf ~ NegBin(π_vf, r_v)` drawn as a
/// gamma-Poisson mixture. Verbs that draw no counts at all are dropped.
pub fn sample_counts(verbs: &Vocab, frames: &Vocab, pi: &DMatrix<f64>, rate: &[f64], seed: u64) -> Result<CountsTable> {
    if pi.shape() != (verbs.len(), frames.len()) || rate.len() != verbs.len() {
        return Err(Error::Domain("π and rates must match the vocabularies".into()));
    }
    let mut r = rng::named(seed, "synth-counts");
    let mut triples = Vec::with_capacity(pi.len());
    for v in 0..verbs.len() {
        for f in 0..frames.len() {
            let p = pi[(v, f)];
            if !(0.0..1.0).contains(&p) || rate[v] <= 0.0 {
                return Err(Error::Domain(format!("π = {p}, r = {} out of range", rate[v])));
            }
            let c = if p == 0.0 {
                0
            } else {
                let lambda = Gamma::new(rate[v], p / (1.0 - p))
                    .map_err(|e| Error::Domain(e.to_string()))?
                    .sample(&mut r);
                if lambda > 0.0 {
                    Poisson::new(lambda).map_err(|e| Error::Domain(e.to_string()))?.sample(&mut r) as u64
                } else {
                    0
                }
            };
            triples.push((verbs.name(v), frames.name(f), c));
        }
    }
    Ok(CountsTable::from_triples(triples).0)
}

/// Overlapping lists: items are shuffled into a ring and list `l` takes the
/// `list_len` consecutive items starting at `l · (n_items / n_lists)`.
/// Neighbouring lists share items, so every rater is linked to the others
/// through common items.
pub fn sliding_lists(n_verbs: usize, n_frames: usize, n_lists: usize, list_len: usize, seed: u64) -> Vec<Vec<(usize, usize)>> {
    let mut items: Vec<(usize, usize)> = (0..n_verbs).flat_map(|v| (0..n_frames).map(move |f| (v, f))).collect();
    items.shuffle(&mut rng::named(seed, "synth-lists"));
    let n = items.len();
    let stride = (n / n_lists.max(1)).max(1);
    (0..n_lists)
        .map(|l| (0..list_len.min(n)).map(|j| items[(l * stride + j) % n]).collect())
        .collect()
}
