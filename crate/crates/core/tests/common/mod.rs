#![allow(dead_code)]

use lexsel_core::data::{CountsTable, RatingsTable};
use lexsel_core::normalize::OrdinalModel;
use lexsel_core::synth::{random_lists, random_model, sample_ratings, SynthSpec};

/// 100 participants, 20 verbs, 10 frames; 20 lists of 10 items, each list
/// rated by 5 participants, so every item gets 5 ratings.
pub fn recovery_data(seed: u64) -> (OrdinalModel, RatingsTable) {
    let model = random_model(100, 20, 10, 7, &SynthSpec::default(), seed).unwrap();
    let lists = random_lists(20, 10, 20, seed);
    let ratings = sample_ratings(&model, &lists, 5, seed).unwrap();
    (model, ratings)
}

/// A small design for gradient and invariance checks.
pub fn small_data(seed: u64) -> (OrdinalModel, RatingsTable) {
    let model = random_model(12, 5, 4, 7, &SynthSpec::default(), seed).unwrap();
    let lists = random_lists(5, 4, 4, seed);
    let ratings = sample_ratings(&model, &lists, 3, seed).unwrap();
    (model, ratings)
}

pub fn counts(rows: &[(&str, &str, u64)]) -> CountsTable {
    CountsTable::from_triples(rows.iter().copied()).0
}

/// Random table with every verb nonzero.
pub fn random_counts(nv: usize, nf: usize, max: u64, seed: u64) -> CountsTable {
    use rand::{Rng, SeedableRng};
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let verbs: Vec<String> = (0..nv).map(|i| format!("v{i}")).collect();
    let frames: Vec<String> = (0..nf).map(|i| format!("f{i}")).collect();
    let mut rows = Vec::new();
    for v in &verbs {
        let mut any = false;
        for (j, f) in frames.iter().enumerate() {
            let mut c = r.random_range(0..=max);
            if j == nf - 1 && !any && c == 0 {
                c = 1;
            }
            any |= c > 0;
            rows.push((v.as_str(), f.as_str(), c));
        }
    }
    CountsTable::from_triples(rows).0
}

pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    lexsel_core::agreement::spearman(x, y).unwrap()
}

/// Maximizes `Σ_f (c_f + λ) log θ_f` over the simplex by plain gradient
/// ascent on softmax logits; an optimizer-side oracle for the closed form.
pub fn dc_by_gradient_ascent(counts: &[f64], lambda: f64) -> Vec<f64> {
    let w: Vec<f64> = counts.iter().map(|c| c + lambda).collect();
    let n: f64 = w.iter().sum();
    let mut z = vec![0.0; w.len()];
    let softmax = |z: &[f64]| {
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|x| (x - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|x| x / s).collect::<Vec<f64>>()
    };
    for _ in 0..2_000_000 {
        let th = softmax(&z);
        let g: Vec<f64> = w.iter().zip(&th).map(|(wi, t)| wi - n * t).collect();
        if g.iter().map(|x| x.abs()).fold(0.0, f64::max) < 1e-11 * n {
            break;
        }
        for (zi, gi) in z.iter_mut().zip(&g) {
            *zi += gi / n;
        }
    }
    softmax(&z)
}
