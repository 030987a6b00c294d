mod common;

use lexsel_core::agreement::{pairwise_list_agreement, PairAgreement};
use lexsel_core::data::{RatingsTable, Vocab};
use lexsel_core::normalize::{
    acceptability_matrix, category_probabilities, compare_normalizers, fit_ordinal_model, log_likelihood,
    participant_quality, rating_probability, FitConfig, OrdinalProblem, ParticipantQuality,
};
use lexsel_core::stats::sigmoid;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

use common::{recovery_data, small_data, spearman};

fn increasing(raw: &[f64]) -> Vec<f64> {
    let mut c = Vec::with_capacity(raw.len());
    let mut x = raw[0];
    c.push(x);
    for g in &raw[1..] {
        x += g.abs() + 1e-3;
        c.push(x);
    }
    c
}

#[test]
fn recovers_simulated_acceptabilities() {
    let (truth, ratings) = recovery_data(11);
    let fit = fit_ordinal_model(&ratings, None, &FitConfig::default()).unwrap();
    let mut t = Vec::new();
    let mut r = Vec::new();
    for v in 0..truth.verbs.len() {
        for f in 0..truth.frames.len() {
            t.push(truth.acceptability(v, f));
            let (fv, ff) = (
                fit.model.verbs.get(truth.verbs.name(v)).unwrap(),
                fit.model.frames.get(truth.frames.name(f)).unwrap(),
            );
            r.push(fit.model.acceptability(fv, ff));
        }
    }
    let rho = spearman(&t, &r);
    assert!(rho > 0.95, "spearman {rho}");
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    let (_, ratings) = small_data(3);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let weights: Vec<f64> = (0..ratings.participants.len()).map(|_| rng.random_range(0.2..1.0)).collect();
    for (k, w) in [None, Some(weights.as_slice())].into_iter().enumerate() {
        let problem = OrdinalProblem::new(&ratings, w, &FitConfig::default()).unwrap();
        for point in 0..10 {
            let x: Vec<f64> = (0..problem.n_params()).map(|_| rng.random_range(-1.5..1.5)).collect();
            let (_, g) = problem.objective_and_gradient(&x);
            let h = 1e-5;
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..x.len() {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let fd = (problem.objective(&xp) - problem.objective(&xm)) / (2.0 * h);
                num += (fd - g[i]).powi(2);
                den += g[i].powi(2).max(fd * fd);
            }
            let rel = (num / den).sqrt();
            assert!(rel < 1e-4, "weights {k}, point {point}: relative error {rel}");
        }
    }
}

#[test]
fn fitted_anchor_cutpoints_average_zero_and_increase() {
    let (_, ratings) = small_data(8);
    let fit = fit_ordinal_model(&ratings, None, &FitConfig::default()).unwrap();
    assert!(fit.model.mean_anchor_cutpoint().abs() < 1e-6);
    for c in &fit.model.cutpoints {
        assert!(c.windows(2).all(|w| w[0] < w[1]));
    }
    assert!(fit.diagnostics.gradient_norm.is_finite());
}

#[test]
fn likelihood_invariant_under_common_shift() {
    let (truth, ratings) = small_data(4);
    let base = log_likelihood(&truth, &ratings, None);
    let mut shifted = truth.clone();
    for b in &mut shifted.beta_verb {
        *b += 1.7;
    }
    for c in &mut shifted.cutpoints {
        for x in c.iter_mut() {
            *x += 1.7;
        }
    }
    let moved = log_likelihood(&shifted, &ratings, None);
    assert!((base - moved).abs() < 1e-9 * base.abs().max(1.0), "{base} vs {moved}");
}

#[test]
fn constant_weights_reproduce_unweighted_fit() {
    let (_, ratings) = small_data(9);
    let cfg = FitConfig::default();
    let plain = fit_ordinal_model(&ratings, None, &cfg).unwrap();
    let mut q = ParticipantQuality::uniform(&ratings.participants);
    q.scores.iter_mut().for_each(|s| *s = 0.37);
    let weighted = fit_ordinal_model(&ratings, Some(&q), &cfg).unwrap();
    assert_eq!(plain.model, weighted.model);
}

#[test]
fn repeated_rating_lands_in_its_bin() {
    let rows: Vec<(String, String)> = (0..5).map(|l| ("p".to_string(), format!("L{l}"))).collect();
    let ratings = RatingsTable::from_rows(rows.iter().map(|(p, l)| (p.as_str(), l.as_str(), "think", "NP V that S", 4)), 7)
        .unwrap();
    let fit = fit_ordinal_model(&ratings, None, &FitConfig::default()).unwrap();
    let a = fit.model.acceptability(0, 0);
    let c = &fit.model.cutpoints[0];
    assert!(c[2] < a && a < c[3], "a = {a}, cutpoints {c:?}");
}

#[test]
fn hand_evaluated_bins_at_three() {
    let cuts = [-2.5, -1.5, -0.5, 0.5, 1.5, 2.5];
    let a = 3.0;
    let p = category_probabilities(&cuts, a);
    let cdf = |i: usize| if i == 0 { 0.0 } else if i == 7 { 1.0 } else { 1.0 / (1.0 + (-(cuts[i - 1] - a)).exp()) };
    for i in 1..=7 {
        assert!((p[i - 1] - (cdf(i) - cdf(i - 1))).abs() < 1e-12);
    }
    assert!((rating_probability(&[0.0, 1.0], 0.0, 1).unwrap() - 0.5).abs() < 1e-15);
    assert!(rating_probability(&cuts, 0.0, 0).is_err());
    assert!(rating_probability(&cuts, 0.0, 8).is_err());
}

fn one_item_design(responses: &[u8], filler: bool) -> RatingsTable {
    // raters also agree on a few filler items so their cutpoints are pinned
    let mut rows = Vec::new();
    for (i, &r) in responses.iter().enumerate() {
        let p = format!("p{i}");
        rows.push((p.clone(), "target".to_string(), r));
        if filler {
            for (j, fr) in [1u8, 3, 5, 7].iter().enumerate() {
                rows.push((p.clone(), format!("fill{j}"), *fr));
            }
        }
    }
    RatingsTable::from_rows(rows.iter().map(|(p, f, r)| (p.as_str(), "L", "v", f.as_str(), *r)), 7).unwrap()
}

#[test]
fn variability_tracks_rater_consensus() {
    let cfg = FitConfig::default();
    let same = one_item_design(&[7, 7, 7, 7, 7, 7, 7], true);
    let spread = one_item_design(&[1, 2, 3, 4, 5, 6, 7], true);
    let var = |t: &RatingsTable| {
        let fit = fit_ordinal_model(t, None, &cfg).unwrap();
        let acc = acceptability_matrix(&fit.model, t, None).unwrap();
        acc.variability[(0, acc.frames.get("target").unwrap())]
    };
    let (hi, lo) = (var(&same), var(&spread));
    assert!(hi > 0.9, "consensus item variability {hi}");
    assert!(lo < hi && lo < 0.35, "dispersed item variability {lo}");
    assert!(lo >= 1.0 / 7.0 - 0.05, "dispersed item variability {lo}");
}

#[test]
fn acceptability_matrix_reports_model_scale() {
    let (_, ratings) = small_data(2);
    let fit = fit_ordinal_model(&ratings, None, &FitConfig::default()).unwrap();
    let acc = acceptability_matrix(&fit.model, &ratings, None).unwrap();
    for v in 0..acc.verbs.len() {
        for f in 0..acc.frames.len() {
            assert_eq!(acc.acceptability[(v, f)], fit.model.acceptability(v, f));
            let x = acc.variability[(v, f)];
            assert!(x > 0.0 && x <= 1.0);
        }
    }
}

fn pair(list: &str, a: &str, b: &str, rho: f64) -> PairAgreement {
    PairAgreement {
        list: list.into(),
        p1: a.into(),
        p2: b.into(),
        rho,
        n_items: 10,
        note: None,
    }
}

fn vocab(names: &[&str]) -> Vocab {
    let mut v = Vocab::new();
    for n in names {
        v.intern(n);
    }
    v
}

#[test]
fn equal_correlations_give_half() {
    let ps = ["a", "b", "c", "d"];
    let mut pairs = Vec::new();
    for (l, group) in [["a", "b", "c"], ["b", "c", "d"], ["a", "c", "d"]].iter().enumerate() {
        for i in 0..3 {
            for j in i + 1..3 {
                pairs.push(pair(&format!("L{l}"), group[i], group[j], 0.4));
            }
        }
    }
    let q = participant_quality(&pairs, &vocab(&ps)).unwrap();
    assert!(q.scores.iter().all(|&s| s == 0.5), "{:?}", q.scores);
}

#[test]
fn contrarian_scores_lowest() {
    let ps = ["a", "b", "c", "d", "e"];
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let mut pairs = Vec::new();
    for l in 0..6 {
        for i in 0..ps.len() {
            for j in i + 1..ps.len() {
                let bad = ps[i] == "e" || ps[j] == "e";
                let rho = if bad { -0.3 } else { 0.5 } + rng.random_range(-0.1..0.1);
                pairs.push(pair(&format!("L{l}"), ps[i], ps[j], rho));
            }
        }
    }
    let mut names = ps.to_vec();
    names.push("lonely");
    let q = participant_quality(&pairs, &vocab(&names)).unwrap();
    let e = q.get("e").unwrap();
    for p in ["a", "b", "c", "d"] {
        assert!(q.get(p).unwrap() > e);
    }
    assert!(e < 0.5);
    assert!(q.scores.iter().all(|&s| s > 0.0 && s < 1.0));
    assert_eq!(q.get("lonely"), Some(0.5));
    assert_eq!(q.unpaired, vec!["lonely".to_string()]);
}

#[test]
fn quality_from_simulated_agreement_is_bounded() {
    let (_, ratings) = recovery_data(6);
    let pairs = pairwise_list_agreement(&ratings);
    let q = participant_quality(&pairs, &ratings.participants).unwrap();
    assert_eq!(q.scores.len(), 100);
    assert!(q.scores.iter().all(|&s| s > 0.0 && s < 1.0));
    // scores are monotone in the BLUPs
    let mut idx: Vec<usize> = (0..q.scores.len()).collect();
    idx.sort_by(|&i, &j| q.blups[i].total_cmp(&q.blups[j]));
    assert!(idx.windows(2).all(|w| q.scores[w[0]] <= q.scores[w[1]]));
}

#[test]
fn normalizer_comparison_on_simulated_data() {
    let (_, ratings) = recovery_data(12);
    let fit = fit_ordinal_model(&ratings, None, &FitConfig::default()).unwrap();
    let acc = acceptability_matrix(&fit.model, &ratings, None).unwrap();
    let cmp = compare_normalizers(&ratings, &acc);
    assert_eq!(cmp.n_items, 200);
    assert!(cmp.vs_mean_rating.unwrap() > 0.85);
    assert!(cmp.vs_zscore_mean.unwrap() > 0.85);
}

#[test]
fn uniform_ratings_flag_degenerate_comparison() {
    let rows: Vec<(String, String)> = (0..3).flat_map(|p| (0..3).map(move |f| (format!("p{p}"), format!("f{f}")))).collect();
    let ratings =
        RatingsTable::from_rows(rows.iter().map(|(p, f)| (p.as_str(), "L", "v", f.as_str(), 4)), 7).unwrap();
    let fit = fit_ordinal_model(&ratings, None, &FitConfig::default()).unwrap();
    let acc = acceptability_matrix(&fit.model, &ratings, None).unwrap();
    let cmp = compare_normalizers(&ratings, &acc);
    assert!(cmp.vs_mean_rating.is_none());
    assert!(!cmp.degenerate.is_empty());
}

proptest! {
    #[test]
    fn category_probabilities_sum_to_one(raw in prop::collection::vec(-4.0f64..4.0, 6), a in -8.0f64..8.0) {
        let c = increasing(&raw);
        let s: f64 = category_probabilities(&c, a).iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-10);
        prop_assert!(category_probabilities(&c, a).iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn upper_tail_grows_with_acceptability(raw in prop::collection::vec(-4.0f64..4.0, 6), a in -6.0f64..6.0, d in 0.0f64..3.0) {
        let c = increasing(&raw);
        let tail = |a: f64| {
            let p = category_probabilities(&c, a);
            (0..7).map(|i| p[i..].iter().sum::<f64>()).collect::<Vec<_>>()
        };
        let (lo, hi) = (tail(a), tail(a + d));
        for i in 0..7 {
            prop_assert!(hi[i] >= lo[i] - 1e-12);
        }
    }

    #[test]
    fn first_bin_is_sigmoid(c0 in -5.0f64..5.0, a in -5.0f64..5.0) {
        let p = rating_probability(&[c0, c0 + 1.0, c0 + 2.0], a, 1).unwrap();
        prop_assert!((p - sigmoid(c0 - a)).abs() < 1e-12);
    }
}
