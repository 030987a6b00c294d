mod common;

use std::io::Write;

use lexsel_core::data::FeatureMatrix;
use lexsel_core::factor::{
    assemble_features, default_base, glove_fit, glove_loss, glove_weight, lda_fit, lfa_fit, lfa_fit_from, lfa_init,
    lfa_objective, load_sentence_features, nonzero_cells, AssemblyMode, FactorModel, FactorOutput, GloveConfig,
    LdaConfig, LfaConfig,
};
use lexsel_core::freq::{bnb_map, BnbConfig};
use lexsel_core::Error;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};

use common::{counts, random_counts};

fn assert_simplex_rows(m: &DMatrix<f64>) {
    for row in m.row_iter() {
        assert!((row.sum() - 1.0).abs() < 1e-8, "row sums to {}", row.sum());
        assert!(row.iter().all(|&x| x >= 0.0));
    }
}

#[test]
fn lda_single_topic_is_the_smoothed_corpus_distribution() {
    let t = random_counts(6, 5, 20, 1);
    let p = lda_fit(&t, 1, &LdaConfig::default()).unwrap();
    assert!(p.theta.iter().all(|&x| (x - 1.0).abs() < 1e-12));
    let c = t.dense();
    // eta = 1/K = 1 added to every frame total
    let totals: Vec<f64> = (0..5).map(|f| c.column(f).sum() + 1.0).collect();
    let z: f64 = totals.iter().sum();
    for f in 0..5 {
        assert!((p.phi[(0, f)] - totals[f] / z).abs() < 1e-10);
    }
}

fn two_blocks() -> lexsel_core::data::CountsTable {
    counts(&[
        ("a", "f1", 30),
        ("a", "f2", 10),
        ("b", "f1", 5),
        ("b", "f2", 25),
        ("c", "f3", 20),
        ("c", "f4", 20),
        ("d", "f3", 8),
        ("d", "f4", 40),
        ("a", "f3", 0),
        ("a", "f4", 0),
    ])
}

#[test]
fn lda_separates_block_structure() {
    let t = two_blocks();
    let p = lda_fit(&t, 2, &LdaConfig::default()).unwrap();
    assert_simplex_rows(&p.theta);
    assert_simplex_rows(&p.phi);
    let top = |v: usize| if p.theta[(v, 0)] > p.theta[(v, 1)] { 0 } else { 1 };
    for v in 0..4 {
        assert!(p.theta[(v, top(v))] > 0.9, "{}", p.theta.row(v));
    }
    assert_eq!(top(0), top(1));
    assert_eq!(top(2), top(3));
    assert_ne!(top(0), top(2));
}

#[test]
fn lda_bound_never_decreases_and_is_seeded() {
    let t = random_counts(12, 8, 30, 4);
    for k in [2, 3, 10] {
        let p = lda_fit(&t, k, &LdaConfig::default()).unwrap();
        assert!(!p.elbo_trace.is_empty());
        for w in p.elbo_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-8 * w[0].abs(), "{} -> {}", w[0], w[1]);
        }
        assert_simplex_rows(&p.theta);
        assert_simplex_rows(&p.phi);
        assert_simplex_rows(&p.reconstruction());
        let again = lda_fit(&t, k, &LdaConfig::default()).unwrap();
        assert_eq!(p.theta, again.theta);
        assert_eq!(p.phi, again.phi);
    }
    assert!(matches!(lda_fit(&t, 0, &LdaConfig::default()), Err(Error::Config(_))));
}

#[test]
fn lfa_gradient_matches_finite_differences() {
    let t = random_counts(5, 4, 25, 2);
    let c = t.dense();
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(6);
    for _ in 0..10 {
        let u = DMatrix::from_fn(5, 2, |_, _| r.random_range(-1.5..1.5));
        let a = DMatrix::from_fn(2, 4, |_, _| r.random_range(-1.5..1.5));
        let rho: Vec<f64> = (0..5).map(|_| r.random_range(-1.0..3.0)).collect();
        let (_, du, da, drho) = lfa_objective(&c, &u, &a, &rho);
        let h = 1e-5;
        let f = |u: &DMatrix<f64>, a: &DMatrix<f64>, rho: &[f64]| lfa_objective(&c, u, a, rho).0;
        let (mut num, mut den) = (0.0, 0.0);
        let mut acc = |analytic: f64, fd: f64| {
            num += (analytic - fd).powi(2);
            den += analytic.powi(2).max(fd * fd);
        };
        for i in 0..u.len() {
            let (mut up, mut um) = (u.clone(), u.clone());
            up[i] += h;
            um[i] -= h;
            acc(du[i], (f(&up, &a, &rho) - f(&um, &a, &rho)) / (2.0 * h));
        }
        for i in 0..a.len() {
            let (mut ap, mut am) = (a.clone(), a.clone());
            ap[i] += h;
            am[i] -= h;
            acc(da[i], (f(&u, &ap, &rho) - f(&u, &am, &rho)) / (2.0 * h));
        }
        for i in 0..rho.len() {
            let (mut rp, mut rm) = (rho.clone(), rho.clone());
            rp[i] += h;
            rm[i] -= h;
            acc(drho[i], (f(&u, &a, &rp) - f(&u, &a, &rm)) / (2.0 * h));
        }
        assert!((num / den).sqrt() < 1e-4);
    }
}

#[test]
fn lfa_reconstruction_is_gauge_invariant() {
    let t = random_counts(8, 6, 20, 3);
    let p = lfa_fit(&t, 3, &LfaConfig::default()).unwrap();
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let q = DMatrix::from_fn(3, 3, |_, _| r.random_range(-1.0..1.0)) + DMatrix::identity(3, 3) * 2.0;
    let qi = q.clone().try_inverse().unwrap();
    let mut moved = p.clone();
    moved.u = &p.u * &q;
    moved.a = &qi * &p.a;
    let diff = (p.reconstruction() - moved.reconstruction()).abs().max();
    assert!(diff < 1e-8, "{diff}");
    assert!(p.reconstruction().iter().all(|&x| x > 0.0 && x < 1.0));
}

#[test]
fn lfa_nests_the_per_cell_model() {
    let t = random_counts(10, 5, 30, 7);
    let c = t.dense();
    let bnb = bnb_map(&t, 0.0, &BnbConfig::default()).unwrap();
    let mut start = lfa_init(&t, 5, &LfaConfig::default()).unwrap();
    start.u = bnb.pi.map(|p| (p / (1.0 - p)).ln());
    start.a = DMatrix::identity(5, 5);
    start.rate = bnb.rate.clone();
    let rho: Vec<f64> = bnb.rate.iter().map(|&r| (r.exp_m1()).ln()).collect();
    let at_start = lfa_objective(&c, &start.u, &start.a, &rho).0;
    // with γ = 0 the Beta(1, 1) prior contributes nothing
    let bnb_total: f64 = bnb.diagnostics.iter().map(|d| d.final_objective).sum();
    assert!((at_start - bnb_total).abs() < 1e-6 * bnb_total.abs());
    let fit = lfa_fit_from(&t, start, &LfaConfig::default()).unwrap();
    assert!(fit.diagnostics.final_objective >= bnb_total - 1e-9 * bnb_total.abs());
}

#[test]
fn lfa_zero_row_gets_small_probabilities() {
    let mut rows = vec![("quiet", "f0", 0u64)];
    let t0 = random_counts(6, 5, 20, 8);
    for (&(v, f), &c) in &t0.counts {
        rows.push((t0.verbs.name(v), t0.frames.name(f), c));
    }
    let mut t = counts(&rows);
    let quiet = t.verbs.intern("quiet");
    let p = lfa_fit(&t, 2, &LfaConfig::default()).unwrap();
    assert!(p.reconstruction().row(quiet).iter().all(|&x| x < 0.5));
}

#[test]
fn lfa_is_seeded() {
    let t = random_counts(6, 5, 20, 9);
    let a = lfa_fit(&t, 2, &LfaConfig::default()).unwrap();
    let b = lfa_fit(&t, 2, &LfaConfig::default()).unwrap();
    assert_eq!(a, b);
    let other = lfa_fit(&t, 2, &LfaConfig { seed: 5, ..LfaConfig::default() }).unwrap();
    assert_ne!(a.u, other.u);
}

#[test]
fn glove_weight_values() {
    assert_eq!(glove_weight(10.0, 10.0, 0.75), 1.0);
    assert_eq!(glove_weight(250.0, 10.0, 0.75), 1.0);
    assert!((glove_weight(5.0, 10.0, 0.75) - 0.5f64.powf(0.75)).abs() < 1e-15);
    assert!((glove_weight(5.0, 10.0, 0.75) - 0.5946).abs() < 1e-4);
}

#[test]
fn glove_recovers_rank_one_log_counts() {
    // c = x_v · y_f, so log c is exactly additive
    let x = [1u64, 2, 3, 5, 7];
    let y = [2u64, 3, 4, 11];
    let mut rows = Vec::new();
    let names: Vec<(String, String)> = (0..5).flat_map(|v| (0..4).map(move |f| (format!("v{v}"), format!("f{f}")))).collect();
    for (i, (v, f)) in names.iter().enumerate() {
        let c = x[i / 4] * y[i % 4];
        rows.push((v.as_str(), f.as_str(), c));
    }
    let t = counts(&rows);
    let cfg = GloveConfig {
        max_iters: 20_000,
        ..GloveConfig::default()
    };
    let p = glove_fit(&t, 1, &cfg).unwrap();
    let cells = nonzero_cells(&t);
    for &(i, j, c) in &cells {
        let fit = p.w.row(i).dot(&p.w_ctx.row(j)) + p.b[i] + p.b_ctx[j];
        assert!((fit - c.ln()).abs() < 1e-3, "cell ({i}, {j}): {fit} vs {}", c.ln());
    }
    assert!(p.w.iter().chain(p.w_ctx.iter()).all(|x| x.is_finite()));
}

#[test]
fn glove_loss_is_symmetric_under_transposition() {
    let t = random_counts(5, 4, 40, 10);
    let cells = nonzero_cells(&t);
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(2);
    let w = DMatrix::from_fn(5, 3, |_, _| r.random_range(-1.0..1.0));
    let wc = DMatrix::from_fn(4, 3, |_, _| r.random_range(-1.0..1.0));
    let b: Vec<f64> = (0..5).map(|_| r.random_range(-1.0..1.0)).collect();
    let bc: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..1.0)).collect();
    let transposed: Vec<(usize, usize, f64)> = cells.iter().map(|&(i, j, c)| (j, i, c)).collect();
    let a = glove_loss(&cells, &w, &wc, &b, &bc, 10.0, 0.75);
    let z = glove_loss(&transposed, &wc, &w, &bc, &b, 10.0, 0.75);
    assert_eq!(a, z);
}

#[test]
fn glove_is_seeded() {
    let t = random_counts(6, 5, 20, 11);
    let a = glove_fit(&t, 2, &GloveConfig::default()).unwrap();
    let b = glove_fit(&t, 2, &GloveConfig::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn assembled_dimensions() {
    let t = random_counts(7, 9, 20, 12);
    let lda = lda_fit(&t, 5, &LdaConfig::default()).unwrap();
    let base = default_base(FactorModel::Lda, &t, &BnbConfig::default()).unwrap().unwrap();
    let full = assemble_features(FactorOutput::Lda(&lda), Some(&base), AssemblyMode::Reconstruction).unwrap();
    assert_eq!(full.dim(), 18);
    assert_eq!(full.nrows(), 7);
    let plain = assemble_features(FactorOutput::Lda(&lda), None, AssemblyMode::Reconstruction).unwrap();
    assert_eq!(plain.dim(), 9);
    let latent = assemble_features(FactorOutput::Lda(&lda), None, AssemblyMode::Latent).unwrap();
    assert_eq!(latent.dim(), 5);
    let glove = glove_fit(&t, 3, &GloveConfig::default()).unwrap();
    assert_eq!(assemble_features(FactorOutput::Glove(&glove), None, AssemblyMode::Reconstruction).unwrap().dim(), 3);
    assert!(default_base(FactorModel::Glove, &t, &BnbConfig::default()).unwrap().is_none());
    let lfa = lfa_fit(&t, 2, &LfaConfig::default()).unwrap();
    let lfa_base = default_base(FactorModel::Lfa, &t, &BnbConfig::default()).unwrap().unwrap();
    assert_eq!(assemble_features(FactorOutput::Lfa(&lfa), Some(&lfa_base), AssemblyMode::Reconstruction).unwrap().dim(), 18);

    let other = random_counts(4, 9, 20, 13);
    let wrong = default_base(FactorModel::Lda, &other, &BnbConfig::default()).unwrap().unwrap();
    assert!(matches!(
        assemble_features(FactorOutput::Lda(&lda), Some(&wrong), AssemblyMode::Reconstruction),
        Err(Error::Domain(_))
    ));
}

fn write(text: &str) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(text.as_bytes()).unwrap();
    f
}

fn load(text: &str) -> lexsel_core::Result<FeatureMatrix> {
    load_sentence_features(write(text).path())
}

#[test]
fn sentence_features_shape() {
    let mut text = String::new();
    for v in 0..50 {
        for f in 0..20 {
            let vals: Vec<String> = (0..16).map(|d| format!("{}", (v * 31 + f * 7 + d) as f64 / 100.0)).collect();
            text.push_str(&format!("verb{v}\tframe{f}\t{}\n", vals.join("\t")));
        }
    }
    let m = load(&text).unwrap();
    assert_eq!(m.nrows(), 1000);
    assert_eq!(m.dim(), 16);
    assert_eq!(m, load(&text).unwrap());
    let headed = load("verb\tframe\tcls0\tcls1\nrun\tNP V\t0.5\t1\n").unwrap();
    assert_eq!(headed.columns, vec!["cls0", "cls1"]);
}

#[test]
fn sentence_feature_errors() {
    assert!(matches!(load(""), Err(Error::Data { .. })));
    assert!(matches!(load("run\tNP V\t1\t2\nrun\tNP V\t3\t4\n"), Err(Error::Data { .. })));
    assert!(matches!(load("run\tNP V\t1\t2\nwalk\tNP V\t3\n"), Err(Error::Data { .. })));
    assert!(matches!(load("run\tNP V\t1\t2\nwalk\tNP V\t3\tx\n"), Err(Error::Data { .. })));
}
