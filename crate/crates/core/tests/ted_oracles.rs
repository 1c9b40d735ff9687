use proptest::prelude::*;
use rxdialog::policy::ted::{fit, EncodedSession};
use rxdialog::policy::{ted_loss, ted_similarity, FeatureVocab, StateFeatures, TedConfig, TedModel};

fn toy(actions: usize, seed: u64) -> TedModel<f64> {
    let cfg = TedConfig { d_model: 8, heads: 2, embed_dim: 4, history: 3, dropout: 0.0, seed, ..TedConfig::default() };
    let vocab = FeatureVocab::new((0..5).map(|i| format!("f{i}")));
    TedModel::new(vocab, (0..actions).map(|i| format!("a{i}")).collect(), cfg)
}

fn seq(rows: &[&[usize]]) -> Vec<StateFeatures> {
    rows.iter()
        .enumerate()
        .map(|(p, r)| StateFeatures { indices: r.to_vec(), dim: 5, position: p, unknown: 0 })
        .collect()
}

#[test]
fn gradient_matches_finite_differences() {
    // four steps: longer than the window, so the causal cut-off is exercised
    let xs = seq(&[&[0, 2], &[1], &[2, 3, 4], &[0, 4]]);
    let ys = [1, 0, 1, 1];
    for seed in 0..3 {
        let mut m = toy(2, seed);
        let (_, g) = m.full_loss_grad(&xs, &ys);
        let eps = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..m.params.len() {
            let p = m.params[i];
            m.params[i] = p + eps;
            let up = m.full_loss(&xs, &ys);
            m.params[i] = p - eps;
            let down = m.full_loss(&xs, &ys);
            m.params[i] = p;
            let fd = (up - down) / (2.0 * eps);
            let rel = (fd - g[i]).abs() / (fd.abs() + g[i].abs()).max(1e-7);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "seed {seed}: worst relative error {worst}");
    }
}

#[test]
fn action_order_does_not_change_scores() {
    let m = toy(3, 9);
    let mut p = m.clone();
    p.actions.reverse();
    let e = m.config.embed_dim;
    let n = m.params.len();
    let table = n - 3 * e;
    for a in 0..3 {
        let src = table + (2 - a) * e;
        p.params[table + a * e..table + (a + 1) * e].copy_from_slice(&m.params[src..src + e]);
    }
    let xs = seq(&[&[0], &[1, 3]]);
    let (h1, s1) = ted_similarity(&m, &xs).unwrap();
    let (h2, s2) = ted_similarity(&p, &xs).unwrap();
    assert_eq!(h1, h2);
    for (k, v) in s1 {
        assert!((s2[&k] - v).abs() < 1e-12);
    }
}

#[test]
fn training_lowers_the_loss() {
    let mut m = toy(4, 2);
    let data = vec![
        EncodedSession { features: seq(&[&[0], &[1], &[2]]), targets: vec![0, 1, 2] },
        EncodedSession { features: seq(&[&[3], &[4], &[0, 1]]), targets: vec![3, 2, 0] },
    ];
    let before: f64 = data.iter().map(|d| m.full_loss(&d.features, &d.targets)).sum();
    let cfg = TedConfig { epochs: 200, batch_start: 2, batch_end: 2, lr: 0.02, ..m.config.clone() };
    fit(&mut m, &data, &cfg);
    let after: f64 = data.iter().map(|d| m.full_loss(&d.features, &d.targets)).sum();
    assert!(after < before * 0.1, "{before} -> {after}");
}

proptest! {
    #[test]
    fn loss_is_nonnegative(sp in -50.0f64..50.0, neg in prop::collection::vec(-50.0f64..50.0, 0..12)) {
        let l = ted_loss(sp, &neg);
        prop_assert!(l >= 0.0 && l.is_finite());
        // lse bounds the largest score from above
        for &n in &neg {
            prop_assert!(l >= n - sp - 1e-9);
        }
    }

    #[test]
    fn loss_is_shift_invariant(sp in -20.0f64..20.0, neg in prop::collection::vec(-20.0f64..20.0, 1..8), c in -100.0f64..100.0) {
        let shifted: Vec<f64> = neg.iter().map(|x| x + c).collect();
        prop_assert!((ted_loss(sp, &neg) - ted_loss(sp + c, &shifted)).abs() < 1e-9);
    }
}
