use moment_knockoffs::moments::comoment;
use moment_knockoffs::synth::{self, generate, generate_normal, shuffle, ShuffleScheme, SynthMetadata};

fn spearman_with_position(x: &[f64]) -> f64 {
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut rank = vec![0.0; n];
    for (r, i) in idx.into_iter().enumerate() {
        rank[i] = r as f64;
    }
    let m = (n - 1) as f64 / 2.0;
    let cov: f64 = rank.iter().enumerate().map(|(pos, r)| (pos as f64 - m) * (r - m)).sum();
    let var: f64 = (0..n).map(|pos| (pos as f64 - m).powi(2)).sum();
    cov / var
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    comoment(x, y, 2, 1).unwrap()
}

#[test]
fn normal_columns_have_clt_moments() {
    let n = 10_000;
    let d = generate_normal(3, n, 21).unwrap();
    let tol = 4.0 / (n as f64).sqrt();
    for col in d.columns() {
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < tol);
        assert!((var - 1.0).abs() < tol * 2f64.sqrt());
    }
}

#[test]
fn smaller_to_end_pushes_small_values_late() {
    let d = generate(1, 1000, 2, None).unwrap();
    let rho = spearman_with_position(d.col(0));
    assert!(rho < -0.2, "{rho}");
    let d = generate(2, 1000, 2, None).unwrap();
    assert!(spearman_with_position(d.col(1)) > 0.2);
}

#[test]
fn opposite_rules_induce_negative_correlation() {
    let raw = generate_normal(2, 1000, 14).unwrap();
    assert!(pearson(raw.col(0), raw.col(1)).abs() < 0.1);
    let d = shuffle(&raw, &ShuffleScheme::cyclic(2), 14).unwrap();
    assert!(pearson(d.col(0), d.col(1)) < 0.0);
}

#[test]
fn unshuffled_columns_are_nearly_uncorrelated() {
    let d = generate_normal(4, 1000, 15).unwrap();
    for i in 0..4 {
        for j in i + 1..4 {
            assert!(pearson(d.col(i), d.col(j)).abs() < 0.1);
        }
    }
}

#[test]
fn shuffle_induces_nontrivial_moments() {
    let d = generate(4, 1000, 16, None).unwrap();
    let pairs = synth::induced_moments_report(&d).unwrap();
    let max_corr = pairs.iter().map(|t| t.values[0].abs()).fold(0.0, f64::max);
    let max_coskew = pairs.iter().map(|t| t.values[1].abs().max(t.values[2].abs())).fold(0.0, f64::max);
    assert!(max_corr > 0.05, "{max_corr}");
    assert!(max_coskew > 0.05, "{max_coskew}");
}

#[test]
fn shuffle_keeps_each_column_multiset() {
    let raw = generate_normal(5, 300, 17).unwrap();
    let d = shuffle(&raw, &ShuffleScheme::cyclic(5).with_beta(Some(0.05)), 17).unwrap();
    for j in 0..5 {
        let mut a = raw.col(j).to_vec();
        let mut b = d.col(j).to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        assert_eq!(a, b);
    }
}

#[test]
fn generation_is_deterministic() {
    assert_eq!(generate(4, 120, 5, None).unwrap(), generate(4, 120, 5, None).unwrap());
    assert_ne!(generate(4, 120, 5, None).unwrap(), generate(4, 120, 6, None).unwrap());
}

#[test]
fn metadata_records_default_strength() {
    let meta = SynthMetadata::new(4, 200, 1, None);
    assert_eq!(meta.beta, 3.0 / 200.0);
    assert_eq!(meta.rules.len(), 4);
}

#[test]
fn bad_shapes_and_strengths_are_config_errors() {
    assert!(generate_normal(0, 10, 1).is_err());
    assert!(generate_normal(2, 1, 1).is_err());
    let raw = generate_normal(2, 10, 1).unwrap();
    assert!(shuffle(&raw, &ShuffleScheme::cyclic(3), 1).is_err());
    assert!(shuffle(&raw, &ShuffleScheme::cyclic(2).with_beta(Some(-1.0)), 1).is_err());
}
