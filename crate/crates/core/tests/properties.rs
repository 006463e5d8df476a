use moment_knockoffs::kstest::{ks_p_value, ks_penalty, ks_statistic};
use moment_knockoffs::marginals::MarginalModel;
use moment_knockoffs::moments::{aggregate_residuals, build_constraints, canonicalize, comoment, MomentKey, SLOTS};
use moment_knockoffs::synth::{self, shuffle, ShuffleScheme};
use proptest::prelude::*;

/// Columns with enough spread to standardize.
fn column(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0f64..50.0, n).prop_filter("needs spread", |v| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64 > 1e-2
    })
}

fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (8usize..40).prop_flat_map(|n| (column(n), column(n)))
}

fn slot() -> impl Strategy<Value = (u8, u8)> {
    prop::sample::select(SLOTS.to_vec())
}

fn key() -> impl Strategy<Value = MomentKey> {
    (0usize..6, 0usize..6, slot(), any::<bool>(), any::<bool>())
        .prop_filter("distinct features", |(l, r, ..)| l != r)
        .prop_map(|(l, r, (m, k), lk, rk)| MomentKey::new(l, r, m, k, lk, rk))
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn swapping_arguments_mirrors_the_split((x, y) in pair(), (m, k) in slot()) {
        let a = comoment(&x, &y, m, k).unwrap();
        let b = comoment(&y, &x, m, m - k).unwrap();
        prop_assert!(close(a, b, 1e-12), "{a} vs {b}");
    }

    #[test]
    fn positive_affine_maps_leave_comoments_unchanged(
        (x, y) in pair(), (m, k) in slot(), scale in 0.1f64..10.0, shift in -20.0f64..20.0,
    ) {
        let t: Vec<f64> = x.iter().map(|v| scale * v + shift).collect();
        let a = comoment(&x, &y, m, k).unwrap();
        let b = comoment(&t, &y, m, k).unwrap();
        prop_assert!(close(a, b, 1e-10), "{a} vs {b}");
    }

    #[test]
    fn sign_flip_follows_the_power((x, y) in pair(), (m, k) in slot()) {
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let a = comoment(&x, &y, m, k).unwrap();
        let b = comoment(&neg, &y, m, k).unwrap();
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        prop_assert!(close(b, sign * a, 1e-12), "{a} vs {b}");
    }

    #[test]
    fn canonicalize_is_idempotent_and_ordered(k in key()) {
        let c = canonicalize(k);
        prop_assert_eq!(canonicalize(c), c);
        prop_assert!(c.left < c.right);
        prop_assert_eq!(c.order, k.order);
        let flipped = MomentKey::new(k.right, k.left, k.order, k.order - k.split, k.right_knockoff, k.left_knockoff);
        prop_assert_eq!(canonicalize(flipped), c);
    }

    #[test]
    fn canonical_values_agree(k in key(), seed in 0u64..1000) {
        // the canonical form names the same moment
        let x = synth::generate_normal(6, 30, seed).unwrap();
        let kn = synth::generate_normal(6, 30, seed + 1).unwrap();
        let col = |i: usize, knock: bool| if knock { kn.col(i) } else { x.col(i) };
        let c = canonicalize(k);
        let a = comoment(col(k.left, k.left_knockoff), col(k.right, k.right_knockoff), k.order, k.split).unwrap();
        let b = comoment(col(c.left, c.left_knockoff), col(c.right, c.right_knockoff), c.order, c.split).unwrap();
        prop_assert!(close(a, b, 1e-12));
    }

    #[test]
    fn constraint_count_law(p in 2usize..=10, seed in 0u64..100) {
        let f = synth::generate_normal(p, 12, seed).unwrap();
        let cs = build_constraints(&f).unwrap();
        prop_assert_eq!(cs.pairs().len(), p * (p - 1) / 2);
        prop_assert_eq!(cs.len(), p * (p - 1) / 2 * 18);
    }

    #[test]
    fn copy_has_zero_residuals(p in 2usize..6, n in 10usize..60, seed in 0u64..100) {
        let f = synth::generate(p, n, seed, None).unwrap();
        let cs = build_constraints(&f).unwrap();
        prop_assert_eq!(aggregate_residuals(&f, &f, &cs).unwrap().as_array(), [0.0; 3]);
    }

    #[test]
    fn t_cdf_is_monotone(
        loc in -5.0f64..5.0, scale in 0.1f64..5.0, df in 2.1f64..100.0, a in -50.0f64..50.0, b in -50.0f64..50.0,
    ) {
        let m = MarginalModel::StudentT { location: loc, scale, degrees_of_freedom: df };
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(m.cdf(lo) <= m.cdf(hi));
        prop_assert!((0.0..=1.0).contains(&m.cdf(lo)));
    }

    #[test]
    fn p_value_falls_as_statistic_grows(a in 0.0f64..1.0, b in 0.0f64..1.0, n in 8usize..5000) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (plo, phi) = (ks_p_value(lo, n), ks_p_value(hi, n));
        prop_assert!(phi <= plo);
        prop_assert!((0.0..=1.0).contains(&plo) && (0.0..=1.0).contains(&phi));
    }

    #[test]
    fn ks_penalty_is_squared_statistic(x in column(30), loc in -2.0f64..2.0, scale in 0.5f64..20.0) {
        let m = MarginalModel::Normal { location: loc, scale };
        let d = ks_statistic(&x, &m).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert!((ks_penalty(&x, &m).unwrap() - d * d).abs() < 1e-14);
    }

    #[test]
    fn shuffle_permutes_each_column(p in 1usize..6, n in 2usize..80, seed in 0u64..1000, beta in 0.0f64..2.0) {
        let raw = synth::generate_normal(p, n, seed).unwrap();
        let out = shuffle(&raw, &ShuffleScheme::cyclic(p).with_beta(Some(beta)), seed).unwrap();
        for j in 0..p {
            let mut a = raw.col(j).to_vec();
            let mut b = out.col(j).to_vec();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            prop_assert_eq!(a, b);
        }
    }
}
