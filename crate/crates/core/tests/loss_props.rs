mod common;

use common::{random_pairs, rng, uniform};
use oce::loss::{oce_loss, pair_term, sample_pairs, sigma, LossConfig, PairSet};
use oce::{Tape, Tensor};
use proptest::prelude::*;
use rand::Rng;

fn field_from(values: &[f64], h: usize, w: usize) -> Tensor<f64> {
    Tensor::new(vec![2, h, w], values.to_vec()).unwrap()
}

#[test]
fn single_pair_closed_form() {
    let pairs = PairSet::new(12, 12, vec![(0, 10)], vec![(0, 0)]).unwrap();
    let cfg = LossConfig { lambda_reg: 0.0, ..Default::default() };
    let (loss, _) = oce_loss(&Tensor::<f64>::zeros(&[2, 12, 12]), &pairs, &cfg).unwrap();
    let expected = 1.0 / (1.0 + (-10.0f64).exp());
    assert!((loss - expected).abs() < 1e-12);
    assert!((sigma([0.0, 10.0f64.sqrt()], 10.0) - 0.731_058_578_630_004_9).abs() < 1e-12);
}

#[test]
fn sampled_pairs_match_the_anchor_density() {
    let mut r = rng(0);
    let pairs = sample_pairs(236, 236, &LossConfig::default(), &mut r).unwrap();
    assert_eq!(pairs.len(), 5569);
    for (a, p) in pairs.anchors.iter().zip(&pairs.partners) {
        let d2 = (a.0 as f64 - p.0 as f64).powi(2) + (a.1 as f64 - p.1 as f64).powi(2);
        assert!(d2 > 0.0 && d2 <= 100.0);
    }
}

/// Largest per-pair gradient norm `|d sigma / d delta|` over residual norms.
fn peak_gradient(tau: f64) -> f64 {
    (1..20000)
        .map(|k| {
            let u = k as f64 * 1e-3 * tau.sqrt();
            let s = sigma([u, 0.0], tau);
            s * (1.0 - s) * 2.0 * u / tau
        })
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pair_term_is_bounded_below_by_half_per_pair(seed in any::<u64>(), n in 1usize..30) {
        let mut r = rng(seed);
        let pairs = random_pairs(16, 16, n, 6.0, &mut r);
        let field = uniform::<f64>(&[2, 16, 16], -5.0, 5.0, &mut r);
        let term = pair_term(&field, &pairs, 10.0);
        prop_assert!(term > 0.5 * n as f64);
        // Loss with the regularizer adds a non-negative amount.
        let (full, _) = oce_loss(&field, &pairs, &LossConfig::default()).unwrap();
        prop_assert!(full >= term - 1e-9);
    }

    #[test]
    fn equality_holds_exactly_for_zero_residuals(seed in any::<u64>(), n in 1usize..30, cy in -3.0f64..3.0, cx in -3.0f64..3.0) {
        let mut r = rng(seed);
        let (h, w) = (16, 16);
        let pairs = random_pairs(h, w, n, 6.0, &mut r);
        // r_i = i - c for one global center: every residual vanishes.
        let mut v = vec![0.0; 2 * h * w];
        for y in 0..h {
            for x in 0..w {
                v[y * w + x] = y as f64 - cy;
                v[h * w + y * w + x] = x as f64 - cx;
            }
        }
        let term = pair_term(&field_from(&v, h, w), &pairs, 10.0);
        prop_assert!((term - 0.5 * n as f64).abs() < 1e-12 * n as f64);
    }

    #[test]
    fn regularizer_vanishes_iff_anchors_are_zero(seed in any::<u64>(), n in 1usize..20) {
        let mut r = rng(seed);
        let (h, w) = (12, 12);
        let pairs = random_pairs(h, w, n, 5.0, &mut r);
        let mut field = uniform::<f64>(&[2, h, w], -2.0, 2.0, &mut r);
        for &(y, x) in &pairs.anchors {
            field.data_mut()[y * w + x] = 0.0;
            field.data_mut()[(h + y) * w + x] = 0.0;
        }
        let with = LossConfig { lambda_reg: 0.3, ..Default::default() };
        let without = LossConfig { lambda_reg: 0.0, ..Default::default() };
        let reg = |f: &Tensor<f64>| oce_loss(f, &pairs, &with).unwrap().0 - oce_loss(f, &pairs, &without).unwrap().0;
        prop_assert!(reg(&field).abs() < 1e-12);
        let (y, x) = pairs.anchors[r.random_range(0..n)];
        field.data_mut()[y * w + x] = 0.25;
        prop_assert!(reg(&field) > 0.0);
    }

    #[test]
    fn distant_residuals_are_damped(tau in 1.0f64..30.0, scale in 3.0f64..10.0, angle in 0.0f64..6.3) {
        // Residual of norm scale * sqrt(tau) through the taped op.
        let u = scale * tau.sqrt();
        let mut tape = Tape::<f64>::new();
        let a = tape.param(Tensor::new(vec![1, 2], vec![u * angle.cos(), u * angle.sin()]).unwrap());
        let b = tape.constant(Tensor::zeros(&[1, 2]));
        let loss = tape.pair_loss(a, b, &[[0.0, 0.0]], tau, 0.0).unwrap();
        tape.backward(loss).unwrap();
        let g = tape.grad(a).unwrap();
        let norm = (g[0] * g[0] + g[1] * g[1]).sqrt();
        prop_assert!(norm <= 0.1 * peak_gradient(tau), "norm {} peak {}", norm, peak_gradient(tau));
    }

    #[test]
    fn sigma_is_monotone_in_residual_norm(a in 0.0f64..20.0, b in 0.0f64..20.0, tau in 0.5f64..50.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let (s_lo, s_hi) = (sigma([lo, 0.0], tau), sigma([0.0, hi], tau));
        prop_assert!(s_lo <= s_hi);
        prop_assert!((0.5..=1.0).contains(&s_lo) && s_hi <= 1.0);
    }
}
