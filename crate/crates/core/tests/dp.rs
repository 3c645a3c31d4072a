mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;

use steerdp::dp::{
    calibrate_sigma, clip_per_sample, default_orders, epsilon_for, noisy_update, poisson_sample, rdp_sgm,
    rdp_to_epsilon, SIGMA_BRACKET,
};
use steerdp::layers::PerSampleGrads;
use steerdp::Error;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn random_grads(r: &mut impl Rng, batch: usize, params: usize) -> PerSampleGrads<f64> {
    // mix of tiny and huge rows so both sides of the bound are exercised
    let data = (0..batch)
        .flat_map(|_| {
            let scale = 10f64.powf(r.random_range(-3.0..3.0));
            (0..params).map(|_| scale * r.random_range(-1.0..1.0)).collect::<Vec<_>>()
        })
        .collect();
    PerSampleGrads::new(batch, params, data).unwrap()
}

#[test]
fn clipped_rows_never_exceed_the_bound() {
    let mut r = rng(1);
    for _ in 0..1000 {
        let (b, p) = (r.random_range(1..12), r.random_range(1..40));
        let c = r.random_range(0.05..5.0);
        let g = random_grads(&mut r, b, p);
        let out = clip_per_sample(&g, c).unwrap();
        for (row, s) in g.rows().zip(&out.scales) {
            let clipped: Vec<f64> = row.iter().map(|v| v * s).collect();
            assert!(norm(&clipped) <= c + 1e-6);
        }
        let direct: Vec<f64> = (0..p).map(|j| g.rows().zip(&out.scales).map(|(row, s)| row[j] * s).sum()).collect();
        assert!(max_abs_diff(&direct, &out.sum) < 1e-9 * (1.0 + norm(&direct)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn replacing_one_row_moves_the_sum_by_at_most_twice_the_bound(
        seed in any::<u64>(),
        batch in 1usize..10,
        params in 1usize..30,
        c in 0.1f64..3.0,
    ) {
        let mut r = rng(seed);
        let g = random_grads(&mut r, batch, params);
        let victim = r.random_range(0..batch);
        let mut data = g.data.clone();
        for v in &mut data[victim * params..(victim + 1) * params] {
            *v = 1e3 * r.random_range(-1.0..1.0);
        }
        let h = PerSampleGrads::new(batch, params, data).unwrap();
        let a = clip_per_sample(&g, c).unwrap().sum;
        let b = clip_per_sample(&h, c).unwrap().sum;
        let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        prop_assert!(norm(&diff) <= 2.0 * c + 1e-9);
    }

    #[test]
    fn rdp_composition_is_additive(q in 0.001f64..0.5, sigma in 0.5f64..5.0, t1 in 1usize..500, t2 in 1usize..500) {
        let curve = rdp_sgm(q, sigma, &default_orders()).unwrap();
        let lhs = curve.compose(t1).add(&curve.compose(t2)).unwrap();
        let rhs = curve.compose(t1 + t2);
        for (a, b) in lhs.values.iter().zip(&rhs.values) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300));
        }
    }
}

#[test]
fn non_finite_rows_are_reported_by_index() {
    let g = PerSampleGrads::new(3, 2, vec![1.0, 0.0, f64::NAN, 1.0, 0.0, 0.0]).unwrap();
    assert!(matches!(clip_per_sample(&g, 1.0), Err(Error::SampleNumericFault { sample: 1 })));
}

#[test]
fn noise_has_the_calibrated_variance() {
    let (sigma, c, lot) = (1.3, 0.7, 64.0);
    let summed = [0.5, -2.0, 3.0, 0.0];
    let draws = 100_000;
    let mut r = rng(2);
    let mut sum = [0.0; 4];
    let mut sq = [0.0; 4];
    for _ in 0..draws {
        let out = noisy_update(&summed, sigma, c, lot, &mut r).unwrap();
        for k in 0..4 {
            let z = out[k] * lot - summed[k];
            sum[k] += z;
            sq[k] += z * z;
        }
    }
    let want = (sigma * c) * (sigma * c);
    for k in 0..4 {
        let mean = sum[k] / draws as f64;
        let var = sq[k] / draws as f64 - mean * mean;
        assert!((var / want - 1.0).abs() < 0.05, "coordinate {k}: {var} vs {want}");
        assert!(mean.abs() < 5.0 * (want / draws as f64).sqrt());
    }
}

#[test]
fn zero_noise_divides_by_the_lot_size() {
    let out = noisy_update(&[2.0f32, -4.0], 0.0, 1.0, 4.0, &mut rng(0)).unwrap();
    assert_eq!(out, vec![0.5, -1.0]);
    assert!(noisy_update(&[1.0f32], 1.0, 1.0, 0.5, &mut rng(0)).is_err());
}

#[test]
fn poisson_lots_have_the_expected_size() {
    let mut r = rng(3);
    let trials = 10_000;
    let mut total = 0usize;
    for _ in 0..trials {
        let lot = poisson_sample(1000, 0.1, &mut r).unwrap();
        assert!(lot.windows(2).all(|w| w[0] < w[1]));
        total += lot.len();
    }
    let mean = total as f64 / trials as f64;
    assert!((mean - 100.0).abs() <= 3.0, "mean lot {mean}");
    assert!(poisson_sample(10, 1.5, &mut r).is_err());
}

#[test]
fn full_batch_unit_noise_costs_about_five_point_three() {
    let (eps, order) = epsilon_for(1.0, 1.0, 1, 1e-5).unwrap();
    assert!((eps - 5.30).abs() <= 0.01, "{eps} at order {order}");
    // closed form: min over a of a/2 + ln(1e5)/(a-1)
    let a = 1.0 + (2.0 * 1e5f64.ln()).sqrt();
    let exact = a / 2.0 + 1e5f64.ln() / (a - 1.0);
    assert!((exact - 5.298).abs() < 1e-3);
    assert!(eps >= exact);
}

#[test]
fn binomial_sum_matches_the_arbitrary_precision_oracle() {
    let lib = rdp_sgm(0.01, 1.0, &[8.0]).unwrap().values[0];
    let oracle = rdp_oracle(1, 100, 1, 1, 8);
    assert!((lib - oracle).abs() <= 1e-10 * oracle, "{lib} vs {oracle}");
}

#[test]
fn binomial_sum_matches_the_oracle_across_a_grid() {
    // (q as a fraction, sigma^2 as a fraction)
    let qs = [(1u64, 1000u64), (1, 100), (1, 20), (1, 8), (1, 2)];
    let s2 = [(9u64, 16u64), (1, 1), (9, 4), (4, 1)];
    for &(qn, qd) in &qs {
        for &(sn, sd) in &s2 {
            let sigma = (sn as f64 / sd as f64).sqrt();
            for alpha in [2u64, 3, 5, 8, 16, 32] {
                let lib = rdp_sgm(qn as f64 / qd as f64, sigma, &[alpha as f64]).unwrap().values[0];
                let oracle = rdp_oracle(qn, qd, sn, sd, alpha);
                assert!(
                    (lib - oracle).abs() <= 1e-10 * oracle,
                    "q={qn}/{qd} s2={sn}/{sd} a={alpha}: {lib} vs {oracle}"
                );
            }
        }
    }
}

#[test]
fn fractional_orders_are_charged_the_next_integer_order() {
    let c = rdp_sgm(0.05, 1.1, &[2.5, 3.0]).unwrap();
    assert_eq!(c.values[0], c.values[1]);
}

#[test]
fn epsilon_is_monotone_over_a_fifty_point_grid() {
    let base = (0.05, 1.2, 500usize, 1e-5);
    let eps = |q: f64, s: f64, t: usize, d: f64| epsilon_for(q, s, t, d).unwrap().0;
    let mut prev = 0.0;
    for i in 0..50 {
        let t = 10 + 40 * i;
        let e = eps(base.0, base.1, t, base.3);
        assert!(e >= prev, "steps {t}");
        prev = e;
    }
    let mut prev = f64::INFINITY;
    for i in 0..50 {
        let s = 0.5 + 0.1 * i as f64;
        let e = eps(base.0, s, base.2, base.3);
        assert!(e <= prev, "sigma {s}");
        prev = e;
    }
    let mut prev = 0.0;
    for i in 0..50 {
        let q = 0.002 + 0.004 * i as f64;
        let e = eps(q, base.1, base.2, base.3);
        assert!(e >= prev, "q {q}");
        prev = e;
    }
    let mut prev = f64::INFINITY;
    for i in 0..50 {
        let d = 10f64.powf(-10.0 + 0.16 * i as f64);
        let e = eps(base.0, base.1, base.2, d);
        assert!(e <= prev, "delta {d}");
        prev = e;
    }
}

#[test]
fn calibration_round_trips_the_reference_budget() {
    let sigma = calibrate_sigma(7.42, 1e-5, 0.05, 2000).unwrap();
    let (eps, _) = epsilon_for(0.05, sigma, 2000, 1e-5).unwrap();
    assert!(sigma > 0.0);
    assert!((7.4126..=7.42).contains(&eps), "{eps}");
    // frozen from this implementation's own round trip
    assert!((sigma - 1.83596).abs() < 1e-4, "{sigma}");
}

#[test]
fn calibration_round_trips_across_targets() {
    for i in 0..12 {
        let target = 0.5 + i as f64 * (19.5 / 11.0);
        let sigma = calibrate_sigma(target, 1e-5, 0.05, 1000).unwrap();
        let (eps, _) = epsilon_for(0.05, sigma, 1000, 1e-5).unwrap();
        assert!(eps <= target && eps >= target * (1.0 - 1e-3), "target {target}: {eps}");
    }
}

#[test]
fn accountant_errors() {
    assert!(matches!(rdp_sgm(0.1, 0.0, &[2.0]), Err(Error::InfinitePrivacyLoss)));
    assert!(rdp_sgm(1.5, 1.0, &[2.0]).is_err());
    assert!(rdp_sgm(0.1, 1.0, &[1.0]).is_err());
    let curve = rdp_sgm(0.1, 1.0, &default_orders()).unwrap();
    assert!(rdp_to_epsilon(&curve, 10, 0.0).is_err());
    match calibrate_sigma(1e-4, 1e-5, 0.5, 10_000) {
        Err(Error::CalibrationFailure { lo, hi, .. }) => assert_eq!((lo, hi), SIGMA_BRACKET),
        other => panic!("expected calibration failure, got {other:?}"),
    }
}
