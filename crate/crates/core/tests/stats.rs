use branchfit::estimate::CountCurves;
use branchfit::model::{min_expected_stopping_time, Param};
use branchfit::stats::{
    ad_test, empirical_moments, gof_ratios, ig_cdf, ig_loglik, ig_mle, ig_pdf, ig_quantile,
    ks_test, median, ratio_curves, InverseGaussianFit, StoppingSample,
};
use branchfit::{derive_seed, simulate_ensemble, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

fn ig(mu: f64, lambda: f64) -> InverseGaussianFit {
    InverseGaussianFit { mu, lambda, n: 0 }
}

/// Gauss-Legendre on many panels, starting just above zero where the density vanishes.
fn integrate_pdf(fit: &InverseGaussianFit, x: f64) -> f64 {
    const NODES: [f64; 5] = [0.0, -0.5384693101056831, 0.5384693101056831, -0.9061798459386640, 0.9061798459386640];
    const WEIGHTS: [f64; 5] = [0.5688888888888889, 0.4786286704993665, 0.4786286704993665, 0.2369268850561891, 0.2369268850561891];
    let panels = 4000;
    let h = x / panels as f64;
    let mut s = 0.0;
    for i in 0..panels {
        let mid = (i as f64 + 0.5) * h;
        for (n, w) in NODES.iter().zip(WEIGHTS) {
            s += w * ig_pdf(fit, mid + 0.5 * h * n);
        }
    }
    0.5 * h * s
}

#[test]
fn cdf_matches_integrated_density() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let fit = ig(rng.random_range(0.5..50.0), rng.random_range(0.5..600.0));
        let x = fit.mu * rng.random_range(0.2..3.0);
        let want = integrate_pdf(&fit, x);
        let got = ig_cdf(&fit, x);
        assert!((got - want).abs() < 1e-8, "{fit:?} at {x}: {got} vs {want}");
    }
}

#[test]
fn cdf_is_monotone_with_correct_limits() {
    let fit = ig(36.858, 586.698);
    let mut prev = 0.0;
    for i in 1..=1000 {
        let f = ig_cdf(&fit, i as f64 * 0.2);
        assert!(f >= prev && (0.0..=1.0).contains(&f));
        prev = f;
    }
    assert!(ig_cdf(&fit, 1e-3) < 1e-12);
    assert!(ig_cdf(&fit, 1e4) > 1.0 - 1e-12);
}

#[test]
fn cdf_concentrates_at_the_mean() {
    assert!((ig_cdf(&ig(1.0, 1e6), 1.0) - 0.5).abs() < 1e-3);
}

#[test]
fn quantile_placed_sample_gives_half_step_statistic() {
    let fit = ig(3.0, 7.0);
    let n = 40;
    let xs: Vec<f64> = (1..=n).map(|i| ig_quantile(&fit, (i as f64 - 0.5) / n as f64)).collect();
    let ks = ks_test(&xs, &fit).unwrap();
    assert!((ks.statistic - 0.5 / n as f64).abs() < 1e-9);
    assert!((0.0..=1.0).contains(&ks.p_value));
    let ad = ad_test(&xs, &fit).unwrap();
    assert!(ad.statistic.is_finite() && ad.statistic > -(n as f64));
    assert!((0.0..=1.0).contains(&ad.p_value));
}

#[test]
fn mle_hand_example_and_scaling() {
    let fit = ig_mle(&[1.0, 2.0, 3.0]).unwrap();
    assert!((fit.mu - 2.0).abs() < 1e-15);
    assert!((fit.lambda - 9.0).abs() < 1e-12);
    let scaled = ig_mle(&[2.5, 5.0, 7.5]).unwrap();
    assert!((scaled.mu - 5.0).abs() < 1e-12);
    assert!((scaled.lambda - 22.5).abs() < 1e-10);
    assert!(ig_mle(&[4.0, 4.0, 4.0]).is_err());
    assert!(ig_mle(&[1.0]).is_err());
}

#[test]
fn mle_is_a_local_maximum() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let xs: Vec<f64> = (0..200).map(|_| rng.random_range(0.5..20.0)).collect();
    let fit = ig_mle(&xs).unwrap();
    let best = ig_loglik(&fit, &xs);
    for dm in [-0.01, 0.0, 0.01] {
        for dl in [-0.01, 0.0, 0.01] {
            let f = ig(fit.mu * (1.0 + dm), fit.lambda * (1.0 + dl));
            assert!(ig_loglik(&f, &xs) <= best);
        }
    }
}

#[test]
fn shift_must_be_exceeded() {
    assert!(StoppingSample::new(vec![30.0, 29.0], 29.39).is_err());
    let s = StoppingSample::new(vec![30.0, 40.0], 29.0).unwrap();
    assert_eq!(s.shifted, vec![1.0, 11.0]);
}

/// Fraction of master seeds on which both tests keep the IG hypothesis at 5%.
#[test]
fn stopping_times_are_not_rejected() {
    let p = ModelParams::config1();
    let shift = min_expected_stopping_time(&p).unwrap().exact;
    let mut passed = 0;
    for master in 0..100 {
        let raw: Vec<f64> = simulate_ensemble(&p, 100, derive_seed(4242, master), None)
            .iter()
            .map(|t| t.extinction_time().unwrap())
            .collect();
        let sample = StoppingSample::new(raw, shift).unwrap();
        let fit = ig_mle(&sample.shifted).unwrap();
        let ks = ks_test(&sample.shifted, &fit).unwrap();
        let ad = ad_test(&sample.shifted, &fit).unwrap();
        if ks.p_value > 0.05 && ad.p_value > 0.05 {
            passed += 1;
        }
    }
    assert!(passed >= 90, "passed on {passed} of 100");
}

#[test]
fn exponential_data_is_rejected() {
    let mut rejected = 0;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<f64> = (0..500).map(|_| Exp1.sample(&mut rng)).collect();
        let fit = ig_mle(&xs).unwrap();
        let ks = ks_test(&xs, &fit).unwrap();
        let ad = ad_test(&xs, &fit).unwrap();
        if ks.p_value < 0.05 || ad.p_value < 0.05 {
            rejected += 1;
        }
    }
    assert!(rejected >= 80, "rejected {rejected} of 100");
}

#[test]
fn empirical_correlation_matrix_shape() {
    let ens = simulate_ensemble(&ModelParams::config1(), 60, 5, Some(26.0));
    let times = [5.0, 10.0, 15.0, 20.0, 25.0];
    let em = empirical_moments(&ens, &times).unwrap();
    for i in 0..5 {
        assert_eq!(em.correlation[i][i], Some(1.0));
        for j in 0..5 {
            let rho = em.correlation[i][j].unwrap();
            assert_eq!(Some(rho), em.correlation[j][i]);
            assert!((-1.0..=1.0).contains(&rho));
        }
    }
    assert!(empirical_moments(&ens[..1], &times).is_err());
    assert!(empirical_moments(&ens, &[-1.0]).is_err());
}

#[test]
fn empirical_autocorrelation_near_reference_values() {
    let panel = [
        [1.000, 0.742, 0.588, 0.552, 0.535],
        [0.742, 1.000, 0.884, 0.761, 0.758],
        [0.588, 0.884, 1.000, 0.877, 0.849],
        [0.552, 0.761, 0.877, 1.000, 0.891],
        [0.535, 0.758, 0.849, 0.891, 1.000],
    ];
    let ens = simulate_ensemble(&ModelParams::config1(), 100, 1, Some(26.0));
    let em = empirical_moments(&ens, &[5.0, 10.0, 15.0, 20.0, 25.0]).unwrap();
    for i in 0..5 {
        for j in 0..5 {
            let rho = em.correlation[i][j].unwrap();
            assert!((rho - panel[i][j]).abs() <= 0.08, "({i}, {j}): {rho:.3} vs {}", panel[i][j]);
        }
    }
}

#[test]
fn observed_over_expected_clusters_around_one() {
    let p = ModelParams::config1();
    let times: Vec<f64> = (5..=40).map(|t| t as f64).collect();
    let ens = simulate_ensemble(&p, 200, 31, Some(41.0));
    let curves = gof_ratios(&ens, &p.theta(), &times).unwrap();
    for (k, &t) in times.iter().enumerate() {
        let med = median(curves.iter().filter_map(|c| c.y[k])).unwrap();
        assert!((0.9..=1.1).contains(&med), "t = {t}: median Y ratio {med}");
    }
}

#[test]
fn ratios_are_missing_without_duds() {
    let mut theta = ModelParams::config1().theta();
    for q in [Param::P4, Param::C4, Param::M4] {
        theta.set(q, 0.0);
    }
    let p = ModelParams::from_theta(&theta, 50);
    let ens = simulate_ensemble(&p, 3, 2, Some(20.0));
    let curves = gof_ratios(&ens, &theta, &[1.0, 5.0, 10.0]).unwrap();
    for c in curves {
        assert!(c.z.unwrap().iter().all(Option::is_none));
    }
}

#[test]
fn ratio_of_a_trajectory_to_itself_is_one() {
    let ens = simulate_ensemble(&ModelParams::config2(), 1, 8, None);
    let times = [0.0, 2.0, 4.0];
    let own = CountCurves::from_trajectory(&ens[0], &times);
    let r = ratio_curves(&own, &own);
    for (_, s) in r.series() {
        assert!(s.iter().flatten().all(|&v| v == 1.0));
    }
}

#[test]
fn fitted_stopping_law_has_the_reference_scale() {
    let p = ModelParams::config1();
    let shift = min_expected_stopping_time(&p).unwrap().exact;
    let raw: Vec<f64> =
        simulate_ensemble(&p, 100, 17, None).iter().map(|t| t.extinction_time().unwrap()).collect();
    let fit = ig_mle(&StoppingSample::new(raw, shift).unwrap().shifted).unwrap();
    assert!((fit.mu / 36.858).log10().abs() < 1.0, "{fit:?}");
    assert!((fit.lambda / 586.698).log10().abs() < 1.0, "{fit:?}");
}
