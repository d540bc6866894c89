use branchfit::stats::median;
use branchfit::{
    derive_seed, fit_forward, fit_full, project_partial, simulate, simulate_ensemble, FitConfig,
    ModelParams, Param, ParamSpace, Theta,
};
use proptest::prelude::*;

fn dud_free(s0: u64) -> ModelParams {
    let mut theta = ModelParams::config1().theta();
    for p in [Param::P4, Param::C4, Param::M4] {
        theta.set(p, 0.0);
    }
    ModelParams::from_theta(&theta, s0)
}

fn pinned_config(seed: u64) -> FitConfig {
    let mut cfg = FitConfig { seed, ..FitConfig::default() };
    cfg.pins.insert("p4".into(), 0.0);
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn any_vector_maps_to_a_valid_parameter(z in prop::collection::vec(-60.0f64..60.0, 10)) {
        let theta = ParamSpace::unpinned().from_unconstrained(&z);
        prop_assert!(theta.validate().is_ok(), "{:?}", theta);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn round_trip_is_the_identity(z in prop::collection::vec(-5.0f64..5.0, 10)) {
        let space = ParamSpace::unpinned();
        let theta = space.from_unconstrained(&z);
        let back = space.from_unconstrained(&space.to_unconstrained(&theta).unwrap());
        for j in 0..10 {
            prop_assert!((back.0[j] - theta.0[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn pinned_spaces_keep_their_pins(z in prop::collection::vec(-8.0f64..8.0, 6)) {
        let space = ParamSpace::new(&[(Param::P4, 0.0), (Param::R, 0.2)]).unwrap();
        prop_assert_eq!(space.dim(), 6);
        let theta = space.from_unconstrained(&z);
        prop_assert!(theta.validate().is_ok());
        prop_assert_eq!(theta.get(Param::P4), 0.0);
        prop_assert_eq!(theta.get(Param::R), 0.2);
    }
}

#[test]
fn fits_are_reproducible() {
    let p = ModelParams::config1().with_s0(40);
    let tr = simulate(&p, 3, None);
    let cfg = FitConfig { generations: 60, ..FitConfig::default() };
    assert_eq!(fit_full(&[tr.clone()], &cfg).unwrap(), fit_full(&[tr.clone()], &cfg).unwrap());
    let pt = project_partial(&tr);
    assert_eq!(fit_forward(&[pt.clone()], &cfg).unwrap(), fit_forward(&[pt], &cfg).unwrap());
}

#[test]
fn both_modes_agree_on_dud_free_data() {
    let p = dud_free(60);
    let tr = simulate(&p, 10, None);
    let cfg = pinned_config(5);
    let full = fit_full(&[tr.clone()], &cfg).unwrap();
    let fwd = fit_forward(&[project_partial(&tr)], &cfg).unwrap();
    assert!((full.loglik - fwd.loglik).abs() < 1e-6 * full.loglik.abs());
    for q in Param::ALL {
        let (a, b) = (full.theta.get(q), fwd.theta.get(q));
        assert!((a - b).abs() <= 1e-3 * b.abs().max(1e-3), "{q:?}: {a} vs {b}");
    }
}

#[test]
fn fitted_optima_are_stationary() {
    let p = ModelParams::config1().with_s0(40);
    for seed in 0..3 {
        let tr = simulate(&p, seed, None);
        let fit = fit_forward(&[project_partial(&tr)], &FitConfig::default()).unwrap();
        let g = fit.gradient_norm_at_opt.unwrap();
        assert!(g < 1e-4 * (1.0 + fit.loglik.abs()), "seed {seed}: |g| = {g}");
        assert!(fit.loglik >= fit.de_loglik);
    }
}

fn median_p1_error(reps: u64, size: u64, s0: u64) -> f64 {
    let p = ModelParams::config1().with_s0(s0);
    let errors = (0..reps).map(|rep| {
        let ens = simulate_ensemble(&p, size as usize, derive_seed(size, rep), None);
        let fit = fit_full(&ens, &FitConfig { seed: rep, ..FitConfig::default() }).unwrap();
        (fit.theta.get(Param::P1) - 0.55).abs()
    });
    median(errors.collect::<Vec<_>>()).unwrap()
}

#[test]
#[ignore = "slow: 40 pooled fits"]
fn more_trajectories_do_not_hurt() {
    let small = median_p1_error(20, 25, 20);
    let large = median_p1_error(20, 50, 20);
    assert!(large <= small, "{large} vs {small}");
}

#[test]
fn truth_is_a_valid_theta() {
    let t: Theta = ModelParams::config2().theta();
    assert!(t.validate().is_ok());
}
