//! Maximum-likelihood fitting.
//!
//! Full data: the rate has a closed form, the nine shape parameters go to
//! differential evolution, optionally polished by BFGS.
//! Partial data: all ten parameters go to differential evolution followed
//! by BFGS on the forward-algorithm gradient.

pub mod bfgs;
pub mod de;
pub mod transform;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use self::bfgs::{BfgsSettings, BfgsStatus};
pub use self::de::DeSettings;
pub use self::transform::{Bounds, ParamSpace};

use crate::error::{Error, Result};
use crate::likelihood::{
    forward_loglik, forward_loglik_grad, full_loglik, full_loglik_grad, rate_mle_pooled,
};
use crate::model::{mean_count, probabilities_at, ModelParams, Param, Theta, NPARAM};
use crate::quad::{adaptive_simpson, SimpsonTol};
use crate::sim::{PartialTrajectory, Trajectory};

/// Fresh-Hessian BFGS restarts after a polish run that stops short.
const POLISH_RESTARTS: usize = 4;

/// Optimizer settings, readable from JSON with every field optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub population: usize,
    pub generations: usize,
    pub mutation: f64,
    pub crossover: f64,
    /// Early stop when the best log-likelihood gains less than this over
    /// `stall_generations` generations. Only used when `spread_tol` is null.
    pub tol: f64,
    pub stall_generations: usize,
    /// Early stop once the mean population log-likelihood is within this
    /// many units of the best.
    pub spread_tol: Option<f64>,
    pub bounds: Bounds,
    pub seed: u64,
    /// Run the BFGS stage after differential evolution.
    pub polish: bool,
    pub bfgs_max_iter: usize,
    pub bfgs_grad_tol: f64,
    /// Parameters held fixed, by name (`p4`, `r`, ...).
    pub pins: BTreeMap<String, f64>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            population: 60,
            generations: 300,
            mutation: 0.8,
            crossover: 0.9,
            tol: 1e-6,
            stall_generations: 30,
            spread_tol: Some(1.0),
            bounds: Bounds::default(),
            seed: 1,
            polish: true,
            bfgs_max_iter: 200,
            bfgs_grad_tol: 1e-6,
            pins: BTreeMap::new(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 4 {
            return Err(Error::InvalidInput(format!(
                "population {} must be at least 4",
                self.population
            )));
        }
        if !(self.mutation > 0.0 && self.mutation < 2.0) {
            return Err(Error::InvalidInput(format!("mutation {} must lie in (0, 2)", self.mutation)));
        }
        if !(0.0..=1.0).contains(&self.crossover) {
            return Err(Error::InvalidInput(format!("crossover {} must lie in [0, 1]", self.crossover)));
        }
        if let Some(s) = self.spread_tol {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::InvalidInput(format!("spread_tol {s} must be finite and >= 0")));
            }
        }
        self.bounds.validate()?;
        self.pin_list().map(|_| ())
    }

    pub fn pin_list(&self) -> Result<Vec<(Param, f64)>> {
        self.pins
            .iter()
            .map(|(k, &v)| {
                Param::from_name(k)
                    .map(|p| (p, v))
                    .ok_or_else(|| Error::InvalidInput(format!("unknown parameter `{k}` in pins")))
            })
            .collect()
    }

    pub fn de_settings(&self) -> DeSettings {
        DeSettings {
            population: self.population,
            generations: self.generations,
            mutation: self.mutation,
            crossover: self.crossover,
            tol: self.tol,
            stall_generations: self.stall_generations,
            spread_tol: self.spread_tol,
        }
    }

    pub fn bfgs_settings(&self) -> BfgsSettings {
        BfgsSettings { max_iter: self.bfgs_max_iter, grad_tol: self.bfgs_grad_tol }
    }
}

/// Outcome of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta: Theta,
    pub loglik: f64,
    /// BFGS reached the gradient tolerance (or, without polishing,
    /// differential evolution stalled before its generation budget).
    pub converged: bool,
    pub generations_used: usize,
    /// Best log-likelihood found by differential evolution alone.
    pub de_loglik: f64,
    pub bfgs_status: Option<BfgsStatus>,
    /// Iterations summed over all BFGS restarts.
    pub bfgs_iterations: usize,
    /// Gradient norm in the optimizer's unconstrained coordinates.
    pub gradient_norm_at_opt: Option<f64>,
    pub pinned: BTreeMap<String, f64>,
    pub bounds: Bounds,
    pub n_trajectories: usize,
    pub n_events: usize,
    /// Best log-likelihood after initialization and each generation.
    pub trace: Vec<f64>,
    pub mean_trace: Vec<f64>,
}

/// Pooled objective over independent replicates.
trait Objective: Sync {
    fn value(&self, theta: &Theta) -> Result<f64>;
    fn value_grad(&self, theta: &Theta) -> Result<(f64, [f64; NPARAM])>;
}

struct FullObjective<'a>(&'a [Trajectory]);

impl Objective for FullObjective<'_> {
    fn value(&self, theta: &Theta) -> Result<f64> {
        self.0.iter().map(|t| full_loglik(theta, t)).sum()
    }
    fn value_grad(&self, theta: &Theta) -> Result<(f64, [f64; NPARAM])> {
        let mut total = 0.0;
        let mut grad = [0.0; NPARAM];
        for t in self.0 {
            let (v, g) = full_loglik_grad(theta, t)?;
            total += v;
            grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        Ok((total, grad))
    }
}

struct ForwardObjective<'a>(&'a [PartialTrajectory]);

impl Objective for ForwardObjective<'_> {
    fn value(&self, theta: &Theta) -> Result<f64> {
        self.0.iter().map(|t| forward_loglik(theta, t)).sum()
    }
    fn value_grad(&self, theta: &Theta) -> Result<(f64, [f64; NPARAM])> {
        let mut total = 0.0;
        let mut grad = [0.0; NPARAM];
        for t in self.0 {
            let (v, g) = forward_loglik_grad(theta, t)?;
            total += v;
            grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        Ok((total, grad))
    }
}

/// Fits fully observed trajectories (pooled by summing log-likelihoods).
/// The rate is set to its closed-form MLE unless pinned.
pub fn fit_full(trajs: &[Trajectory], config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    let n_events: usize = trajs.iter().map(Trajectory::len).sum();
    if n_events == 0 {
        return Err(Error::NoEvents);
    }
    let mut space = ParamSpace::new(&config.pin_list()?)?;
    if space.pinned_value(Param::R).is_none() {
        space = space.pin(Param::R, rate_mle_pooled(trajs)?)?;
    }
    let last = trajs.iter().map(Trajectory::last_time).fold(0.0, f64::max);
    run_fit(&FullObjective(trajs), &space, config, last, trajs.len(), n_events)
}

/// Fits partially observed trajectories with the forward-algorithm
/// likelihood, jointly over every unpinned parameter.
pub fn fit_forward(ptrajs: &[PartialTrajectory], config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    let n_events: usize = ptrajs.iter().map(PartialTrajectory::len).sum();
    if n_events == 0 {
        return Err(Error::NoEvents);
    }
    for p in ptrajs {
        p.steps()?;
    }
    let space = ParamSpace::new(&config.pin_list()?)?;
    let last = ptrajs.iter().map(PartialTrajectory::last_time).fold(0.0, f64::max);
    run_fit(&ForwardObjective(ptrajs), &space, config, last, ptrajs.len(), n_events)
}

fn run_fit(
    objective: &dyn Objective,
    space: &ParamSpace,
    config: &FitConfig,
    last_event_time: f64,
    n_trajectories: usize,
    n_events: usize,
) -> Result<FitResult> {
    let bounds = config.bounds.resolved(last_event_time);
    let (lower, upper) = space.box_bounds(&bounds);
    let eval = |z: &[f64]| -> f64 {
        let theta = space.from_unconstrained(z);
        objective.value(&theta).unwrap_or(f64::NEG_INFINITY)
    };
    let de = de::maximize(eval, &lower, &upper, &config.de_settings(), config.seed);
    if !de.best_value.is_finite() {
        return Err(Error::NonFiniteLikelihood(
            "no candidate inside the bounds has a finite likelihood".into(),
        ));
    }

    let mut best_z = de.best.clone();
    let mut best_ll = de.best_value;
    let mut bfgs_status = None;
    let mut bfgs_iterations = 0;
    let mut converged = de.stalled;
    let mut grad_norm = None;

    if config.polish && space.dim() > 0 {
        let value = |z: &[f64]| objective.value(&space.from_unconstrained(z)).ok().map(|v| -v);
        let value_grad = |z: &[f64]| {
            let theta = space.from_unconstrained(z);
            objective.value_grad(&theta).ok().map(|(v, g)| {
                let chained = space.chain_gradient(&theta, &g);
                (-v, chained.into_iter().map(|x| -x).collect())
            })
        };
        let mut out = bfgs::minimize(value, value_grad, &de.best, &config.bfgs_settings());
        bfgs_iterations = out.iterations;
        for _ in 0..POLISH_RESTARTS {
            if out.status == BfgsStatus::Converged || out.status == BfgsStatus::BadStart {
                break;
            }
            let again = bfgs::minimize(value, value_grad, &out.x, &config.bfgs_settings());
            bfgs_iterations += again.iterations;
            if !(again.value < out.value) {
                break;
            }
            out = again;
        }
        bfgs_status = Some(out.status);
        converged = out.status == BfgsStatus::Converged;
        if out.status != BfgsStatus::BadStart && -out.value >= best_ll {
            best_ll = -out.value;
            best_z = out.x.clone();
            grad_norm = Some(out.grad_norm());
        }
    }
    if grad_norm.is_none() && space.dim() > 0 {
        let theta = space.from_unconstrained(&best_z);
        if let Ok((_, g)) = objective.value_grad(&theta) {
            let chained = space.chain_gradient(&theta, &g);
            grad_norm = Some(chained.iter().map(|v| v * v).sum::<f64>().sqrt());
        }
    }

    let theta = space.from_unconstrained(&best_z);
    Ok(FitResult {
        theta,
        loglik: best_ll,
        converged,
        generations_used: de.generations,
        de_loglik: de.best_value,
        bfgs_status,
        bfgs_iterations,
        gradient_norm_at_opt: grad_norm,
        pinned: space.pinned().map(|(p, v)| (p.name().to_string(), v)).collect(),
        bounds,
        n_trajectories,
        n_events,
        trace: de.trace,
        mean_trace: de.mean_trace,
    })
}

/// Count curves on a time grid. Series that were not observed are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountCurves {
    pub times: Vec<f64>,
    pub x: Option<Vec<f64>>,
    pub z: Option<Vec<f64>>,
    pub m: Vec<f64>,
    pub y: Vec<f64>,
}

impl CountCurves {
    pub fn from_trajectory(traj: &Trajectory, times: &[f64]) -> Self {
        let counts: Vec<(u64, u64, u64)> = times.iter().map(|&t| traj.counts_at(t)).collect();
        Self {
            times: times.to_vec(),
            x: Some(counts.iter().map(|c| c.0 as f64).collect()),
            z: Some(counts.iter().map(|c| c.2 as f64).collect()),
            m: counts.iter().map(|c| (c.0 + c.2) as f64).collect(),
            y: counts.iter().map(|c| c.1 as f64).collect(),
        }
    }

    pub fn from_partial(ptraj: &PartialTrajectory, times: &[f64]) -> Self {
        let counts: Vec<(u64, u64)> = times.iter().map(|&t| ptraj.counts_at(t)).collect();
        Self {
            times: times.to_vec(),
            x: None,
            z: None,
            m: counts.iter().map(|c| c.0 as f64).collect(),
            y: counts.iter().map(|c| c.1 as f64).collect(),
        }
    }
}

const PREDICT_TOL: SimpsonTol = SimpsonTol::new(1e-8, 1e-12, 50);

/// Expected viable, nonviable, pooled and differentiated counts from the
/// mean-field solution.
pub fn predict_counts(theta: &Theta, s0: u64, times: &[f64]) -> Result<CountCurves> {
    let params = ModelParams::from_theta(theta, s0);
    params.validate()?;
    if let Some(&t) = times.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
        return Err(Error::InvalidInput(format!("grid time {t} must be finite and >= 0")));
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));

    let r = params.r;
    let mut z = vec![0.0; times.len()];
    let mut y = vec![0.0; times.len()];
    let (mut zacc, mut yacc, mut prev) = (0.0, 0.0, 0.0);
    for &i in &order {
        let t = times[i];
        zacc += adaptive_simpson(
            |u| r * probabilities_at(&params, u)[3] * mean_count(&params, u),
            prev,
            t,
            PREDICT_TOL,
        );
        yacc += adaptive_simpson(
            |u| {
                let p = probabilities_at(&params, u);
                r * (p[1] + 2.0 * p[2]) * mean_count(&params, u)
            },
            prev,
            t,
            PREDICT_TOL,
        );
        prev = t;
        z[i] = zacc;
        y[i] = yacc;
    }
    let x: Vec<f64> = times.iter().map(|&t| mean_count(&params, t)).collect();
    let m = x.iter().zip(&z).map(|(a, b)| a + b).collect();
    Ok(CountCurves { times: times.to_vec(), x: Some(x), z: Some(z), m, y })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{simulate, EventKind};

    fn quick() -> FitConfig {
        FitConfig { population: 30, generations: 120, ..FitConfig::default() }
    }

    #[test]
    fn config_validation() {
        assert!(FitConfig { population: 3, ..FitConfig::default() }.validate().is_err());
        assert!(FitConfig { mutation: 2.0, ..FitConfig::default() }.validate().is_err());
        let mut c = FitConfig::default();
        c.pins.insert("q9".into(), 1.0);
        assert!(c.validate().is_err());
        let parsed: FitConfig = serde_json::from_str(r#"{"population": 12, "pins": {"p4": 0}}"#).unwrap();
        assert_eq!(parsed.population, 12);
        assert_eq!(parsed.generations, 300);
        assert_eq!(parsed.pin_list().unwrap(), vec![(Param::P4, 0.0)]);
    }

    #[test]
    fn no_events_is_an_error() {
        let empty = Trajectory { s0: 0, events: vec![], t_end: None };
        assert_eq!(fit_full(&[empty.clone()], &quick()), Err(Error::NoEvents));
        let pe = crate::sim::project_partial(&empty);
        assert_eq!(fit_forward(&[pe], &quick()), Err(Error::NoEvents));
    }

    #[test]
    fn differentiation_only_drives_heights_down() {
        let trajs: Vec<Trajectory> = (0..5)
            .map(|i| Trajectory::from_events(1, &[(0.5 + i as f64 * 0.3, EventKind::SymDiff)]).unwrap())
            .collect();
        let fit = fit_full(&trajs, &quick()).unwrap();
        for p in [Param::P1, Param::P2, Param::P4] {
            assert!(fit.theta[p] < 2e-3, "{p} = {}", fit.theta[p]);
        }
    }

    #[test]
    fn full_fit_is_deterministic_and_polish_never_hurts() {
        let p = ModelParams::config1().with_s0(40);
        let trajs: Vec<Trajectory> = (0..3).map(|s| simulate(&p, s, None)).collect();
        let a = fit_full(&trajs, &quick()).unwrap();
        let b = fit_full(&trajs, &quick()).unwrap();
        assert_eq!(a, b);
        assert!(a.loglik >= a.de_loglik);
        assert!(a.trace.windows(2).all(|w| w[1] >= w[0]));
        assert!(a.theta.validate().is_ok());
    }

    #[test]
    fn predict_initial_state_and_conservation() {
        let p = ModelParams::config1();
        let theta = p.theta();
        let times = [0.0, 2.0, 5.0, 10.0, 20.0];
        let c = predict_counts(&theta, 200, &times).unwrap();
        assert_eq!(c.x.as_ref().unwrap()[0], 200.0);
        assert_eq!(c.z.as_ref().unwrap()[0], 0.0);
        assert_eq!(c.m[0], 200.0);
        assert_eq!(c.y[0], 0.0);
        // one new cell per event: X + Y + Z - s0 = ∫ r S
        for (i, &t) in times.iter().enumerate().skip(1) {
            let events = adaptive_simpson(|u| p.r * mean_count(&p, u), 0.0, t, SimpsonTol::new(1e-12, 1e-14, 50));
            let total = c.x.as_ref().unwrap()[i] + c.y[i] + c.z.as_ref().unwrap()[i] - 200.0;
            assert!((total - events).abs() <= 1e-6 * events, "t = {t}");
        }
        let no_duds = theta.with(Param::P4, 0.0);
        let c = predict_counts(&no_duds, 200, &times).unwrap();
        assert!(c.z.unwrap().iter().all(|&v| v == 0.0));
    }
}
