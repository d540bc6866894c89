//! Differential evolution, rand/1/bin, maximizing an objective over a box.
//!
//! Trial vectors for a generation are generated sequentially from one seeded
//! stream, scored in parallel, then selected together, so the outcome does
//! not depend on the number of threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeSettings {
    pub population: usize,
    pub generations: usize,
    /// Mutation factor `F`.
    pub mutation: f64,
    /// Binomial crossover rate `CR`.
    pub crossover: f64,
    /// Without `spread_tol`: stop once the best value improves by less
    /// than `tol` over `stall_generations` generations.
    pub tol: f64,
    pub stall_generations: usize,
    /// Stop once every member is feasible and the population mean is
    /// within this distance of the best value. Replaces the stall rule.
    pub spread_tol: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct DeOutcome {
    pub best: Vec<f64>,
    pub best_value: f64,
    /// Generations run after initialization.
    pub generations: usize,
    /// Best value after initialization and after every generation.
    pub trace: Vec<f64>,
    /// Mean population value at the same points (`-inf` while any member
    /// is infeasible).
    pub mean_trace: Vec<f64>,
    /// Stopped by the stall or spread rule before the generation budget.
    pub stalled: bool,
}

fn score(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

pub fn maximize<F>(
    objective: F,
    lower: &[f64],
    upper: &[f64],
    settings: &DeSettings,
    seed: u64,
) -> DeOutcome
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let dim = lower.len();
    assert_eq!(dim, upper.len());
    assert!(settings.population >= 4, "population must be at least 4");
    let np = settings.population;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut pop: Vec<Vec<f64>> = (0..np)
        .map(|_| (0..dim).map(|j| rng.random_range(lower[j]..=upper[j])).collect())
        .collect();
    let mut values: Vec<f64> = pop.par_iter().map(|x| score(objective(x))).collect();

    let best_of = |values: &[f64]| {
        let mut bi = 0;
        for (i, &v) in values.iter().enumerate() {
            if v > values[bi] {
                bi = i;
            }
        }
        bi
    };
    let mean_of = |values: &[f64]| values.iter().sum::<f64>() / values.len() as f64;
    let mut trace = vec![values[best_of(&values)]];
    let mut mean_trace = vec![mean_of(&values)];
    let mut stalled = false;
    let mut gens = 0;

    if dim > 0 {
        for g in 1..=settings.generations {
            let trials: Vec<Vec<f64>> = (0..np)
                .map(|i| {
                    let (a, b, c) = distinct_donors(&mut rng, np, i);
                    let jrand = rng.random_range(0..dim);
                    (0..dim)
                        .map(|j| {
                            if j == jrand || rng.random::<f64>() < settings.crossover {
                                let v = pop[a][j] + settings.mutation * (pop[b][j] - pop[c][j]);
                                if v < lower[j] || v > upper[j] {
                                    rng.random_range(lower[j]..=upper[j])
                                } else {
                                    v
                                }
                            } else {
                                pop[i][j]
                            }
                        })
                        .collect()
                })
                .collect();
            let trial_values: Vec<f64> = trials.par_iter().map(|x| score(objective(x))).collect();
            for (i, (trial, v)) in trials.into_iter().zip(trial_values).enumerate() {
                if v >= values[i] {
                    pop[i] = trial;
                    values[i] = v;
                }
            }
            trace.push(values[best_of(&values)]);
            mean_trace.push(mean_of(&values));
            gens = g;
            if early_stop(settings, &trace, &mean_trace) {
                stalled = true;
                break;
            }
        }
    }

    let bi = best_of(&values);
    DeOutcome {
        best: pop[bi].clone(),
        best_value: values[bi],
        generations: gens,
        trace,
        mean_trace,
        stalled,
    }
}

fn early_stop(settings: &DeSettings, trace: &[f64], mean_trace: &[f64]) -> bool {
    let g = trace.len() - 1;
    let best = trace[g];
    if let Some(spread) = settings.spread_tol {
        let mean = mean_trace[g];
        return mean.is_finite() && best - mean <= spread;
    }
    let stall = settings.stall_generations;
    stall > 0 && g >= stall && best.is_finite() && best - trace[g - stall] < settings.tol
}

fn distinct_donors(rng: &mut ChaCha8Rng, np: usize, target: usize) -> (usize, usize, usize) {
    let mut pick = |exclude: &[usize]| loop {
        let k = rng.random_range(0..np);
        if !exclude.contains(&k) {
            return k;
        }
    };
    let a = pick(&[target]);
    let b = pick(&[target, a]);
    let c = pick(&[target, a, b]);
    (a, b, c)
}
