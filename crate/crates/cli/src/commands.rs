use std::fs;
use std::path::Path;
use std::time::Instant;

use branchfit::io;
use branchfit::model::{autocorrelation, min_expected_stopping_time, moment_curve};
use branchfit::stats::{
    ad_test, empirical_moments, gof_ratios, gof_ratios_partial, ig_mle, ks_test, StoppingSample,
};
use branchfit::{
    fit_forward, fit_full, forward_loglik_grad, full_loglik_grad, project_partial,
    simulate_ensemble, FitConfig, FitResult, Param, Theta,
};
use serde::Serialize;

use crate::data::{self, SIDECAR};
use crate::output::{Manifest, OutDir, MANIFEST_FILE};
use crate::{
    Classify, CliResult, Command, ExitKind, Failure, FitArgs, GofArgs, LoglikArgs, Mode, MomentsArgs,
    SimulateArgs, StoppingArgs,
};

/// What a run records about its inputs.
struct Provenance<'a> {
    params: Option<&'a Path>,
    seed: Option<u64>,
}

pub fn execute(command: &Command, argv: &[String], cwd: &Path, out: &Path) -> CliResult<()> {
    let start = Instant::now();
    let dir = OutDir::create(out)?;
    let prov = match command {
        Command::Simulate(a) => simulate(a, &dir)?,
        Command::Fit(a) => fit(a, &dir)?,
        Command::Moments(a) => moments(a, &dir)?,
        Command::Stopping(a) => stopping(a, &dir)?,
        Command::Gof(a) => gof(a, &dir)?,
        Command::Loglik(a) => loglik(a, &dir)?,
        Command::Replay(_) => unreachable!("replays are resolved before execution"),
    };
    let manifest = Manifest {
        command: command.name().to_string(),
        params: prov.params.map(|p| p.display().to_string()),
        seed: prov.seed,
        out: dir.path().display().to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        duration_secs: start.elapsed().as_secs_f64(),
        argv: argv.to_vec(),
        cwd: cwd.display().to_string(),
    };
    dir.write_json(MANIFEST_FILE, &manifest)
}

fn grid(tmax: f64, n: usize) -> CliResult<Vec<f64>> {
    if !(tmax.is_finite() && tmax > 0.0) {
        return Err(Failure::input(format!("grid end {tmax} must be finite and positive")));
    }
    if n < 2 {
        return Err(Failure::input(format!("grid needs at least 2 points, got {n}")));
    }
    Ok((0..n).map(|i| tmax * i as f64 / (n - 1) as f64).collect())
}

fn simulate<'a>(a: &'a SimulateArgs, dir: &OutDir) -> CliResult<Provenance<'a>> {
    let params = data::read_params(&a.params)?;
    if a.reps == 0 {
        return Err(Failure::input("--reps must be at least 1"));
    }
    let ensemble = simulate_ensemble(&params, a.reps, a.seed, None);
    let width = (a.reps - 1).to_string().len();
    for (i, traj) in ensemble.iter().enumerate() {
        let name = format!("rep_{i:0width$}.csv");
        if a.partial {
            dir.write_with(&name, |w| io::write_partial(w, &project_partial(traj)))?;
        } else {
            dir.write_with(&name, |w| io::write_trajectory(w, traj))?;
        }
    }
    dir.write_json(SIDECAR, &params)?;
    Ok(Provenance { params: Some(&a.params), seed: Some(a.seed) })
}

fn fit_config(a: &FitArgs) -> CliResult<FitConfig> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).or_fail(ExitKind::Io, || format!("reading {}", path.display()))?;
            serde_json::from_str(&text)
                .or_fail(ExitKind::Input, || format!("invalid fit configuration in {}", path.display()))?
        }
        None => FitConfig::default(),
    };
    for pin in &a.pin {
        let (name, value) = pin
            .split_once('=')
            .ok_or_else(|| Failure::input(format!("--pin `{pin}` is not NAME=VALUE")))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| Failure::input(format!("--pin `{pin}`: `{value}` is not a number")))?;
        cfg.pins.insert(name.trim().to_string(), value);
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct FileFit<'a> {
    file: String,
    fit: &'a FitResult,
}

fn write_estimates(dir: &OutDir, rows: &[(String, FitResult)]) -> CliResult<()> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["file".to_string()];
    header.extend(Param::ALL.iter().map(|p| p.name().to_string()));
    header.extend(["loglik", "converged", "gradient_norm"].map(String::from));
    let io_fail = |e: csv::Error| Failure::new(ExitKind::Io, e);
    wtr.write_record(&header).map_err(io_fail)?;
    for (file, fit) in rows {
        let mut rec = vec![file.clone()];
        rec.extend(fit.theta.as_slice().iter().map(f64::to_string));
        rec.push(fit.loglik.to_string());
        rec.push(fit.converged.to_string());
        rec.push(fit.gradient_norm_at_opt.map_or_else(|| io::MISSING.to_string(), |g| g.to_string()));
        wtr.write_record(&rec).map_err(io_fail)?;
    }
    let bytes = wtr.into_inner().map_err(|e| Failure::new(ExitKind::Io, anyhow::anyhow!("{e}")))?;
    dir.write("estimates.csv", &bytes)
}

fn fit<'a>(a: &'a FitArgs, dir: &OutDir) -> CliResult<Provenance<'a>> {
    let cfg = fit_config(a)?;
    let files = data::expand(&a.data)?;
    let run = |idx: Option<usize>| -> CliResult<FitResult> {
        let chosen = match idx {
            Some(i) => &files[i..=i],
            None => &files[..],
        };
        let result = match a.mode {
            Mode::Full => fit_full(&data::load_full(chosen, a.s0)?, &cfg),
            Mode::Forward => fit_forward(&data::load_partial(chosen, a.s0)?, &cfg),
        };
        result.map_err(|e| {
            let mut f = Failure::from(e);
            if let Some(i) = idx {
                f.error = f.error.context(format!("fitting {}", files[i].display()));
            }
            f
        })
    };
    if a.each {
        let mut rows = Vec::with_capacity(files.len());
        for (i, file) in files.iter().enumerate() {
            rows.push((data::label(file), run(Some(i))?));
        }
        let listed: Vec<FileFit> = rows.iter().map(|(file, fit)| FileFit { file: file.clone(), fit }).collect();
        dir.write_json("fits.json", &listed)?;
        write_estimates(dir, &rows)?;
    } else {
        let result = run(None)?;
        dir.write_json("fit.json", &result)?;
        dir.write_with("trace.csv", |w| io::write_trace(w, &result.trace))?;
    }
    Ok(Provenance { params: a.config.as_deref(), seed: Some(cfg.seed) })
}

fn correlation_matrix(times: &[f64], rho: impl Fn(f64, f64) -> Option<f64>) -> Vec<Vec<Option<f64>>> {
    times.iter().map(|&t| times.iter().map(|&u| rho(t, u)).collect()).collect()
}

fn moments<'a>(a: &'a MomentsArgs, dir: &OutDir) -> CliResult<Provenance<'a>> {
    let params = data::read_params(&a.params)?;
    let times = grid(a.tmax, a.grid)?;
    if let Some(&t) = a.corr_times.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
        return Err(Failure::input(format!("correlation time {t} must be finite and >= 0")));
    }
    let theory = moment_curve(&params, &times)?;
    dir.write_with("moments.csv", |w| io::write_moment_curve(w, &theory))?;
    if !a.corr_times.is_empty() {
        let m = correlation_matrix(&a.corr_times, |t, u| autocorrelation(&params, t, u));
        dir.write_with("correlation.csv", |w| io::write_correlation_grid(w, &a.corr_times, &m))?;
    }
    if let Some(pattern) = &a.data {
        let trajs = data::load_full(&data::expand(pattern)?, Some(params.s0))?;
        let emp = empirical_moments(&trajs, &times)?;
        dir.write_with("comparison.csv", |w| io::write_moment_comparison(w, &emp, &theory))?;
        if !a.corr_times.is_empty() {
            let emp = empirical_moments(&trajs, &a.corr_times)?;
            dir.write_with("empirical_correlation.csv", |w| {
                io::write_correlation_grid(w, &a.corr_times, &emp.correlation)
            })?;
        }
    }
    Ok(Provenance { params: Some(&a.params), seed: None })
}

fn stopping<'a>(a: &'a StoppingArgs, dir: &OutDir) -> CliResult<Provenance<'a>> {
    let params = data::read_params(&a.params)?;
    let bound = min_expected_stopping_time(&params)?;
    if a.reps == 0 {
        return Err(Failure::input("--reps must be at least 1"));
    }
    let raw: Vec<f64> = simulate_ensemble(&params, a.reps, a.seed, None)
        .iter()
        .map(|t| t.extinction_time().expect("runs without a horizon end in extinction"))
        .collect();
    dir.write_with("extinction_times.csv", |w| io::write_column(w, "time", &raw))?;
    dir.write_json("tau_min.json", &bound)?;
    let sample = StoppingSample::new(raw, bound.exact)?;
    let fit = ig_mle(&sample.shifted)?;
    dir.write_json("ig_fit.json", &fit)?;
    dir.write_json("ks.json", &ks_test(&sample.shifted, &fit)?)?;
    dir.write_json("ad.json", &ad_test(&sample.shifted, &fit)?)?;
    Ok(Provenance { params: Some(&a.params), seed: Some(a.seed) })
}

fn gof<'a>(a: &'a GofArgs, dir: &OutDir) -> CliResult<Provenance<'a>> {
    let theta = data::read_theta(&a.theta)?;
    let files = data::expand(&a.data)?;
    let curves = if a.partial {
        let trajs = data::load_partial(&files, a.s0)?;
        let last = trajs.iter().map(|t| t.last_time()).fold(0.0, f64::max);
        gof_ratios_partial(&trajs, &theta, &grid(a.tmax.unwrap_or(last), a.grid)?)?
    } else {
        let trajs = data::load_full(&files, a.s0)?;
        let last = trajs.iter().map(|t| t.last_time()).fold(0.0, f64::max);
        gof_ratios(&trajs, &theta, &grid(a.tmax.unwrap_or(last), a.grid)?)?
    };
    dir.write_with("ratios.csv", |w| io::write_ratios(w, &curves))?;
    Ok(Provenance { params: Some(&a.theta), seed: None })
}

#[derive(Serialize)]
struct LoglikReport {
    loglik: f64,
    grad: Theta,
}

fn loglik<'a>(a: &'a LoglikArgs, dir: &OutDir) -> CliResult<Provenance<'a>> {
    let theta = data::read_theta(&a.theta)?;
    let files = data::expand(&a.data)?;
    let parts: Vec<(f64, [f64; 10])> = match a.mode {
        Mode::Full => data::load_full(&files, a.s0)?
            .iter()
            .map(|t| full_loglik_grad(&theta, t))
            .collect::<branchfit::Result<_>>()?,
        Mode::Forward => data::load_partial(&files, a.s0)?
            .iter()
            .map(|t| forward_loglik_grad(&theta, t))
            .collect::<branchfit::Result<_>>()?,
    };
    let mut report = LoglikReport { loglik: 0.0, grad: Theta([0.0; 10]) };
    for (v, g) in parts {
        report.loglik += v;
        report.grad.0.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
    dir.write_json("loglik.json", &report)?;
    print!("{}", io::to_json(&report).map_err(|e| Failure::new(ExitKind::Io, e))?);
    Ok(Provenance { params: Some(&a.theta), seed: None })
}
