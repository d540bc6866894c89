use std::fs;
use std::path::{Path, PathBuf};

use branchfit::{ModelParams, PartialTrajectory, Theta, Trajectory};

use crate::{Classify, CliResult, ExitKind, Failure};

/// Name of the parameter sidecar written next to simulated data.
pub const SIDECAR: &str = "params.json";

/// Sorted files matching `pattern`.
pub fn expand(pattern: &str) -> CliResult<Vec<PathBuf>> {
    let paths = glob::glob(pattern).or_fail(ExitKind::Input, || format!("bad glob `{pattern}`"))?;
    let mut files: Vec<PathBuf> = paths
        .filter_map(|p| p.ok())
        .filter(|p| p.is_file())
        .collect();
    if files.is_empty() {
        return Err(Failure::input(format!("no input files match `{pattern}`")));
    }
    files.sort();
    Ok(files)
}

pub fn read_params(path: &Path) -> CliResult<ModelParams> {
    let text = fs::read_to_string(path).or_fail(ExitKind::Io, || format!("reading {}", path.display()))?;
    serde_json::from_str(&text).or_fail(ExitKind::Input, || format!("invalid parameters in {}", path.display()))
}

/// Accepts a parameter file (with or without `s0`), a bare theta map, or a
/// fit result.
pub fn read_theta(path: &Path) -> CliResult<Theta> {
    let text = fs::read_to_string(path).or_fail(ExitKind::Io, || format!("reading {}", path.display()))?;
    let ctx = || format!("no parameter vector in {}", path.display());
    let mut value: serde_json::Value = serde_json::from_str(&text).or_fail(ExitKind::Input, ctx)?;
    if let Some(inner) = value.get("theta") {
        value = inner.clone();
    }
    if let Some(map) = value.as_object_mut() {
        map.remove("s0");
    }
    let theta: Theta = serde_json::from_value(value).or_fail(ExitKind::Input, ctx)?;
    theta.validate()?;
    Ok(theta)
}

fn initial_count(file: &Path, s0: Option<u64>) -> CliResult<u64> {
    if let Some(s0) = s0 {
        return Ok(s0);
    }
    let sidecar = file.parent().unwrap_or(Path::new(".")).join(SIDECAR);
    if !sidecar.is_file() {
        return Err(Failure::input(format!(
            "no initial count for {}: pass --s0 or place {SIDECAR} next to the data",
            file.display()
        )));
    }
    Ok(read_params(&sidecar)?.s0)
}

fn open(file: &Path) -> CliResult<fs::File> {
    fs::File::open(file).or_fail(ExitKind::Io, || format!("opening {}", file.display()))
}

pub fn load_full(files: &[PathBuf], s0: Option<u64>) -> CliResult<Vec<Trajectory>> {
    files
        .iter()
        .map(|f| {
            let s0 = initial_count(f, s0)?;
            branchfit::io::read_trajectory(open(f)?, s0)
                .or_fail(ExitKind::Input, || format!("reading {}", f.display()))
        })
        .collect()
}

pub fn load_partial(files: &[PathBuf], s0: Option<u64>) -> CliResult<Vec<PartialTrajectory>> {
    files
        .iter()
        .map(|f| {
            let m0 = initial_count(f, s0)?;
            branchfit::io::read_partial(open(f)?, m0)
                .or_fail(ExitKind::Input, || format!("reading {}", f.display()))
        })
        .collect()
}

/// File name for reporting, without the directory.
pub fn label(file: &Path) -> String {
    file.file_name().map_or_else(|| file.display().to_string(), |n| n.to_string_lossy().into_owned())
}
