//! Batch front end for `branchfit`: every subcommand reads files, writes
//! files into `--out`, and records a `manifest.json` that can be replayed.

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod data;
mod output;

pub use output::{Manifest, MANIFEST_FILE};

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Input = 2,
    Io = 3,
    Estimation = 4,
    Statistical = 5,
}

#[derive(Debug)]
pub struct Failure {
    pub kind: ExitKind,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn new(kind: ExitKind, error: impl Into<anyhow::Error>) -> Self {
        Self { kind, error: error.into() }
    }

    pub fn input(msg: impl fmt::Display) -> Self {
        Self::new(ExitKind::Input, anyhow::anyhow!("{msg}"))
    }

    pub fn code(&self) -> u8 {
        self.kind as u8
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl From<branchfit::Error> for Failure {
    fn from(e: branchfit::Error) -> Self {
        use branchfit::Error as E;
        let kind = match e {
            E::NoEvents | E::NonFiniteLikelihood(_) => ExitKind::Estimation,
            E::DegenerateSample(_) => ExitKind::Statistical,
            _ => ExitKind::Input,
        };
        Self::new(kind, e)
    }
}

pub type CliResult<T> = std::result::Result<T, Failure>;

/// Attaches an exit kind and a context message to fallible calls.
pub(crate) trait Classify<T> {
    fn or_fail(self, kind: ExitKind, context: impl FnOnce() -> String) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for std::result::Result<T, E> {
    fn or_fail(self, kind: ExitKind, context: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|e| Failure::new(kind, e.into().context(context())))
    }
}

#[derive(Debug, Parser)]
#[command(name = "branchfit", version, about = "Stem-cell branching process: simulate, fit, test")]
pub struct Cli {
    /// Worker threads; 0 means one per core.
    #[arg(long, global = true, env = "BRANCHFIT_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Simulate replicate trajectories.
    Simulate(SimulateArgs),
    /// Fit model parameters to trajectory files.
    Fit(FitArgs),
    /// Theoretical (and optionally empirical) moment curves.
    Moments(MomentsArgs),
    /// Extinction-time ensemble, lower bound and inverse-Gaussian tests.
    Stopping(StoppingArgs),
    /// Observed over expected count ratios.
    Gof(GofArgs),
    /// Log-likelihood and gradient at a given parameter.
    Loglik(LoglikArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Full,
    Forward,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Parameter file `{p1,p2,p4,c1,c2,c4,m1,m2,m4,r,s0}`.
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the observable `t,m,y` projection instead of full events.
    #[arg(long)]
    pub partial: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[arg(long, value_enum)]
    pub mode: Mode,
    /// Glob of trajectory CSVs.
    #[arg(long)]
    pub data: String,
    /// Fit configuration JSON; defaults apply to missing fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Fix a parameter, e.g. `p4=0`. Repeatable.
    #[arg(long, value_name = "NAME=VALUE")]
    pub pin: Vec<String>,
    /// Fit every file separately instead of pooling.
    #[arg(long)]
    pub each: bool,
    /// Initial count for every file (otherwise read from `params.json` next to the data).
    #[arg(long)]
    pub s0: Option<u64>,
    /// Overrides the configuration's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct MomentsArgs {
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long, default_value_t = 50.0)]
    pub tmax: f64,
    /// Number of grid points on `[0, tmax]`.
    #[arg(long, default_value_t = 101)]
    pub grid: usize,
    /// Times for the autocorrelation matrix, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub corr_times: Vec<f64>,
    /// Full-data trajectories for empirical columns.
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct StoppingArgs {
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct GofArgs {
    /// Parameter file or fit result.
    #[arg(long)]
    pub theta: PathBuf,
    #[arg(long)]
    pub data: String,
    /// Data files hold the `t,m,y` projection.
    #[arg(long)]
    pub partial: bool,
    /// End of the grid; defaults to the last event time in the data.
    #[arg(long)]
    pub tmax: Option<f64>,
    #[arg(long, default_value_t = 101)]
    pub grid: usize,
    #[arg(long)]
    pub s0: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct LoglikArgs {
    #[arg(long, value_enum)]
    pub mode: Mode,
    /// Parameter file or fit result.
    #[arg(long)]
    pub theta: PathBuf,
    #[arg(long)]
    pub data: String,
    #[arg(long)]
    pub s0: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Output directory; defaults to the one recorded in the manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Fit(_) => "fit",
            Command::Moments(_) => "moments",
            Command::Stopping(_) => "stopping",
            Command::Gof(_) => "gof",
            Command::Loglik(_) => "loglik",
            Command::Replay(_) => "replay",
        }
    }

    fn out_mut(&mut self) -> Option<&mut PathBuf> {
        match self {
            Command::Simulate(a) => Some(&mut a.out),
            Command::Fit(a) => Some(&mut a.out),
            Command::Moments(a) => Some(&mut a.out),
            Command::Stopping(a) => Some(&mut a.out),
            Command::Gof(a) => Some(&mut a.out),
            Command::Loglik(a) => Some(&mut a.out),
            Command::Replay(_) => None,
        }
    }
}

/// Parses `argv` (program name first) and runs it.
pub fn main_with<I, T>(argv: I) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return Ok(());
        }
        Err(e) => return Err(Failure::input(e.render().to_string().trim_end())),
    };
    if let Some(n) = cli.threads {
        // a pool may already exist when called repeatedly in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let recorded: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    run(cli.command, recorded)
}

fn run(command: Command, argv: Vec<String>) -> CliResult<()> {
    match command {
        Command::Replay(args) => replay(&args),
        mut command => {
            let out = command.out_mut().expect("non-replay commands have an output directory").clone();
            let cwd = std::env::current_dir().or_fail(ExitKind::Io, || "reading working directory".into())?;
            let out = cwd.join(out);
            *command.out_mut().expect("checked above") = out.clone();
            commands::execute(&command, &argv, &cwd, &out)
        }
    }
}

fn replay(args: &ReplayArgs) -> CliResult<()> {
    let manifest = Manifest::load(&args.manifest)?;
    let mut argv = vec!["branchfit".to_string()];
    argv.extend(manifest.argv.iter().cloned());
    let cli = Cli::try_parse_from(&argv)
        .or_fail(ExitKind::Input, || format!("manifest {} holds an invalid command", args.manifest.display()))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(Failure::input("a manifest cannot record a replay"));
    }
    let here = std::env::current_dir().or_fail(ExitKind::Io, || "reading working directory".into())?;
    let out = match &args.out {
        Some(o) => here.join(o),
        None => PathBuf::from(&manifest.out),
    };
    std::env::set_current_dir(&manifest.cwd)
        .or_fail(ExitKind::Io, || format!("entering recorded directory {}", manifest.cwd))?;
    let mut command = cli.command;
    *command.out_mut().expect("not a replay") = out;
    run(command, manifest.argv)
}
