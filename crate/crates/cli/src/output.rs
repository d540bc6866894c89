use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Classify, CliResult, ExitKind, Failure};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one run, sufficient to replay it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub command: String,
    pub params: Option<String>,
    pub seed: Option<u64>,
    pub out: String,
    pub version: String,
    pub duration_secs: f64,
    /// Arguments after the program name, as given.
    pub argv: Vec<String>,
    /// Directory the arguments are relative to.
    pub cwd: String,
}

impl Manifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).or_fail(ExitKind::Io, || format!("reading {}", path.display()))?;
        serde_json::from_str(&text).or_fail(ExitKind::Input, || format!("parsing manifest {}", path.display()))
    }
}

/// Output directory whose files are replaced atomically.
pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        fs::create_dir_all(root).or_fail(ExitKind::Io, || format!("creating {}", root.display()))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let target = self.root.join(name);
        let ctx = || format!("writing {}", target.display());
        let mut tmp = tempfile::NamedTempFile::new_in(&self.root).or_fail(ExitKind::Io, ctx)?;
        tmp.write_all(bytes).or_fail(ExitKind::Io, ctx)?;
        tmp.persist(&target).map_err(|e| e.error).or_fail(ExitKind::Io, ctx)?;
        Ok(())
    }

    /// Renders with one of the core writers, then stores atomically.
    pub fn write_with(
        &self,
        name: &str,
        render: impl FnOnce(&mut Vec<u8>) -> branchfit::Result<()>,
    ) -> CliResult<()> {
        let mut buf = Vec::new();
        render(&mut buf).map_err(|e| Failure::new(ExitKind::Io, anyhow::Error::new(e).context(format!("rendering {name}"))))?;
        self.write(name, &buf)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<()> {
        let text = branchfit::io::to_json(value).map_err(|e| Failure::new(ExitKind::Io, e))?;
        self.write(name, text.as_bytes())
    }
}
