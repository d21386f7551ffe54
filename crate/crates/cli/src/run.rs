use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use bip_core::store::file_sha256;
use bip_core::Error;
use serde::Serialize;

#[derive(Debug)]
pub enum Failure {
    Core(Error),
    Usage(String),
    /// The command ran but found constraint violations.
    Findings(String),
    /// Ran out of budget or hit an unexpected state.
    Internal(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Findings(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Internal(_) => 3,
            Failure::Core(e) => match e {
                Error::BadMagic
                | Error::VersionMismatch { .. }
                | Error::UnsupportedDtype(_)
                | Error::TruncatedData { .. }
                | Error::TrailingData { .. }
                | Error::NonUnitRow { .. }
                | Error::DimensionMismatch { .. }
                | Error::ShapeMismatch { .. }
                | Error::ChecksumMismatch
                | Error::LabelCountMismatch { .. }
                | Error::EmptyMatrix
                | Error::Domain(_)
                | Error::InsufficientData { .. }
                | Error::GalleryTooSmall { .. }
                | Error::Config(_)
                | Error::EmptyScores
                | Error::IndexOutOfRange { .. }
                | Error::MissingFolds
                | Error::PairList(_)
                | Error::Io(_)
                | Error::Json(_)
                | Error::Csv(_) => 2,
                _ => 3,
            },
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Usage(m) | Failure::Findings(m) | Failure::Internal(m) => f.write_str(m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Core(e.into())
    }
}

pub type CmdResult = Result<(), Failure>;

#[derive(Serialize)]
struct InputFile {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    config: &'a serde_json::Value,
    inputs: &'a [InputFile],
    outputs: &'a [String],
    seed: Option<u64>,
    tool_version: &'static str,
    threads: usize,
    wall_time_secs: f64,
    status: &'a str,
}

/// Collects what a command read and wrote, then writes `<prefix>.run.json`.
pub struct Run {
    command: &'static str,
    started: Instant,
    inputs: Vec<InputFile>,
    outputs: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
}

impl Run {
    pub fn start(command: &'static str) -> Self {
        Self {
            command,
            started: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            config: serde_json::Value::Null,
            seed: None,
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), Failure> {
        let sha256 = file_sha256(path)?;
        self.inputs.push(InputFile { path: path.display().to_string(), sha256 });
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, path: &Path, value: &T) -> Result<(), Failure> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        fs::write(path, bytes)?;
        self.output(path);
        Ok(())
    }

    pub fn finish(self, prefix: &Path, status: &str) -> Result<(), Failure> {
        let path = with_suffix(prefix, ".run.json");
        let m = RunManifest {
            command: self.command,
            config: &self.config,
            inputs: &self.inputs,
            outputs: &self.outputs,
            seed: self.seed,
            tool_version: env!("CARGO_PKG_VERSION"),
            threads: rayon::current_num_threads(),
            wall_time_secs: self.started.elapsed().as_secs_f64(),
            status,
        };
        let mut bytes = serde_json::to_vec_pretty(&m)?;
        bytes.push(b'\n');
        fs::write(path, bytes)?;
        Ok(())
    }
}

pub fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}
