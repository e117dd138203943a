//! Config-driven front-end: existence checks, single games and multi-stage
//! scenarios, written out as CSV plus a TOML run manifest.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use opgame_core::matfun::CriticalTimes;

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "OPGAME_OUT";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {message}")]
    Config { path: String, message: String },

    #[error("unknown preset `{0}`; valid presets: {valid}", valid = opgame_core::multistage::PRESET_NAMES.join(", "))]
    UnknownPreset(String),

    #[error("no Nash equilibrium at T = {horizon}; critical horizons: {critical}")]
    NoEquilibrium { horizon: f64, critical: CriticalTimes },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Core(#[from] opgame_core::Error),
}

impl CliError {
    /// Process exit code: 2 when the game has no equilibrium, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::NoEquilibrium { .. } => 2,
            CliError::Core(opgame_core::Error::NoEquilibrium { .. }) => 2,
            _ => 1,
        }
    }

    pub(crate) fn config(path: &str, message: impl Into<String>) -> Self {
        CliError::Config {
            path: path.to_string(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
