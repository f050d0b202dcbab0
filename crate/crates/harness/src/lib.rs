//! Experiment harness for the online-em library: configuration, synthetic
//! data, CSV datasets, training runs (batch, online, distributed), and SVG
//! learning curves.  The `oem` binary is a thin CLI over these modules.

pub mod config;
pub mod data;
pub mod experiment;
pub mod plot;
pub mod synth;

use std::fmt;

/// Harness-level error, carrying the process exit code its category maps
/// to: 2 for configuration problems, 3 for numerical failures, 4 for I/O.
#[derive(Debug)]
pub enum HarnessError {
    Config(String),
    Numerical(String),
    Io(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Numerical(_) => 3,
            HarnessError::Io(_) => 4,
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        HarnessError::Config(message.into())
    }

    pub fn io(message: impl Into<String>) -> Self {
        HarnessError::Io(message.into())
    }
}

impl fmt::Display for HarnessError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HarnessError::Config(m) => write!(f, "configuration error: {m}"),
            HarnessError::Numerical(m) => write!(f, "numerical error: {m}"),
            HarnessError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for HarnessError {}

impl From<online_em::EmError> for HarnessError {
    fn from(e: online_em::EmError) -> Self {
        match &e {
            online_em::EmError::Numerical { .. } => HarnessError::Numerical(e.to_string()),
            _ => HarnessError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
