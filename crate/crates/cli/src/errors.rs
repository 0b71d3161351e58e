//! Exit-code discipline: 0 success, 1 usage error, 2 data error,
//! 3 checkpoint error.

use audiohide_core::audio::{AudioError, DecompressError};
use audiohide_core::data::DatasetError;
use audiohide_core::metrics::MetricsError;
use audiohide_core::nested::NestedError;
use audiohide_core::pack::PackError;
use audiohide_core::train::driver::DriverError;
use audiohide_core::train::{CheckpointError, ConfigError, TrainError};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Checkpoint(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Checkpoint(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Checkpoint(m) => m,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.message())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Checkpoint(e.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<AudioError> for CliError {
    fn from(e: AudioError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<DecompressError> for CliError {
    fn from(e: DecompressError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<PackError> for CliError {
    fn from(e: PackError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<NestedError> for CliError {
    fn from(e: NestedError) -> Self {
        match e {
            NestedError::MissingLayer { .. } => CliError::Checkpoint(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<DriverError> for CliError {
    fn from(e: DriverError) -> Self {
        match e {
            DriverError::Dataset(d) => d.into(),
            DriverError::Train(t) => t.into(),
            DriverError::Nested(n) => n.into(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
