use std::fmt;
use std::path::Path;

use lidar_codec::abr::AbrError;
use lidar_codec::io::CloudIoError;
use lidar_codec::metrics::MetricsError;
use lidar_codec::stream::StreamError;
use lidar_codec::{BitstreamError, CodecError};

/// Failure of a command, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Corrupt(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 1,
            Self::Io(_) => 2,
            Self::Corrupt(_) => 3,
        }
    }

    pub fn io(path: &Path, e: impl fmt::Display) -> Self {
        Self::Io(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(m) => write!(f, "usage error: {m}"),
            Self::Io(m) => write!(f, "i/o error: {m}"),
            Self::Corrupt(m) => write!(f, "corrupt data: {m}"),
        }
    }
}

impl From<CloudIoError> for CliError {
    fn from(e: CloudIoError) -> Self {
        match e {
            CloudIoError::Io { .. } => Self::Io(e.to_string()),
            CloudIoError::UnknownFormat(_) => Self::Usage(e.to_string()),
            CloudIoError::BadKittiLength { .. } | CloudIoError::BadXyzLine { .. } => Self::Corrupt(e.to_string()),
        }
    }
}

impl From<BitstreamError> for CliError {
    fn from(e: BitstreamError) -> Self {
        Self::Corrupt(e.to_string())
    }
}

impl From<CodecError> for CliError {
    fn from(e: CodecError) -> Self {
        match e {
            CodecError::Config(_) => Self::Usage(e.to_string()),
            _ => Self::Corrupt(e.to_string()),
        }
    }
}

impl From<AbrError> for CliError {
    fn from(e: AbrError) -> Self {
        match e {
            AbrError::Config(_) => Self::Usage(e.to_string()),
            _ => Self::Corrupt(e.to_string()),
        }
    }
}

impl From<StreamError> for CliError {
    fn from(e: StreamError) -> Self {
        match e {
            StreamError::Io(_) => Self::Io(e.to_string()),
            StreamError::Config(_) => Self::Usage(e.to_string()),
            StreamError::Codec(c) => c.into(),
            StreamError::Abr(a) => a.into(),
            _ => Self::Corrupt(e.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        Self::Corrupt(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            Self::Io(e.to_string())
        } else {
            Self::Corrupt(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}
