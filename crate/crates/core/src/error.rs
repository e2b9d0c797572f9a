use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the pipeline can report.
///
/// Variant names double as the machine-readable error vocabulary exposed by
/// the service layer (see [`Error::code`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("landmark hull has zero width or height")]
    DegenerateLandmarks,
    #[error("invalid landmark set: {0}")]
    InvalidLandmarks(String),
    #[error("panel {width}x{height} is smaller than the minimum region side {min_side}")]
    PanelTooSmall { width: u32, height: u32, min_side: u32 },
    #[error("region side {side} is below the minimum {min_side}")]
    SideTooSmall { side: u32, min_side: u32 },
    #[error("crop square {square} does not fit inside the {width}x{height} panel")]
    SpecOutOfBounds { square: String, width: u32, height: u32 },
    #[error("invalid raster: {0}")]
    InvalidRaster(String),
    #[error("unreadable media: {0}")]
    UnreadableMedia(String),
    #[error("no frames decoded from {0}")]
    ZeroFrames(String),
    #[error("detector unavailable: {0}")]
    AdapterUnavailable(String),
    #[error("detector protocol error: {0}")]
    AdapterProtocolError(String),
    #[error("engine failure: {0}")]
    EngineFailure(String),
    #[error("unknown engine `{0}`")]
    EngineUnknown(String),
    #[error("source must be a 512x512x3 canonical crop, got {0}")]
    InvalidSource(String),
    #[error("driving performance has no frames")]
    EmptyPerformance,
    #[error("frame index {index} out of range for {len} frames")]
    InvalidIndex { index: usize, len: usize },
    #[error("frame {0} has not been generated")]
    FrameNotGenerated(usize),
    #[error("retarget parameter {name} = {value} outside [0, 1]")]
    ParamOutOfRange { name: &'static str, value: f64 },
    #[error("no keyframe selected")]
    NothingSelected,
    #[error("selected frame {0} was generated with outdated parameters")]
    StaleSelection(usize),
    #[error("session is committed and can no longer change")]
    SessionCommitted,
    #[error("operation `{op}` not allowed in state {state}")]
    InvalidState { op: &'static str, state: &'static str },
    #[error("mapped face belongs to panel `{face}`, not `{panel}`")]
    MismatchedPanel { face: String, panel: String },
    #[error("{0} not found")]
    NotFound(String),
    #[error("no manifest in {0}")]
    MissingManifest(PathBuf),
    #[error("asset {asset} failed integrity check: {reason}")]
    IntegrityError { asset: String, reason: String },
    #[error("manifest schema version {0} is not supported")]
    VersionUnsupported(u32),
    #[error("malformed document: {0}")]
    Malformed(String),
    #[error("I/O failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::IoFailure { path: path.into(), source }
    }

    /// Stable machine-readable token for this error.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::DegenerateLandmarks => "DegenerateLandmarks",
            Error::InvalidLandmarks(_) => "InvalidLandmarks",
            Error::PanelTooSmall { .. } => "PanelTooSmall",
            Error::SideTooSmall { .. } => "SideTooSmall",
            Error::SpecOutOfBounds { .. } => "SpecOutOfBounds",
            Error::InvalidRaster(_) => "InvalidRaster",
            Error::UnreadableMedia(_) => "UnreadableMedia",
            Error::ZeroFrames(_) => "ZeroFrames",
            Error::AdapterUnavailable(_) => "AdapterUnavailable",
            Error::AdapterProtocolError(_) => "AdapterProtocolError",
            Error::EngineFailure(_) => "EngineFailure",
            Error::EngineUnknown(_) => "EngineUnknown",
            Error::InvalidSource(_) => "InvalidSource",
            Error::EmptyPerformance => "EmptyPerformance",
            Error::InvalidIndex { .. } => "InvalidIndex",
            Error::FrameNotGenerated(_) => "FrameNotGenerated",
            Error::ParamOutOfRange { .. } => "ParamOutOfRange",
            Error::NothingSelected => "NothingSelected",
            Error::StaleSelection(_) => "StaleSelection",
            Error::SessionCommitted => "SessionCommitted",
            Error::InvalidState { .. } => "InvalidState",
            Error::MismatchedPanel { .. } => "MismatchedPanel",
            Error::NotFound(_) => "NotFound",
            Error::MissingManifest(_) => "MissingManifest",
            Error::IntegrityError { .. } => "IntegrityError",
            Error::VersionUnsupported(_) => "VersionUnsupported",
            Error::Malformed(_) => "Malformed",
            Error::IoFailure { .. } => "IOFailure",
        }
    }

    /// Whether retrying the same request may succeed.
    pub fn retryable(&self) -> bool {
        matches!(self, Error::EngineFailure(_) | Error::AdapterUnavailable(_) | Error::IoFailure { .. })
    }
}
