use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("matrix is not a proper rotation")]
    NotARotation,
    #[error("non-finite value")]
    NonFinite,
    #[error("extent on axis {axis} collapsed: lo {lo} >= hi {hi}")]
    DegenerateExtent { axis: usize, lo: f64, hi: f64 },
    #[error("camera intrinsics must be finite with fx, fy > 0")]
    BadIntrinsics,
    #[error("image dimensions must be at least 1x1")]
    EmptyImage,
    #[error("at least one camera is required")]
    NoCameras,
}

/// Failure decoding a DGRD grid.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GridParseError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("unexpected end of data")]
    UnexpectedEnd,
    #[error("dimension overflow in field `{field}`")]
    DimensionOverflow { field: &'static str },
    #[error("zero-sized field `{field}`")]
    ZeroDimension { field: &'static str },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
}

#[derive(Debug, Error)]
pub enum GridError {
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: GridParseError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("grid shape mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SampleError {
    #[error("requested {requested} samples but only {available} pixels have positive weight")]
    NotEnoughSupport { requested: usize, available: usize },
    #[error("sampling needs a single-channel grid, got {0} channels")]
    NotSingleChannel(usize),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("error list is empty")]
    EmptyErrors,
    #[error("threshold must be positive")]
    BadThreshold,
    #[error("no mutually valid pixels to compare")]
    NoValidPixels,
    #[error("no correspondence could be warped")]
    NoWarpedPoints,
}

#[derive(Debug, Error)]
pub enum SceneError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error("scene has no images")]
    Empty,
    #[error("image {index}: {reason}")]
    Image { index: usize, reason: String },
    #[error("synthetic placement failed: {0}")]
    Placement(String),
}

/// Manifest problems always carry file, frame and field context.
#[derive(Debug, Error)]
#[error("{}{}: {field}: {reason}", file.display(), frame.map(|f| format!(" frame {f}")).unwrap_or_default())]
pub struct ManifestError {
    pub file: PathBuf,
    pub frame: Option<usize>,
    pub field: String,
    pub reason: String,
}

impl ManifestError {
    pub fn new(file: impl Into<PathBuf>, frame: Option<usize>, field: impl Into<String>, reason: impl ToString) -> Self {
        Self { file: file.into(), frame, field: field.into(), reason: reason.to_string() }
    }
}
