use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate rotation: quaternion has zero norm")]
    DegenerateRotation,

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("invalid image buffer: {0}")]
    InvalidImage(String),

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("invalid feature map: {0}")]
    InvalidFeatureMap(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("empty cloud")]
    EmptyCloud,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported camera model `{0}`")]
    UnsupportedCameraModel(String),

    #[error("truncated stream in {file}: needed {needed} more bytes at offset {offset}")]
    Truncated {
        file: String,
        offset: usize,
        needed: usize,
    },

    #[error("parse error in {file} line {line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    #[error("image {image_id} references missing camera {camera_id}")]
    MissingCamera { image_id: u32, camera_id: u32 },

    #[error("malformed PLY: {0}")]
    Ply(String),

    #[error("PLY is missing required property `{0}`")]
    MissingProperty(String),

    #[error("non-finite value in vertex {vertex}, property `{property}`")]
    NonFinite { vertex: usize, property: String },

    #[error("bad feature file magic: expected \"CSFM\"")]
    BadMagic,

    #[error("feature data length mismatch: expected {expected} floats, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("undefined AUROC: ground truth contains a single class")]
    UndefinedAuroc,

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("png {path}: {message}")]
    Png { path: PathBuf, message: String },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("config: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn mismatch(what: impl Into<String>) -> Self {
        Error::DimensionMismatch(what.into())
    }

    /// Whether the error stems from bad input (missing or malformed files,
    /// invalid arguments) rather than a failure while computing.
    pub fn is_input_error(&self) -> bool {
        use std::io::ErrorKind;
        match self {
            Error::Stage { source, .. } => source.is_input_error(),
            Error::Diverged(_) | Error::EmptyCloud | Error::UndefinedAuroc => false,
            Error::File { source, .. } => matches!(
                source.kind(),
                ErrorKind::NotFound | ErrorKind::PermissionDenied | ErrorKind::InvalidInput | ErrorKind::InvalidData
            ),
            _ => true,
        }
    }

    /// Tag an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }
}
