use thiserror::Error;

/// Errors shared across the library.
///
/// Geometry degeneracies (coincident centers, epipole in frame, points behind
/// a camera) are separated from config/validation problems so callers can map
/// them to different exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("intrinsics must be upper-triangular with a positive diagonal")]
    BadIntrinsics,

    #[error("rotation is not orthonormal with det +1 (residual {0:.3e})")]
    BadRotation(f64),

    #[error("crop box must have positive size and lie inside the {width}x{height} image")]
    BadCrop { width: u32, height: u32 },

    #[error("crop output size must be at least 8 pixels, got {0}")]
    BadCropOutSize(usize),

    #[error("ray direction must be a unit vector (norm {0})")]
    BadDirection(f64),

    #[error("camera centers coincide; epipolar geometry is undefined")]
    CoincidentCenters,

    #[error("point at depth {0:.3e} is behind the camera")]
    BehindCamera(f64),

    #[error("rectification degenerate: epipole falls inside the image")]
    DegenerateRectification,

    #[error("homography is singular (|det| = {0:.3e})")]
    SingularHomography(f64),

    #[error("probability {0} outside [0, 1]")]
    BadProbability(f64),

    #[error("grid size {got_w}x{got_h} does not match expected {want_w}x{want_h}")]
    SizeMismatch {
        want_w: usize,
        want_h: usize,
        got_w: usize,
        got_h: usize,
    },

    #[error("buffer length {got} does not match {width}x{height} grid")]
    BadLength {
        width: usize,
        height: usize,
        got: usize,
    },

    #[error("depth sampling requires 0 < min < max and at least 2 samples")]
    BadDepthRange,

    #[error("at least one source view is required")]
    NoSources,

    #[error("bound pair violates lower <= upper at pixel ({x}, {y}): {lower} > {upper}")]
    UnorderedBounds {
        x: usize,
        y: usize,
        lower: f64,
        upper: f64,
    },

    #[error("loss weights must be non-negative and finite")]
    BadWeights,

    #[error("{what} is not finite")]
    NonFinite { what: &'static str },

    #[error("a triplet needs three distinct view indices")]
    BadTriplet,

    #[error("feature image must have {expected} channels, got {got}")]
    BadChannels { expected: usize, got: usize },

    #[error("voxel grid needs positive extents and resolution")]
    BadVoxelGrid,

    #[error("a rig needs at least 2 cameras, got {0}")]
    TooFewCameras(usize),

    #[error("labeled fraction {eta} of {views} views yields fewer than 2 labeled views")]
    TooFewLabeled { eta: f64, views: usize },

    #[error("invalid config: {0}")]
    BadConfig(String),

    #[error("invalid checkpoint: {0}")]
    BadCheckpoint(String),

    #[error("{path}: {msg}")]
    Format { path: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
