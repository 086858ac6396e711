use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("rotation 6d halves are collinear; cannot orthonormalize")]
    DegenerateRotation,
    #[error("predicted camera baseline {norm} m is below the {min} m threshold")]
    DegenerateBaseline { norm: f64, min: f64 },
    #[error("degenerate point geometry: cross-covariance rank < 2")]
    DegenerateGeometry,
    #[error("all correspondences rejected (max_corr_dist {max_corr_dist} m)")]
    EmptyCorrespondenceSet { max_corr_dist: f64 },
    #[error("manipulated object cloud is empty")]
    EmptyManipCloud,
    #[error("backward pass called without a matching forward cache")]
    MissingCache,
    #[error("diffusion step {k} outside [1, {max}]")]
    StepOutOfRange { k: usize, max: usize },
    #[error("invalid schedule range: {0}")]
    InvalidRange(String),
    #[error("empty transform list")]
    EmptyList,
    #[error("time step dt must be positive, got {0}")]
    NonPositiveDt(f64),
    #[error("frame {frame} outside trajectory of length {len}")]
    FrameOutOfRange { frame: usize, len: usize },
    #[error("requested flow magnitude {mag} px exceeds image margin {margin} px")]
    FlowTooLarge { mag: f64, margin: f64 },
    #[error("log/manifest length mismatch: {got} vs {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("frame {frame}: {source}")]
    AtFrame {
        frame: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("malformed {what}: {detail}")]
    Format { what: String, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn at_frame(self, frame: usize) -> Error {
        Error::AtFrame {
            frame,
            source: Box::new(self),
        }
    }

    pub fn format(what: &str, detail: impl Into<String>) -> Error {
        Error::Format {
            what: what.to_string(),
            detail: detail.into(),
        }
    }
}
