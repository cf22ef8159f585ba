use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("dense tensor of {entries} entries exceeds the cap of {cap}")]
    TooLarge { entries: u128, cap: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("transform matrix is singular (|det| = {det:e})")]
    SingularTransform { det: f64 },

    #[error("damped system is numerically singular (condition estimate {cond:e})")]
    IllConditioned { cond: f64 },

    #[error("projection onto the sphere is degenerate")]
    DegenerateProjection,

    #[error("factors are not an exact fit (phi = {phi:e})")]
    NotExactFit { phi: f64 },

    #[error("decomposition failed exact verification at {index:?}")]
    Unverified { index: [usize; 3] },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
