use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: n_partitions must be >= 2, got {0}")]
    NPartitions(usize),
    #[error("invalid config: theta_image must be finite and > 0, got {0}")]
    ThetaImage(f64),
    #[error("invalid config: theta_ci must lie in (0, 1), got {0}")]
    ThetaCi(f64),
    #[error("invalid config: reduced_dim must be >= 1, got {0}")]
    ReducedDim(usize),
    #[error("invalid config: min_likes must be >= 1, got {0}")]
    MinLikes(usize),
    #[error("invalid config: kmeans_max_iters must be >= 1, got {0}")]
    MaxIters(usize),
    #[error("invalid config: kmeans_tol must be finite and >= 0, got {0}")]
    KMeansTol(f64),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("duplicate image id `{0}`")]
    DuplicateId(String),
    #[error("empty image id")]
    EmptyId,
    #[error("image id `{0}` exceeds 65535 bytes")]
    IdTooLong(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("trailing bytes after the last record")]
    TrailingData,
    #[error("bad magic {0:02x?}, expected \"CIEM\"")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated stream while reading {0}")]
    Truncated(String),
    #[error("invalid utf-8 in image id of record {0}")]
    InvalidUtf8(u64),

    #[error("csv: {0}")]
    Csv(String),
    #[error("missing or wrong csv header, expected `{0}`")]
    MissingHeader(&'static str),
    #[error("empty field on csv line {0}")]
    EmptyField(u64),
    #[error("csv file has no data rows")]
    NoRows,
    #[error("malformed numeric value `{value}` on csv line {line}")]
    MalformedNumber { value: String, line: u64 },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported schema_version {0}")]
    SchemaVersion(u64),
    #[error("expected model kind `{expected}`, found `{found}`")]
    ModelKind { expected: &'static str, found: String },
    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("data has rank {achievable}, cannot extract {requested} components")]
    RankDeficient { requested: usize, achievable: usize },
    #[error("{0} leaf partitions are empty; data has fewer distinct points than partitions")]
    EmptyLeaves(usize),
    #[error("all CI targets are equal; normalization is undefined")]
    DegenerateTargets,
    #[error("singular normal equations; use a positive ridge penalty")]
    Singular,
    #[error("conjugate gradient stalled after {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("split leaves an empty side ({train} train / {test} test)")]
    EmptySplit { train: usize, test: usize },
    #[error("fraction must lie in (0, 1), got {0}")]
    Fraction(f64),
    #[error("need at least {needed} partitions, got {got}")]
    TooFewPartitions { needed: usize, got: usize },
    #[error("group {0} has no labeled images")]
    EmptyGroup(&'static str),
    #[error("infeasible synthetic spec: {0}")]
    Infeasible(String),
    #[error("image `{0}` is not covered by the model")]
    UnknownImage(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        if err.is_io_error() {
            match err.into_kind() {
                csv::ErrorKind::Io(e) => return Error::Io(e),
                _ => unreachable!("checked is_io_error"),
            }
        }
        Error::Csv(err.to_string())
    }
}
