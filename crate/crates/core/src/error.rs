use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("divisibility constraint violated: {0}")]
    Divisibility(String),

    #[error("parameter out of range: {0}")]
    Range(String),

    #[error("coded payloads are only generated for one reducer per function (s = 1), got s = {0}")]
    UnsupportedCascade(usize),

    #[error("decode failed at server {server}: {reason}")]
    DecodeFailure { server: usize, reason: String },

    #[error("invalid fat-tree arity {0}: must be even and at least 2")]
    Arity(usize),

    #[error("{servers} servers do not fit into {slots} server slots")]
    Capacity { servers: usize, slots: usize },

    #[error("cannot split a {len}-bit payload into {parts} equal pieces")]
    Split { len: usize, parts: usize },

    #[error("delivery mismatch at server {server}: {reason}")]
    Delivery { server: usize, reason: String },

    #[error("switch {switch} emitted bits it never received: {reason}")]
    FlowViolation { switch: String, reason: String },

    #[error("malformed frame: {0}")]
    Frame(String),

    #[error("run {run}: {source}")]
    Run {
        run: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
