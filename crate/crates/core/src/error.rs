use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the solvers, the simulator and the experiment front end.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{}:{line}: {msg}", path.display())]
    Format {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("diverged: {0}")]
    Divergence(String),

    /// A caller broke an operation's precondition.
    #[error("logic error: {0}")]
    Logic(String),

    #[error("staleness bound violated: worker {worker} is {staleness} iterations stale (tau = {tau}) at t = {t}")]
    Staleness {
        worker: usize,
        staleness: usize,
        tau: usize,
        t: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Shape(format!("{what}: expected length {want}, got {got}")));
    }
    Ok(())
}
