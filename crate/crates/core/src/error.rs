use thiserror::Error;

use crate::model::ModelParams;

pub type Result<T> = std::result::Result<T, SfmError>;

#[derive(Debug, Error)]
pub enum SfmError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Malformed or invalid input data. `line` is 1-based and counts the header.
    #[error("data error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Data { line: Option<u64>, message: String },

    #[error("degenerate series: {0}")]
    Degenerate(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("solver failed after {iterations} iterations: {reason}")]
    Solver {
        reason: String,
        iterations: usize,
        last: ModelParams,
    },

    #[error("singular subsystem at tau = {tau}: tau*rho*sigma_x*sigma_r = {k}")]
    SingularSubsystem { tau: f64, k: f64 },
}

impl SfmError {
    pub(crate) fn data(line: Option<u64>, message: impl Into<String>) -> Self {
        SfmError::Data {
            line,
            message: message.into(),
        }
    }

    /// True for failures caused by the input rather than by the numerics.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            SfmError::Io { .. }
                | SfmError::Data { .. }
                | SfmError::Degenerate(_)
                | SfmError::Domain(_)
        )
    }
}
