use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {left:?} vs {right:?} ({context})")]
    Dimension {
        left: Vec<usize>,
        right: Vec<usize>,
        context: &'static str,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("training diverged at epoch {epoch}, scene {scene}: loss {loss}")]
    Diverged { epoch: usize, scene: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(left: &[usize], right: &[usize], context: &'static str) -> Self {
        Error::Dimension {
            left: left.to_vec(),
            right: right.to_vec(),
            context,
        }
    }
}
