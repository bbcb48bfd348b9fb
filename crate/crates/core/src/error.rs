use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("orbit left the working region at index {index} (point = ({x}, {y}))")]
    Escape { index: usize, x: f64, y: f64 },

    #[error("non-finite coordinate at index {index}")]
    NonFinite { index: usize },

    #[error("most contracted direction undefined: singular values nearly equal")]
    DegenerateMatrix,

    #[error("hyperbolicity lost at step {step} (growth {growth:.3e} < floor {floor:.3e})")]
    HyperbolicityLost { step: usize, growth: f64, floor: f64 },

    #[error("curve refinement exceeded the point budget of {cap}")]
    RefinementBudgetExceeded { cap: usize },

    #[error("tangency function has no sign change on the curve")]
    NoSignChange,

    #[error("tangency function has {} sign changes", brackets.len())]
    MultipleRoots { brackets: Vec<(f64, f64)> },

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("no trapping region: {0}")]
    NoTrappingRegion(String),

    #[error("operation not supported for this family: {0}")]
    Unsupported(String),

    #[error("estimator inequality violated: {0}")]
    InequalityViolation(String),

    #[error("all correlation lags are below the noise floor {floor:.3e}")]
    AllBelowFloor { floor: f64 },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
