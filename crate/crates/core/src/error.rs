use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The sup-norm of a trajectory passed the configured cap.
    #[error("blow-up at t = {time}: sup-norm {sup:e} exceeds cap {cap:e}")]
    Blowup { time: f64, sup: f64, cap: f64 },

    #[error("numeric error at t = {time}: {message}")]
    Numeric { time: f64, message: String },

    /// Loss of strict positivity, or a degenerate coupling state.
    #[error("degeneracy: {0}")]
    Degeneracy(String),

    #[error("positivity error: {0}")]
    Positivity(String),

    /// Ordered initial data lost their order (comparison invariant broken).
    #[error("ordering error at t = {time}: min(v - u) = {gap:e}")]
    Ordering { time: f64, gap: f64 },

    #[error("oscillation error: {0}")]
    Oscillation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Process exit code used by the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_) | Error::Config(_) | Error::Io(_) => 2,
            Error::Blowup { .. } | Error::Numeric { .. } => 3,
            Error::Degeneracy(_) | Error::Positivity(_) | Error::Ordering { .. } | Error::Oscillation(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Blowup { .. } => "blowup",
            Error::Numeric { .. } => "numeric",
            Error::Degeneracy(_) => "degeneracy",
            Error::Positivity(_) => "positivity",
            Error::Ordering { .. } => "ordering",
            Error::Oscillation(_) => "oscillation",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
        }
    }
}
