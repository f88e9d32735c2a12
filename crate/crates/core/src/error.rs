use thiserror::Error;

/// Errors raised by the simulator.
///
/// The variants map onto the CLI exit codes: configuration problems (2),
/// numerical guard violations (3) and analysis failures (4).
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("step-size guard violated: dt = {dt:.3e} s exceeds limit {limit:.3e} s{}", context_suffix(.context))]
    StepSize {
        dt: f64,
        limit: f64,
        context: Option<String>,
    },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("analysis error: {0}")]
    Analysis(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml error: {0}")]
    Toml(#[from] toml::de::Error),
}

fn context_suffix(context: &Option<String>) -> String {
    match context {
        Some(c) => format!(" ({c})"),
        None => String::new(),
    }
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn analysis(msg: impl Into<String>) -> Self {
        Error::Analysis(msg.into())
    }

    /// Attach event context to a step-size error; other variants pass through.
    pub fn with_context(self, ctx: impl Into<String>) -> Self {
        match self {
            Error::StepSize { dt, limit, .. } => Error::StepSize {
                dt,
                limit,
                context: Some(ctx.into()),
            },
            other => other,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Usage(_) | Error::Toml(_) | Error::Json(_) | Error::Io(_) => 2,
            Error::StepSize { .. } => 3,
            Error::Analysis(_) | Error::Calibration(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
