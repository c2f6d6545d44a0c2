use std::fmt;
use std::process::ExitCode;

/// Failure classes, each with its own exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration, flags or input files.
    Validation(String),
    /// A factorization or sampler block failed.
    Numerical(String),
    /// Some chains failed; the others were written.
    Partial(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Validation(_) => ExitCode::from(2),
            CliError::Numerical(_) => ExitCode::from(3),
            CliError::Partial(_) => ExitCode::from(4),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "validation error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Partial(m) => write!(f, "partial failure: {m}"),
        }
    }
}

impl From<structfactor::Error> for CliError {
    fn from(e: structfactor::Error) -> Self {
        use structfactor::Error as E;
        match e {
            E::Numerical { .. } | E::State(_) | E::Internal(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Wrap an I/O or parse failure with the offending path.
pub fn at_path<E: fmt::Display>(path: &std::path::Path) -> impl Fn(E) -> CliError + '_ {
    move |e| CliError::Validation(format!("{}: {e}", path.display()))
}
