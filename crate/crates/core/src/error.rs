use thiserror::Error;

/// Errors raised by the model kernels, the fitting machinery and the I/O layer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("argument {name} = {value} is outside the open unit interval")]
    UnitInterval { name: &'static str, value: f64 },

    #[error("parameter {value} is outside the admissible range of {family}")]
    ParameterRange { family: String, value: f64 },

    #[error("Kendall tau {tau} is not admissible for {family}")]
    TauRange { family: String, tau: f64 },

    #[error("invalid margin: {0}")]
    Margin(String),

    #[error("invalid study record: {0}")]
    Study(String),

    #[error("{0}")]
    InvalidInput(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn check_open_unit(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(Error::UnitInterval { name, value })
    }
}
