use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("budget error: {0}")]
    Budget(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("ordering error: {0}")]
    Ordering(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("schedule error: {0}")]
    Schedule(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad inputs rather than by the computation.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Numeric(_) | Error::Io(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
