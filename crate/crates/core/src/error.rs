use alloc::boxed::Box;
use alloc::string::String;
use core::fmt;

use crate::es::EpochTrace;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Invalid shapes, hyperparameters or flags.
    Config(String),
    /// An operation was invoked out of order (e.g. backward on an empty tape).
    State(String),
    /// The input data cannot be processed (channel count, value range).
    Input(String),
    /// The optimization produced a non-finite value. Carries the trace up to
    /// the failing epoch.
    Diverged(Box<Diverged>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diverged {
    pub epoch: usize,
    pub what: &'static str,
    pub trace: EpochTrace,
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(m) => write!(f, "configuration error: {m}"),
            Error::State(m) => write!(f, "state error: {m}"),
            Error::Input(m) => write!(f, "input error: {m}"),
            Error::Diverged(d) => write!(
                f,
                "non-finite {} at epoch {} ({} trace rows recorded)",
                d.what,
                d.epoch,
                d.trace.rows.len()
            ),
        }
    }
}

impl core::error::Error for Error {}
