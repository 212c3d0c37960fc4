use std::fmt;

use endoscope_core::Error;

/// Error class, one exit status each.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Class {
    Failure = 1,
    Config = 2,
    Divergence = 3,
    NonConvergence = 4,
    Infeasible = 5,
    PortBusy = 6,
}

#[derive(Debug)]
pub struct CliError {
    pub class: Class,
    pub message: String,
}

impl CliError {
    pub fn new(class: Class, message: impl Into<String>) -> Self {
        Self { class, message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(Class::Config, message)
    }

    pub fn code(&self) -> u8 {
        self.class as u8
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let class = match e {
            Error::Divergence { .. } => Class::Divergence,
            Error::Io(_) => Class::Failure,
            _ => Class::Config,
        };
        Self::new(class, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new(Class::Failure, e.to_string())
    }
}
