use std::fmt;

/// Constraints cannot be met, or a checked matching violates them.
pub const EXIT_INFEASIBLE: u8 = 2;
/// Bad input, bad configuration, or an I/O failure.
pub const EXIT_USAGE: u8 = 3;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn infeasible(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_INFEASIBLE,
            message: message.into(),
        }
    }

    pub fn io(what: impl fmt::Display, err: impl fmt::Display) -> Self {
        Failure::usage(format!("{what}: {err}"))
    }
}

impl From<genmatch::Error> for Failure {
    fn from(e: genmatch::Error) -> Self {
        use genmatch::Error::*;
        match e {
            InfeasibleConstraints(_) | NoFeasibleUnits { .. } | InfeasibleNeighbors { .. } | NoAdmissiblePartition => {
                Failure::infeasible(e.to_string())
            }
            _ => Failure::usage(e.to_string()),
        }
    }
}
