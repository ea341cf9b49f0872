use std::path::PathBuf;

use thiserror::Error;

use crate::controller::ControlDecision;

pub type Result<T, E = AdpError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum AdpError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("linearization is singular at the operating point: {0}")]
    SingularLinearization(String),

    #[error(
        "synthesis overflow at level {level}: {size} matrices before pruning exceeds the budget of {budget}; increase epsilon or the budget"
    )]
    SynthesisOverflow {
        level: usize,
        size: usize,
        budget: usize,
    },

    #[error("enumeration of {sequences} control sequences exceeds the budget of {budget}")]
    EnumerationBudget { sequences: u128, budget: u128 },

    #[error("plant integration produced a non-finite state from {state:?}")]
    PlantBlowup { state: Vec<f64> },

    #[error("no feasible control at state {state:?}; least-violating level applies u = {:?}", fallback.u_applied.as_slice())]
    Infeasible {
        state: Vec<f64>,
        fallback: Box<ControlDecision>,
    },

    #[error("region is empty after sampling {samples} grid points")]
    EmptyRegion { samples: usize },

    #[error("set-point requires inflow {required:.6e} m^3/s but the pump delivers at most {available:.6e} m^3/s")]
    UnreachableSetpoint { required: f64, available: f64 },

    #[error("riccati set was synthesized for model {found}, controller expects {expected}")]
    FingerprintMismatch { expected: String, found: String },

    #[error("malformed riccati set file at line {line}: {reason}")]
    Format { line: usize, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl AdpError {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        AdpError::Invalid {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AdpError::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(AdpError::Dimension {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}
