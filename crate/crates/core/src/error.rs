use alloc::string::String;

/// Errors raised by the model builders, channel generators and optimizers.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid request profile: {0}")]
    InvalidProfile(String),

    #[error("user index {user} out of range 1..={users}")]
    UserOutOfRange { user: usize, users: usize },

    #[error("user set {0} is not a message group of this structure")]
    UnknownGroup(String),

    #[error("user set {0} is not a layer of this structure")]
    UnknownLayer(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("covariance model is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("point is outside the domain of constraint {constraint}")]
    Domain { constraint: usize },

    #[error("convex program has no strictly feasible point (phase-I optimum {phase1_value:e})")]
    Infeasible { phase1_value: f64 },

    #[error("Newton budget exhausted after {iterations} iterations")]
    MaxIter { iterations: usize },

    #[error("linear system is numerically singular")]
    Singular,

    #[error("subproblem failed at outer iteration {iteration}: {source}")]
    Subproblem {
        iteration: usize,
        #[source]
        source: alloc::boxed::Box<Error>,
    },

    #[error("penalty slack did not vanish: max normalized slack {slack:e} after {rounds} penalty rounds")]
    SlackNotVanishing { slack: f64, rounds: usize },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

impl Error {
    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        Error::Subproblem {
            iteration,
            source: alloc::boxed::Box::new(self),
        }
    }
}
