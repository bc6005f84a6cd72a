//! Crate-wide error type.
//!
//! Every fallible operation reports one of these variants; none of them is
//! recoverable by retrying, they all indicate that the input data violates a
//! documented precondition or invariant.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum Error {
    #[error("incompatible variable lists: [{left}] vs [{right}]")]
    IncompatibleVariables { left: String, right: String },

    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("negative exponent on non-invertible variable `{0}`")]
    NonInvertibleVariable(String),

    #[error("exponent of `{var}` fell below the Laurent floor {floor}")]
    LaurentFloorExceeded { var: String, floor: i32 },

    #[error("h-power floor would drop below -2 (got {0})")]
    HbarFloorExceeded(i32),

    #[error("series expansion does not terminate at the given caps")]
    UnboundedExpansion,

    #[error("1-form is not closed: d_{i} g_{j} != d_{j} g_{i} at ({i},{j})")]
    NotClosed { i: usize, j: usize },

    #[error("no primitive exists within the coefficient ring")]
    NoPrimitive,

    #[error("exp argument has a nonzero constant term")]
    NonNilpotentConstantTerm,

    #[error("substitution image of `{0}` is not invertible")]
    NonInvertibleImage(String),

    #[error("rank mismatch: {0} symplectic pairs vs {1}")]
    RankMismatch(usize, usize),

    #[error("validity exhausted: hbar order {order} dropped below the minimal power {min_pow}")]
    ValidityExhausted { order: i32, min_pow: i32 },

    #[error("matrix is not in sp(2n): {0}")]
    NotSymplectic(String),

    #[error("zero element has no filtration degree")]
    ZeroElement,

    #[error("h^-1 part does not cancel when acting on the module element")]
    IllDefinedAction,

    #[error("matrix does not stabilise the annihilated Lagrangian span(y): {0}")]
    NotParabolic(String),

    #[error("module data is not integrable: {0}")]
    NotIntegrable(String),

    #[error("chart mismatch: expected [{expected}], got [{got}]")]
    ChartMismatch { expected: String, got: String },

    #[error("the order-1/order-2 transition system has no solution")]
    NoSolution,

    #[error("line bundle transitions are not a cocycle: {0}")]
    NotCocycle(String),

    #[error("Cech data violates the class invariants: {0}")]
    NotAClass(String),

    #[error("ideal does not cut a Lagrangian: {0}")]
    NotLagrangian(String),

    #[error("star product on chart `{0}` is not Weyl-normalized (alpha_1 != P/2)")]
    NotWeylNormalized(String),

    #[error("glued obstruction data violates the class invariants: {0}")]
    GluingDefect(String),

    #[error("scenario is missing data: {0}")]
    MissingData(String),

    #[error("invalid scenario field `{field}`: {message}")]
    InvalidScenario { field: String, message: String },

    #[error("parse error at byte {at}: {message}")]
    Parse { at: usize, message: String },
}

impl Error {
    pub fn invalid(field: &str, message: impl Into<String>) -> Self {
        Error::InvalidScenario {
            field: field.to_string(),
            message: message.into(),
        }
    }
}
