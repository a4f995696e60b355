use alloc::string::String;
use core::fmt;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Block shapes do not conform. The payload names the offending block.
    DimensionMismatch(String),
    NonSquare { rows: usize, cols: usize },
    NotSymmetric { asymmetry: f64 },
    NoConvergence,
    /// A matrix that must be positive semidefinite has a negative eigenvalue.
    NotPsd { min_eigenvalue: f64 },
    NotDiagonal,
    /// A non-finite value was supplied or produced.
    NonFinite(&'static str),
    InvalidArgument(String),
    /// The interior-point method stalled or hit its iteration cap without a
    /// usable point or an infeasibility certificate.
    SolverNumericalFailure(String),
    FixedPointDiverged { residual: f64, iterations: usize },
    /// The plant multiplier violates `M_vv ⪰ 0`.
    MvvNotPsd { min_eigenvalue: f64 },
    SingularDpsi1,
    SingularDpsi2,
    SingularPartition { condition: f64 },
    SingularIminusRS { condition: f64 },
    IllConditionedUV { cond_u: f64, cond_v: f64 },
    /// The convexified synthesis set is empty for this plant and supply rate.
    InfeasibleConstraintSet,
    /// The fixed storage certificate admits no controller.
    InfeasibleForCertificate,
    /// Both projection stages of the training loop failed.
    ProjectionInfeasible(String),
    NonFiniteState { step: usize },
    ZeroInputEnergy,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch(what) => write!(f, "dimension mismatch: {what}"),
            Error::NonSquare { rows, cols } => write!(f, "matrix is not square ({rows}x{cols})"),
            Error::NotSymmetric { asymmetry } => {
                write!(f, "matrix is not symmetric (max asymmetry {asymmetry:e})")
            }
            Error::NoConvergence => write!(f, "eigenvalue iteration did not converge"),
            Error::NotPsd { min_eigenvalue } => {
                write!(f, "matrix is not PSD (min eigenvalue {min_eigenvalue:e})")
            }
            Error::NotDiagonal => write!(f, "matrix is not diagonal"),
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::InvalidArgument(what) => write!(f, "invalid argument: {what}"),
            Error::SolverNumericalFailure(why) => write!(f, "SDP solver failure: {why}"),
            Error::FixedPointDiverged { residual, iterations } => write!(
                f,
                "implicit layer fixed point diverged (residual {residual:e} after {iterations} iterations)"
            ),
            Error::MvvNotPsd { min_eigenvalue } => write!(
                f,
                "plant multiplier M_vv is not PSD (min eigenvalue {min_eigenvalue:e})"
            ),
            Error::SingularDpsi1 => write!(f, "D_psi1 is singular; filter has no proper inverse"),
            Error::SingularDpsi2 => write!(f, "D_psi2 is singular or ill-conditioned"),
            Error::SingularPartition { condition } => {
                write!(f, "storage partition I - RS is singular (cond {condition:e})")
            }
            Error::SingularIminusRS { condition } => {
                write!(f, "I - RS is singular (cond {condition:e})")
            }
            Error::IllConditionedUV { cond_u, cond_v } => {
                write!(f, "U/V factors ill-conditioned (cond U {cond_u:e}, cond V {cond_v:e})")
            }
            Error::InfeasibleConstraintSet => write!(f, "synthesis constraint set is empty"),
            Error::InfeasibleForCertificate => {
                write!(f, "no controller is certified by the given storage and multiplier")
            }
            Error::ProjectionInfeasible(why) => write!(f, "projection infeasible: {why}"),
            Error::NonFiniteState { step } => write!(f, "state became non-finite at step {step}"),
            Error::ZeroInputEnergy => write!(f, "disturbance signal has zero energy"),
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn mismatch(what: &str) -> Error {
    Error::DimensionMismatch(String::from(what))
}
