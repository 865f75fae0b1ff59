use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("domain mismatch: {left:?} vs {right:?}")]
    DomainMismatch { left: Vec<usize>, right: Vec<usize> },

    #[error("field has {got} values, domain needs {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("non-finite value at voxel {index}")]
    NonFinite { index: usize },

    #[error("statistics need at least two voxels")]
    DegenerateDomain,

    #[error("transform is not the identity on the boundary (voxel {index})")]
    BoundaryNotIdentity { index: usize },

    #[error("target Jacobian determinant is not strictly positive (min {min})")]
    NonPositiveJd { min: f64 },

    #[error("target Jacobian mass mismatch: mean {mean}, expected 1")]
    MassMismatch { mean: f64 },

    #[error("target curl is not divergence free (max |div| {max_div})")]
    NonSolenoidalCurl { max_div: f64 },

    #[error("transform folds: min Jacobian determinant {min_jd}")]
    FoldingDetected { min_jd: f64 },

    #[error("optimisation stalled after {iterations} iterations (objective {objective}, residual {residual})")]
    Stalled {
        iterations: usize,
        objective: f64,
        residual: f64,
    },

    #[error("mutual information of the unregistered pair is zero")]
    ZeroBaselineMi,

    #[error("cohort is empty")]
    EmptyCohort,

    #[error("invalid options: {0}")]
    InvalidOptions(String),
}
