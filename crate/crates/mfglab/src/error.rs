//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("exact assignment limited to {cap} particles, got {n}")]
    AssignmentTooLarge { n: usize, cap: usize },
    #[error("synchronous coupling requires equal support sizes ({0} vs {1})")]
    UnequalSupportSize(usize, usize),
    #[error("invalid model parameters: {0}")]
    InvalidParameters(String),
    #[error("Newton iteration for the Legendre transform diverged: {0}")]
    NewtonDiverged(String),
    #[error("all sampled pairs were degenerate (zero displacement)")]
    DegeneratePair,
    #[error("beta > 0 requires third-derivative kernels on the model")]
    MissingThirdDerivatives,
    #[error("cloud is missing companions: {0}")]
    MissingCompanions(String),
    #[error("measure fixed point did not converge: last residual {last_residual:e} after {iterations} iterations")]
    FixedPointNotConverged {
        last_residual: f64,
        iterations: usize,
        history: Vec<f64>,
    },
    #[error("two-point BVP solve did not converge: {0}")]
    BvpNotConverged(String),
    #[error("mass leak: {leaked:.4}% of mass left the inner window")]
    MassLeak { leaked: f64 },
    #[error("point or time outside the solver grid: {0}")]
    OutsideGrid(String),
    #[error("ergodic constant needs horizon >= 2, got {0}")]
    HorizonTooShort(f64),
    #[error("trajectory bundles are misaligned: {0}")]
    MisalignedBundles(String),
    #[error("fit window holds {0} nodes, need at least 6")]
    WindowTooShort(usize),
    #[error("ergodic studies are incompatible: {0}")]
    IncompatibleStudies(String),
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("artifact corrupt: {0}")]
    ArtifactCorrupt(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}
