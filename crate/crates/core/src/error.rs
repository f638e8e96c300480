use num_complex::Complex64;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("empty mesh: resolution {resolution} leaves no cell centers inside the domain")]
    EmptyMesh { resolution: f64 },
    #[error("domain not symmetric: mesh has no reflection map")]
    NotSymmetric,
    #[error("zero field has no symmetry class")]
    ZeroField,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("singular point: kernel evaluated at r = {0}")]
    SingularPoint(f64),
    #[error("argument {0} outside the admissible domain: {1}")]
    OutOfDomain(f64, &'static str),
    #[error("contrast too low: -4*pi*eps^2/|D| = {0} is below -1/e")]
    ContrastTooLow(f64),
    #[error("requested {requested} eigenpairs but operator has size {available}")]
    TooManyEigenpairs { requested: usize, available: usize },
    #[error("eigensolver failed: {0}")]
    Eigensolver(String),
    #[error("Newton iteration did not converge in {iterations} steps (last residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("spurious resonance {omega}: Im(omega) is not negative")]
    SpuriousResonance { omega: Complex64 },
    #[error("gauge mode orthogonal to state, reseed")]
    GaugeDegenerate,
    #[error("overlapping particles: {0}")]
    OverlappingParticles(String),
    #[error("symmetry check failed: {0}")]
    SymmetryCheck(String),
    #[error("no symmetry-breaking predicted: {0}")]
    NoSymmetryBreaking(String),
    #[error("branch terminated: {0}")]
    BranchTerminated(String),
    #[error("singular linear system")]
    SingularSystem,
    #[error("branch switch failed after sweeping the perturbation size")]
    BranchSwitchFailed,
}
