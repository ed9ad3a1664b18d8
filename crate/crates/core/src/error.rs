use thiserror::Error;

/// Everything that can go wrong inside the toolkit.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("initial condition has pair ({0}, {1}) at distance 1; no unique solution")]
    NonGenericInitial(usize, usize),
    #[error("degenerate boundary point at t = {time} for pair ({i}, {j}): relative velocity {rel_velocity:e}")]
    ProblematicBoundary { time: f64, i: usize, j: usize, rel_velocity: f64 },
    #[error("{count} pairs reached the boundary simultaneously at t = {time}")]
    SimultaneousEvents { time: f64, count: usize },
    #[error("event bracketing failed for pair ({i}, {j}) near t = {time}")]
    BracketingFailure { time: f64, i: usize, j: usize },
    #[error("more than {limit} transitions within one time unit (t = {time})")]
    ZenoGuardTripped { time: f64, limit: u64 },
    #[error("state is not an equilibrium: {0}")]
    NotEquilibrium(String),
    #[error("non-regular opinion function: {0}")]
    NonRegular(String),
    #[error("Picard contraction factor {factor} exceeds the limit on segment [{t0}, {t1}]")]
    ContractionViolated { t0: f64, t1: f64, factor: f64 },
    #[error("iterate left the regularity set at t = {time}: slope {slope} outside [{lower}, {upper}]")]
    PMembershipViolated { time: f64, slope: f64, lower: f64, upper: f64 },
    #[error("Picard iteration did not converge in {0} iterations")]
    NoConvergence(usize),
}

pub type Result<T> = std::result::Result<T, Error>;
