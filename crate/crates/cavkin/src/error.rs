//! Error types for model construction, bath decomposition, dynamics, and
//! the command-line front end.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model parameter: {0}")]
    BadParameter(String),
    #[error(
        "grid too small: edge amplitude {edge_amp:.2e} at extent {extent} (bound states must \
         vanish at the box edge)"
    )]
    GridTooSmall { edge_amp: f64, extent: f64 },
    #[error("no sub-barrier doublet: E0 = {e0:.6e}, E1 = {e1:.6e} (barrier top at 0)")]
    NoDoublet { e0: f64, e1: f64 },
    #[error("left/right labeling ambiguous: |<R>| = {mean_r:.2e} in the localized state")]
    AmbiguousLocalization { mean_r: f64 },
    #[error("composite dimension {dim} exceeds the limit {max}")]
    DimensionOverflow { dim: usize, max: usize },
    #[error("inconsistent composite layout: {0}")]
    InconsistentTarget(String),
}

#[derive(Debug, Error)]
pub enum BathError {
    #[error("invalid bath parameter: {0}")]
    BadParameter(String),
    #[error(
        "correlation expansion not certified: sup relative error {achieved:.2e} > {tol:.2e} \
         over the check window with {k} Pade terms (cap {k_max})"
    )]
    NotCertified {
        achieved: f64,
        tol: f64,
        k: usize,
        k_max: usize,
    },
    #[error("spectral density pole of multiplicity {multiplicity} at {at}; only simple and \
             double poles are supported")]
    HighOrderPole { at: String, multiplicity: usize },
}

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("invalid dynamics parameter: {0}")]
    BadParameter(String),
    #[error("hierarchy too large: {n_ados} auxiliary matrices of dimension {dim} exceed the \
             memory budget {budget_bytes} bytes")]
    HierarchyTooLarge {
        n_ados: usize,
        dim: usize,
        budget_bytes: usize,
    },
    #[error("time step underflow at t = {t}: step {dt} below minimum {min}")]
    StepUnderflow { t: f64, dt: f64, min: f64 },
    #[error("step budget exhausted at t = {t} after {steps} steps")]
    StepBudgetExhausted { t: f64, steps: usize },
    #[error("steady-state solve failed to converge: residual {residual:.2e} after {iters} \
             iterations")]
    SteadyStateDiverged { residual: f64, iters: usize },
    #[error("steady state is not unique: {0}")]
    DegenerateNullspace(String),
    #[error("propagation produced a non-finite value at t = {t}")]
    NonFinite { t: f64 },
    #[error("checkpoint rejected: {0}")]
    CheckpointMismatch(String),
    #[error("checkpoint io: {0}")]
    CheckpointIo(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum ClassicalError {
    #[error("invalid trajectory parameter: {0}")]
    BadParameter(String),
    #[error("trajectory {traj} diverged at t = {t:.3e} (|R| = {r:.3e})")]
    Unstable { traj: usize, t: f64, r: f64 },
    #[error("no reactive barrier frequency: {0}")]
    NoReactiveRoot(String),
    #[error("insufficient statistics: {0}")]
    InsufficientStatistics(String),
}

#[derive(Debug, Error)]
pub enum RateError {
    #[error("no rate plateau found: {0}")]
    NoPlateau(String),
    #[error("population series too short: {n} samples, need at least {min}")]
    TooShort { n: usize, min: usize },
    #[error("invalid rate input: {0}")]
    BadInput(String),
}

/// Orchestration failures, split by the exit code they map to: 1 for
/// anything wrong with the config or manifest, 2 when some sweep points
/// failed but partial results were written, 3 for everything else.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{failed} of {total} sweep points failed; partial results written")]
    Partial { failed: usize, total: usize },
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Partial { .. } => 2,
            CliError::Internal(_) => 3,
        }
    }
}
