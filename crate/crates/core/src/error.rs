use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("matrix must be square with at least 2 states, got {rows}x{cols}")]
    BadShape { rows: usize, cols: usize },

    #[error("rate q[{row}][{col}] = {value} is not finite")]
    NonFiniteRate { row: usize, col: usize, value: f64 },

    #[error("off-diagonal rate q[{row}][{col}] = {value} is negative")]
    NegativeRate { row: usize, col: usize, value: f64 },

    #[error("row {row} sums to {sum:e}, generator must be conservative")]
    NonConservative { row: usize, sum: f64 },

    #[error("generator is reducible: state {state} cannot reach every other state")]
    Reducible { state: usize },

    #[error("stationary system is numerically singular (residual {residual:e})")]
    SingularSystem { residual: f64 },

    #[error("grid end {needed} exceeds path horizon {horizon}")]
    HorizonExceeded { needed: f64, horizon: f64 },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("power iteration did not converge after {iterations} iterations (gap {gap:e})")]
    NoConvergence { iterations: usize, gap: f64 },

    #[error("eta_p = {0:e} is not positive; stepsize bound undefined")]
    NonPositiveEta(f64),

    #[error("condition min(-q_ii/beta_i) > 1 over beta_i > 0 is violated")]
    Star6Violated,

    #[error("chain is not reversible w.r.t. its stationary distribution")]
    NotReversible,

    #[error("test vector must be strictly positive")]
    NonPositiveVector,

    #[error("principal eigenvalue lambda_0 = {0:e} is not positive")]
    NonPositiveLambda0(f64),

    #[error("ground state is degenerate or not strictly positive; stepsize bound withheld")]
    DegenerateGroundState,

    #[error("cut points must be strictly increasing and below K = {k}")]
    NonMonotoneCuts { k: f64 },

    #[error("partition class {class} is empty")]
    EmptyClass { class: usize },

    #[error("lumped rate from class {from} to class {to} cannot be resolved")]
    UnresolvableBound { from: usize, to: usize },

    #[error("declared bound for class {from} -> {to} contradicts representative rate {observed}")]
    InconsistentBound { from: usize, to: usize, observed: f64 },

    #[error("matrix is not a nonsingular M-matrix")]
    NotMMatrix,

    #[error("non-finite state at step {step}")]
    NonFiniteState { step: u64 },

    #[error("parameter out of range: {0}")]
    ParameterOutOfRange(String),

    #[error("empirical measure has empty support")]
    EmptySupport,

    #[error("degenerate fitting window: {0}")]
    DegenerateWindow(String),
}
