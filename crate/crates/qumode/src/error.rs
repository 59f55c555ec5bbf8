//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("mode index {index} out of range for {num_modes} modes")]
    ModeOutOfRange { index: usize, num_modes: usize },

    #[error("target modes must be distinct: {0:?}")]
    DuplicateTargets(Vec<usize>),

    #[error("operator arity {arity} does not match {targets} target mode(s)")]
    ArityMismatch { arity: usize, targets: usize },

    #[error("cutoff mismatch: operator has {op}, state has {state}")]
    CutoffMismatch { op: usize, state: usize },

    #[error("mode count mismatch: expected {expected}, got {got}")]
    ModeCountMismatch { expected: usize, got: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("gate {index} ({kind}): {source}")]
    Gate {
        index: usize,
        kind: String,
        #[source]
        source: Box<Error>,
    },

    #[error("gate parameter error for {kind}: {msg}")]
    GateParams { kind: String, msg: String },

    #[error("circuit requires a lattice model context but none was attached")]
    MissingModel,

    #[error("oracle dimension {dim} exceeds cap {cap}")]
    OracleCapExceeded { dim: usize, cap: usize },

    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("frequency {omega} coincides with spectrum energy (pole on the real axis)")]
    PoleOnRealAxis { omega: f64 },

    #[error("time grid does not divide evenly: T = {t_total}, dt = {dt}")]
    NonIntegerSteps { t_total: f64, dt: f64 },

    #[error("time ordering violated: {0}")]
    TimeOrdering(String),

    #[error("scan has fewer than 3 grid points")]
    ScanTooShort,

    #[error("reconstruction cascade degenerate at photon number {n}: |C| = {magnitude:.3e}")]
    CascadeDegenerate { n: usize, magnitude: f64 },

    #[error("inconsistent probabilities: {0}")]
    InconsistentProbabilities(String),

    #[error("missing measurement setting {setting} for mode {mode}")]
    MissingSetting { mode: usize, setting: String },

    #[error("phase undefined: |C(t_a) C(t_b)| = {product:.3e} below floor for outcome {outcome:?}")]
    PhaseUndefined { outcome: Vec<usize>, product: f64 },

    #[error("|cos| estimate {value:.6} exceeds 1 beyond tolerance {tol:.1e}")]
    CosOutOfRange { value: f64, tol: f64 },

    #[error("fringe visibility {visibility:.3e} below threshold {threshold:.3e}")]
    LowVisibility { visibility: f64, threshold: f64 },

    #[error("zero-probability measurement outcome ({0})")]
    ZeroProbabilityOutcome(String),

    #[error("node {0} is not available for measurement")]
    NodeUnavailable(usize),

    #[error("target outcome n = {n} unreachable: probability {probability:.3e} below floor")]
    OutcomeUnreachable { n: usize, probability: f64 },

    #[error("repeat-until-success budget of {budget} attempts exhausted after {successes} successes")]
    BudgetExhausted { budget: usize, successes: usize },

    #[error("chain too short: length {length}, need at least {need}")]
    ChainTooShort { length: usize, need: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("format error in {what}: {msg}")]
    Format { what: &'static str, msg: String },
}
