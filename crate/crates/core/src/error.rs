use thiserror::Error;

/// Errors raised by the numerical pipeline.
///
/// Variants named `Inconsistent*` mean that a computed object contradicts a
/// theorem that should hold under the verified hypotheses. They are never
/// silently accepted.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("empty expression")]
    EmptyExpression,

    #[error("invalid Nagumo function: phi({at}) = {value} is not positive")]
    InvalidNagumo { at: f64, value: f64 },
    #[error("Nagumo condition not satisfied ({0})")]
    NagumoNotSatisfied(String),

    #[error("invalid field: {0}")]
    InvalidField(String),
    #[error("invalid curve: {0}")]
    InvalidCurve(String),
    #[error("period mismatch: curve period {curve} vs field period {field}")]
    PeriodMismatch { curve: f64, field: f64 },
    #[error("inconsistent segment derivatives on segment {segment} at t = {t}: {what} differs by {diff:e}")]
    InconsistentSegment {
        segment: usize,
        t: f64,
        what: &'static str,
        diff: f64,
    },

    #[error("integration blew up at t = {t} (|u|+|v| = {size:e})")]
    BlowUp { t: f64, size: f64 },
    #[error("non-finite field value at t = {t}, u = {u}, v = {v}")]
    NonFinite { t: f64, u: f64, v: f64 },
    #[error("invalid step size {0}")]
    InvalidStep(f64),
    #[error("time {t} outside the sampled range [{start}, {end}]")]
    OutOfRange { t: f64, start: f64, end: f64 },

    #[error("no in-band solution found in bracket [{v_lo}, {v_hi}] (not a proof of nonexistence)")]
    NoSolutionFound { v_lo: f64, v_hi: f64 },
    #[error("miss function is not finite at bracket endpoint v0 = {v0}")]
    NonFiniteMiss { v0: f64 },

    #[error("no periodic orbit found in the band: internal inconsistency, refine the grid")]
    NoPeriodicOrbit,

    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("internal inconsistency: {0}")]
    Inconsistent(String),
    #[error("not converged at horizon N = {horizon}: d = {profile:?}")]
    NotConverged { horizon: usize, profile: Vec<f64> },
    #[error("bands are not neighboring: {0}")]
    NonNeighboring(String),
}

pub type Result<T> = std::result::Result<T, Error>;
