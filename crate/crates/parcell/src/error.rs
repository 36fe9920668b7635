//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong while building models, integrating, or
/// analyzing observability.
#[derive(Debug, Error)]
pub enum Error {
    /// A physical parameter was zero, negative, or non-finite.
    #[error("parameter `{name}` must be positive and finite, got {value}")]
    InvalidParam { name: &'static str, value: f64 },

    /// An OCV curve failed the strict-monotonicity sweep.
    #[error("OCV curve is not strictly increasing near z = {z:.6}")]
    NonMonotoneOcv { z: f64 },

    /// An OCV curve's derivative provider disagreed with a central difference
    /// of its value provider.
    #[error(
        "OCV derivative provider inconsistent with values at z = {z:.6}: \
         analytic {analytic:.9}, finite difference {finite_diff:.9}"
    )]
    OcvDerivativeMismatch {
        z: f64,
        analytic: f64,
        finite_diff: f64,
    },

    /// A derivative order beyond what the curve representation supports.
    #[error("OCV derivative of order {order} unavailable (this curve supports up to {max})")]
    DerivativeUnavailable { order: usize, max: usize },

    /// Malformed curve table (too short, unsorted, or mismatched lengths).
    #[error("invalid OCV table: {0}")]
    InvalidTable(String),

    /// Parallel packs need at least two cells.
    #[error("pack must contain at least 2 cells, got {0}")]
    TooFewCells(usize),

    /// The algebraic block is singular, so branch currents are not determined.
    #[error("A22 is singular: |det| = {det:.3e} below bound {bound:.3e}")]
    SingularA22 { det: f64, bound: f64 },

    /// rank([A22; Hu]) < n, so the descriptor pair fails the impulse
    /// observability precondition.
    #[error("impulse observability precheck failed: rank([A22; Hu]) = {rank}, need {need}")]
    ImpulseUnobservable { rank: usize, need: usize },

    /// Per-cell terminal voltages disagree at an algebraic solution that
    /// should equalize them.
    #[error(
        "cell terminal voltages disagree at the algebraic solution: \
         spread {spread:.3e} V exceeds {tol:.1e} V"
    )]
    VoltageMismatch { spread: f64, tol: f64 },

    /// The drive cycle does not cover the requested horizon.
    #[error(
        "drive cycle covers [{cycle_start}, {cycle_end}] s but the run needs [{t0}, {t1}] s"
    )]
    CycleGap {
        cycle_start: f64,
        cycle_end: f64,
        t0: f64,
        t1: f64,
    },

    /// A time grid that must be strictly increasing is not.
    #[error("time samples must be strictly increasing (violated at index {index})")]
    NonMonotonicTime { index: usize },

    /// A state or output turned NaN/infinite during integration.
    #[error("non-finite {what} at t = {t} s")]
    NonFinite { what: &'static str, t: f64 },

    /// Simulation stopped because a SOC left [0, 1] under the hard-stop guard.
    #[error("SOC of cell {cell} left [0, 1] at t = {t} s (z = {z:.4}); hard stop requested")]
    SocOutOfRange { cell: usize, t: f64, z: f64 },

    /// The iterative eigenvalue solver did not converge.
    #[error("eigenvalue solver failed to converge")]
    EigSolverFailure,

    /// Requested Lie-derivative order above the supported maximum.
    #[error("Lie-derivative order {order} exceeds the supported maximum {max}")]
    OrderTooHigh { order: usize, max: usize },

    /// Pathology conditions are only tabulated for two-cell packs.
    #[error("pathology check supports n = 2 only, pack has n = {0}")]
    UnsupportedN(usize),

    /// Observer gain has the wrong length.
    #[error("observer gain must have 3n = {want} entries, got {got}")]
    GainSize { got: usize, want: usize },

    /// The observer's algebraic update matrix is singular for this gain.
    #[error("G22 = A22 - k_u*h_u is singular for this gain: |det| = {det:.3e}")]
    SingularG22 { det: f64 },

    /// Measurement stream is empty or otherwise unusable.
    #[error("measurement stream invalid: {0}")]
    BadMeasurements(String),

    /// CSV parse failure with file position.
    #[error("{path}:{line}: {msg}")]
    Csv {
        path: String,
        line: usize,
        msg: String,
    },

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
