//! Single-cell equivalent-circuit model.
//!
//! Each cell is a first-order ECM: series resistance `r1`, one RC pair
//! (`r2`, `c`), capacity `q`, and an OCV curve. With branch current `i_k`
//! (positive = charging) the cell obeys
//!
//! ```text
//! dz/dt   = i_k / q
//! dv_c/dt = -v_c / (r2 c) + i_k / c
//! y_k     = OCV(z) + v_c + r1 i_k
//! ```

use nalgebra::{Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::ocv::OcvCurve;

/// Constant parameters of one cell.
#[derive(Debug, Clone)]
pub struct CellParams {
    /// Series (ohmic) resistance [Ω].
    pub r1: f64,
    /// RC-pair resistance [Ω].
    pub r2: f64,
    /// RC-pair capacitance [F].
    pub c: f64,
    /// Capacity [A·s]. Configuration files take Ah and convert by 3600.
    pub q: f64,
    /// Open-circuit-voltage curve.
    pub ocv: OcvCurve,
}

impl CellParams {
    /// Validates that all electrical parameters are positive and finite.
    pub fn new(r1: f64, r2: f64, c: f64, q: f64, ocv: OcvCurve) -> Result<Self> {
        for (name, value) in [("r1", r1), ("r2", r2), ("c", c), ("q", q)] {
            if !value.is_finite() || value <= 0.0 {
                return Err(Error::InvalidParam { name, value });
            }
        }
        Ok(Self { r1, r2, c, q, ocv })
    }

    /// RC time constant r2·c [s].
    pub fn tau(&self) -> f64 {
        self.r2 * self.c
    }
}

/// Differential state of one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellState {
    /// State of charge, dimensionless in [0, 1] during normal operation.
    pub z: f64,
    /// RC-pair voltage [V].
    pub v_c: f64,
}

/// Per-cell state matrix and input vector of the linear ODE part:
/// `d/dt [z, v_c] = a [z, v_c] + b i_k`.
pub fn cell_matrices(p: &CellParams) -> (Matrix2<f64>, Vector2<f64>) {
    let a = Matrix2::new(0.0, 0.0, 0.0, -1.0 / (p.r2 * p.c));
    let b = Vector2::new(1.0 / p.q, 1.0 / p.c);
    (a, b)
}

/// Terminal voltage of one cell at the given state and branch current.
pub fn cell_output(p: &CellParams, s: &CellState, i_k: f64) -> f64 {
    p.ocv.value(s.z) + s.v_c + p.r1 * i_k
}
