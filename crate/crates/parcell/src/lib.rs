//! Simulation, observability analysis, and state estimation for packs of
//! parallel-connected lithium-ion cells.
//!
//! A pack of `n` cells wired in parallel shares one terminal pair, so the
//! per-cell branch currents are not free inputs: they are pinned algebraically
//! by the equal-terminal-voltage condition and by Kirchhoff's current law.
//! Stacking each cell's two differential states (SOC `z_k` and RC-pair voltage
//! `v_{c,k}`) with the `n` branch currents gives a semi-explicit
//! differential-algebraic system
//!
//! ```text
//! E ẇ = A w + θ(w),    y = H w + φ(w),    w = [x; u] ∈ R^{3n}
//! ```
//!
//! with `E = blockdiag(I_{2n}, 0_n)`. Because the algebraic block `A22` is
//! nonsingular for positive resistances, the branch currents have an explicit
//! solution and the pack reduces to an ordinary ODE in `x` alone.
//!
//! The crate provides:
//!
//! - [`ocv`]: open-circuit-voltage curves (polynomial or monotone table) with
//!   analytic derivatives,
//! - [`cell`] and [`pack`]: per-cell parameters and the assembled descriptor
//!   model with its index-1 reduction,
//! - [`sim`]: fixed-step RK4 simulation over drive cycles, plus a seeded
//!   synthetic cycle generator,
//! - [`observability`]: the linearized descriptor-pencil rank test and the
//!   nonlinear Lie-derivative rank test, with pathological-parameter checks,
//! - [`observer`]: a terminal-voltage injection observer for online SOC
//!   estimation, with gain-validity diagnostics,
//! - [`io`]: CSV import/export for cycles, trajectories, and estimates.

pub mod cell;
pub mod error;
pub mod io;
pub mod observability;
pub mod observer;
pub mod ocv;
pub mod pack;
pub mod sim;

mod jet;

pub use cell::{cell_matrices, cell_output, CellParams, CellState};
pub use error::{Error, Result};
pub use observability::{
    check_c_observability, check_pathologies, lie_observability_matrix,
    lie_observability_matrix_with, lie_rank_tolerance, linearize, numerical_rank,
    observability_report,
    CObservability, DerivativeMethod, LinearizedSystem, ObservabilityReport, ObservabilityTest,
    PathologicalCondition, Verdict,
};
pub use observer::{
    build_error_matrices, check_spectral_condition, default_omega_grid, error_dynamics_jacobian,
    estimate_lipschitz, observer_step, run_observer, validate_gain, ErrorMatrices,
    EstimateTrajectory, GainValidityReport, LipschitzRegion, ObserverGain,
};
pub use ocv::OcvCurve;
pub use pack::{PackModel, PackState};
pub use sim::{
    simulate, simulate_with, synth_udds_like, DriveCycle, Interp, SimOptions, SocEvent,
    Trajectory,
};
