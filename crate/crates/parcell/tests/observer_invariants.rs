//! Long-horizon invariants of the observer on the reference estimation
//! scenario: Lyapunov-level energy decay and the algebraic error bound that
//! ties the branch-current estimates to the state error.

use nalgebra::{DMatrix, DVector};
use parcell::{
    run_observer, simulate, synth_udds_like, CellParams, ObserverGain, OcvCurve, PackModel,
};

fn reference_pack() -> PackModel {
    let curve = OcvCurve::default_nmc();
    PackModel::assemble(vec![
        CellParams::new(0.0025, 0.004, 1500.0, 2.3 * 3600.0, curve.clone()).unwrap(),
        CellParams::new(0.0015, 0.0035, 2000.0, 2.0 * 3600.0, curve).unwrap(),
    ])
    .unwrap()
}

fn reference_gain(model: &PackModel) -> ObserverGain {
    ObserverGain::new(
        model,
        DVector::from_row_slice(&[-30.0, -30.0, -20.0, 2.0, 4.0, -20.0]),
    )
    .unwrap()
}

struct ScenarioRun {
    times: Vec<f64>,
    e_x: Vec<DVector<f64>>,
    e_u: Vec<DVector<f64>>,
    z_range: (f64, f64),
}

fn run_reference_scenario() -> ScenarioRun {
    let p = reference_pack();
    let gain = reference_gain(&p);
    let cycle = synth_udds_like(20.0, 1400.0, 42).unwrap();
    let x0 = DVector::from_row_slice(&[0.40, 0.0, 0.50, 0.0]);
    let xhat0 = DVector::from_row_slice(&[0.55, 0.0, 0.60, 0.0]);

    let traj = simulate(&p, &x0, &cycle, 0.1, 1400.0).unwrap();
    let est = run_observer(&p, &gain, &xhat0, &traj.measurements()).unwrap();

    let mut z_lo = f64::INFINITY;
    let mut z_hi = f64::NEG_INFINITY;
    let mut e_x = Vec::with_capacity(est.xhat.len());
    let mut e_u = Vec::with_capacity(est.uhat.len());
    for ((xh, uh), s) in est.xhat.iter().zip(&est.uhat).zip(&traj.states) {
        for k in 0..2 {
            z_lo = z_lo.min(s.x[2 * k]).min(xh[2 * k]);
            z_hi = z_hi.max(s.x[2 * k]).max(xh[2 * k]);
        }
        e_x.push(xh - &s.x);
        e_u.push(uh - &s.u);
    }
    ScenarioRun {
        times: est.times.clone(),
        e_x,
        e_u,
        z_range: (z_lo, z_hi),
    }
}

#[test]
fn error_energy_never_rises_over_late_windows() {
    let run = run_reference_scenario();
    let v: Vec<f64> = run.e_x.iter().map(|e| e.dot(e)).collect();

    // 50 s window at the 0.1 s sample spacing
    let window = 500;
    let mut checked = 0usize;
    for k in 0..v.len() {
        if run.times[k] < 200.0 || k + window >= v.len() {
            continue;
        }
        // the + 1e-16 absorbs roundoff chatter once the energy sits at the
        // arithmetic noise floor
        assert!(
            v[k + window] <= v[k] + 1e-16,
            "energy rose over [{}, {}]: {} -> {}",
            run.times[k],
            run.times[k + window],
            v[k],
            v[k + window]
        );
        checked += 1;
    }
    assert!(checked > 10_000, "expected dense window coverage, got {checked}");
}

#[test]
fn branch_current_error_is_slaved_to_state_error() {
    let p = reference_pack();
    let gain = reference_gain(&p);
    let run = run_reference_scenario();

    // e_u = G22^-1 [ (-A21 + k_u h_x) e_x - dtheta + k_u dOCV_1 ], so a
    // Lipschitz bound on the OCV terms gives |e_u| <= c |e_x| pointwise
    let g22_inv = gain
        .g22()
        .clone()
        .lu()
        .try_inverse()
        .expect("G22 is nonsingular for the reference gain");
    let sigma_max = |m: &DMatrix<f64>| m.clone().svd(false, false).singular_values.max();

    let hx_row = p.hx().row(0).transpose();
    let linear_part = &g22_inv * (-p.a21() + gain.k_u() * hx_row.transpose());

    let (z_lo, z_hi) = run.z_range;
    let curve = OcvCurve::default_nmc();
    let max_slope = (0..=2000)
        .map(|i| {
            let z = (z_lo - 0.02) + (z_hi - z_lo + 0.04) * i as f64 / 2000.0;
            curve.slope(z).abs()
        })
        .fold(0.0f64, f64::max);

    let c = sigma_max(&linear_part)
        + sigma_max(&g22_inv) * max_slope * (2f64.sqrt() + gain.k_u().norm());

    for (k, (ex, eu)) in run.e_x.iter().zip(&run.e_u).enumerate() {
        assert!(
            eu.amax() <= c * ex.norm() + 1e-6,
            "sample {k}: |e_u| = {} exceeds bound {} from |e_x| = {}",
            eu.amax(),
            c * ex.norm() + 1e-6,
            ex.norm()
        );
    }

    let ex_end = run.e_x.last().unwrap().norm();
    let eu_end = run.e_u.last().unwrap().amax();
    assert!(eu_end <= c * ex_end + 1e-6);
}
