//! Scenario execution: plant simulation, observer replay, observability and
//! gain-validity reports, and the batch driver.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use parcell::{
    io, observability_report, run_observer, simulate_with, validate_gain, DriveCycle,
    EstimateTrajectory, LipschitzRegion, ObservabilityReport, ObserverGain, PackModel, SimOptions,
    Trajectory, Verdict,
};
use serde::Serialize;

use crate::config::ScenarioConfig;
use crate::CliError;

/// SOC-error threshold defining the convergence time in summaries.
pub const CONVERGENCE_SOC_TOL: f64 = 0.01;

/// Sampling plan for the Lipschitz estimate in validity reports; fixed so
/// repeated runs produce identical numbers.
const LIPSCHITZ_SAMPLES: usize = 256;
const LIPSCHITZ_SEED: u64 = 7;

/// Branch-current statistics ignore samples where the pack is essentially
/// at rest.
const SHARE_CURRENT_FLOOR: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Clean,
    Warned,
}

impl Outcome {
    fn merge(self, other: Outcome) -> Outcome {
        if self == Outcome::Warned || other == Outcome::Warned {
            Outcome::Warned
        } else {
            Outcome::Clean
        }
    }
}

#[derive(Serialize)]
struct ComplexJson {
    re: f64,
    im: f64,
}

#[derive(Serialize)]
struct C2Json {
    eigenvalue: ComplexJson,
    rank: usize,
}

#[derive(Serialize)]
struct ObservabilityJson {
    point: Vec<f64>,
    c1_rank: usize,
    c2: Vec<C2Json>,
    lie_rank: usize,
    lie_singular_values: Vec<f64>,
    verdict: String,
    degeneracies: Vec<String>,
    notes: Vec<String>,
}

#[derive(Serialize)]
struct ValidityJson {
    impulse_observable: bool,
    error_dynamics_eigenvalues: Vec<ComplexJson>,
    error_dynamics_stable: bool,
    lipschitz_estimate: f64,
    spectral_margin: f64,
    eigenvalue_margin: f64,
    verdict: bool,
    reference_point: Vec<f64>,
    lipschitz_samples: usize,
    lipschitz_seed: u64,
}

fn verdict_str(v: Verdict) -> &'static str {
    match v {
        Verdict::Observable => "observable",
        Verdict::Unobservable => "unobservable",
        Verdict::Indeterminate => "indeterminate",
    }
}

fn observability_json(point: &DVector<f64>, r: &ObservabilityReport) -> ObservabilityJson {
    ObservabilityJson {
        point: point.iter().copied().collect(),
        c1_rank: r.c1_rank,
        c2: r
            .c2_results
            .iter()
            .map(|(eig, rank)| C2Json {
                eigenvalue: ComplexJson {
                    re: eig.re,
                    im: eig.im,
                },
                rank: *rank,
            })
            .collect(),
        lie_rank: r.lie_rank,
        lie_singular_values: r.lie_singular_values.iter().copied().collect(),
        verdict: verdict_str(r.verdict).to_string(),
        degeneracies: r.triggered_conditions.iter().map(|c| c.to_string()).collect(),
        notes: r.notes.clone(),
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Config(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    std::fs::write(path, text)
        .map_err(|e| CliError::Config(format!("writing {}: {e}", path.display())))?;
    Ok(())
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))
}

fn run_plant(cfg: &ScenarioConfig, model: &PackModel, cycle: &DriveCycle) -> Result<Trajectory, CliError> {
    let opts = SimOptions {
        hard_stop_on_soc: cfg.sim.hard_stop_on_soc,
    };
    Ok(simulate_with(
        model,
        &cfg.x0(),
        cycle,
        cfg.sim.dt_s,
        cfg.sim.t_end_s,
        opts,
    )?)
}

/// First time after which the worst per-cell SOC error stays below
/// [`CONVERGENCE_SOC_TOL`]; `None` when the error never settles.
pub fn convergence_time(traj: &Trajectory, est: &EstimateTrajectory) -> Option<f64> {
    let n = traj.states.first()?.x.len() / 2;
    let mut last_bad = None;
    for (k, (xh, s)) in est.xhat.iter().zip(&traj.states).enumerate() {
        let e = (0..n)
            .map(|c| (xh[2 * c] - s.x[2 * c]).abs())
            .fold(0.0f64, f64::max);
        if e >= CONVERGENCE_SOC_TOL {
            last_bad = Some(k);
        }
    }
    match last_bad {
        None => Some(0.0),
        Some(k) if k + 1 < est.times.len() => Some(est.times[k + 1]),
        Some(_) => None,
    }
}

fn print_share_stats(traj: &Trajectory) {
    let n = traj.states.first().map_or(0, |s| s.u.len());
    let mut abs_sums = vec![0.0f64; n];
    let mut active = 0usize;
    let mut one_sign = 0usize;
    for s in &traj.states {
        let i_total = s.i_total();
        if i_total.abs() <= SHARE_CURRENT_FLOOR {
            continue;
        }
        active += 1;
        for k in 0..n {
            abs_sums[k] += s.u[k].abs();
        }
        if s.u.iter().all(|&u| u * i_total > 0.0) {
            one_sign += 1;
        }
    }
    if active == 0 {
        println!("current share: pack at rest for the whole horizon");
        return;
    }
    let total: f64 = abs_sums.iter().sum();
    let shares: Vec<String> = abs_sums
        .iter()
        .enumerate()
        .map(|(k, &s)| format!("cell {} {:.1}%", k + 1, 100.0 * s / total))
        .collect();
    println!("current share (mean |I_k|): {}", shares.join(", "));
    println!(
        "samples with all branch currents matching the demand sign: {:.1}% of {} active",
        100.0 * one_sign as f64 / active as f64,
        active
    );
}

fn print_sim_summary(traj: &Trajectory) {
    let last = traj.states.last().expect("nonempty trajectory");
    let n = last.x.len() / 2;
    let socs: Vec<String> = (0..n)
        .map(|k| format!("z_{} = {:.4}", k + 1, last.x[2 * k]))
        .collect();
    println!("final SOC: {}", socs.join(", "));
    println!(
        "final terminal voltage: {:.4} V",
        traj.terminal_voltage.last().expect("nonempty trajectory")
    );
    if !traj.soc_events.is_empty() {
        println!(
            "note: SOC left [0, 1] {} time(s), first at t = {} s",
            traj.soc_events.len(),
            traj.soc_events[0].t
        );
    }
    print_share_stats(traj);
}

pub fn run_simulate(cfg: &ScenarioConfig, out_dir: &Path, quiet: bool) -> Result<Outcome, CliError> {
    ensure_dir(out_dir)?;
    let model = cfg.pack()?;
    let cycle = cfg.cycle()?;
    let traj = run_plant(cfg, &model, &cycle)?;

    io::write_drive_cycle(&cycle, out_dir.join("cycle.csv"))?;
    io::write_trajectory(&traj, out_dir.join("trajectory.csv"))?;

    if !quiet {
        print_sim_summary(&traj);
        println!("wrote {}", out_dir.join("trajectory.csv").display());
    }
    Ok(Outcome::Clean)
}

fn observability_screen(
    model: &PackModel,
    point: &DVector<f64>,
    out_dir: &Path,
) -> Result<(Outcome, ObservabilityReport), CliError> {
    let report = observability_report(
        model,
        point,
        parcell::ObservabilityTest::Both { max_order: 2 },
    )?;
    write_json(
        &observability_json(point, &report),
        &out_dir.join("observability.json"),
    )?;
    let outcome = if report.verdict == Verdict::Observable {
        Outcome::Clean
    } else {
        eprintln!(
            "warning: observability check at the initial estimate is {}{}",
            verdict_str(report.verdict),
            if report.triggered_conditions.is_empty() {
                String::new()
            } else {
                format!(
                    " ({})",
                    report
                        .triggered_conditions
                        .iter()
                        .map(|c| c.to_string())
                        .collect::<Vec<_>>()
                        .join("; ")
                )
            }
        );
        Outcome::Warned
    };
    Ok((outcome, report))
}

fn validity_screen(
    model: &PackModel,
    gain: &ObserverGain,
    x_ref: &DVector<f64>,
    out_dir: &Path,
) -> Result<Outcome, CliError> {
    let report = validate_gain(
        model,
        gain,
        x_ref,
        LipschitzRegion::default(),
        LIPSCHITZ_SAMPLES,
        LIPSCHITZ_SEED,
    )?;
    write_json(
        &ValidityJson {
            impulse_observable: report.impulse_obs,
            error_dynamics_eigenvalues: report
                .g_tilde_eigs
                .iter()
                .map(|e| ComplexJson { re: e.re, im: e.im })
                .collect(),
            error_dynamics_stable: report.g_tilde_stable,
            lipschitz_estimate: report.gamma_hat,
            spectral_margin: report.spectral_margin,
            eigenvalue_margin: report.eig_margin,
            verdict: report.verdict,
            reference_point: x_ref.iter().copied().collect(),
            lipschitz_samples: LIPSCHITZ_SAMPLES,
            lipschitz_seed: LIPSCHITZ_SEED,
        },
        &out_dir.join("validity.json"),
    )?;
    if report.verdict {
        Ok(Outcome::Clean)
    } else {
        eprintln!(
            "warning: gain validity verdict is negative \
             (impulse observable: {}, error dynamics stable: {}, spectral margin: {:.3}); \
             the spectral reading is conservative because the measured row leaves \
             sigma_min = 0 at omega = 0",
            report.impulse_obs, report.g_tilde_stable, report.spectral_margin
        );
        Ok(Outcome::Warned)
    }
}

pub fn run_estimate(
    cfg: &ScenarioConfig,
    out_dir: &Path,
    strict: bool,
    quiet: bool,
) -> Result<Outcome, CliError> {
    ensure_dir(out_dir)?;
    let model = cfg.pack()?;
    let gain = cfg.gain(&model)?;
    let xhat0 = cfg.xhat0()?;

    let (obs_outcome, _) = observability_screen(&model, &xhat0, out_dir)?;
    let val_outcome = validity_screen(&model, &gain, &xhat0, out_dir)?;
    let screened = obs_outcome.merge(val_outcome);
    if strict && screened == Outcome::Warned {
        eprintln!("strict mode: stopping before estimation because of the warnings above");
        return Ok(Outcome::Warned);
    }

    let cycle = cfg.cycle()?;
    let traj = run_plant(cfg, &model, &cycle)?;
    let est = run_observer(&model, &gain, &xhat0, &traj.measurements())?;

    io::write_drive_cycle(&cycle, out_dir.join("cycle.csv"))?;
    io::write_trajectory(&traj, out_dir.join("trajectory.csv"))?;
    io::write_estimates(&est, out_dir.join("estimates.csv"))?;

    if !quiet {
        let n = cfg.n();
        let last_t = traj.states.last().expect("nonempty trajectory");
        let last_e = est.xhat.last().expect("nonempty estimates");
        let soc_errors: Vec<String> = (0..n)
            .map(|k| format!("cell {} {:.2e}", k + 1, (last_e[2 * k] - last_t.x[2 * k]).abs()))
            .collect();
        let e_u_end = (est.uhat.last().expect("nonempty estimates") - &last_t.u).amax();

        match convergence_time(&traj, &est) {
            Some(t) => println!(
                "convergence time (SOC error below {CONVERGENCE_SOC_TOL} permanently): {t} s"
            ),
            None => println!("convergence time: not reached within the horizon"),
        }
        println!("final SOC errors: {}", soc_errors.join(", "));
        println!("final branch-current error: {e_u_end:.2e} A");
        if !est.bridged_gaps.is_empty() {
            println!("bridged measurement gaps: {}", est.bridged_gaps.len());
        }
        println!("wrote {}", out_dir.join("estimates.csv").display());
    }
    Ok(screened)
}

pub fn run_analyze(
    cfg: &ScenarioConfig,
    out_dir: &Path,
    at: Option<Vec<f64>>,
    max_order: usize,
) -> Result<Outcome, CliError> {
    ensure_dir(out_dir)?;
    let model = cfg.pack()?;
    let point = match at {
        Some(values) => {
            if values.len() != 2 * cfg.n() {
                return Err(CliError::Config(format!(
                    "--at needs 2n = {} comma-separated values (z_1,vc_1,...), got {}",
                    2 * cfg.n(),
                    values.len()
                )));
            }
            DVector::from_row_slice(&values)
        }
        None => cfg.x0(),
    };

    let report = observability_report(
        &model,
        &point,
        parcell::ObservabilityTest::Both { max_order },
    )?;
    write_json(
        &observability_json(&point, &report),
        &out_dir.join("observability.json"),
    )?;
    io::write_matrix_dump(&model, out_dir.join("matrices.txt"))?;

    println!("verdict: {}", verdict_str(report.verdict));
    println!(
        "descriptor rank test: [E; C] rank {} of {}, {} finite eigenvalue(s) checked",
        report.c1_rank,
        3 * cfg.n(),
        report.c2_results.len()
    );
    println!("Lie rank: {} of {}", report.lie_rank, 2 * cfg.n());
    for cond in &report.triggered_conditions {
        println!("degeneracy: {cond}");
    }
    for note in &report.notes {
        println!("note: {note}");
    }
    println!("wrote {}", out_dir.join("observability.json").display());

    Ok(if report.verdict == Verdict::Observable {
        Outcome::Clean
    } else {
        eprintln!("warning: pack is not observable at the analysis point");
        Outcome::Warned
    })
}

pub fn run_validate_gain(
    cfg: &ScenarioConfig,
    out_dir: &Path,
    sweep: Option<(f64, f64, usize)>,
) -> Result<Outcome, CliError> {
    ensure_dir(out_dir)?;
    let model = cfg.pack()?;
    let gain = cfg.gain(&model)?;
    let xhat0 = cfg.xhat0()?;

    let outcome = validity_screen(&model, &gain, &xhat0, out_dir)?;
    println!("wrote {}", out_dir.join("validity.json").display());

    if let Some((lo, hi, steps)) = sweep {
        let path = out_dir.join("gain_sweep.csv");
        sweep_scales(cfg, &model, &xhat0, lo, hi, steps, &path)?;
        println!("wrote {}", path.display());
    }
    Ok(outcome)
}

/// Scales the configured gain by log-spaced factors and records which
/// validity checks survive at each scale.
fn sweep_scales(
    cfg: &ScenarioConfig,
    model: &PackModel,
    x_ref: &DVector<f64>,
    lo: f64,
    hi: f64,
    steps: usize,
    path: &Path,
) -> Result<(), CliError> {
    if !(lo > 0.0) || !(hi > lo) || steps < 2 {
        return Err(CliError::Config(
            "--sweep needs LO:HI:STEPS with 0 < LO < HI and STEPS >= 2".into(),
        ));
    }
    let base = DVector::from_row_slice(&cfg.observer_required()?.gain);
    let mut out = String::from(
        "scale,gamma_hat,spectral_margin,impulse_observable,error_dynamics_stable,verdict\n",
    );
    let ratio = (hi / lo).ln();
    for k in 0..steps {
        let scale = lo * (ratio * k as f64 / (steps - 1) as f64).exp();
        let scaled = &base * scale;
        match ObserverGain::new(model, scaled) {
            Ok(gain) => {
                let report = validate_gain(
                    model,
                    &gain,
                    x_ref,
                    LipschitzRegion::default(),
                    LIPSCHITZ_SAMPLES,
                    LIPSCHITZ_SEED,
                )?;
                out.push_str(&format!(
                    "{scale},{},{},{},{},{}\n",
                    report.gamma_hat,
                    report.spectral_margin,
                    report.impulse_obs,
                    report.g_tilde_stable,
                    report.verdict
                ));
                println!(
                    "scale {scale:.4}: gamma {:.2}, margin {:.2}, stable {}, verdict {}",
                    report.gamma_hat, report.spectral_margin, report.g_tilde_stable, report.verdict
                );
            }
            Err(parcell::Error::SingularG22 { .. }) => {
                out.push_str(&format!("{scale},nan,nan,false,false,false\n"));
                println!("scale {scale:.4}: G22 singular, observer not defined");
            }
            Err(e) => return Err(e.into()),
        }
    }
    std::fs::write(path, out).map_err(|e| CliError::Config(format!("writing {}: {e}", path.display())))?;
    Ok(())
}

pub struct BatchItem {
    pub name: String,
    pub result: Result<Outcome, CliError>,
}

pub fn run_batch(configs: &[PathBuf], out_root: &Path, strict: bool) -> Vec<BatchItem> {
    use rayon::prelude::*;
    configs
        .par_iter()
        .map(|path| {
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string());
            let result = ScenarioConfig::load(path).and_then(|cfg| {
                let dir = out_root.join(&name);
                if cfg.observer.is_some() {
                    run_estimate(&cfg, &dir, strict, true)
                } else {
                    run_simulate(&cfg, &dir, true)
                }
            });
            BatchItem { name, result }
        })
        .collect()
}
