//! Scenario configuration: one TOML file describes the pack, the drive
//! cycle, the integration window, and (optionally) the observer.
//!
//! All physical quantities carry unit suffixes in their key names so a
//! config cannot silently mix amp-hours with amp-seconds.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use parcell::{CellParams, DriveCycle, Interp, ObserverGain, OcvCurve, PackModel};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(rename = "cell")]
    pub cells: Vec<CellConfig>,
    pub ocv: OcvConfig,
    pub cycle: CycleConfig,
    pub sim: SimConfig,
    #[serde(default)]
    pub observer: Option<ObserverConfig>,

    /// Directory of the config file, for resolving relative cycle paths.
    #[serde(skip)]
    base_dir: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellConfig {
    pub r1_ohm: f64,
    pub r2_ohm: f64,
    pub c_farad: f64,
    pub q_ah: f64,
    pub z0: f64,
    #[serde(default)]
    pub vc0_v: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum OcvConfig {
    /// Built-in 3.0 V to 4.2 V polynomial curve.
    Default,
    Poly { coeffs: Vec<f64> },
    Table { z: Vec<f64>, v_volt: Vec<f64> },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CycleConfig {
    #[serde(default)]
    pub file: Option<PathBuf>,
    /// Interpolation for file cycles: "zoh" (default) or "linear".
    #[serde(default)]
    pub interp: Option<String>,
    #[serde(default)]
    pub synthetic: Option<SyntheticConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub amplitude_a: f64,
    pub duration_s: f64,
    pub seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub dt_s: f64,
    pub t_end_s: f64,
    #[serde(default)]
    pub hard_stop_on_soc: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverConfig {
    /// Output-injection gain, 3n entries.
    pub gain: Vec<f64>,
    /// Initial SOC estimates, one per cell.
    pub z_hat0: Vec<f64>,
    /// Initial RC-voltage estimates, one per cell; defaults to zero.
    #[serde(default)]
    pub vc_hat0_v: Option<Vec<f64>>,
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: ScenarioConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_embedded(name: &str, text: &str) -> Result<Self, CliError> {
        let mut cfg: ScenarioConfig = toml::from_str(text)
            .map_err(|e| CliError::Config(format!("bundled scenario {name}: {e}")))?;
        cfg.base_dir = PathBuf::from(".");
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.cells.len() < 2 {
            return Err(CliError::Config(format!(
                "a parallel pack needs at least 2 [[cell]] tables, got {}",
                self.cells.len()
            )));
        }
        match (&self.cycle.file, &self.cycle.synthetic) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config(
                    "cycle: set either `file` or `[cycle.synthetic]`, not both".into(),
                ))
            }
            (None, None) => {
                return Err(CliError::Config(
                    "cycle: set `file` or `[cycle.synthetic]`".into(),
                ))
            }
            _ => {}
        }
        if self.cycle.interp.is_some() && self.cycle.file.is_none() {
            return Err(CliError::Config(
                "cycle.interp applies to file cycles only".into(),
            ));
        }
        if let Some(interp) = &self.cycle.interp {
            if interp != "zoh" && interp != "linear" {
                return Err(CliError::Config(format!(
                    "cycle.interp must be \"zoh\" or \"linear\", got {interp:?}"
                )));
            }
        }
        if let Some(obs) = &self.observer {
            let n = self.cells.len();
            if obs.z_hat0.len() != n {
                return Err(CliError::Config(format!(
                    "observer.z_hat0 needs one entry per cell ({n}), got {}",
                    obs.z_hat0.len()
                )));
            }
            if let Some(vc) = &obs.vc_hat0_v {
                if vc.len() != n {
                    return Err(CliError::Config(format!(
                        "observer.vc_hat0_v needs one entry per cell ({n}), got {}",
                        vc.len()
                    )));
                }
            }
            if obs.gain.len() != 3 * n {
                return Err(CliError::Config(format!(
                    "observer.gain needs 3n = {} entries for {n} cells, got {}",
                    3 * n,
                    obs.gain.len()
                )));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.cells.len()
    }

    fn curve(&self) -> Result<OcvCurve, CliError> {
        match &self.ocv {
            OcvConfig::Default => Ok(OcvCurve::default_nmc()),
            OcvConfig::Poly { coeffs } => OcvCurve::poly(coeffs).map_err(CliError::from),
            OcvConfig::Table { z, v_volt } => OcvCurve::table(z, v_volt).map_err(CliError::from),
        }
    }

    pub fn pack(&self) -> Result<PackModel, CliError> {
        let curve = self.curve()?;
        let cells = self
            .cells
            .iter()
            .map(|c| CellParams::new(c.r1_ohm, c.r2_ohm, c.c_farad, c.q_ah * 3600.0, curve.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PackModel::assemble(cells)?)
    }

    pub fn x0(&self) -> DVector<f64> {
        let mut x = DVector::zeros(2 * self.n());
        for (k, c) in self.cells.iter().enumerate() {
            x[2 * k] = c.z0;
            x[2 * k + 1] = c.vc0_v;
        }
        x
    }

    pub fn cycle(&self) -> Result<DriveCycle, CliError> {
        match (&self.cycle.file, &self.cycle.synthetic) {
            (Some(file), None) => {
                let path = if file.is_absolute() {
                    file.clone()
                } else {
                    self.base_dir.join(file)
                };
                let interp = match self.cycle.interp.as_deref() {
                    Some("linear") => Interp::Linear,
                    _ => Interp::Zoh,
                };
                Ok(parcell::io::load_drive_cycle_with(path, interp)?)
            }
            (None, Some(synth)) => Ok(parcell::synth_udds_like(
                synth.amplitude_a,
                synth.duration_s,
                synth.seed,
            )?),
            _ => unreachable!("validated to exactly one source"),
        }
    }

    pub fn observer_required(&self) -> Result<&ObserverConfig, CliError> {
        self.observer.as_ref().ok_or_else(|| {
            CliError::Config("this command needs an [observer] section in the config".into())
        })
    }

    pub fn gain(&self, model: &PackModel) -> Result<ObserverGain, CliError> {
        let obs = self.observer_required()?;
        Ok(ObserverGain::new(
            model,
            DVector::from_row_slice(&obs.gain),
        )?)
    }

    pub fn xhat0(&self) -> Result<DVector<f64>, CliError> {
        let obs = self.observer_required()?;
        let n = self.n();
        let mut x = DVector::zeros(2 * n);
        for k in 0..n {
            x[2 * k] = obs.z_hat0[k];
            x[2 * k + 1] = obs.vc_hat0_v.as_ref().map_or(0.0, |v| v[k]);
        }
        Ok(x)
    }
}
