//! CSV ingestion/emission for cycles, trajectories, and estimates, plus the
//! plain-text matrix dump.
//!
//! All floats are written with Rust's shortest round-trip formatting, so
//! `load(write(x))` reproduces `x` bit for bit. Headers are validated
//! strictly and parse failures carry the file path and 1-based line number.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::observer::EstimateTrajectory;
use crate::pack::{PackModel, PackState};
use crate::sim::{DriveCycle, Interp, Trajectory};

fn csv_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Csv {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn parse_field(field: &str, path: &Path, line: usize) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| csv_err(path, line, format!("`{}` is not a number", field.trim())))
}

/// Reads non-empty lines with their 1-based numbers, tolerating CRLF.
fn read_rows(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r').to_string()))
        .filter(|(_, l)| !l.trim().is_empty())
        .collect())
}

fn check_header(path: &Path, line: usize, got: &str, expected: &[String]) -> Result<()> {
    let fields: Vec<&str> = got.split(',').map(str::trim).collect();
    for want in expected {
        if !fields.iter().any(|f| f == want) {
            return Err(csv_err(path, line, format!("missing column `{want}`")));
        }
    }
    if fields.len() != expected.len() {
        return Err(csv_err(
            path,
            line,
            format!(
                "expected {} columns ({}), got {}",
                expected.len(),
                expected.join(","),
                fields.len()
            ),
        ));
    }
    for (f, want) in fields.iter().zip(expected) {
        if f != want {
            return Err(csv_err(
                path,
                line,
                format!("expected column `{want}`, found `{f}`"),
            ));
        }
    }
    Ok(())
}

fn split_numeric_row(path: &Path, line: usize, row: &str, want: usize) -> Result<Vec<f64>> {
    let fields: Vec<&str> = row.split(',').collect();
    if fields.len() != want {
        return Err(csv_err(
            path,
            line,
            format!("expected {} fields, got {}", want, fields.len()),
        ));
    }
    fields
        .iter()
        .map(|f| parse_field(f, path, line))
        .collect()
}

/// Loads a `t_s,i_a` drive-cycle CSV with zero-order-hold interpolation.
pub fn load_drive_cycle(path: impl AsRef<Path>) -> Result<DriveCycle> {
    load_drive_cycle_with(path, Interp::Zoh)
}

/// [`load_drive_cycle`] with an explicit interpolation mode.
pub fn load_drive_cycle_with(path: impl AsRef<Path>, interp: Interp) -> Result<DriveCycle> {
    let path = path.as_ref();
    let rows = read_rows(path)?;
    let Some(((hline, header), data)) = rows.split_first() else {
        return Err(csv_err(path, 1, "empty file"));
    };
    check_header(path, *hline, header, &["t_s".into(), "i_a".into()])?;

    let mut t = Vec::with_capacity(data.len());
    let mut i = Vec::with_capacity(data.len());
    for (line, row) in data {
        let vals = split_numeric_row(path, *line, row, 2)?;
        t.push(vals[0]);
        i.push(vals[1]);
    }
    DriveCycle::from_columns(t, i, interp)
}

/// Writes a drive cycle as `t_s,i_a`.
pub fn write_drive_cycle(cycle: &DriveCycle, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "t_s,i_a")?;
    for (t, i) in cycle.times().iter().zip(cycle.currents()) {
        writeln!(f, "{t},{i}")?;
    }
    f.flush()?;
    Ok(())
}

fn trajectory_header(n: usize) -> Vec<String> {
    let mut h = vec!["t_s".to_string()];
    h.extend((1..=n).map(|k| format!("z_{k}")));
    h.extend((1..=n).map(|k| format!("vc_{k}")));
    h.extend((1..=n).map(|k| format!("i_{k}")));
    h.push("v_terminal".into());
    h
}

/// Writes a trajectory as `t_s,z_1..z_n,vc_1..vc_n,i_1..i_n,v_terminal`.
pub fn write_trajectory(traj: &Trajectory, path: impl AsRef<Path>) -> Result<()> {
    let n = traj.states.first().map_or(0, |s| s.u.len());
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "{}", trajectory_header(n).join(","))?;
    for (k, s) in traj.states.iter().enumerate() {
        let mut fields = Vec::with_capacity(3 * n + 2);
        fields.push(format!("{}", traj.times[k]));
        for c in 0..n {
            fields.push(format!("{}", s.z(c)));
        }
        for c in 0..n {
            fields.push(format!("{}", s.v_c(c)));
        }
        for c in 0..n {
            fields.push(format!("{}", s.u[c]));
        }
        fields.push(format!("{}", traj.terminal_voltage[k]));
        writeln!(f, "{}", fields.join(","))?;
    }
    f.flush()?;
    Ok(())
}

/// Loads a trajectory CSV, inferring the cell count from the header.
///
/// SOC-guard events are not serialized, so the loaded trajectory has none.
pub fn load_trajectory(path: impl AsRef<Path>) -> Result<Trajectory> {
    let path = path.as_ref();
    let rows = read_rows(path)?;
    let Some(((hline, header), data)) = rows.split_first() else {
        return Err(csv_err(path, 1, "empty file"));
    };
    let n = header
        .split(',')
        .filter(|f| f.trim().starts_with("z_"))
        .count();
    if n == 0 {
        return Err(csv_err(path, *hline, "missing column `z_1`"));
    }
    check_header(path, *hline, header, &trajectory_header(n))?;

    let mut traj = Trajectory {
        times: Vec::with_capacity(data.len()),
        states: Vec::with_capacity(data.len()),
        terminal_voltage: Vec::with_capacity(data.len()),
        soc_events: Vec::new(),
    };
    for (line, row) in data {
        let vals = split_numeric_row(path, *line, row, 3 * n + 2)?;
        let t = vals[0];
        if let Some(prev) = traj.times.last() {
            if t <= *prev {
                return Err(csv_err(path, *line, "timestamps must be strictly increasing"));
            }
        }
        let mut x = DVector::zeros(2 * n);
        for c in 0..n {
            x[2 * c] = vals[1 + c];
            x[2 * c + 1] = vals[1 + n + c];
        }
        let u = DVector::from_iterator(n, (0..n).map(|c| vals[1 + 2 * n + c]));
        traj.times.push(t);
        traj.states.push(PackState { x, u, t });
        traj.terminal_voltage.push(vals[3 * n + 1]);
    }
    Ok(traj)
}

fn estimate_header(n: usize) -> Vec<String> {
    let mut h = vec!["t_s".to_string()];
    h.extend((1..=n).map(|k| format!("z_hat_{k}")));
    h.extend((1..=n).map(|k| format!("vc_hat_{k}")));
    h.extend((1..=n).map(|k| format!("i_hat_{k}")));
    h.push("y_hat".into());
    h.push("innovation".into());
    h
}

/// Writes observer output as
/// `t_s,z_hat_*,vc_hat_*,i_hat_*,y_hat,innovation`.
pub fn write_estimates(est: &EstimateTrajectory, path: impl AsRef<Path>) -> Result<()> {
    let n = est.uhat.first().map_or(0, |u| u.len());
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "{}", estimate_header(n).join(","))?;
    for k in 0..est.len() {
        let mut fields = Vec::with_capacity(3 * n + 3);
        fields.push(format!("{}", est.times[k]));
        for c in 0..n {
            fields.push(format!("{}", est.xhat[k][2 * c]));
        }
        for c in 0..n {
            fields.push(format!("{}", est.xhat[k][2 * c + 1]));
        }
        for c in 0..n {
            fields.push(format!("{}", est.uhat[k][c]));
        }
        fields.push(format!("{}", est.yhat[k]));
        fields.push(format!("{}", est.innovation[k]));
        writeln!(f, "{}", fields.join(","))?;
    }
    f.flush()?;
    Ok(())
}

/// Loads an estimate CSV written by [`write_estimates`]. Bridged-gap flags
/// are not serialized, so the loaded trajectory has none.
pub fn load_estimates(path: impl AsRef<Path>) -> Result<EstimateTrajectory> {
    let path = path.as_ref();
    let rows = read_rows(path)?;
    let Some(((hline, header), data)) = rows.split_first() else {
        return Err(csv_err(path, 1, "empty file"));
    };
    let n = header
        .split(',')
        .filter(|f| f.trim().starts_with("z_hat_"))
        .count();
    if n == 0 {
        return Err(csv_err(path, *hline, "missing column `z_hat_1`"));
    }
    check_header(path, *hline, header, &estimate_header(n))?;

    let mut est = EstimateTrajectory {
        times: Vec::with_capacity(data.len()),
        xhat: Vec::with_capacity(data.len()),
        uhat: Vec::with_capacity(data.len()),
        yhat: Vec::with_capacity(data.len()),
        innovation: Vec::with_capacity(data.len()),
        bridged_gaps: Vec::new(),
    };
    for (line, row) in data {
        let vals = split_numeric_row(path, *line, row, 3 * n + 3)?;
        if let Some(prev) = est.times.last() {
            if vals[0] <= *prev {
                return Err(csv_err(path, *line, "timestamps must be strictly increasing"));
            }
        }
        let mut x = DVector::zeros(2 * n);
        for c in 0..n {
            x[2 * c] = vals[1 + c];
            x[2 * c + 1] = vals[1 + n + c];
        }
        est.times.push(vals[0]);
        est.xhat.push(x);
        est.uhat
            .push(DVector::from_iterator(n, (0..n).map(|c| vals[1 + 2 * n + c])));
        est.yhat.push(vals[3 * n + 1]);
        est.innovation.push(vals[3 * n + 2]);
    }
    Ok(est)
}

/// Writes the descriptor blocks to a plain-text file (row-major, full
/// precision), for debugging and external tooling.
pub fn write_matrix_dump(model: &PackModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, model.matrix_dump())?;
    Ok(())
}
