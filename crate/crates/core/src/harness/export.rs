//! CSV export of trajectories.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::HarnessError;
use crate::bspline::BSplineTrajectory;

/// Writes `t,x,y,z,vx,vy,vz` rows at uniform times spanning the whole
/// domain, at least `sample_rate` rows per second. Returns the row count.
pub fn export_trajectory(
    traj: &BSplineTrajectory,
    sample_rate: f64,
    path: impl AsRef<Path>,
) -> Result<usize, HarnessError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    write_trajectory_csv(traj, sample_rate, BufWriter::new(file)).map_err(|e| match e {
        HarnessError::Io { source, .. } => HarnessError::io(path, source),
        other => other,
    })
}

pub fn write_trajectory_csv<W: Write>(
    traj: &BSplineTrajectory,
    sample_rate: f64,
    mut out: W,
) -> Result<usize, HarnessError> {
    if !(sample_rate > 0.0 && sample_rate.is_finite()) {
        return Err(HarnessError::Config(format!("sample rate must be positive, got {sample_rate}")));
    }
    let io = |e| HarnessError::io("<trajectory>", e);
    let duration = traj.duration();
    let rows = (duration * sample_rate - 1e-9).ceil().max(0.0) as usize + 1;
    let step = if rows > 1 { duration / (rows - 1) as f64 } else { 0.0 };
    writeln!(out, "t,x,y,z,vx,vy,vz").map_err(io)?;
    for i in 0..rows {
        let t = if i + 1 == rows { traj.end_time() } else { traj.start_time() + i as f64 * step };
        let p = traj.evaluate(t).map_err(|e| HarnessError::Config(e.to_string()))?;
        let v = traj.evaluate_derivative(t, 1).map_err(|e| HarnessError::Config(e.to_string()))?;
        writeln!(out, "{t},{},{},{},{},{},{}", p.x, p.y, p.z, v.x, v.y, v.z).map_err(io)?;
    }
    out.flush().map_err(io)?;
    Ok(rows)
}
