//! Trajectories on disk: one `alpha,value` CSV per stored time plus a JSON
//! manifest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ContinuumTrajectory, OpinionFunction};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub times: Vec<f64>,
    pub files: Vec<String>,
    pub segment_boundaries: Vec<f64>,
    pub certified_bounds: Vec<(f64, f64)>,
    /// Smallest and largest piece slope; `None` for an infinite slope.
    pub observed_slopes: Vec<(f64, Option<f64>)>,
    pub converged: bool,
    pub residual: f64,
    pub bound_violations: usize,
    pub max_contraction: f64,
    pub snapped_at: Option<f64>,
    pub notes: Vec<String>,
}

fn io_err(e: impl std::fmt::Display) -> Error {
    Error::InvalidArgument(format!("io: {e}"))
}

/// Writes every `stride`-th stored state (the last one always) into `dir`.
pub fn write_trajectory(traj: &ContinuumTrajectory, dir: &Path, stride: usize) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(io_err)?;
    let stride = stride.max(1);
    let last = traj.times.len() - 1;
    let mut m = Manifest {
        times: vec![],
        files: vec![],
        segment_boundaries: traj.segment_boundaries.clone(),
        certified_bounds: vec![],
        observed_slopes: vec![],
        converged: traj.converged,
        residual: traj.residual,
        bound_violations: traj.bound_violations,
        max_contraction: traj.max_contraction,
        snapped_at: traj.snapped_at,
        notes: traj.notes.clone(),
    };
    for k in (0..=last).filter(|k| k % stride == 0 || *k == last) {
        let name = format!("state_{k:06}.csv");
        fs::write(dir.join(&name), traj.states[k].to_csv()).map_err(io_err)?;
        m.times.push(traj.times[k]);
        m.files.push(name);
        m.certified_bounds.push(traj.certified_bounds[k]);
        let (lo, hi) = traj.observed_slopes[k];
        m.observed_slopes.push((lo, hi.is_finite().then_some(hi)));
    }
    let json = serde_json::to_string_pretty(&m).map_err(io_err)?;
    fs::write(dir.join("manifest.json"), json).map_err(io_err)?;
    Ok(m)
}

/// Parses the CSV written by `OpinionFunction::to_csv`.
pub fn read_csv(text: &str) -> Result<OpinionFunction> {
    let mut alpha = Vec::new();
    let mut values = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (n == 0 && line.starts_with("alpha")) {
            continue;
        }
        let mut it = line.split(',').map(|s| s.trim().parse::<f64>());
        match (it.next(), it.next(), it.next()) {
            (Some(Ok(a)), Some(Ok(v)), None) => {
                alpha.push(a);
                values.push(v);
            }
            _ => return Err(Error::InvalidArgument(format!("line {}: expected `alpha,value`", n + 1))),
        }
    }
    OpinionFunction::new(alpha, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::continuum::{solve_continuum, ContinuumOptions};

    #[test]
    fn csv_round_trip() {
        let f = OpinionFunction::from_fn(20, |a| a.powi(3) + 2.0 * a).unwrap();
        assert_eq!(read_csv(&f.to_csv()).unwrap(), f);
        assert!(read_csv("alpha,value\n0,1\n1\n").is_err());
    }

    #[test]
    fn manifest_lists_states() {
        let dir = std::env::temp_dir().join(format!("bconf-io-{}", std::process::id()));
        let f = OpinionFunction::linear(0.0, 1.0, 16).unwrap();
        let t = solve_continuum(&f, 0.3, &ContinuumOptions::default()).unwrap();
        let m = write_trajectory(&t, &dir, 2).unwrap();
        assert_eq!(*m.times.last().unwrap(), 0.3);
        let back: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(back.files, m.files);
        let last = read_csv(&fs::read_to_string(dir.join(m.files.last().unwrap())).unwrap()).unwrap();
        assert!(last.sup_distance(t.terminal()) < 1e-15);
        fs::remove_dir_all(&dir).ok();
    }
}
