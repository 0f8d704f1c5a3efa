use serde::Serialize;

use super::stepper::{Drive, Stepper};
use super::{check_inputs, finish, time_grid, Kernel, NormMonitor, PdeConfig, Trajectory};
use crate::control::ControlField;
use crate::error::{Error, Result};
use crate::grid::DensityField;
use crate::kernels::PhysicsParams;

/// Outcome of the fixed-point iteration ρ^{m+1} = S(K∗(ρ^m + s f)), ρ^0 = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct PicardReport {
    /// Snapshots of the last iterate.
    pub trajectory: Trajectory,
    /// d_m = sup_t ‖ρ^m - ρ^{m-1}‖_{L¹} for m ≥ 2.
    pub distances: Vec<f64>,
    /// d_{m+1} / d_m.
    pub ratios: Vec<f64>,
    /// Updates needed after the first linear solve.
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PicardSummary {
    pub distances: Vec<f64>,
    pub ratios: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl PicardReport {
    pub fn summary(&self) -> PicardSummary {
        PicardSummary {
            distances: self.distances.clone(),
            ratios: self.ratios.clone(),
            iterations: self.iterations,
            converged: self.converged,
        }
    }
}

/// Each iterate solves the linear equation with the chemoattractant of the
/// previous iterate frozen at the step times and interpolated in between.
/// Three consecutive ratios ≥ 1 abort with the ratio sequence.
pub fn picard_solve(
    rho0: &DensityField,
    f: &ControlField,
    params: &PhysicsParams,
    cfg: &PdeConfig,
    kernel: Kernel,
    horizon: f64,
) -> Result<PicardReport> {
    check_inputs(rho0, f, params, cfg)?;
    let grid = rho0.spec;
    let (times, snap_index) = time_grid(horizon, cfg.snapshots, &f.bin_edges(), cfg.dt);
    let steps = times.len() - 1;
    let mut stepper = Stepper::new(grid, f, params, cfg, kernel)?;
    let zeros = vec![0.0; grid.len()];
    let mut previous: Option<Vec<Vec<f64>>> = None;
    let mut distances = Vec::new();
    let mut ratios = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for m in 1..=cfg.picard_max_iterations + 1 {
        let potentials: Option<Vec<Vec<f64>>> = match (&previous, stepper.has_drift()) {
            (Some(prev), true) => Some(prev.iter().map(|r| stepper.self_potential(r)).collect()),
            _ => None,
        };
        stepper.reset_accounting();
        let mut path = Vec::with_capacity(steps + 1);
        let mut rho = rho0.values.clone();
        path.push(rho.clone());
        for s in 0..steps {
            let (t0, t1) = (times[s], times[s + 1]);
            let bin = f.bin(0.5 * (t0 + t1));
            let drive = match &potentials {
                Some(p) => Drive::Frozen { start: &p[s], end: &p[s + 1] },
                None => Drive::Frozen { start: &zeros, end: &zeros },
            };
            stepper.step(&mut rho, t1 - t0, bin, drive)?;
            path.push(rho.clone());
        }
        if let Some(prev) = &previous {
            let dv = grid.cell_volume();
            let d = path
                .iter()
                .zip(prev)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() * dv)
                .fold(0.0, f64::max);
            if let Some(&last) = distances.last() {
                ratios.push(if last > 0.0 { d / last } else { 0.0 });
            }
            distances.push(d);
            iterations = m - 1;
            if ratios.len() >= 3 && ratios[ratios.len() - 3..].iter().all(|&r| r >= 1.0) {
                return Err(Error::NonContraction { ratios });
            }
            if d < cfg.picard_tol {
                previous = Some(path);
                converged = true;
                break;
            }
        }
        previous = Some(path);
    }
    let path = previous.expect("at least one iterate");
    let mut monitor = NormMonitor::new(rho0, params.chi, f.spec.q, f.spec.r);
    let mut snapshots = Vec::with_capacity(snap_index.len());
    for (s, values) in path.into_iter().enumerate() {
        let field = DensityField { spec: grid, values, time: times[s] };
        monitor.record(times[s], &field);
        if snap_index.contains(&s) {
            snapshots.push(field);
        }
    }
    let trajectory = finish(snapshots, monitor, steps, &stepper, rho0.mass());
    Ok(PicardReport { trajectory, distances, ratios, iterations, converged })
}
