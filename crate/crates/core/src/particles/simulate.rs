use rayon::prelude::*;

use super::forces::{pairwise_drift, ForceMethod};
use super::{sample_initial, NoiseKey, ParticleEnsemble, StreamDomain};
use crate::control::ControlField;
use crate::density::GaussianMixture;
use crate::error::{Error, Result};
use crate::grid::{regularized_stencil, DensityField, FreeSpaceConvolver, GridSpec, VectorField};
use crate::kernels::KernelTable;
use crate::pde::{time_grid, Trajectory};

/// χ ∇(Φ̃_ε ∗ K) of a grid density, by free-space convolution and centered differences.
fn kernel_gradient(conv: &FreeSpaceConvolver, values: &[f64], scale: f64) -> VectorField {
    let mut c = DensityField { spec: conv.spec(), values: conv.apply_values(values), time: 0.0 };
    c.values.iter_mut().for_each(|v| *v *= scale);
    c.gradient()
}

/// s χ ∇(Φ̃_ε ∗ f) per control bin, sampled on the grid once.
pub struct ControlDrift {
    f: ControlField,
    fields: Vec<Option<VectorField>>,
}

impl ControlDrift {
    pub fn new(f: &ControlField, table: &KernelTable, grid: GridSpec, chi: f64, sign: f64) -> Result<Self> {
        if chi == 0.0 || f.is_zero() {
            return Ok(Self::inactive(f));
        }
        let conv = FreeSpaceConvolver::new(grid, &regularized_stencil(table, grid))?;
        Ok(Self::with_convolver(f, &conv, chi, sign))
    }

    /// Reuses a convolver with the regularized kernel stencil.
    pub fn with_convolver(f: &ControlField, conv: &FreeSpaceConvolver, chi: f64, sign: f64) -> Self {
        if chi == 0.0 {
            return Self::inactive(f);
        }
        let grid = conv.spec();
        let fields = (0..f.bins())
            .map(|bin| {
                f.coeffs[bin]
                    .iter()
                    .any(|&c| c != 0.0)
                    .then(|| kernel_gradient(conv, &f.eval_grid_bin(bin, grid).values, sign * chi))
            })
            .collect();
        Self { f: f.clone(), fields }
    }

    fn inactive(f: &ControlField) -> Self {
        Self { f: f.clone(), fields: vec![None; f.bins()] }
    }

    pub fn control(&self) -> &ControlField {
        &self.f
    }

    #[inline]
    fn at(&self, bin: usize, x: &[f64; 3]) -> Option<[f64; 3]> {
        self.fields[bin].as_ref().map(|g| g.interpolate(x).0)
    }
}

/// χ ∇(Φ̃_ε ∗ ρ^ε)(t) from the snapshots of a regularized PDE solve,
/// linear in time between snapshots.
pub struct MeanFieldDrift {
    times: Vec<f64>,
    fields: Vec<VectorField>,
}

impl MeanFieldDrift {
    pub fn new(traj: &Trajectory, table: &KernelTable, chi: f64) -> Result<Self> {
        let grid = traj.snapshots[0].spec;
        let conv = FreeSpaceConvolver::new(grid, &regularized_stencil(table, grid))?;
        Ok(Self::with_convolver(traj, &conv, chi))
    }

    /// Reuses a convolver with the regularized kernel stencil.
    pub fn with_convolver(traj: &Trajectory, conv: &FreeSpaceConvolver, chi: f64) -> Self {
        let fields = traj.snapshots.iter().map(|s| kernel_gradient(conv, &s.values, chi)).collect();
        Self { times: traj.times(), fields }
    }

    fn at(&self, t: f64, x: &[f64; 3]) -> [f64; 3] {
        let k = self.times.partition_point(|&s| s <= t).clamp(1, self.times.len() - 1) - 1;
        let s = ((t - self.times[k]) / (self.times[k + 1] - self.times[k])).clamp(0.0, 1.0);
        let a = self.fields[k].interpolate(x).0;
        let b = self.fields[k + 1].interpolate(x).0;
        [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1]), a[2] + s * (b[2] - a[2])]
    }
}

/// Everything one replica needs; replicas differ only in their random streams.
pub struct Simulation<'a> {
    pub n: usize,
    pub rho0: &'a GaussianMixture,
    pub table: &'a KernelTable,
    pub chi: f64,
    pub control: &'a ControlDrift,
    pub mean_field: Option<&'a MeanFieldDrift>,
    pub grid: GridSpec,
    pub method: ForceMethod,
    /// Zero-noise mode drops the Brownian increments.
    pub noise: bool,
    pub seed: u64,
    times: Vec<f64>,
    snap_index: Vec<usize>,
}

impl<'a> Simulation<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n: usize,
        rho0: &'a GaussianMixture,
        table: &'a KernelTable,
        chi: f64,
        control: &'a ControlDrift,
        grid: GridSpec,
        snapshots: usize,
        dt: f64,
        seed: u64,
    ) -> Self {
        let f = control.control();
        let (times, snap_index) = time_grid(f.horizon, snapshots, &f.bin_edges(), dt);
        Self {
            n,
            rho0,
            table,
            chi,
            control,
            mean_field: None,
            grid,
            method: ForceMethod::Direct,
            noise: true,
            seed,
            times,
            snap_index,
        }
    }

    /// Couples a McKean-Vlasov ensemble driven by `drift`, whose snapshot
    /// times must coincide with this simulation's.
    pub fn coupled(mut self, drift: &'a MeanFieldDrift) -> Result<Self> {
        let snaps: Vec<f64> = self.snap_index.iter().map(|&i| self.times[i]).collect();
        let aligned = snaps.len() == drift.times.len()
            && snaps.iter().zip(&drift.times).all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        if !aligned {
            return Err(Error::config(format!(
                "PDE snapshots {:?} are not aligned with the particle snapshots {:?}",
                drift.times, snaps
            )));
        }
        self.mean_field = Some(drift);
        Ok(self)
    }

    pub fn snapshot_times(&self) -> Vec<f64> {
        self.snap_index.iter().map(|&i| self.times[i]).collect()
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }
}

/// Positions at the snapshot times of one replica.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaRun {
    pub replica: u64,
    pub snapshots: Vec<Vec<[f64; 3]>>,
    /// McKean-Vlasov positions, when coupled.
    pub coupled: Option<Vec<Vec<[f64; 3]>>>,
    /// max over particles and snapshots of |X_i - X̄_i|; 0 when uncoupled.
    pub max_deviation: f64,
    /// Largest number of particles outside the grid at a snapshot.
    pub escaped: usize,
}

pub fn run_replica(sim: &Simulation, replica: u64) -> Result<ReplicaRun> {
    run_ensemble(sim, sample_initial(sim.n, sim.rho0, sim.seed, replica))
}

/// Replicas in parallel, returned in the given order; a failure carries its replica id.
pub fn run_replicas(sim: &Simulation, replicas: &[u64]) -> Result<Vec<ReplicaRun>> {
    replicas
        .par_iter()
        .map(|&r| run_replica(sim, r).map_err(|e| Error::Replica { replica: r as usize, source: Box::new(e) }))
        .collect()
}

fn add_scaled(x: &mut [f64; 3], v: &[f64; 3], s: f64) {
    for c in 0..3 {
        x[c] += s * v[c];
    }
}

/// Advances an explicit initial ensemble through all steps.
pub fn run_ensemble(sim: &Simulation, mut ens: ParticleEnsemble) -> Result<ReplicaRun> {
    let key = NoiseKey::new(sim.seed, ens.replica, StreamDomain::Brownian);
    let f = sim.control.control();
    let mut xbar = sim.mean_field.map(|_| ens.positions.clone());
    let mut snapshots = vec![ens.positions.clone()];
    let mut coupled = xbar.as_ref().map(|x| vec![x.clone()]);
    let mut escaped = count_outside(sim.grid, &ens.positions);
    let mut max_deviation = 0.0f64;
    let mut next = 1;
    for s in 0..sim.steps() {
        let (t0, t1) = (sim.times[s], sim.times[s + 1]);
        let dt = t1 - t0;
        let bin = f.bin(0.5 * (t0 + t1));
        let drift = if sim.chi != 0.0 {
            pairwise_drift(&ens.positions, sim.table, sim.chi, sim.method)
        } else {
            vec![[0.0; 3]; ens.len()]
        };
        let amplitude = (2.0 * dt).sqrt();
        for i in 0..ens.len() {
            let xi = ens.positions[i];
            let noise = if sim.noise { key.normals(ens.labels[i], s as u64) } else { [0.0; 3] };
            let mut v = drift[i];
            if let Some(c) = sim.control.at(bin, &xi) {
                add_scaled(&mut v, &c, 1.0);
            }
            add_scaled(&mut ens.positions[i], &v, dt);
            add_scaled(&mut ens.positions[i], &noise, amplitude);
            if let (Some(bar), Some(mf)) = (xbar.as_mut(), sim.mean_field) {
                let yi = bar[i];
                let mut w = if sim.chi != 0.0 { mf.at(t0, &yi) } else { [0.0; 3] };
                if let Some(c) = sim.control.at(bin, &yi) {
                    add_scaled(&mut w, &c, 1.0);
                }
                add_scaled(&mut bar[i], &w, dt);
                add_scaled(&mut bar[i], &noise, amplitude);
            }
        }
        if ens.positions.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!("non-finite particle position at t = {t1}")));
        }
        ens.t = t1;
        if next < sim.snap_index.len() && sim.snap_index[next] == s + 1 {
            if let Some(bar) = &xbar {
                for (x, y) in ens.positions.iter().zip(bar) {
                    let d = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2)).sqrt();
                    max_deviation = max_deviation.max(d);
                }
                coupled.as_mut().expect("coupled").push(bar.clone());
            }
            escaped = escaped.max(count_outside(sim.grid, &ens.positions));
            snapshots.push(ens.positions.clone());
            next += 1;
        }
    }
    Ok(ReplicaRun { replica: ens.replica, snapshots, coupled, max_deviation, escaped })
}

fn count_outside(grid: GridSpec, positions: &[[f64; 3]]) -> usize {
    positions.iter().filter(|p| !grid.contains(p)).count()
}
