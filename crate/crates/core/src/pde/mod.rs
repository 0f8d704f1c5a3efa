//! Controlled Keller-Segel equation ∂_t ρ = Δρ - ∇·(ρ χ∇c), c = K∗(ρ + s f),
//! with K the Coulomb kernel or its mollified cutoff, plus the Picard
//! iteration with frozen chemoattractant and the a-priori norm monitor.

mod picard;
mod stepper;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::control::ControlField;
use crate::error::{Error, Result};
use crate::grid::{coulomb_stencil, regularized_stencil, DensityField, GridSpec, Stencil};
use crate::kernels::{c_dp, KernelTable, PhysicsParams, DIM};

pub use picard::{picard_solve, PicardReport};
use stepper::{Drive, Stepper};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    Splitting,
    Picard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PositivityFix {
    #[default]
    ClipAndRenormalize,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeConfig {
    #[serde(default)]
    pub scheme: Scheme,
    /// Largest time step; steps are also aligned with snapshots and control bins.
    pub dt: f64,
    /// Number of saved times K, equally spaced over [0, T] including both ends.
    pub snapshots: usize,
    /// Use the mollified cutoff kernel at the configured ε instead of Coulomb.
    #[serde(default)]
    pub use_regularized_kernel: bool,
    #[serde(default)]
    pub positivity_fix: PositivityFix,
    /// Horizon of the Picard validation run.
    #[serde(default = "default_t_small")]
    pub t_small: f64,
    #[serde(default = "default_picard_tol")]
    pub picard_tol: f64,
    #[serde(default = "default_picard_max")]
    pub picard_max_iterations: usize,
    /// Largest admissible |v| dt / h per advection substep.
    #[serde(default = "default_cfl")]
    pub cfl: f64,
}

fn default_t_small() -> f64 {
    0.05
}
fn default_picard_tol() -> f64 {
    1e-6
}
fn default_picard_max() -> usize {
    50
}
fn default_cfl() -> f64 {
    0.5
}

impl PdeConfig {
    pub fn new(dt: f64, snapshots: usize) -> Self {
        Self {
            scheme: Scheme::Splitting,
            dt,
            snapshots,
            use_regularized_kernel: false,
            positivity_fix: PositivityFix::ClipAndRenormalize,
            t_small: default_t_small(),
            picard_tol: default_picard_tol(),
            picard_max_iterations: default_picard_max(),
            cfl: default_cfl(),
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            v.push(format!("pde.dt must be > 0, got {}", self.dt));
        }
        if self.snapshots < 2 {
            v.push(format!("pde.snapshots must be >= 2, got {}", self.snapshots));
        }
        if !(self.t_small > 0.0) {
            v.push(format!("pde.t_small must be > 0, got {}", self.t_small));
        }
        if !(self.picard_tol > 0.0) {
            v.push(format!("pde.picard_tol must be > 0, got {}", self.picard_tol));
        }
        if self.picard_max_iterations == 0 {
            v.push("pde.picard_max_iterations must be >= 1".into());
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            v.push(format!("pde.cfl must lie in (0, 1], got {}", self.cfl));
        }
        v
    }
}

/// Interaction kernel of the chemoattractant.
#[derive(Clone, Copy)]
pub enum Kernel<'a> {
    Coulomb,
    Regularized(&'a KernelTable),
}

impl Kernel<'_> {
    pub fn stencil(&self, grid: GridSpec) -> Stencil {
        match self {
            Kernel::Coulomb => coulomb_stencil(grid),
            Kernel::Regularized(table) => regularized_stencil(table, grid),
        }
    }
}

/// Time series of the a-priori bounds: ‖ρ‖^{3/2}_{L^{3/2}} against 2√C0,
/// and ‖ρ‖_{W^{1,q}}.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NormMonitor {
    pub times: Vec<f64>,
    pub l_d2_norm: Vec<f64>,
    pub w1q_norm: Vec<f64>,
    pub c0: f64,
    pub bound_2sqrt_c0: f64,
    pub cdp: f64,
    pub q: f64,
    pub r: f64,
}

impl NormMonitor {
    fn new(rho0: &DensityField, chi: f64, q: f64, r: f64) -> Self {
        let c0 = l_d2_power(rho0);
        Self {
            times: Vec::new(),
            l_d2_norm: Vec::new(),
            w1q_norm: Vec::new(),
            c0,
            bound_2sqrt_c0: 2.0 * c0.sqrt(),
            cdp: c_dp(DIM, r, chi),
            q,
            r,
        }
    }

    fn record(&mut self, t: f64, rho: &DensityField) {
        self.times.push(t);
        self.l_d2_norm.push(l_d2_power(rho));
        self.w1q_norm.push(rho.w1q_norm(self.q));
    }

    pub fn sup_l_d2(&self) -> f64 {
        self.l_d2_norm.iter().copied().fold(0.0, f64::max)
    }

    /// sup_t ‖ρ‖^{3/2}_{L^{3/2}} ≤ 2 C0^{1/2}.
    pub fn within_bound(&self) -> bool {
        self.sup_l_d2() <= self.bound_2sqrt_c0
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "l_d2_norm", "w1q_norm", "c0", "bound_2sqrt_c0", "cdp"])?;
        for k in 0..self.times.len() {
            w.serialize((
                self.times[k],
                self.l_d2_norm[k],
                self.w1q_norm[k],
                self.c0,
                self.bound_2sqrt_c0,
                self.cdp,
            ))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// ‖ρ‖^{d/2}_{L^{d/2}} for d = 3.
pub fn l_d2_power(rho: &DensityField) -> f64 {
    rho.values.iter().map(|v| v.abs().powf(1.5)).sum::<f64>() * rho.spec.cell_volume()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub snapshots: Vec<DensityField>,
    pub monitor: NormMonitor,
    pub steps: usize,
    /// Total mass removed by the positivity fix, relative to the initial mass.
    pub clipped_mass: f64,
    /// Smallest nodal value seen before any positivity fix.
    pub min_before_fix: f64,
    /// Largest |mass(t) - mass(0)| over the saved times.
    pub mass_drift: f64,
    /// Largest mass found in the outermost layer of nodes.
    pub boundary_mass: f64,
}

impl Trajectory {
    /// A trajectory known only through its snapshots, e.g. an analytic solution.
    pub fn from_snapshots(snapshots: Vec<DensityField>) -> Self {
        Self {
            snapshots,
            monitor: NormMonitor::default(),
            steps: 0,
            clipped_mass: 0.0,
            min_before_fix: 0.0,
            mass_drift: 0.0,
            boundary_mass: 0.0,
        }
    }

    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.time).collect()
    }

    /// sup over saved times of the L¹ distance to another trajectory.
    pub fn sup_l1_distance(&self, other: &Trajectory) -> Result<f64> {
        if self.snapshots.len() != other.snapshots.len() {
            return Err(Error::config("trajectories have different snapshot counts"));
        }
        let mut sup = 0.0f64;
        for (a, b) in self.snapshots.iter().zip(&other.snapshots) {
            if (a.time - b.time).abs() > 1e-12 {
                return Err(Error::config(format!("snapshot times differ: {} vs {}", a.time, b.time)));
            }
            sup = sup.max(a.l1_distance(b)?);
        }
        Ok(sup)
    }
}

/// Verdict on the small-data condition
/// C0 ≤ min{2^d (1 - 2/d)^d, exp(-2 C(d, r) ‖l‖^r_{L^r(0,T)})}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmallnessReport {
    pub c0: f64,
    pub cdr: f64,
    pub lr_norm_of_l: f64,
    pub geometric_bound: f64,
    pub control_bound: f64,
    pub satisfied: bool,
}

pub fn smallness_condition(c0: f64, chi: f64, r: f64, lr_norm_of_l: f64) -> SmallnessReport {
    let d = DIM as f64;
    let cdr = c_dp(DIM, r, chi);
    let geometric_bound = 2f64.powf(d) * (1.0 - 2.0 / d).powf(d);
    let control_bound = (-2.0 * cdr * lr_norm_of_l.powf(r)).exp();
    SmallnessReport {
        c0,
        cdr,
        lr_norm_of_l,
        geometric_bound,
        control_bound,
        satisfied: c0 <= geometric_bound.min(control_bound),
    }
}

/// Step boundaries on [0, horizon]: the union of the K snapshot times and
/// the given breakpoints, each gap split into equal steps no longer than
/// `dt`. Returns the times and, per snapshot, its index among them.
pub fn time_grid(horizon: f64, snapshots: usize, breaks: &[f64], dt: f64) -> (Vec<f64>, Vec<usize>) {
    let snap: Vec<f64> = (0..snapshots).map(|k| horizon * k as f64 / (snapshots - 1) as f64).collect();
    let tol = 1e-12 * horizon;
    let mut knots = snap.clone();
    knots.extend(breaks.iter().copied().filter(|&b| b > tol && b < horizon - tol));
    knots.sort_by(|a, b| a.total_cmp(b));
    knots.dedup_by(|a, b| (*a - *b).abs() <= tol);
    let mut times = vec![0.0];
    for w in knots.windows(2) {
        let pieces = ((w[1] - w[0]) / dt - 1e-9).ceil().max(1.0) as usize;
        for p in 1..pieces {
            times.push(w[0] + (w[1] - w[0]) * p as f64 / pieces as f64);
        }
        times.push(w[1]);
    }
    let index = snap
        .iter()
        .map(|s| times.iter().position(|t| (t - s).abs() <= tol).expect("snapshot is a knot"))
        .collect();
    (times, index)
}

fn check_inputs(rho0: &DensityField, f: &ControlField, params: &PhysicsParams, cfg: &PdeConfig) -> Result<()> {
    let mut v = params.violations();
    v.extend(cfg.violations());
    if (f.horizon - params.horizon).abs() > 1e-12 * params.horizon {
        v.push(format!("control horizon {} differs from physics.horizon {}", f.horizon, params.horizon));
    }
    if !v.is_empty() {
        return Err(Error::Config(v));
    }
    if rho0.values.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("initial density has non-finite values".into()));
    }
    Ok(())
}

/// Strang splitting over [0, horizon]: half advection, exact heat flow,
/// half advection.
pub(crate) fn solve_on(
    rho0: &DensityField,
    f: &ControlField,
    params: &PhysicsParams,
    cfg: &PdeConfig,
    kernel: Kernel,
    horizon: f64,
) -> Result<Trajectory> {
    check_inputs(rho0, f, params, cfg)?;
    let grid = rho0.spec;
    let (times, snap_index) = time_grid(horizon, cfg.snapshots, &f.bin_edges(), cfg.dt);
    let mut stepper = Stepper::new(grid, f, params, cfg, kernel)?;
    let mut rho = rho0.clone();
    rho.time = 0.0;
    let mass0 = rho.mass();
    let mut monitor = NormMonitor::new(rho0, params.chi, f.spec.q, f.spec.r);
    monitor.record(0.0, &rho);
    let mut snapshots = vec![rho.clone()];
    let mut next_snap = 1;
    for s in 0..times.len() - 1 {
        let (t0, t1) = (times[s], times[s + 1]);
        let bin = f.bin(0.5 * (t0 + t1));
        stepper.step(&mut rho.values, t1 - t0, bin, Drive::SelfConsistent)?;
        rho.time = t1;
        monitor.record(t1, &rho);
        if next_snap < snap_index.len() && snap_index[next_snap] == s + 1 {
            snapshots.push(rho.clone());
            next_snap += 1;
        }
    }
    Ok(finish(snapshots, monitor, times.len() - 1, &stepper, mass0))
}

fn finish(snapshots: Vec<DensityField>, monitor: NormMonitor, steps: usize, stepper: &Stepper, mass0: f64) -> Trajectory {
    let mass_drift = snapshots.iter().map(|s| (s.mass() - mass0).abs()).fold(0.0, f64::max);
    let boundary_mass = snapshots.iter().map(boundary_layer_mass).fold(0.0, f64::max);
    Trajectory {
        snapshots,
        monitor,
        steps,
        clipped_mass: stepper.clipped_mass / mass0.abs().max(f64::MIN_POSITIVE),
        min_before_fix: stepper.min_before_fix,
        mass_drift,
        boundary_mass,
    }
}

fn boundary_layer_mass(rho: &DensityField) -> f64 {
    let n = rho.spec.n;
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                if [i, j, k].iter().any(|&p| p == 0 || p == n - 1) {
                    acc += rho.values[rho.spec.index(i, j, k)].abs();
                }
            }
        }
    }
    acc * rho.spec.cell_volume()
}

/// Solves with the Coulomb kernel over [0, T].
pub fn solve_keller_segel(
    rho0: &DensityField,
    f: &ControlField,
    params: &PhysicsParams,
    cfg: &PdeConfig,
) -> Result<Trajectory> {
    solve_on(rho0, f, params, cfg, Kernel::Coulomb, params.horizon)
}

/// Solves with the mollified cutoff kernel of `table` over [0, T].
pub fn solve_regularized(
    rho0: &DensityField,
    f: &ControlField,
    params: &PhysicsParams,
    cfg: &PdeConfig,
    table: &KernelTable,
) -> Result<Trajectory> {
    solve_on(rho0, f, params, cfg, Kernel::Regularized(table), params.horizon)
}

/// Dispatches on the configured scheme and kernel.
pub fn solve(
    rho0: &DensityField,
    f: &ControlField,
    params: &PhysicsParams,
    cfg: &PdeConfig,
    table: Option<&KernelTable>,
) -> Result<Trajectory> {
    let kernel = match (cfg.use_regularized_kernel, table) {
        (true, Some(t)) => Kernel::Regularized(t),
        (true, None) => return Err(Error::config("pde.use_regularized_kernel needs a kernel table")),
        (false, _) => Kernel::Coulomb,
    };
    match cfg.scheme {
        Scheme::Splitting => solve_on(rho0, f, params, cfg, kernel, params.horizon),
        Scheme::Picard => Ok(picard_solve(rho0, f, params, cfg, kernel, params.horizon)?.trajectory),
    }
}


#[cfg(test)]
mod tests;
