//! Tracking-plus-control cost of a density trajectory: J for the PDE
//! solution and its Monte-Carlo counterpart J_N for the particle system.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::control::ControlField;
use crate::density::GaussianMixture;
use crate::error::{Error, Result};
use crate::grid::{
    deposit_into, lp_norm, mollifier_stencil, regularized_stencil, DensityField, FreeSpaceConvolver, GridSpec,
};
use crate::kernels::{build_kernel_table, KernelConfig, KernelTable, PhysicsParams};
use crate::numerics::{mean_stderr, trapezoid};
use crate::particles::{run_replicas, ControlDrift, MeanFieldDrift, ReplicaRun, SdeConfig, Simulation};
use crate::pde::{self, PdeConfig, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeedPolicy {
    /// Every evaluation reuses the same initial samples and Brownian paths.
    #[default]
    CommonRandomNumbers,
    /// Evaluation k draws from seed + k.
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    /// Tracking exponent p of ‖ρ - z‖_{L^p}.
    #[serde(default = "default_p")]
    pub p: f64,
    /// Target density z.
    pub target: GaussianMixture,
    /// Monte-Carlo replicas R of J_N.
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    /// Quadrature times K, uniform on [0, T] including both ends.
    #[serde(default = "default_snapshots")]
    pub snapshots: usize,
    #[serde(default)]
    pub seed_policy: SeedPolicy,
}

fn default_p() -> f64 {
    2.0
}

fn default_replicas() -> usize {
    8
}

fn default_snapshots() -> usize {
    16
}

impl CostConfig {
    pub fn new(target: GaussianMixture) -> Self {
        Self {
            p: default_p(),
            target,
            replicas: default_replicas(),
            snapshots: default_snapshots(),
            seed_policy: SeedPolicy::default(),
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = self.target.violations("cost.target");
        if !(self.p >= 2.0 && self.p.is_finite()) {
            v.push(format!("cost.p must lie in [2, inf), got {}", self.p));
        }
        if self.replicas == 0 {
            v.push("cost.replicas must be >= 1".into());
        }
        if self.snapshots < 2 {
            v.push(format!("cost.snapshots must be >= 2, got {}", self.snapshots));
        }
        v
    }

    pub fn times(&self, horizon: f64) -> Vec<f64> {
        (0..self.snapshots).map(|k| horizon * k as f64 / (self.snapshots - 1) as f64).collect()
    }
}

/// Both cost integrals and their sum; `stderr` is set for Monte-Carlo costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub tracking: f64,
    pub control: f64,
    pub total: f64,
    pub stderr: Option<f64>,
    pub times: Vec<f64>,
    /// Integrands at the quadrature times (replica means for J_N).
    pub tracking_integrand: Vec<f64>,
    pub control_integrand: Vec<f64>,
}

impl CostBreakdown {
    fn from_integrands(times: Vec<f64>, tracking_integrand: Vec<f64>, control_integrand: Vec<f64>, stderr: Option<f64>) -> Self {
        let tracking = trapezoid(&times, &tracking_integrand);
        let control = trapezoid(&times, &control_integrand);
        Self { tracking, control, total: tracking + control, stderr, times, tracking_integrand, control_integrand }
    }
}

fn check_times(actual: &[f64], expected: &[f64]) -> Result<()> {
    let aligned = actual.len() == expected.len()
        && actual.iter().zip(expected).all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + b.abs()));
    if aligned {
        Ok(())
    } else {
        Err(Error::config(format!("snapshot times {actual:?} are not the cost quadrature times {expected:?}")))
    }
}

/// J(f): trapezoid in time of ‖ρ(t) - z‖_{L^p} and of ∫ f(t)ρ(t) dx.
#[allow(non_snake_case)]
pub fn eval_J(traj: &Trajectory, f: &ControlField, z: &DensityField, cfg: &CostConfig) -> Result<CostBreakdown> {
    let times = traj.times();
    check_times(&times, &cfg.times(f.horizon))?;
    let grid = z.spec;
    let mut tracking = Vec::with_capacity(times.len());
    let mut control = Vec::with_capacity(times.len());
    for snap in &traj.snapshots {
        crate::grid::check_same_grid(snap.spec, grid)?;
        let diff: Vec<f64> = snap.values.iter().zip(&z.values).map(|(a, b)| a - b).collect();
        tracking.push(lp_norm(&diff, grid, cfg.p));
        control.push(if f.is_zero() { 0.0 } else { snap.dot(&f.eval_grid(snap.time, grid)) });
    }
    Ok(CostBreakdown::from_integrands(times, tracking, control, None))
}

/// J as a function of the control: one PDE solve per evaluation.
pub struct PdeCost {
    pub rho0: DensityField,
    pub params: PhysicsParams,
    pub pde: PdeConfig,
    pub cfg: CostConfig,
    pub z: DensityField,
    table: Option<KernelTable>,
}

impl PdeCost {
    /// The PDE snapshots are forced onto the cost quadrature times.
    pub fn new(rho0: &GaussianMixture, params: &PhysicsParams, pde: &PdeConfig, cfg: &CostConfig, grid: GridSpec) -> Self {
        Self {
            rho0: rho0.sample_grid(grid),
            params: *params,
            pde: PdeConfig { snapshots: cfg.snapshots, ..*pde },
            cfg: cfg.clone(),
            z: cfg.target.sample_grid(grid),
            table: None,
        }
    }

    /// Evaluates J along the regularized PDE with this kernel table instead.
    pub fn regularized(mut self, table: KernelTable) -> Self {
        self.table = Some(table);
        self.pde.use_regularized_kernel = true;
        self
    }

    pub fn solve(&self, f: &ControlField) -> Result<Trajectory> {
        pde::solve(&self.rho0, f, &self.params, &self.pde, self.table.as_ref())
    }

    pub fn eval(&self, f: &ControlField) -> Result<CostBreakdown> {
        eval_J(&self.solve(f)?, f, &self.z, &self.cfg)
    }
}

/// Per-replica J_N ingredients plus the pooled empirical deposits that the
/// chaos study turns into a marginal estimate.
#[derive(Debug, Clone)]
pub struct ParticleEvaluation {
    pub cost: CostBreakdown,
    /// Total cost of each replica, in replica order.
    pub replica_totals: Vec<f64>,
    /// CIC deposits of all replicas pooled with weight 1/(NR), per snapshot.
    pub pooled_deposits: Vec<DensityField>,
    /// max_{i, t} |X_i - X̄_i| per replica; empty when uncoupled.
    pub deviations: Vec<f64>,
    /// Largest number of particles outside the grid at any snapshot of any replica.
    pub escaped: usize,
    pub seed: u64,
    /// Particle snapshots per replica; McKean-Vlasov positions are dropped.
    pub runs: Vec<ReplicaRun>,
}

/// Everything J_N needs that does not depend on the control: the kernel
/// table at ε = N^{-β}, the smoothing and drift convolvers and the sampled target.
pub struct ParticleCost {
    pub n: usize,
    pub rho0: GaussianMixture,
    pub params: PhysicsParams,
    pub sde: SdeConfig,
    pub cfg: CostConfig,
    pub z: DensityField,
    pub seed: u64,
    table: KernelTable,
    smoother: FreeSpaceConvolver,
    drift: FreeSpaceConvolver,
    evaluations: AtomicU64,
}

impl ParticleCost {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n: usize,
        rho0: &GaussianMixture,
        params: &PhysicsParams,
        kernel: &KernelConfig,
        sde: &SdeConfig,
        cfg: &CostConfig,
        grid: GridSpec,
        seed: u64,
    ) -> Result<Self> {
        let eps = sde.eps_for(n);
        let table = build_kernel_table(&KernelConfig { eps, ..*kernel }, params)?;
        Ok(Self {
            n,
            rho0: rho0.clone(),
            params: *params,
            sde: *sde,
            cfg: cfg.clone(),
            z: cfg.target.sample_grid(grid),
            seed,
            smoother: FreeSpaceConvolver::new(grid, &mollifier_stencil(eps, grid))?,
            drift: FreeSpaceConvolver::new(grid, &regularized_stencil(&table, grid))?,
            table,
            evaluations: AtomicU64::new(0),
        })
    }

    pub fn eps(&self) -> f64 {
        self.table.eps()
    }

    pub fn table(&self) -> &KernelTable {
        &self.table
    }

    pub fn grid(&self) -> GridSpec {
        self.z.spec
    }

    /// j_ε ∗ ρ for a grid density.
    pub fn smooth(&self, field: &DensityField) -> DensityField {
        self.smoother.apply(field)
    }

    /// The regularized mean-field drift of a PDE trajectory at this ε.
    pub fn mean_field(&self, traj: &Trajectory) -> MeanFieldDrift {
        MeanFieldDrift::with_convolver(traj, &self.drift, self.params.chi)
    }

    fn next_seed(&self) -> u64 {
        let k = self.evaluations.fetch_add(1, Ordering::Relaxed);
        match self.cfg.seed_policy {
            SeedPolicy::CommonRandomNumbers => self.seed,
            SeedPolicy::Independent => self.seed.wrapping_add(k),
        }
    }

    /// J_N(f) over the configured replicas.
    pub fn eval(&self, f: &ControlField) -> Result<CostBreakdown> {
        Ok(self.evaluate(f, None, self.cfg.replicas)?.cost)
    }

    /// Runs `replicas` replicas under f, optionally coupled to a McKean-Vlasov
    /// ensemble, and reduces them in replica order.
    pub fn evaluate(&self, f: &ControlField, coupled: Option<&MeanFieldDrift>, replicas: usize) -> Result<ParticleEvaluation> {
        let grid = self.grid();
        let times = self.cfg.times(f.horizon);
        let control = ControlDrift::with_convolver(f, &self.drift, self.params.chi, self.params.control_sign);
        let seed = self.next_seed();
        let mut sim = Simulation::new(
            self.n,
            &self.rho0,
            &self.table,
            self.params.chi,
            &control,
            grid,
            self.cfg.snapshots,
            self.sde.dt,
            seed,
        );
        sim.method = self.sde.force_method;
        if let Some(mf) = coupled {
            sim = sim.coupled(mf)?;
        }
        check_times(&sim.snapshot_times(), &times)?;
        let ids: Vec<u64> = (0..replicas as u64).collect();
        let mut runs = run_replicas(&sim, &ids)?;
        let mut eval = self.reduce(f, &times, &runs, seed);
        runs.iter_mut().for_each(|r| r.coupled = None);
        eval.runs = runs;
        Ok(eval)
    }

    fn reduce(&self, f: &ControlField, times: &[f64], runs: &[ReplicaRun], seed: u64) -> ParticleEvaluation {
        let grid = self.grid();
        let k = times.len();
        let weight = 1.0 / (self.n * runs.len()) as f64;
        let mut pooled: Vec<DensityField> = times.iter().map(|&t| DensityField::zeros(grid, t)).collect();
        let mut tracking = vec![vec![0.0; k]; runs.len()];
        let mut control = vec![vec![0.0; k]; runs.len()];
        let mut escaped = 0;
        for (r, run) in runs.iter().enumerate() {
            escaped = escaped.max(run.escaped);
            for (s, positions) in run.snapshots.iter().enumerate() {
                let mut raw = DensityField::zeros(grid, times[s]);
                deposit_into(&mut raw.values, grid, positions, 1.0 / self.n as f64);
                deposit_into(&mut pooled[s].values, grid, positions, weight);
                let kde = self.smoother.apply_values(&raw.values);
                let diff: Vec<f64> = kde.iter().zip(&self.z.values).map(|(a, b)| a - b).collect();
                tracking[r][s] = lp_norm(&diff, grid, self.cfg.p);
                if !f.is_zero() {
                    control[r][s] = positions.iter().map(|x| f.eval(times[s], *x)).sum::<f64>() / self.n as f64;
                }
            }
        }
        let replica_totals: Vec<f64> =
            (0..runs.len()).map(|r| trapezoid(times, &tracking[r]) + trapezoid(times, &control[r])).collect();
        let mean_over = |series: &[Vec<f64>]| -> Vec<f64> {
            (0..k).map(|s| series.iter().map(|v| v[s]).sum::<f64>() / runs.len() as f64).collect()
        };
        let (_, stderr) = mean_stderr(&replica_totals);
        let cost = CostBreakdown::from_integrands(times.to_vec(), mean_over(&tracking), mean_over(&control), Some(stderr));
        let deviations = if runs.iter().any(|r| r.coupled.is_some()) {
            runs.iter().map(|r| r.max_deviation).collect()
        } else {
            Vec::new()
        };
        ParticleEvaluation { cost, replica_totals, pooled_deposits: pooled, deviations, escaped, seed, runs: Vec::new() }
    }
}

/// One-shot J_N(f) with N particles.
#[allow(non_snake_case, clippy::too_many_arguments)]
pub fn eval_J_N(
    f: &ControlField,
    n: usize,
    rho0: &GaussianMixture,
    params: &PhysicsParams,
    kernel: &KernelConfig,
    sde: &SdeConfig,
    cfg: &CostConfig,
    grid: GridSpec,
    seed: u64,
) -> Result<CostBreakdown> {
    ParticleCost::new(n, rho0, params, kernel, sde, cfg, grid, seed)?.eval(f)
}
