//! Propagation-of-chaos diagnostics: distance between the one-particle
//! marginal and the PDE density, frequency of large deviations between the
//! interacting and McKean-Vlasov systems, and a concentration test for
//! empirical averages of a bounded kernel.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::control::ControlField;
use crate::cost::{CostConfig, ParticleCost, PdeCost};
use crate::density::GaussianMixture;
use crate::error::{Error, Result};
use crate::grid::{check_same_grid, deposit_into, DensityField, GridSpec};
use crate::kernels::{KernelConfig, PhysicsParams};
use crate::numerics::{linear_fit, median, quantile};
use crate::particles::{exponent_violations, sample_initial, NoiseKey, ReplicaRun, SdeConfig, StreamDomain};
use crate::pde::{PdeConfig, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChaosConfig {
    /// Particle counts, increasing.
    #[serde(default = "default_schedule")]
    pub schedule: Vec<usize>,
    /// Exponent θ1 of the exponent constraints; α and β come from the SDE settings.
    pub theta1: f64,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Bootstrap resamples for the slope confidence interval.
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
}

fn default_schedule() -> Vec<usize> {
    vec![256, 1024, 4096]
}

fn default_replicas() -> usize {
    32
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}

fn default_bootstrap() -> usize {
    200
}

impl ChaosConfig {
    pub fn new(theta1: f64) -> Self {
        Self {
            schedule: default_schedule(),
            theta1,
            replicas: default_replicas(),
            seeds: default_seeds(),
            bootstrap: default_bootstrap(),
        }
    }

    pub fn violations(&self, sde: &SdeConfig) -> Vec<String> {
        let mut v = exponent_violations(sde.alpha, self.theta1, sde.beta);
        if self.schedule.is_empty() || self.schedule.windows(2).any(|w| w[1] <= w[0]) || self.schedule[0] == 0 {
            v.push(format!("chaos.schedule must be positive and increasing, got {:?}", self.schedule));
        }
        if self.replicas == 0 {
            v.push("chaos.replicas must be >= 1".into());
        }
        if self.seeds.is_empty() {
            v.push("chaos.seeds must not be empty".into());
        }
        if self.bootstrap < 10 {
            v.push(format!("chaos.bootstrap must be >= 10, got {}", self.bootstrap));
        }
        v
    }
}

/// h³ Σ |marginal - ρ| at every snapshot of ρ.
pub fn l1_marginal_distance(marginals: &[DensityField], rho: &Trajectory) -> Result<Vec<f64>> {
    if marginals.len() != rho.snapshots.len() {
        return Err(Error::config(format!(
            "{} marginal snapshots against {} PDE snapshots",
            marginals.len(),
            rho.snapshots.len()
        )));
    }
    marginals
        .iter()
        .zip(&rho.snapshots)
        .map(|(m, r)| {
            check_same_grid(m.spec, r.spec)?;
            if (m.time - r.time).abs() > 1e-12 * (1.0 + r.time.abs()) {
                return Err(Error::config(format!("marginal at t = {} against PDE at t = {}", m.time, r.time)));
            }
            m.l1_distance(r)
        })
        .collect()
}

/// Fraction of replicas whose largest coupled deviation reaches N^{-α}.
pub fn a_alpha_frequency(deviations: &[f64], n: usize, alpha: f64) -> f64 {
    if deviations.is_empty() {
        return 0.0;
    }
    let threshold = (n as f64).powf(-alpha);
    deviations.iter().filter(|&&d| d >= threshold).count() as f64 / deviations.len() as f64
}

/// Monte-Carlo estimate of P(max_i |(1/N) Σ_j U(Y_i - Y_j) - (U∗v)(Y_i)| > N^{-θ})
/// for N i.i.d. draws from v; the sum over j includes j = i.
pub fn lln_concentration_test(
    kernel: &(dyn Fn([f64; 3]) -> f64 + Sync),
    kernel_average: &(dyn Fn([f64; 3]) -> f64 + Sync),
    sample: &(dyn Fn(&mut rand_chacha::ChaCha8Rng) -> [f64; 3] + Sync),
    n: usize,
    theta: f64,
    trials: usize,
    seed: u64,
) -> f64 {
    let threshold = (n as f64).powf(-theta);
    let key = NoiseKey::new(seed, n as u64, StreamDomain::Concentration);
    let hits = (0..trials as u64)
        .filter(|&trial| {
            let mut rng = key.rng(trial, 0);
            let ys: Vec<[f64; 3]> = (0..n).map(|_| sample(&mut rng)).collect();
            ys.iter().any(|yi| {
                let avg = ys.iter().map(|yj| kernel([yi[0] - yj[0], yi[1] - yj[1], yi[2] - yj[2]])).sum::<f64>() / n as f64;
                (avg - kernel_average(*yi)).abs() > threshold
            })
        })
        .count();
    hits as f64 / trials as f64
}

/// Floor applied to both densities before taking logarithms.
pub const KL_FLOOR: f64 = 1e-12;

/// h³ Σ p log(p/q) after flooring at 1e-12 and renormalizing both to unit
/// mass, so the value is nonnegative.
pub fn kl_proxy(marginal: &DensityField, rho: &DensityField) -> Result<f64> {
    check_same_grid(marginal.spec, rho.spec)?;
    let dv = rho.spec.cell_volume();
    let floored = |f: &DensityField| -> Vec<f64> {
        let v: Vec<f64> = f.values.iter().map(|x| x.max(KL_FLOOR)).collect();
        let mass = v.iter().sum::<f64>() * dv;
        v.into_iter().map(|x| x / mass).collect()
    };
    let (p, q) = (floored(marginal), floored(rho));
    let kl: f64 = p.iter().zip(&q).map(|(p, q)| p * (p / q).ln()).sum::<f64>() * dv;
    Ok(kl.max(0.0))
}

/// Csiszár-Kullback-Pinsker: L1² ≤ 2 KL, with 10% relative slack for quadrature.
pub fn pinsker_holds(l1: f64, kl: f64) -> bool {
    l1 * l1 <= 2.0 * kl * 1.1
}

/// Inputs of a chaos study.
#[derive(Debug, Clone)]
pub struct ChaosSetup {
    pub rho0: GaussianMixture,
    pub params: PhysicsParams,
    pub kernel: KernelConfig,
    pub pde: PdeConfig,
    pub sde: SdeConfig,
    pub cost: CostConfig,
    pub chaos: ChaosConfig,
    pub grid: GridSpec,
    pub f: ControlField,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosCell {
    pub n: usize,
    pub seed: u64,
    pub eps: f64,
    /// L1(marginal, ρ) per snapshot and its sup.
    pub l1_by_time: Vec<f64>,
    pub sup_l1: f64,
    pub a_alpha_frequency: f64,
    pub median_deviation: f64,
    /// KL proxy per snapshot and the Pinsker check on every snapshot.
    pub kl_by_time: Vec<f64>,
    pub pinsker_ok: bool,
    pub escaped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosSummary {
    pub n: usize,
    pub median_sup_l1: f64,
    pub iqr_sup_l1: f64,
    pub median_frequency: f64,
    pub median_max_kl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosReport {
    pub schedule: Vec<usize>,
    pub times: Vec<f64>,
    pub cells: Vec<ChaosCell>,
    pub per_n: Vec<ChaosSummary>,
    /// Least-squares slope of log median sup L1 against log N.
    pub slope: f64,
    /// Percentile bootstrap 95% interval of the slope, resampling replicas.
    pub slope_ci: [f64; 2],
}

impl ChaosReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["n", "seed", "eps", "sup_l1", "a_alpha_frequency", "median_deviation", "max_kl", "pinsker_ok", "escaped"])?;
        for c in &self.cells {
            let max_kl = c.kl_by_time.iter().copied().fold(0.0, f64::max);
            w.write_record([
                c.n.to_string(),
                c.seed.to_string(),
                c.eps.to_string(),
                c.sup_l1.to_string(),
                c.a_alpha_frequency.to_string(),
                c.median_deviation.to_string(),
                max_kl.to_string(),
                c.pinsker_ok.to_string(),
                c.escaped.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Replica-averaged smoothed empirical measure per snapshot; `weights[r]`
/// counts how often replica r is used.
fn marginal(cost: &ParticleCost, runs: &[ReplicaRun], weights: &[usize], times: &[f64]) -> Vec<DensityField> {
    let grid = cost.grid();
    let total: usize = weights.iter().sum();
    times
        .iter()
        .enumerate()
        .map(|(s, &t)| {
            let mut raw = DensityField::zeros(grid, t);
            for (run, &w) in runs.iter().zip(weights) {
                if w > 0 {
                    deposit_into(&mut raw.values, grid, &run.snapshots[s], w as f64 / (cost.n * total) as f64);
                }
            }
            let mut m = cost.smooth(&raw);
            m.time = t;
            m
        })
        .collect()
}

fn sup(values: &[f64]) -> f64 {
    values.iter().copied().fold(0.0, f64::max)
}

/// For every (N, seed): coupled runs under f with ε = N^{-β}, the marginal
/// distance to the Keller-Segel solution, the A_α frequency and the KL proxy.
pub fn chaos_study(setup: &ChaosSetup) -> Result<ChaosReport> {
    let v = setup.chaos.violations(&setup.sde);
    if !v.is_empty() {
        return Err(Error::Config(v));
    }
    let schedule = &setup.chaos.schedule;
    let seeds = &setup.chaos.seeds;
    let replicas = setup.chaos.replicas;
    let rho = PdeCost::new(&setup.rho0, &setup.params, &setup.pde, &setup.cost, setup.grid).solve(&setup.f)?;
    let times = rho.times();
    let mut cells = Vec::new();
    // per (N, seed): the evaluator and its runs, kept for the bootstrap
    let mut kept: Vec<(ParticleCost, Vec<ReplicaRun>)> = Vec::new();
    for &n in schedule {
        for &seed in seeds {
            let cost = ParticleCost::new(
                n,
                &setup.rho0,
                &setup.params,
                &setup.kernel,
                &setup.sde,
                &setup.cost,
                setup.grid,
                seed,
            )?;
            let rho_eps =
                PdeCost::new(&setup.rho0, &setup.params, &setup.pde, &setup.cost, setup.grid).regularized(cost.table().clone());
            let drift = cost.mean_field(&rho_eps.solve(&setup.f)?);
            let eval = cost.evaluate(&setup.f, Some(&drift), replicas)?;
            let m = marginal(&cost, &eval.runs, &vec![1; replicas], &times);
            let l1_by_time = l1_marginal_distance(&m, &rho)?;
            let kl_by_time = m.iter().zip(&rho.snapshots).map(|(a, b)| kl_proxy(a, b)).collect::<Result<Vec<_>>>()?;
            let pinsker_ok = l1_by_time.iter().zip(&kl_by_time).all(|(l, k)| pinsker_holds(*l, *k));
            cells.push(ChaosCell {
                n,
                seed,
                eps: cost.eps(),
                sup_l1: sup(&l1_by_time),
                l1_by_time,
                a_alpha_frequency: a_alpha_frequency(&eval.deviations, n, setup.sde.alpha),
                median_deviation: median(&eval.deviations),
                kl_by_time,
                pinsker_ok,
                escaped: eval.escaped,
            });
            kept.push((cost, eval.runs));
        }
    }
    let per_n: Vec<ChaosSummary> = schedule
        .iter()
        .map(|&n| {
            let cs: Vec<&ChaosCell> = cells.iter().filter(|c| c.n == n).collect();
            let l1: Vec<f64> = cs.iter().map(|c| c.sup_l1).collect();
            ChaosSummary {
                n,
                median_sup_l1: median(&l1),
                iqr_sup_l1: quantile(&l1, 0.75) - quantile(&l1, 0.25),
                median_frequency: median(&cs.iter().map(|c| c.a_alpha_frequency).collect::<Vec<_>>()),
                median_max_kl: median(&cs.iter().map(|c| sup(&c.kl_by_time)).collect::<Vec<_>>()),
            }
        })
        .collect();
    let log_n: Vec<f64> = schedule.iter().map(|&n| (n as f64).ln()).collect();
    let slope_of = |medians: &[f64]| linear_fit(&log_n, &medians.iter().map(|m| m.ln()).collect::<Vec<_>>()).0;
    let slope = slope_of(&per_n.iter().map(|s| s.median_sup_l1).collect::<Vec<_>>());

    let key = NoiseKey::new(seeds[0], 0, StreamDomain::Bootstrap);
    let mut slopes = Vec::with_capacity(setup.chaos.bootstrap);
    for b in 0..setup.chaos.bootstrap as u64 {
        let mut rng = key.rng(b, 0);
        let mut medians = Vec::with_capacity(schedule.len());
        for (k, _) in schedule.iter().enumerate() {
            let mut sups = Vec::with_capacity(seeds.len());
            for (cost, runs) in &kept[k * seeds.len()..(k + 1) * seeds.len()] {
                let mut weights = vec![0usize; runs.len()];
                for _ in 0..runs.len() {
                    weights[rng.gen_range(0..runs.len())] += 1;
                }
                let m = marginal(cost, runs, &weights, &times);
                sups.push(sup(&l1_marginal_distance(&m, &rho)?));
            }
            medians.push(median(&sups));
        }
        slopes.push(slope_of(&medians));
    }
    let slope_ci = [quantile(&slopes, 0.025), quantile(&slopes, 0.975)];
    Ok(ChaosReport { schedule: schedule.clone(), times, cells, per_n, slope, slope_ci })
}

/// Sampling-only baseline: the smoothed pooled deposit of R replicas of N
/// exact draws from a mixture, against the same mixture on the grid.
pub fn sampling_baseline(mix: &GaussianMixture, cost: &ParticleCost, replicas: usize) -> f64 {
    let grid = cost.grid();
    let mut raw = DensityField::zeros(grid, 0.0);
    for r in 0..replicas as u64 {
        let ens = sample_initial(cost.n, mix, cost.seed, r);
        deposit_into(&mut raw.values, grid, &ens.positions, 1.0 / (cost.n * replicas) as f64);
    }
    cost.smooth(&raw).l1_distance(&mix.sample_grid(grid)).expect("same grid")
}
