//! Experiment configuration: one TOML file per run, validated as a whole so
//! that every violated constraint is reported at once.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::chaos::ChaosConfig;
use crate::control::{ControlField, ControlSpaceSpec};
use crate::cost::CostConfig;
use crate::density::GaussianMixture;
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::kernels::{c_dp, KernelConfig, PhysicsParams, DIM};
use crate::optimize::OptimConfig;
use crate::particles::{beta_star, SdeConfig};
use crate::pde::{l_d2_power, smallness_condition, PdeConfig, SmallnessReport};

/// Coefficients of the control evaluated by `solve-pde`, `simulate` and
/// `eval-cost`, and the starting point of `optimize`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSettings {
    /// Row-major bins × basis; empty means the zero control.
    #[serde(default)]
    pub coefficients: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelCheckConfig {
    /// Regularization radii of the sweep, decreasing.
    #[serde(default = "default_check_eps")]
    pub eps: Vec<f64>,
    /// Width of the Gaussian test density.
    #[serde(default = "default_check_sigma")]
    pub sigma: f64,
}

fn default_check_eps() -> Vec<f64> {
    vec![0.2, 0.1, 0.05, 0.025]
}

fn default_check_sigma() -> f64 {
    0.5
}

impl Default for KernelCheckConfig {
    fn default() -> Self {
        Self { eps: default_check_eps(), sigma: default_check_sigma() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaConfig {
    #[serde(default = "default_gamma_schedule")]
    pub schedule: Vec<usize>,
    #[serde(default = "default_gamma_seeds")]
    pub seeds: Vec<u64>,
}

fn default_gamma_schedule() -> Vec<usize> {
    vec![256, 1024, 4096]
}

fn default_gamma_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}

impl Default for GammaConfig {
    fn default() -> Self {
        Self { schedule: default_gamma_schedule(), seeds: default_gamma_seeds() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seed of `simulate` and `eval-cost`; `optimize` uses `optim.seed` and
    /// the studies their own seed lists.
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[serde(default)]
    pub threads: usize,
    pub physics: PhysicsParams,
    pub grid: GridSpec,
    pub kernel: KernelConfig,
    pub pde: PdeConfig,
    pub sde: SdeConfig,
    /// Initial density ρ0.
    pub initial: GaussianMixture,
    pub control_space: ControlSpaceSpec,
    #[serde(default)]
    pub control: ControlSettings,
    pub cost: CostConfig,
    #[serde(default)]
    pub optim: OptimConfig,
    pub chaos: ChaosConfig,
    #[serde(default)]
    pub gamma: GammaConfig,
    #[serde(default)]
    pub kernel_check: KernelCheckConfig,
}

/// Quantities resolved from the configuration and echoed in every manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Derived {
    pub h: f64,
    /// ε of the regularized PDE kernel.
    pub eps: f64,
    /// ε = N^{-β} at `sde.particles`.
    pub eps_particles: f64,
    /// ε = N^{-β} along the chaos schedule.
    pub eps_schedule: Vec<(usize, f64)>,
    /// Some ε below 2h: the mollifier spans fewer than two cells.
    pub under_resolved: Vec<String>,
    pub beta_star: Option<f64>,
    pub beta_star_binding: Vec<String>,
    /// C(d, r) at the time exponent r of the control space.
    pub cdp: f64,
    /// C0 = ‖ρ0‖^{3/2}_{L^{3/2}} on the grid.
    pub c0: f64,
    pub smallness: SmallnessReport,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(format!("config: {}", e.message())))
    }

    /// Reads and validates; every violated constraint is returned together.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg = Self::from_toml(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = self.physics.violations();
        v.extend(self.grid.violations());
        if (self.grid.half_width - self.physics.half_width).abs() > 1e-12 {
            v.push(format!(
                "grid.half_width {} must equal physics.half_width {}",
                self.grid.half_width, self.physics.half_width
            ));
        }
        v.extend(self.kernel.violations(&self.physics));
        v.extend(self.pde.violations());
        v.extend(self.sde.violations());
        v.extend(self.initial.violations("initial"));
        v.extend(self.cost.target.violations("cost.target"));
        v.extend(self.cost.violations());
        v.extend(self.optim.violations());
        // the exponent constraints are reported by the chaos settings
        v.extend(self.chaos.violations(&self.sde));
        if self.grid.violations().is_empty() {
            v.extend(self.control_space.violations(self.grid));
        }
        let expected = self.control_space.bins * self.control_space.basis.len();
        if !self.control.coefficients.is_empty() && self.control.coefficients.len() != expected {
            v.push(format!(
                "control.coefficients needs bins * basis = {expected} values, got {}",
                self.control.coefficients.len()
            ));
        }
        if self.cost.snapshots != self.pde.snapshots {
            v.push(format!(
                "cost.snapshots {} must equal pde.snapshots {}",
                self.cost.snapshots, self.pde.snapshots
            ));
        }
        for (name, schedule) in [("chaos.schedule", &self.chaos.schedule), ("gamma.schedule", &self.gamma.schedule)] {
            if let Some(&n) = schedule.iter().find(|&&n| 4.0 * self.sde.eps_for(n.max(1)) >= self.physics.half_width) {
                v.push(format!(
                    "{name}: kernel support 4*eps = {} at N = {n} must stay inside the box half-width {}",
                    4.0 * self.sde.eps_for(n),
                    self.physics.half_width
                ));
            }
        }
        if 4.0 * self.sde.eps_for(self.sde.particles.max(1)) >= self.physics.half_width {
            v.push(format!(
                "kernel support 4*eps at sde.particles = {} must stay inside the box half-width {}",
                self.sde.particles, self.physics.half_width
            ));
        }
        if self.gamma.schedule.is_empty() || self.gamma.schedule.windows(2).any(|w| w[1] <= w[0]) {
            v.push(format!("gamma.schedule must be increasing, got {:?}", self.gamma.schedule));
        }
        if self.gamma.seeds.is_empty() {
            v.push("gamma.seeds must not be empty".into());
        }
        if self.kernel_check.eps.len() < 2 || self.kernel_check.eps.iter().any(|e| !(*e > 0.0)) {
            v.push(format!("kernel_check.eps needs at least two positive radii, got {:?}", self.kernel_check.eps));
        }
        if !(self.kernel_check.sigma > 0.0) {
            v.push(format!("kernel_check.sigma must be > 0, got {}", self.kernel_check.sigma));
        }
        if self.sde.alpha < self.chaos.theta1 && self.physics.chi >= 0.0 && self.physics.horizon > 0.0 {
            if let Ok((bound, _)) = beta_star(self.sde.alpha, self.chaos.theta1, self.physics.chi, self.physics.horizon) {
                if !(self.sde.beta < bound) {
                    v.push(format!("sde.beta = {} must lie below beta_star = {bound}", self.sde.beta));
                }
            }
        }
        v
    }

    /// The control of the evaluation subcommands.
    pub fn control_field(&self) -> ControlField {
        if self.control.coefficients.is_empty() {
            ControlField::zero(self.control_space.clone(), self.physics.horizon)
        } else {
            ControlField::from_flat(self.control_space.clone(), self.physics.horizon, &self.control.coefficients)
        }
    }

    /// Assumes a validated configuration.
    pub fn derived(&self) -> Derived {
        let h = self.grid.h();
        let eps_schedule: Vec<(usize, f64)> = self.chaos.schedule.iter().map(|&n| (n, self.sde.eps_for(n))).collect();
        let eps_particles = self.sde.eps_for(self.sde.particles);
        let mut under_resolved = Vec::new();
        let mut flag = |name: String, eps: f64| {
            if eps < 2.0 * h {
                under_resolved.push(format!("{name}: eps = {eps} < 2h = {}", 2.0 * h));
            }
        };
        flag("kernel.eps".into(), self.kernel.eps);
        flag(format!("N = {}", self.sde.particles), eps_particles);
        for &(n, eps) in &eps_schedule {
            flag(format!("N = {n}"), eps);
        }
        let (beta_star, beta_star_binding) =
            match beta_star(self.sde.alpha, self.chaos.theta1, self.physics.chi, self.physics.horizon) {
                Ok((b, names)) => (Some(b), names.into_iter().map(String::from).collect()),
                Err(_) => (None, Vec::new()),
            };
        let c0 = l_d2_power(&self.initial.sample_grid(self.grid));
        let smallness = smallness_condition(
            c0,
            self.physics.chi,
            self.control_space.r,
            self.control_space.lr_norm_of_l(self.physics.horizon),
        );
        Derived {
            h,
            eps: self.kernel.eps,
            eps_particles,
            eps_schedule,
            under_resolved,
            beta_star,
            beta_star_binding,
            cdp: c_dp(DIM, self.control_space.r, self.physics.chi),
            c0,
            smallness,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DEFAULT: &str = include_str!("../../../configs/default.toml");

    #[test]
    fn the_shipped_scenario_is_valid_and_small() {
        let cfg = ExperimentConfig::from_toml(DEFAULT).unwrap();
        assert_eq!(cfg.violations(), Vec::<String>::new());
        let d = cfg.derived();
        assert!(d.smallness.satisfied, "{:?}", d.smallness);
        assert!(cfg.sde.beta < d.beta_star.unwrap());
        // Gaussian σ: C0 = (2πσ²)^{-9/4} (4πσ²/3)^{3/2}
        let s2 = 0.64;
        let c0 = (2.0 * std::f64::consts::PI * s2).powf(-2.25) * (4.0 * std::f64::consts::PI * s2 / 3.0).powf(1.5);
        assert!((d.c0 / c0 - 1.0).abs() < 1e-3, "{} vs {c0}", d.c0);
    }

    #[test]
    fn every_violation_is_listed() {
        let mut cfg = ExperimentConfig::from_toml(DEFAULT).unwrap();
        cfg.sde.alpha = 0.45;
        cfg.grid.n = 50;
        cfg.cost.snapshots = 3;
        cfg.control.coefficients = vec![1.0];
        let v = cfg.violations();
        for needle in ["alpha < theta1", "grid.n", "cost.snapshots", "control.coefficients"] {
            assert!(v.iter().any(|m| m.contains(needle)), "{needle} missing from {v:?}");
        }
    }

    #[test]
    fn beta_above_the_bound_is_rejected() {
        let mut cfg = ExperimentConfig::from_toml(DEFAULT).unwrap();
        cfg.sde.beta = 0.1;
        assert!(cfg.violations().iter().any(|m| m.contains("beta_star")));
    }

    #[test]
    fn unknown_keys_are_format_errors() {
        let text = format!("{DEFAULT}\nbogus = 1\n");
        assert!(matches!(ExperimentConfig::from_toml(&text), Err(Error::Format(_))));
    }
}
