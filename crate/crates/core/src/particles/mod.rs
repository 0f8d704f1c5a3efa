//! Euler-Maruyama simulation of the controlled N-particle system and of the
//! McKean-Vlasov system driven by the regularized PDE, sharing Brownian
//! increments particle by particle.

mod forces;
mod simulate;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::density::{standard_normals, GaussianMixture};
use crate::error::{Error, Result};
use crate::kernels::DIM;

pub use forces::{pairwise_drift, ForceMethod};
pub use simulate::{run_ensemble, run_replica, run_replicas, ControlDrift, MeanFieldDrift, ReplicaRun, Simulation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeConfig {
    /// Largest Euler-Maruyama step; steps are aligned with snapshots and control bins.
    pub dt: f64,
    /// ε = N^{-β}.
    pub beta: f64,
    /// Threshold exponent of the deviation event |X - X̄| ≥ N^{-α}.
    pub alpha: f64,
    #[serde(default)]
    pub force_method: ForceMethod,
    /// Particle count of a single `simulate` run.
    #[serde(default = "default_particles")]
    pub particles: usize,
    /// Replica count of a single `simulate` run.
    #[serde(default = "default_replicas")]
    pub replicas: usize,
}

fn default_particles() -> usize {
    1024
}

fn default_replicas() -> usize {
    4
}

impl SdeConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            v.push(format!("sde.dt must be > 0, got {}", self.dt));
        }
        if !(self.beta > 0.0) {
            v.push(format!("sde.beta must be > 0, got {}", self.beta));
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            v.push(format!("sde.alpha must lie in (0, 1/2), got {}", self.alpha));
        }
        if self.particles == 0 {
            v.push("sde.particles must be >= 1".into());
        }
        if self.replicas == 0 {
            v.push("sde.replicas must be >= 1".into());
        }
        v
    }

    /// ε = N^{-β}.
    pub fn eps_for(&self, n: usize) -> f64 {
        (n as f64).powf(-self.beta)
    }
}

/// Positions of one replica; `labels` key the per-particle random streams,
/// so permuting particles together with their labels permutes trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub positions: Vec<[f64; 3]>,
    pub labels: Vec<u64>,
    pub t: f64,
    pub replica: u64,
}

impl ParticleEnsemble {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Independent random stream families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamDomain {
    Initial = 1,
    Brownian = 2,
    Bootstrap = 3,
    Concentration = 4,
}

/// Counter-based generator: the key is (seed, replica, domain), the stream
/// is the particle label and the word position is 16 words per step.
#[derive(Debug, Clone)]
pub struct NoiseKey {
    key: [u8; 32],
}

impl NoiseKey {
    pub fn new(seed: u64, replica: u64, domain: StreamDomain) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&replica.to_le_bytes());
        key[16..24].copy_from_slice(&(domain as u64).to_le_bytes());
        key[24..].copy_from_slice(b"mfclab\0\0");
        Self { key }
    }

    pub fn rng(&self, stream: u64, counter: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(stream);
        rng.set_word_pos(u128::from(counter) * 16);
        rng
    }

    /// Three standard normals for one (stream, counter) cell.
    pub fn normals(&self, stream: u64, counter: u64) -> [f64; 3] {
        standard_normals(&mut self.rng(stream, counter))
    }
}

/// N i.i.d. draws from ρ0, reproducible per (seed, replica).
pub fn sample_initial(n: usize, rho0: &GaussianMixture, seed: u64, replica: u64) -> ParticleEnsemble {
    let key = NoiseKey::new(seed, replica, StreamDomain::Initial);
    let positions = (0..n as u64).map(|i| rho0.sample(&mut key.rng(i, 0))).collect();
    ParticleEnsemble { positions, labels: (0..n as u64).collect(), t: 0.0, replica }
}

/// The exponent bound min{1/(2d), α/(d+1), (1/2-α)/(d-1), |α-θ1|/(2χt)}
/// with the names of the binding terms.
pub fn beta_star(alpha: f64, theta1: f64, chi: f64, t: f64) -> Result<(f64, Vec<&'static str>)> {
    if !(alpha > 0.0 && theta1 > 0.0 && t > 0.0 && chi >= 0.0) {
        return Err(Error::Domain(format!(
            "beta_star needs alpha, theta1, t > 0 and chi >= 0; got alpha={alpha}, theta1={theta1}, chi={chi}, t={t}"
        )));
    }
    if alpha >= theta1 {
        return Err(Error::Domain(format!(
            "exponent constraint alpha < theta1 violated: alpha={alpha}, theta1={theta1}"
        )));
    }
    let d = DIM as f64;
    let gap = (alpha - theta1).abs() / (2.0 * chi * t);
    let terms = [
        ("1/(2d)", 1.0 / (2.0 * d)),
        ("alpha/(d+1)", alpha / (d + 1.0)),
        ("(1/2-alpha)/(d-1)", (0.5 - alpha) / (d - 1.0)),
        ("|alpha-theta1|/(2 chi t)", if chi > 0.0 { gap } else { f64::INFINITY }),
    ];
    let min = terms.iter().map(|t| t.1).fold(f64::INFINITY, f64::min);
    let binding = terms.iter().filter(|t| t.1 <= min * (1.0 + 1e-12)).map(|t| t.0).collect();
    Ok((min, binding))
}

/// The exponent constraints α < θ1, 2βd < 1 and θ1 < 1/2 - β(d-1).
pub fn exponent_violations(alpha: f64, theta1: f64, beta: f64) -> Vec<String> {
    let d = DIM as f64;
    let mut v = Vec::new();
    if !(alpha < theta1) {
        v.push(format!("exponent constraint alpha < theta1 violated: alpha={alpha}, theta1={theta1}"));
    }
    if !(2.0 * beta * d < 1.0) {
        v.push(format!("exponent constraint 2*beta*d < 1 violated: beta={beta}"));
    }
    if !(theta1 < 0.5 - beta * (d - 1.0)) {
        v.push(format!(
            "exponent constraint theta1 < 1/2 - beta*(d-1) violated: theta1={theta1}, bound={}",
            0.5 - beta * (d - 1.0)
        ));
    }
    v
}
