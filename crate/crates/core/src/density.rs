//! Analytic initial and target densities: finite mixtures of isotropic Gaussians.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::grid::{DensityField, GridSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: [f64; 3],
    pub sigma: f64,
}

/// Σ w_k N(m_k, σ_k² I) with Σ w_k = 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianMixture {
    pub components: Vec<GaussianComponent>,
}

impl GaussianMixture {
    pub fn isotropic(mean: [f64; 3], sigma: f64) -> Self {
        Self { components: vec![GaussianComponent { weight: 1.0, mean, sigma }] }
    }

    pub fn violations(&self, name: &str) -> Vec<String> {
        let mut v = Vec::new();
        if self.components.is_empty() {
            v.push(format!("{name} needs at least one component"));
        }
        for (k, c) in self.components.iter().enumerate() {
            if !(c.weight > 0.0 && c.weight.is_finite()) {
                v.push(format!("{name}.components[{k}].weight must be > 0, got {}", c.weight));
            }
            if !(c.sigma > 0.0 && c.sigma.is_finite()) {
                v.push(format!("{name}.components[{k}].sigma must be > 0, got {}", c.sigma));
            }
            if c.mean.iter().any(|m| !m.is_finite()) {
                v.push(format!("{name}.components[{k}].mean must be finite"));
            }
        }
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if !self.components.is_empty() && (total - 1.0).abs() > 1e-12 {
            v.push(format!("{name} weights must sum to 1, got {total}"));
        }
        v
    }

    pub fn density(&self, x: [f64; 3]) -> f64 {
        self.components
            .iter()
            .map(|c| {
                let s2 = c.sigma * c.sigma;
                let r2: f64 = (0..3).map(|a| (x[a] - c.mean[a]).powi(2)).sum();
                c.weight * (-r2 / (2.0 * s2)).exp() / (2.0 * PI * s2).powf(1.5)
            })
            .sum()
    }

    /// E|X|² = Σ w_k (|m_k|² + 3σ_k²).
    pub fn second_moment(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c.weight * (c.mean.iter().map(|m| m * m).sum::<f64>() + 3.0 * c.sigma * c.sigma))
            .sum()
    }

    /// The mixture after running the heat flow ∂_t ρ = Δρ for time t.
    pub fn heat_evolved(&self, t: f64) -> Self {
        let components = self
            .components
            .iter()
            .map(|c| GaussianComponent { sigma: (c.sigma * c.sigma + 2.0 * t).sqrt(), ..*c })
            .collect();
        Self { components }
    }

    /// Component chosen by inverse CDF, then a Box-Muller Gaussian draw.
    pub fn sample(&self, rng: &mut impl Rng) -> [f64; 3] {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut chosen = self.components.last().expect("mixture has components");
        for c in &self.components {
            acc += c.weight;
            if u < acc {
                chosen = c;
                break;
            }
        }
        let z = standard_normals(rng);
        [chosen.mean[0] + chosen.sigma * z[0], chosen.mean[1] + chosen.sigma * z[1], chosen.mean[2] + chosen.sigma * z[2]]
    }

    pub fn sample_grid(&self, spec: GridSpec) -> DensityField {
        DensityField::from_fn(spec, 0.0, |x| self.density(x))
    }
}

/// Three independent standard normals from four uniforms (two Box-Muller pairs).
pub fn standard_normals(rng: &mut impl Rng) -> [f64; 3] {
    let mut out = [0.0; 4];
    for pair in out.chunks_mut(2) {
        // 1 - u keeps the logarithm finite
        let u1: f64 = 1.0 - rng.gen::<f64>();
        let u2: f64 = rng.gen();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * PI * u2;
        pair[0] = radius * angle.cos();
        pair[1] = radius * angle.sin();
    }
    [out[0], out[1], out[2]]
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn two_bumps() -> GaussianMixture {
        GaussianMixture {
            components: vec![
                GaussianComponent { weight: 0.3, mean: [1.0, 0.0, -0.5], sigma: 0.4 },
                GaussianComponent { weight: 0.7, mean: [-0.5, 0.2, 0.0], sigma: 0.7 },
            ],
        }
    }

    #[test]
    fn grid_mass_is_one() {
        let spec = GridSpec::new(64, 4.0).unwrap();
        let mass = two_bumps().sample_grid(spec).mass();
        // the box clips a 5σ tail of the wider component
        assert!((mass - 1.0).abs() < 1e-6, "{mass}");
    }

    #[test]
    fn sample_moments_match() {
        let mix = two_bumps();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200_000;
        let mut m2 = 0.0;
        let mut mean = [0.0; 3];
        for _ in 0..n {
            let x = mix.sample(&mut rng);
            m2 += x.iter().map(|v| v * v).sum::<f64>();
            for a in 0..3 {
                mean[a] += x[a];
            }
        }
        assert!((m2 / n as f64 / mix.second_moment() - 1.0).abs() < 1e-2);
        let exact = [0.3 - 0.35, 0.14, -0.15];
        for a in 0..3 {
            assert!((mean[a] / n as f64 - exact[a]).abs() < 1e-2);
        }
    }

    #[test]
    fn weights_must_sum_to_one() {
        let mut mix = two_bumps();
        mix.components[0].weight = 0.5;
        assert_eq!(mix.violations("rho0").len(), 1);
        assert!(two_bumps().violations("rho0").is_empty());
    }

    #[test]
    fn heat_flow_spreads_each_component() {
        let mix = GaussianMixture::isotropic([0.0; 3], 0.8).heat_evolved(0.1);
        assert!((mix.components[0].sigma.powi(2) - 0.84).abs() < 1e-14);
    }
}
