//! Coulomb potential, its cutoff at radius 2ε, the bump mollifier and the
//! mollified interaction kernel, all in d = 3.

mod lemmas;
mod table;

use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{gauss_legendre, integrate};

pub use lemmas::{
    grad_cutoff_difference, grad_cutoff_potential, grad_mollified_difference, run_lemma_suite,
    BallProfile, GaussianProfile, LemmaReport, RadialProfile,
};
pub use table::{build_kernel_table, KernelTable, SupNorms};

/// Spatial dimension; the interaction is Coulomb only for d = 3.
pub const DIM: usize = 3;

/// Normalization of the fundamental solution of -Δ in three dimensions.
pub const COULOMB: f64 = 1.0 / (4.0 * PI);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsParams {
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Aggregation strength.
    pub chi: f64,
    /// Time horizon T.
    pub horizon: f64,
    /// Half-width L of the computational box [-L, L]^3.
    pub half_width: f64,
    /// Sign s of the control in the chemoattractant c = Φ∗(ρ + s f); -1
    /// makes f a sink. Flipping it is a sensitivity check only.
    #[serde(default = "default_control_sign")]
    pub control_sign: f64,
}

fn default_dim() -> usize {
    DIM
}

fn default_control_sign() -> f64 {
    -1.0
}

impl PhysicsParams {
    pub fn new(chi: f64, horizon: f64, half_width: f64) -> Self {
        Self { dim: DIM, chi, horizon, half_width, control_sign: default_control_sign() }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.dim != DIM {
            v.push(format!("physics.dim must be 3, got {}", self.dim));
        }
        if !(self.chi >= 0.0 && self.chi.is_finite()) {
            v.push(format!("physics.chi must be finite and >= 0, got {}", self.chi));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            v.push(format!("physics.horizon must be > 0, got {}", self.horizon));
        }
        if !(self.half_width > 0.0 && self.half_width.is_finite()) {
            v.push(format!("physics.half_width must be > 0, got {}", self.half_width));
        }
        if self.control_sign != 1.0 && self.control_sign != -1.0 {
            v.push(format!("physics.control_sign must be 1 or -1, got {}", self.control_sign));
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    /// Regularization radius ε.
    pub eps: f64,
    #[serde(default = "default_table_points")]
    pub table_points: usize,
    #[serde(default = "default_quad_points")]
    pub quad_points: usize,
}

fn default_table_points() -> usize {
    4096
}

fn default_quad_points() -> usize {
    48
}

impl KernelConfig {
    pub fn new(eps: f64) -> Self {
        Self { eps, table_points: default_table_points(), quad_points: default_quad_points() }
    }

    pub fn violations(&self, params: &PhysicsParams) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            v.push(format!("kernel.eps must be > 0, got {}", self.eps));
        } else if 4.0 * self.eps >= params.half_width {
            v.push(format!(
                "kernel support 4*eps = {} must stay inside the box half-width {}",
                4.0 * self.eps,
                params.half_width
            ));
        }
        if self.table_points < 1024 {
            v.push(format!("kernel.table_points must be >= 1024, got {}", self.table_points));
        }
        if self.quad_points < 8 {
            v.push(format!("kernel.quad_points must be >= 8, got {}", self.quad_points));
        }
        v
    }
}

/// Coulomb potential C_3 / r.
pub fn phi(r: f64) -> Result<f64> {
    if r > 0.0 {
        Ok(COULOMB / r)
    } else {
        Err(Error::Domain(format!("Coulomb potential needs r > 0, got {r}")))
    }
}

/// Radial derivative of the Coulomb potential, -C_3 / r^2, for r > 0.
#[inline]
pub fn dphi(r: f64) -> f64 {
    -COULOMB / (r * r)
}

/// Coulomb potential flattened to its value at 2ε inside the ball of radius 2ε.
#[inline]
pub fn phi_tilde(r: f64, eps: f64) -> f64 {
    COULOMB / r.max(2.0 * eps)
}

/// Unnormalized bump exp(-1/(1-s^2)) on s < 1.
#[inline]
pub(crate) fn bump(s: f64) -> f64 {
    if s < 1.0 {
        (-1.0 / (1.0 - s * s)).exp()
    } else {
        0.0
    }
}

/// Mass of the unnormalized bump over the unit ball.
pub(crate) fn bump_mass() -> f64 {
    static MASS: OnceLock<f64> = OnceLock::new();
    *MASS.get_or_init(|| {
        let rule = gauss_legendre(256);
        4.0 * PI * integrate(&rule, 0.0, 1.0, |s| bump(s) * s * s)
    })
}

/// Unit-mass mollifier j_ε as a function of |x|.
#[inline]
pub fn mollifier_radial(r: f64, eps: f64) -> f64 {
    bump(r / eps) / (bump_mass() * eps * eps * eps)
}

/// Unit-mass mollifier j_ε(x) = ε^-3 j(x/ε).
pub fn mollifier(x: [f64; 3], eps: f64) -> f64 {
    mollifier_radial((x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt(), eps)
}

/// C(d, p) = (2 - 4/d)^(-1/(p-1)) (p-1) p^(-p/(p-1)) χ^p.
pub fn c_dp(d: usize, p: f64, chi: f64) -> f64 {
    let d = d as f64;
    (2.0 - 4.0 / d).powf(-1.0 / (p - 1.0)) * (p - 1.0) * p.powf(-p / (p - 1.0)) * chi.powf(p)
}
