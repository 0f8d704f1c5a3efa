use std::f64::consts::PI;
use std::path::Path;

use serde::Serialize;

use super::{bump, bump_mass, KernelConfig, PhysicsParams, COULOMB};
use crate::error::{Error, Result};
use crate::numerics::{gauss_legendre, integrate};

/// Finite-difference sup-norm estimates of the derivatives of the mollified kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SupNorms {
    pub grad: f64,
    pub hessian: f64,
    pub third: f64,
}

/// Radial table of the mollified cutoff kernel and its derivative on [0, 4ε].
///
/// Beyond the table the kernel is exactly Coulomb, so lookups fall back to
/// the closed form there.
#[derive(Debug, Clone)]
pub struct KernelTable {
    eps: f64,
    dr: f64,
    inv_dr: f64,
    r_max: f64,
    r_grid: Vec<f64>,
    phi_eps: Vec<f64>,
    dphi_eps: Vec<f64>,
    bounds: SupNorms,
}

struct Tabulation {
    phi: Vec<f64>,
    dphi: Vec<f64>,
}

/// The cutoff kernel is the potential of a unit charge spread uniformly on
/// the sphere of radius 2ε; mollifying it mollifies that charge. The table
/// integrates the smoothed charge density radially (enclosed charge gives
/// the derivative, Newton's shell theorem gives the value).
fn tabulate(eps: f64, points: usize, quad: usize, panel: usize) -> Tabulation {
    let shell = 2.0 * eps;
    let inner = gauss_legendre(quad);
    let panel_rule = gauss_legendre(panel);
    let norm = bump_mass();
    // ∫_0^τ j_ε(σ) σ dσ
    let partial = |tau: f64| -> f64 {
        let s = (tau / eps).min(1.0);
        if s <= 0.0 {
            return 0.0;
        }
        integrate(&inner, 0.0, s, |u| bump(u) * u) / (norm * eps)
    };
    let full = partial(eps);
    // density of the mollified shell charge at radius t
    let charge = |t: f64| -> f64 {
        let gap = (t - shell).abs();
        if gap >= eps || t <= 0.0 {
            0.0
        } else {
            (full - partial(gap)) / (2.0 * t * shell)
        }
    };

    let r_max = 4.0 * eps;
    let dr = r_max / (points - 1) as f64;
    let mut enclosed = vec![0.0; points];
    let mut moment = vec![0.0; points];
    for k in 1..points {
        let (a, b) = ((k - 1) as f64 * dr, k as f64 * dr);
        let (mut e, mut m) = (0.0, 0.0);
        if b > eps && a < 3.0 * eps {
            e = integrate(&panel_rule, a, b, |t| charge(t) * 4.0 * PI * t * t);
            m = integrate(&panel_rule, a, b, |t| charge(t) * t);
        }
        enclosed[k] = enclosed[k - 1] + e;
        moment[k] = moment[k - 1] + m;
    }
    let total_moment = moment[points - 1];
    let mut phi = vec![0.0; points];
    let mut dphi = vec![0.0; points];
    phi[0] = total_moment;
    for k in 1..points {
        let r = k as f64 * dr;
        phi[k] = enclosed[k] / (4.0 * PI * r) + (total_moment - moment[k]);
        dphi[k] = -enclosed[k] / (4.0 * PI * r * r);
    }
    Tabulation { phi, dphi }
}

fn sup_norms(dphi: &[f64], dr: f64) -> SupNorms {
    let n = dphi.len();
    let grad = dphi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut hessian = 0.0f64;
    let mut third = 0.0f64;
    for k in 1..n - 1 {
        let r = k as f64 * dr;
        let d2 = (dphi[k + 1] - dphi[k - 1]) / (2.0 * dr);
        let d3 = (dphi[k + 1] - 2.0 * dphi[k] + dphi[k - 1]) / (dr * dr);
        let tangential = dphi[k] / r;
        hessian = hessian.max(d2.abs()).max(tangential.abs());
        third = third.max(d3.abs()).max(((d2 - tangential) / r).abs());
    }
    SupNorms { grad, hessian, third }
}

/// Builds the table twice at increasing quadrature order and fails if the
/// two disagree by more than 1e-8 relative to the kernel scale.
pub fn build_kernel_table(cfg: &KernelConfig, params: &PhysicsParams) -> Result<KernelTable> {
    let violations = cfg.violations(params);
    if !violations.is_empty() {
        return Err(Error::Config(violations));
    }
    let eps = cfg.eps;
    let points = cfg.table_points;
    let coarse = tabulate(eps, points, cfg.quad_points, 4);
    let fine = tabulate(eps, points, 2 * cfg.quad_points, 8);
    let phi_scale = fine.phi[0].abs();
    let dphi_scale = fine.dphi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut worst = 0.0f64;
    for k in 0..points {
        worst = worst
            .max((coarse.phi[k] - fine.phi[k]).abs() / phi_scale)
            .max((coarse.dphi[k] - fine.dphi[k]).abs() / dphi_scale);
    }
    if worst > 1e-8 || !worst.is_finite() {
        return Err(Error::Quadrature(format!(
            "kernel table for eps={eps} changed by {worst:e} under refinement"
        )));
    }
    let r_max = 4.0 * eps;
    let dr = r_max / (points - 1) as f64;
    let bounds = sup_norms(&fine.dphi, dr);
    Ok(KernelTable {
        eps,
        dr,
        inv_dr: 1.0 / dr,
        r_max,
        r_grid: (0..points).map(|k| k as f64 * dr).collect(),
        phi_eps: fine.phi,
        dphi_eps: fine.dphi,
        bounds,
    })
}

impl KernelTable {
    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn r_grid(&self) -> &[f64] {
        &self.r_grid
    }

    pub fn phi_samples(&self) -> &[f64] {
        &self.phi_eps
    }

    pub fn dphi_samples(&self) -> &[f64] {
        &self.dphi_eps
    }

    pub fn bounds(&self) -> SupNorms {
        self.bounds
    }

    /// Radius beyond which the mollified kernel equals the Coulomb potential.
    pub fn coulomb_radius(&self) -> f64 {
        3.0 * self.eps
    }

    #[inline]
    fn lerp(&self, values: &[f64], r: f64) -> f64 {
        let x = r * self.inv_dr;
        let i = (x as usize).min(values.len() - 2);
        let f = x - i as f64;
        values[i] + f * (values[i + 1] - values[i])
    }

    /// Mollified kernel value at radius r >= 0.
    #[inline]
    pub fn phi(&self, r: f64) -> f64 {
        if r >= self.r_max {
            COULOMB / r
        } else {
            self.lerp(&self.phi_eps, r)
        }
    }

    /// Radial derivative of the mollified kernel at radius r >= 0.
    #[inline]
    pub fn dphi(&self, r: f64) -> f64 {
        if r >= self.r_max {
            -COULOMB / (r * r)
        } else {
            self.lerp(&self.dphi_eps, r)
        }
    }

    /// Spacing of the radial samples.
    pub fn spacing(&self) -> f64 {
        self.dr
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["r", "phi_eps", "dphi_eps"])?;
        for k in 0..self.r_grid.len() {
            w.write_record(&[
                format!("{:e}", self.r_grid[k]),
                format!("{:e}", self.phi_eps[k]),
                format!("{:e}", self.dphi_eps[k]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{mollifier, phi_tilde};
    use crate::numerics::loglog_fit;

    fn params() -> PhysicsParams {
        PhysicsParams::new(0.5, 0.25, 4.0)
    }

    fn table(eps: f64) -> KernelTable {
        build_kernel_table(&KernelConfig::new(eps), &params()).unwrap()
    }

    #[test]
    fn matches_coulomb_outside_three_eps() {
        let t = table(0.1);
        assert!((t.phi(0.5) / (COULOMB / 0.5) - 1.0).abs() < 1e-6);
        for (k, &r) in t.r_grid().iter().enumerate() {
            if r >= 3.0 * t.eps() {
                let rel = (t.phi_samples()[k] * r / COULOMB - 1.0).abs();
                assert!(rel < 1e-6, "r={r} rel={rel}");
                let rel = (t.dphi_samples()[k] * r * r / -COULOMB - 1.0).abs();
                assert!(rel < 1e-6, "r={r} rel={rel}");
            }
        }
    }

    #[test]
    fn monotone_with_vanishing_slope_at_origin() {
        let t = table(0.05);
        assert_eq!(t.dphi_samples()[0], 0.0);
        assert!(t.dphi_samples().iter().all(|&d| d <= 0.0));
        assert!(t.phi_samples().windows(2).all(|w| w[1] <= w[0] + 1e-15));
    }

    #[test]
    fn origin_value_matches_tensor_quadrature() {
        // ∫ j_ε(y) Φ̃(y) dy by a midpoint rule on the cube [-ε, ε]^3
        let eps = 0.1;
        let t = table(eps);
        let n = 160;
        let h = 2.0 * eps / n as f64;
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let y = [
                        -eps + (i as f64 + 0.5) * h,
                        -eps + (j as f64 + 0.5) * h,
                        -eps + (k as f64 + 0.5) * h,
                    ];
                    let r = (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt();
                    acc += mollifier(y, eps) * phi_tilde(r, eps);
                }
            }
        }
        let oracle = acc * h * h * h;
        assert!((t.phi(0.0) / oracle - 1.0).abs() < 1e-4, "{} vs {}", t.phi(0.0), oracle);
    }

    #[test]
    fn gradient_sup_scales_like_inverse_square() {
        let eps = [0.2, 0.1, 0.05];
        let sups: Vec<f64> = eps.iter().map(|&e| table(e).bounds().grad).collect();
        let (slope, _) = loglog_fit(&eps, &sups);
        assert!((-2.3..=-1.7).contains(&slope), "slope {slope}");
    }

    #[test]
    fn kernel_is_self_similar() {
        // Φ̃_ε(r) = Φ̃_1(r/ε)/ε in three dimensions
        let a = table(0.2);
        let b = table(0.1);
        for &s in &[0.0, 0.3, 1.1, 2.0, 2.9] {
            assert!((a.phi(0.2 * s) * 0.2 - b.phi(0.1 * s) * 0.1).abs() < 1e-9);
        }
    }

    #[test]
    fn derivative_table_is_consistent_with_values() {
        let t = table(0.1);
        let h = 1e-4;
        for &r in &[0.05, 0.12, 0.2, 0.27] {
            let fd = (t.phi(r + h) - t.phi(r - h)) / (2.0 * h);
            assert!((fd - t.dphi(r)).abs() < 1e-4 * t.bounds().grad, "r={r}");
        }
    }

    #[test]
    fn rejects_invalid_config() {
        let mut cfg = KernelConfig::new(0.1);
        cfg.table_points = 10;
        assert!(build_kernel_table(&cfg, &params()).is_err());
    }
}
