//! Radial quadratures for the kernel-difference estimates: for a radial
//! density g, the field of Φ∗g at radius x is -M(x)/(4πx²) with M the mass
//! of the source charge inside the ball of radius x. Replacing Φ by the
//! cutoff or mollified kernel replaces the charge g by g smeared over a
//! sphere of radius 2ε or by j_ε∗g, so every field difference reduces to a
//! difference of enclosed masses that is localized near |t - x| < 2ε.

use std::f64::consts::PI;

use serde::Serialize;

use super::{build_kernel_table, mollifier_radial, KernelConfig, PhysicsParams};
use crate::error::Result;
use crate::numerics::{gauss_legendre, integrate_split, loglog_fit};

const RULE: usize = 32;

/// A radially symmetric density on R^3.
pub trait RadialProfile {
    fn density(&self, t: f64) -> f64;
    /// Radius beyond which the density is negligible.
    fn reach(&self) -> f64;
    /// Radii where the density is not smooth.
    fn kinks(&self) -> Vec<f64> {
        Vec::new()
    }
    fn sup(&self) -> f64 {
        self.density(0.0)
    }
    fn l1(&self) -> f64 {
        self.mass_within(self.reach())
    }
    fn mass_within(&self, r: f64) -> f64 {
        let rule = gauss_legendre(64);
        integrate_split(&rule, 0.0, r, &self.kinks(), |t| 4.0 * PI * t * t * self.density(t))
    }
}

/// Unit-mass isotropic Gaussian.
#[derive(Debug, Clone, Copy)]
pub struct GaussianProfile {
    pub sigma: f64,
}

impl RadialProfile for GaussianProfile {
    fn density(&self, t: f64) -> f64 {
        let s2 = self.sigma * self.sigma;
        (-t * t / (2.0 * s2)).exp() / (2.0 * PI * s2).powf(1.5)
    }

    fn reach(&self) -> f64 {
        9.0 * self.sigma
    }
}

/// Uniform unit-mass ball.
#[derive(Debug, Clone, Copy)]
pub struct BallProfile {
    pub radius: f64,
}

impl RadialProfile for BallProfile {
    fn density(&self, t: f64) -> f64 {
        if t < self.radius {
            3.0 / (4.0 * PI * self.radius.powi(3))
        } else {
            0.0
        }
    }

    fn reach(&self) -> f64 {
        self.radius
    }

    fn kinks(&self) -> Vec<f64> {
        vec![self.radius]
    }

    fn mass_within(&self, r: f64) -> f64 {
        (r / self.radius).min(1.0).powi(3)
    }
}

/// Fraction of the sphere of radius s, centred at distance t from the
/// origin, that lies inside the ball of radius x.
#[inline]
pub fn cap_fraction(t: f64, s: f64, x: f64) -> f64 {
    if x >= t + s {
        1.0
    } else if x <= (t - s).abs() {
        0.0
    } else {
        (x * x - (t - s) * (t - s)) / (4.0 * t * s)
    }
}

/// Enclosed-mass change when each point of g is smeared over a sphere of radius `s`.
fn shell_mass_shift(g: &dyn RadialProfile, s: f64, x: f64) -> f64 {
    let rule = gauss_legendre(RULE);
    let lo = (x - s).max(0.0);
    let hi = x + s;
    let mut breaks = vec![x, s - x, s + x];
    breaks.extend(g.kinks());
    integrate_split(&rule, lo, hi, &breaks, |t| {
        let inside = if t < x { 1.0 } else { 0.0 };
        4.0 * PI * t * t * g.density(t) * (cap_fraction(t, s, x) - inside)
    })
}

/// Enclosed-mass change when g is replaced by j_ε∗g.
fn mollified_mass_shift(g: &dyn RadialProfile, eps: f64, x: f64) -> f64 {
    let rule = gauss_legendre(RULE);
    let lo = (x - eps).max(0.0);
    let hi = x + eps;
    let mut breaks = vec![x];
    breaks.extend(g.kinks());
    integrate_split(&rule, lo, hi, &breaks, |t| {
        let inside = if t < x { 1.0 } else { 0.0 };
        let spread = integrate_split(&rule, 0.0, eps, &[(x - t).abs(), x + t], |s| {
            4.0 * PI * s * s * mollifier_radial(s, eps) * cap_fraction(t, s, x)
        });
        4.0 * PI * t * t * g.density(t) * (spread - inside)
    })
}

/// |∇(Φ̃ - Φ)∗g| at radius x.
pub fn grad_cutoff_difference(g: &dyn RadialProfile, eps: f64, x: f64) -> f64 {
    shell_mass_shift(g, 2.0 * eps, x).abs() / (4.0 * PI * x * x)
}

/// |∇(j_ε∗Φ - Φ)∗g| at radius x.
pub fn grad_mollified_difference(g: &dyn RadialProfile, eps: f64, x: f64) -> f64 {
    mollified_mass_shift(g, eps, x).abs() / (4.0 * PI * x * x)
}

/// |∇(Φ̃∗g)| at radius x.
pub fn grad_cutoff_potential(g: &dyn RadialProfile, eps: f64, x: f64) -> f64 {
    (g.mass_within(x) + shell_mass_shift(g, 2.0 * eps, x)).abs() / (4.0 * PI * x * x)
}

/// Maximum of a radial function on (0, x_max]: a uniform scan followed by
/// golden-section refinement around the best sample.
fn sup_radial(f: impl Fn(f64) -> f64, x_max: f64, samples: usize) -> f64 {
    let dx = x_max / samples as f64;
    let mut best = (dx, f(dx));
    for i in 2..=samples {
        let x = i as f64 * dx;
        let v = f(x);
        if v > best.1 {
            best = (x, v);
        }
    }
    let (mut a, mut b) = ((best.0 - dx).max(1e-3 * dx), (best.0 + dx).min(x_max));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..40 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    best.1.max(f(0.5 * (a + b)))
}

/// Results of the kernel lemma suite over an ε sweep.
#[derive(Debug, Clone, Serialize)]
pub struct LemmaReport {
    pub eps: Vec<f64>,
    pub gaussian_sigma: f64,
    /// sup |∇(j_ε∗Φ - Φ)∗g| per ε.
    pub mollified_sup: Vec<f64>,
    pub mollified_slope: f64,
    /// sup |∇(Φ̃ - Φ)∗g| per ε.
    pub cutoff_sup: Vec<f64>,
    pub cutoff_slope: f64,
    /// sup |∇(Φ̃∗g)| / (‖g‖₁ + ‖g‖∞), rows per ε, columns per test density.
    pub field_ratios: Vec<Vec<f64>>,
    /// Smallest constant covering every ratio.
    pub field_constant: f64,
    pub grad_sup: Vec<f64>,
    pub hessian_sup: Vec<f64>,
    pub third_sup: Vec<f64>,
    pub grad_exponent: f64,
    pub hessian_exponent: f64,
    pub third_exponent: f64,
}

pub fn run_lemma_suite(eps_list: &[f64], sigma: f64, params: &PhysicsParams) -> Result<LemmaReport> {
    let g = GaussianProfile { sigma };
    let densities: Vec<Box<dyn RadialProfile>> = vec![
        Box::new(GaussianProfile { sigma: 0.3 }),
        Box::new(GaussianProfile { sigma: 1.0 }),
        Box::new(BallProfile { radius: 0.5 }),
    ];
    let mut report = LemmaReport {
        eps: eps_list.to_vec(),
        gaussian_sigma: sigma,
        mollified_sup: Vec::new(),
        mollified_slope: f64::NAN,
        cutoff_sup: Vec::new(),
        cutoff_slope: f64::NAN,
        field_ratios: Vec::new(),
        field_constant: 0.0,
        grad_sup: Vec::new(),
        hessian_sup: Vec::new(),
        third_sup: Vec::new(),
        grad_exponent: f64::NAN,
        hessian_exponent: f64::NAN,
        third_exponent: f64::NAN,
    };
    for &eps in eps_list {
        let reach = g.reach();
        report.mollified_sup.push(sup_radial(|x| grad_mollified_difference(&g, eps, x), reach, 300));
        report.cutoff_sup.push(sup_radial(|x| grad_cutoff_difference(&g, eps, x), reach, 600));
        let ratios: Vec<f64> = densities
            .iter()
            .map(|d| {
                let reach = d.reach() + 2.0 * eps + 1.0;
                let sup = sup_radial(|x| grad_cutoff_potential(d.as_ref(), eps, x), reach, 400);
                sup / (d.l1() + d.sup())
            })
            .collect();
        report.field_constant = ratios.iter().fold(report.field_constant, |m, &v| m.max(v));
        report.field_ratios.push(ratios);
        let table = build_kernel_table(&KernelConfig::new(eps), params)?;
        let b = table.bounds();
        report.grad_sup.push(b.grad);
        report.hessian_sup.push(b.hessian);
        report.third_sup.push(b.third);
    }
    report.mollified_slope = loglog_fit(eps_list, &report.mollified_sup).0;
    report.cutoff_slope = loglog_fit(eps_list, &report.cutoff_sup).0;
    report.grad_exponent = loglog_fit(eps_list, &report.grad_sup).0;
    report.hessian_exponent = loglog_fit(eps_list, &report.hessian_sup).0;
    report.third_exponent = loglog_fit(eps_list, &report.third_sup).0;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::integrate;

    #[test]
    fn cap_fraction_limits() {
        assert_eq!(cap_fraction(1.0, 0.5, 2.0), 1.0);
        assert_eq!(cap_fraction(1.0, 0.5, 0.4), 0.0);
        // ball through the sphere's centre-facing pole and equator region
        let f = cap_fraction(1.0, 0.5, 1.0);
        assert!((f - (1.0 - 0.25) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn profiles_have_unit_mass() {
        let g = GaussianProfile { sigma: 0.7 };
        assert!((g.l1() - 1.0).abs() < 1e-12);
        let b = BallProfile { radius: 0.5 };
        assert!((b.l1() - 1.0).abs() < 1e-15);
        let generic = b.mass_within(0.25);
        assert!((generic - 0.125).abs() < 1e-15);
    }

    #[test]
    fn cutoff_field_of_point_like_ball_outside_shell_is_coulomb() {
        // outside the smeared support the field is -1/(4πx²) regardless of ε
        let b = BallProfile { radius: 0.1 };
        let x = 1.0;
        let v = grad_cutoff_potential(&b, 0.05, x);
        assert!((v - 1.0 / (4.0 * PI)).abs() < 1e-12);
        assert!(grad_cutoff_difference(&b, 0.05, x) < 1e-14);
    }

    #[test]
    fn cutoff_difference_matches_small_eps_expansion() {
        // (Φ̃ - Φ) integrates to -(2/3)ε², so the field difference is -(2/3)ε²∇g + O(ε⁴)
        let g = GaussianProfile { sigma: 0.5 };
        let eps = 0.01;
        let x = 0.5;
        let s2 = 0.25;
        let grad_g = x / s2 * g.density(x);
        let expected = 2.0 / 3.0 * eps * eps * grad_g;
        let got = grad_cutoff_difference(&g, eps, x);
        assert!((got / expected - 1.0).abs() < 1e-3, "{got} vs {expected}");
    }

    #[test]
    fn mollified_difference_matches_direct_cartesian_quadrature() {
        // oracle: build j_ε∗g by spherical averaging, then difference its enclosed mass
        let g = GaussianProfile { sigma: 0.4 };
        let eps = 0.2;
        let x = 0.45;
        let rule = gauss_legendre(64);
        // (j_ε∗g)(t) by spherical averaging of g at distance t
        let smooth = |t: f64| -> f64 {
            integrate(&rule, 0.0, eps, |s| {
                let avg = integrate(&rule, -1.0, 1.0, |c| {
                    g.density((t * t + s * s + 2.0 * t * s * c).max(0.0).sqrt())
                }) / 2.0;
                4.0 * PI * s * s * mollifier_radial(s, eps) * avg
            })
        };
        let m_smooth = integrate(&rule, 0.0, x, |t| 4.0 * PI * t * t * smooth(t));
        let oracle = (m_smooth - g.mass_within(x)).abs() / (4.0 * PI * x * x);
        let got = grad_mollified_difference(&g, eps, x);
        assert!((got / oracle - 1.0).abs() < 1e-6, "{got} vs {oracle}");
    }
}
