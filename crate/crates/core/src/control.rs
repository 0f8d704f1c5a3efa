//! Admissible controls: Gaussian bumps with piecewise-constant coefficients
//! in time, their W^{1,q} norms and the radial projection onto the bound l(t).

use serde::{Deserialize, Serialize};

use crate::grid::{DensityField, GridSpec};
use crate::kernels::DIM;

/// Unnormalized bump exp(-|x - c|² / 2w²), peak value 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bump {
    pub center: [f64; 3],
    pub width: f64,
}

impl Bump {
    #[inline]
    pub fn value(&self, x: [f64; 3]) -> f64 {
        let r2: f64 = (0..3).map(|a| (x[a] - self.center[a]).powi(2)).sum();
        (-r2 / (2.0 * self.width * self.width)).exp()
    }

    #[inline]
    pub fn gradient(&self, x: [f64; 3]) -> [f64; 3] {
        let v = self.value(x);
        let s = -v / (self.width * self.width);
        [s * (x[0] - self.center[0]), s * (x[1] - self.center[1]), s * (x[2] - self.center[2])]
    }
}

/// The bound l(t) on the spatial W^{1,q} norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundProfile {
    Constant(f64),
    /// One value per control time bin.
    PerBin(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSpaceSpec {
    /// Sobolev exponent, > 3.
    pub q: f64,
    /// Time integrability exponent of l, > 2.
    pub r: f64,
    pub bound: BoundProfile,
    /// Number of equal time bins over [0, T].
    pub bins: usize,
    pub basis: Vec<Bump>,
}

impl ControlSpaceSpec {
    pub fn violations(&self, grid: GridSpec) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.q > DIM as f64) {
            v.push(format!("control_space.q must exceed the dimension 3, got {}", self.q));
        }
        if !(self.r > 2.0) {
            v.push(format!("control_space.r must exceed 2, got {}", self.r));
        }
        if self.bins == 0 {
            v.push("control_space.bins must be >= 1".into());
        }
        match &self.bound {
            BoundProfile::Constant(l) if !(*l > 0.0 && l.is_finite()) => {
                v.push(format!("control_space.bound must be > 0, got {l}"))
            }
            BoundProfile::PerBin(ls) => {
                if ls.len() != self.bins {
                    v.push(format!("control_space.bound.per_bin needs {} values, got {}", self.bins, ls.len()));
                }
                if ls.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
                    v.push("control_space.bound.per_bin values must be > 0".into());
                }
            }
            _ => {}
        }
        for (b, bump) in self.basis.iter().enumerate() {
            if !(bump.width >= 2.0 * grid.h()) {
                v.push(format!(
                    "control_space.basis[{b}].width {} must be at least 2h = {}",
                    bump.width,
                    2.0 * grid.h()
                ));
            }
        }
        v
    }

    pub fn bound_in_bin(&self, bin: usize) -> f64 {
        match &self.bound {
            BoundProfile::Constant(l) => *l,
            BoundProfile::PerBin(ls) => ls[bin],
        }
    }

    /// ‖l‖_{L^r(0,T)}.
    pub fn lr_norm_of_l(&self, horizon: f64) -> f64 {
        match &self.bound {
            BoundProfile::Constant(l) => l * horizon.powf(1.0 / self.r),
            BoundProfile::PerBin(ls) => {
                let dt = horizon / ls.len() as f64;
                (ls.iter().map(|l| l.powf(self.r)).sum::<f64>() * dt).powf(1.0 / self.r)
            }
        }
    }
}

/// f(t, x) = Σ_b coeffs[bin(t)][b] G_b(x).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlField {
    pub spec: ControlSpaceSpec,
    pub horizon: f64,
    /// bins × basis size.
    pub coeffs: Vec<Vec<f64>>,
}

impl ControlField {
    pub fn zero(spec: ControlSpaceSpec, horizon: f64) -> Self {
        let coeffs = vec![vec![0.0; spec.basis.len()]; spec.bins];
        Self { spec, horizon, coeffs }
    }

    /// Row-major coefficients; panics on a length mismatch.
    pub fn from_flat(spec: ControlSpaceSpec, horizon: f64, flat: &[f64]) -> Self {
        let b = spec.basis.len();
        assert_eq!(flat.len(), spec.bins * b, "coefficient count");
        let coeffs = flat.chunks(b.max(1)).map(|row| row.to_vec()).take(spec.bins).collect();
        Self { spec, horizon, coeffs }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.coeffs.iter().flatten().copied().collect()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().flatten().all(|&c| c == 0.0)
    }

    pub fn bins(&self) -> usize {
        self.spec.bins
    }

    /// Bin containing t; bin edges belong to the later bin, T to the last.
    pub fn bin(&self, t: f64) -> usize {
        let m = self.spec.bins;
        ((t / self.horizon * m as f64).floor().max(0.0) as usize).min(m - 1)
    }

    pub fn bin_edges(&self) -> Vec<f64> {
        (0..=self.spec.bins).map(|k| self.horizon * k as f64 / self.spec.bins as f64).collect()
    }

    pub fn eval_in_bin(&self, bin: usize, x: [f64; 3]) -> f64 {
        self.coeffs[bin].iter().zip(&self.spec.basis).map(|(c, g)| c * g.value(x)).sum()
    }

    pub fn eval(&self, t: f64, x: [f64; 3]) -> f64 {
        self.eval_in_bin(self.bin(t), x)
    }

    pub fn gradient_in_bin(&self, bin: usize, x: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (c, g) in self.coeffs[bin].iter().zip(&self.spec.basis) {
            if *c != 0.0 {
                let d = g.gradient(x);
                for a in 0..3 {
                    out[a] += c * d[a];
                }
            }
        }
        out
    }

    pub fn eval_grid_bin(&self, bin: usize, grid: GridSpec) -> DensityField {
        DensityField::from_fn(grid, 0.0, |x| self.eval_in_bin(bin, x))
    }

    pub fn eval_grid(&self, t: f64, grid: GridSpec) -> DensityField {
        let mut field = self.eval_grid_bin(self.bin(t), grid);
        field.time = t;
        field
    }

    /// (h³ Σ |f|^q + |∇f|^q)^(1/q) over the grid nodes with the analytic gradient.
    pub fn w1q_norm(&self, bin: usize, grid: GridSpec) -> f64 {
        if self.coeffs[bin].iter().all(|&c| c == 0.0) {
            return 0.0;
        }
        let q = self.spec.q;
        let mut acc = 0.0;
        for idx in 0..grid.len() {
            let x = grid.node(idx);
            let g = self.gradient_in_bin(bin, x);
            let g2 = g[0] * g[0] + g[1] * g[1] + g[2] * g[2];
            acc += self.eval_in_bin(bin, x).abs().powf(q) + g2.powf(0.5 * q);
        }
        (acc * grid.cell_volume()).powf(1.0 / q)
    }

    /// Scales each bin whose norm exceeds its bound back onto the bound.
    /// Bins within a relative 1e-9 of the bound are left alone, which makes
    /// the map idempotent.
    pub fn project(&self, grid: GridSpec) -> ControlField {
        let mut out = self.clone();
        for bin in 0..self.spec.bins {
            let norm = self.w1q_norm(bin, grid);
            let bound = self.spec.bound_in_bin(bin);
            if norm > bound * (1.0 + 1e-9) {
                let s = bound / norm;
                out.coeffs[bin].iter_mut().for_each(|c| *c *= s);
            }
        }
        out
    }

    pub fn is_feasible(&self, grid: GridSpec) -> bool {
        (0..self.spec.bins).all(|b| self.w1q_norm(b, grid) <= self.spec.bound_in_bin(b) * (1.0 + 1e-6))
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::numerics::{gauss_legendre, integrate};

    fn space(bins: usize) -> ControlSpaceSpec {
        ControlSpaceSpec {
            q: 4.0,
            r: 4.0,
            bound: BoundProfile::Constant(2.0),
            bins,
            basis: vec![Bump { center: [-1.0, 0.0, 0.0], width: 0.6 }],
        }
    }

    fn grid() -> GridSpec {
        GridSpec::new(64, 4.0).unwrap()
    }

    #[test]
    fn zero_control_vanishes() {
        let f = ControlField::zero(space(2), 0.25);
        assert_eq!(f.eval(0.1, [0.3, 0.2, 0.1]), 0.0);
        assert_eq!(f.w1q_norm(0, grid()), 0.0);
    }

    #[test]
    fn single_bump_peaks_at_its_centre() {
        let f = ControlField::from_flat(space(1), 1.0, &[1.0]);
        assert_eq!(f.eval(0.5, [-1.0, 0.0, 0.0]), 1.0);
        assert!(f.eval(0.5, [-0.9, 0.0, 0.0]) < 1.0);
        assert_eq!(f.gradient_in_bin(0, [-1.0, 0.0, 0.0]), [0.0; 3]);
    }

    #[test]
    fn grid_sample_matches_pointwise_eval() {
        let f = ControlField::from_flat(space(2), 0.25, &[0.7, -1.3]);
        let g = grid();
        let field = f.eval_grid(0.2, g);
        for idx in (0..g.len()).step_by(997) {
            assert!((field.values[idx] - f.eval(0.2, g.node(idx))).abs() <= 1e-12);
        }
    }

    #[test]
    fn bins_partition_the_horizon() {
        let f = ControlField::zero(space(4), 1.0);
        assert_eq!(f.bin(0.0), 0);
        assert_eq!(f.bin(0.25), 1);
        assert_eq!(f.bin(0.999), 3);
        assert_eq!(f.bin(1.0), 3);
        assert_eq!(f.bin_edges(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn norm_is_homogeneous() {
        let g = GridSpec::new(32, 4.0).unwrap();
        let f = ControlField::from_flat(space(1), 1.0, &[1.0]);
        let h = ControlField::from_flat(space(1), 1.0, &[-3.5]);
        assert!((h.w1q_norm(0, g) / f.w1q_norm(0, g) - 3.5).abs() < 1e-12);
    }

    #[test]
    fn single_bump_norm_matches_quadrature() {
        let w: f64 = 0.6;
        let q = 4.0;
        let rule = gauss_legendre(200);
        let line = integrate(&rule, -10.0 * w, 10.0 * w, |x| (-q * x * x / (2.0 * w * w)).exp());
        let grad = integrate(&rule, 0.0, 10.0 * w, |r| {
            4.0 * PI * r * r * (r / (w * w)).powf(q) * (-q * r * r / (2.0 * w * w)).exp()
        });
        let oracle = (line.powi(3) + grad).powf(1.0 / q);
        let f = ControlField::from_flat(space(1), 1.0, &[1.0]);
        let got = f.w1q_norm(0, grid());
        assert!((got / oracle - 1.0).abs() <= 1e-3, "{got} vs {oracle}");
    }

    #[test]
    fn projection_scales_only_infeasible_bins() {
        let g = GridSpec::new(32, 4.0).unwrap();
        let unit = ControlField::from_flat(space(2), 1.0, &[1.0, 1.0]).w1q_norm(0, g);
        let over = 2.0 * 2.0 / unit;
        let f = ControlField::from_flat(space(2), 1.0, &[0.5 / unit, over]);
        let p = f.project(g);
        assert_eq!(p.coeffs[0], f.coeffs[0]);
        assert!((p.w1q_norm(1, g) - 2.0).abs() < 1e-12);
        assert!((p.coeffs[1][0] - over / 2.0).abs() < 1e-12);
        assert_eq!(p.project(g), p);
        assert!(p.is_feasible(g));
    }

    #[test]
    fn lr_norm_of_profiles() {
        let mut s = space(1);
        s.bound = BoundProfile::Constant(1.0);
        assert_eq!(s.lr_norm_of_l(1.0), 1.0);
        s.bound = BoundProfile::Constant(2.0);
        assert!((s.lr_norm_of_l(1.0) - 2.0).abs() < 1e-15);
        s.bins = 3;
        s.bound = BoundProfile::PerBin(vec![1.0, 2.0, 0.5]);
        // trapezoid on a fine grid, each constant piece integrated separately
        let pieces = 1000;
        let mut oracle = 0.0;
        for (k, l) in [1.0f64, 2.0, 0.5].iter().enumerate() {
            let a = 0.6 * k as f64 / 3.0;
            let ts: Vec<f64> = (0..=pieces).map(|i| a + 0.2 * i as f64 / pieces as f64).collect();
            let ys = vec![l.powi(4); ts.len()];
            oracle += crate::numerics::trapezoid(&ts, &ys);
        }
        assert!((s.lr_norm_of_l(0.6) - oracle.powf(0.25)).abs() < 1e-10);
    }

    #[test]
    fn serialization_round_trips_exactly() {
        let f = ControlField::from_flat(space(2), 0.25, &[0.1 + 0.2, -1.0 / 3.0]);
        let text = serde_json::to_string(&f).unwrap();
        let back: ControlField = serde_json::from_str(&text).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn bumps_narrower_than_two_cells_are_rejected() {
        let mut s = space(1);
        s.basis[0].width = 0.1;
        assert_eq!(s.violations(grid()).len(), 1);
        assert!(space(1).violations(grid()).is_empty());
    }
}
