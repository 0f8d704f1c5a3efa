//! Uniform node grids on [-L, L]^3: densities, cloud-in-cell deposits,
//! trilinear interpolation, discrete norms and free-space convolution.

mod convolve;
mod fft;
mod io;
mod stencil;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use convolve::FreeSpaceConvolver;
pub use fft::{fft_size, RealFft3};
pub use io::{read_field, write_field, write_slice_csv};
pub use stencil::{coulomb_stencil, mollifier_stencil, regularized_stencil, Stencil, CUBIC_LATTICE_CONSTANT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Nodes per axis.
    pub n: usize,
    /// Half-width L of the box.
    pub half_width: f64,
}

impl GridSpec {
    pub const ALLOWED_N: [usize; 4] = [32, 48, 64, 128];

    pub fn new(n: usize, half_width: f64) -> Result<Self> {
        let spec = Self { n, half_width };
        let v = spec.violations();
        if v.is_empty() {
            Ok(spec)
        } else {
            Err(Error::Config(v))
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !Self::ALLOWED_N.contains(&self.n) {
            v.push(format!("grid.n must be one of {:?}, got {}", Self::ALLOWED_N, self.n));
        }
        if !(self.half_width > 0.0 && self.half_width.is_finite()) {
            v.push(format!("grid.half_width must be > 0, got {}", self.half_width));
        }
        v
    }

    #[inline]
    pub fn h(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    #[inline]
    pub fn cell_volume(&self) -> f64 {
        self.h().powi(3)
    }

    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Coordinate of node i along any axis; nodes sit at cell centres of
    /// the box, symmetric about the origin.
    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width + (i as f64 + 0.5) * self.h()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    pub fn node(&self, idx: usize) -> [f64; 3] {
        let n = self.n;
        [self.coord(idx / (n * n)), self.coord((idx / n) % n), self.coord(idx % n)]
    }

    /// Lower corner index and fractional offset of a coordinate along one
    /// axis; `None` outside the node hull.
    #[inline]
    fn locate(&self, x: f64) -> Option<(usize, f64)> {
        let s = (x + self.half_width) / self.h() - 0.5;
        let top = (self.n - 1) as f64;
        if !(0.0..=top).contains(&s) {
            return None;
        }
        let i = (s.floor() as usize).min(self.n - 2);
        Some((i, s - i as f64))
    }

    #[inline]
    fn locate_clamped(&self, x: f64) -> (usize, f64, bool) {
        match self.locate(x) {
            Some((i, f)) => (i, f, false),
            None => {
                let s = (x + self.half_width) / self.h() - 0.5;
                if s < 0.0 {
                    (0, 0.0, true)
                } else {
                    (self.n - 2, 1.0, true)
                }
            }
        }
    }

    /// Whether a position lies inside the hull of the nodes.
    pub fn contains(&self, p: &[f64; 3]) -> bool {
        p.iter().all(|&x| self.locate(x).is_some())
    }
}

/// Samples on the nodes of a grid at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub spec: GridSpec,
    pub values: Vec<f64>,
    pub time: f64,
}

impl DensityField {
    pub fn zeros(spec: GridSpec, time: f64) -> Self {
        Self { spec, values: vec![0.0; spec.len()], time }
    }

    pub fn from_fn(spec: GridSpec, time: f64, f: impl Fn([f64; 3]) -> f64) -> Self {
        let values = (0..spec.len()).map(|idx| f(spec.node(idx))).collect();
        Self { spec, values, time }
    }

    /// h³ Σ values.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.spec.cell_volume()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn lp_norm(&self, p: f64) -> f64 {
        lp_norm(&self.values, self.spec, p)
    }

    pub fn w1q_norm(&self, q: f64) -> f64 {
        sobolev_w1q_norm(self, q)
    }

    /// h³ Σ |a - b|.
    pub fn l1_distance(&self, other: &DensityField) -> Result<f64> {
        check_same_grid(self.spec, other.spec)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).sum::<f64>()
            * self.spec.cell_volume())
    }

    /// Discrete inner product h³ Σ a b.
    pub fn dot(&self, other: &DensityField) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>() * self.spec.cell_volume()
    }

    pub fn interpolate(&self, p: &[f64; 3]) -> (f64, bool) {
        interpolate(self, p)
    }

    /// Centered-difference gradient, treating the field as zero outside the box.
    pub fn gradient(&self) -> VectorField {
        let spec = self.spec;
        let n = spec.n;
        let inv = 1.0 / (2.0 * spec.h());
        let strides = [n * n, n, 1];
        let mut comps = [vec![0.0; spec.len()], vec![0.0; spec.len()], vec![0.0; spec.len()]];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let idx = spec.index(i, j, k);
                    let pos = [i, j, k];
                    for a in 0..3 {
                        let up = if pos[a] + 1 < n { self.values[idx + strides[a]] } else { 0.0 };
                        let dn = if pos[a] > 0 { self.values[idx - strides[a]] } else { 0.0 };
                        comps[a][idx] = (up - dn) * inv;
                    }
                }
            }
        }
        VectorField { spec, comps }
    }
}

pub(crate) fn check_same_grid(a: GridSpec, b: GridSpec) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::config(format!("grid mismatch: {a:?} vs {b:?}")))
    }
}

/// Three node-sampled components of a vector field.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub spec: GridSpec,
    pub comps: [Vec<f64>; 3],
}

impl VectorField {
    pub fn zeros(spec: GridSpec) -> Self {
        Self { spec, comps: [vec![0.0; spec.len()], vec![0.0; spec.len()], vec![0.0; spec.len()]] }
    }

    /// Trilinear interpolation of all components; the flag reports a clamped query.
    pub fn interpolate(&self, p: &[f64; 3]) -> ([f64; 3], bool) {
        let (w, base, clamped) = trilinear_weights(self.spec, p);
        let mut out = [0.0; 3];
        for (a, comp) in self.comps.iter().enumerate() {
            out[a] = w.iter().zip(base.iter()).map(|(w, &b)| w * comp[b]).sum();
        }
        (out, clamped)
    }

    /// Pointwise (1 - s) a + s b.
    pub fn lerp(a: &VectorField, b: &VectorField, s: f64) -> VectorField {
        let mut out = a.clone();
        for c in 0..3 {
            for (o, &v) in out.comps[c].iter_mut().zip(&b.comps[c]) {
                *o += s * (v - *o);
            }
        }
        out
    }
}

/// Weights and flat indices of the 8 nodes surrounding a position.
#[inline]
fn trilinear_weights(spec: GridSpec, p: &[f64; 3]) -> ([f64; 8], [usize; 8], bool) {
    let (i, fx, cx) = spec.locate_clamped(p[0]);
    let (j, fy, cy) = spec.locate_clamped(p[1]);
    let (k, fz, cz) = spec.locate_clamped(p[2]);
    let mut w = [0.0; 8];
    let mut idx = [0usize; 8];
    let mut c = 0;
    for (di, wx) in [(0, 1.0 - fx), (1, fx)] {
        for (dj, wy) in [(0, 1.0 - fy), (1, fy)] {
            for (dk, wz) in [(0, 1.0 - fz), (1, fz)] {
                w[c] = wx * wy * wz;
                idx[c] = spec.index(i + di, j + dj, k + dk);
                c += 1;
            }
        }
    }
    (w, idx, cx || cy || cz)
}

/// Trilinear interpolation; outside the node hull the query is clamped to
/// the boundary and flagged.
pub fn interpolate(field: &DensityField, p: &[f64; 3]) -> (f64, bool) {
    let (w, idx, clamped) = trilinear_weights(field.spec, p);
    (w.iter().zip(idx.iter()).map(|(w, &b)| w * field.values[b]).sum(), clamped)
}

/// Adds a cloud-in-cell deposit of point masses `weight` into `values`
/// (density units) and returns the number of particles outside the grid.
pub fn deposit_into(values: &mut [f64], spec: GridSpec, positions: &[[f64; 3]], weight: f64) -> usize {
    let scale = weight / spec.cell_volume();
    let mut outside = 0;
    for p in positions {
        if !spec.contains(p) {
            outside += 1;
            continue;
        }
        let (w, idx, _) = trilinear_weights(spec, p);
        for c in 0..8 {
            values[idx[c]] += scale * w[c];
        }
    }
    outside
}

/// Cloud-in-cell deposit of the empirical measure (1/N) Σ δ_{X_i}.
pub fn deposit_particles(positions: &[[f64; 3]], spec: GridSpec) -> (DensityField, usize) {
    let mut field = DensityField::zeros(spec, 0.0);
    let outside = deposit_into(&mut field.values, spec, positions, 1.0 / positions.len().max(1) as f64);
    (field, outside)
}

/// Deposit followed by convolution with the grid-sampled mollifier. The
/// flag is set when ε < 2h and the mollifier is under-resolved.
pub fn smooth_empirical(positions: &[[f64; 3]], eps: f64, spec: GridSpec) -> Result<(DensityField, bool)> {
    let (raw, _) = deposit_particles(positions, spec);
    let conv = FreeSpaceConvolver::new(spec, &mollifier_stencil(eps, spec))?;
    Ok((conv.apply(&raw), eps < 2.0 * spec.h()))
}

/// (h³ Σ |v|^p)^(1/p).
pub fn lp_norm(values: &[f64], spec: GridSpec, p: f64) -> f64 {
    (values.iter().map(|v| v.abs().powf(p)).sum::<f64>() * spec.cell_volume()).powf(1.0 / p)
}

/// (h³ Σ (|f|^q + |∇f|^q))^(1/q) with a centered-difference gradient.
pub fn sobolev_w1q_norm(field: &DensityField, q: f64) -> f64 {
    let grad = field.gradient();
    let mut acc = 0.0;
    for idx in 0..field.values.len() {
        let g2 = grad.comps[0][idx].powi(2) + grad.comps[1][idx].powi(2) + grad.comps[2][idx].powi(2);
        acc += field.values[idx].abs().powf(q) + g2.powf(0.5 * q);
    }
    (acc * field.spec.cell_volume()).powf(1.0 / q)
}

#[cfg(test)]
mod tests;
