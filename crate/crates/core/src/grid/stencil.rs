use std::collections::HashMap;
use std::f64::consts::PI;

use super::GridSpec;
use crate::kernels::{mollifier_radial, KernelTable, COULOMB};
use crate::numerics::gauss_legendre;

/// -ζ for the simple cubic lattice: Σ'_{|n|<R} 1/|n| - 2πR² → -2.8372974794806...
/// Using it as the origin weight makes the trapezoid rule for ∫ g(x)/|x| dx
/// fourth-order accurate on smooth g.
pub const CUBIC_LATTICE_CONSTANT: f64 = 2.837_297_479_480_62;

/// ∫ over the unit cube centred at 0 of 1/|x|.
fn cube_inverse_distance() -> f64 {
    6.0 * ((1.0 + 3f64.sqrt()) / 2f64.sqrt()).ln() - 0.5 * PI
}

/// A convolution kernel sampled at grid offsets, quadrature weight h³ included.
pub struct Stencil {
    /// Largest offset (in cells, per axis) with a nonzero weight.
    pub reach: usize,
    eval: Box<dyn Fn(i64, i64, i64) -> f64 + Send + Sync>,
}

impl Stencil {
    pub fn new(reach: usize, eval: impl Fn(i64, i64, i64) -> f64 + Send + Sync + 'static) -> Self {
        Self { reach, eval: Box::new(eval) }
    }

    #[inline]
    pub fn weight(&self, a: i64, b: i64, c: i64) -> f64 {
        (self.eval)(a, b, c)
    }
}

#[inline]
fn offset_radius(a: i64, b: i64, c: i64, h: f64) -> f64 {
    h * ((a * a + b * b + c * c) as f64).sqrt()
}

/// Coulomb potential with the lattice-corrected origin weight.
pub fn coulomb_stencil(spec: GridSpec) -> Stencil {
    let h = spec.h();
    let h3 = h * h * h;
    let origin = COULOMB * CUBIC_LATTICE_CONSTANT / h;
    Stencil::new(spec.n - 1, move |a, b, c| {
        if a == 0 && b == 0 && c == 0 {
            origin * h3
        } else {
            COULOMB / offset_radius(a, b, c, h) * h3
        }
    })
}

/// Mollified cutoff kernel. When ε >= 2h the table is sampled at the
/// nodes. Otherwise the kernel is the Coulomb stencil plus the cell
/// averages of Φ̃_ε - Φ, so that it tends to the Coulomb stencil as ε → 0.
pub fn regularized_stencil(table: &KernelTable, spec: GridSpec) -> Stencil {
    let h = spec.h();
    let h3 = h * h * h;
    let eps = table.eps();
    let reach = spec.n - 1;
    if eps >= 2.0 * h {
        let table = table.clone();
        return Stencil::new(reach, move |a, b, c| table.phi(offset_radius(a, b, c, h)) * h3);
    }
    let support = table.coulomb_radius();
    let cells = (support / h + 1.0).ceil() as i64;
    let rule = gauss_legendre(16);
    let mut corrections = HashMap::new();
    for a in -cells..=cells {
        for b in -cells..=cells {
            for c in -cells..=cells {
                let nearest = [a, b, c]
                    .iter()
                    .map(|&o| ((o.abs() as f64 - 0.5) * h).max(0.0).powi(2))
                    .sum::<f64>()
                    .sqrt();
                if nearest >= support {
                    continue;
                }
                let origin = a == 0 && b == 0 && c == 0;
                let mut acc = 0.0;
                for &(x, wx) in rule.iter() {
                    for &(y, wy) in rule.iter() {
                        for &(z, wz) in rule.iter() {
                            let p = [
                                (a as f64 + 0.5 * x) * h,
                                (b as f64 + 0.5 * y) * h,
                                (c as f64 + 0.5 * z) * h,
                            ];
                            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                            let v = if origin { table.phi(r) } else { table.phi(r) - COULOMB / r };
                            acc += wx * wy * wz * v;
                        }
                    }
                }
                // cell average; the rule's weights sum to 8 on [-1, 1]^3
                let mut avg = acc / 8.0;
                if origin {
                    avg -= COULOMB * cube_inverse_distance() / h;
                }
                corrections.insert((a, b, c), avg);
            }
        }
    }
    let coulomb = coulomb_stencil(spec);
    Stencil::new(reach, move |a, b, c| {
        coulomb.weight(a, b, c) + corrections.get(&(a, b, c)).copied().unwrap_or(0.0) * h3
    })
}

/// Grid-sampled mollifier normalized to unit discrete mass.
pub fn mollifier_stencil(eps: f64, spec: GridSpec) -> Stencil {
    let h = spec.h();
    let reach = (eps / h).ceil().max(0.0) as i64;
    let sample = move |a: i64, b: i64, c: i64| mollifier_radial(offset_radius(a, b, c, h), eps);
    let total: f64 = offsets(reach).map(|(a, b, c)| sample(a, b, c)).sum();
    if total <= 0.0 {
        // a mollifier narrower than a cell degenerates to a point mass
        return Stencil::new(0, |a, b, c| if a == 0 && b == 0 && c == 0 { 1.0 } else { 0.0 });
    }
    Stencil::new(reach as usize, move |a, b, c| sample(a, b, c) / total)
}

fn offsets(reach: i64) -> impl Iterator<Item = (i64, i64, i64)> {
    (-reach..=reach).flat_map(move |a| (-reach..=reach).flat_map(move |b| (-reach..=reach).map(move |c| (a, b, c))))
}
