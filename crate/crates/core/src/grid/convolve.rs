use rustfft::num_complex::Complex;

use super::{fft_size, DensityField, GridSpec, RealFft3, Stencil};
use crate::error::{Error, Result};

/// Zero-padded FFT convolution with a fixed stencil; the padding is chosen
/// so that no circular wrap reaches the n³ output block.
pub struct FreeSpaceConvolver {
    spec: GridSpec,
    fft: RealFft3,
    spectrum: Vec<Complex<f64>>,
}

impl FreeSpaceConvolver {
    pub fn new(spec: GridSpec, stencil: &Stencil) -> Result<Self> {
        let reach = stencil.reach.min(spec.n - 1);
        Self::with_size(spec, stencil, fft_size(spec.n + reach))
    }

    /// Uses an explicit padded box size `m`.
    pub fn with_size(spec: GridSpec, stencil: &Stencil, m: usize) -> Result<Self> {
        let n = spec.n;
        let reach = stencil.reach.min(n - 1);
        if m < n + reach {
            return Err(Error::config(format!(
                "kernel reach of {reach} cells does not fit a padded box of {m} for n = {n}"
            )));
        }
        let fft = RealFft3::new(m);
        let mut kernel = vec![0.0; m * m * m];
        let r = reach as i64;
        let wrap = |a: i64| a.rem_euclid(m as i64) as usize;
        for a in -r..=r {
            for b in -r..=r {
                let base = (wrap(a) * m + wrap(b)) * m;
                for c in -r..=r {
                    kernel[base + wrap(c)] = stencil.weight(a, b, c);
                }
            }
        }
        let spectrum = fft.forward(&kernel, m);
        Ok(Self { spec, fft, spectrum })
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn padded_size(&self) -> usize {
        self.fft.m()
    }

    pub fn apply(&self, field: &DensityField) -> DensityField {
        DensityField { spec: self.spec, values: self.apply_values(&field.values), time: field.time }
    }

    pub fn apply_values(&self, values: &[f64]) -> Vec<f64> {
        self.fft.convolve(values, self.spec.n, &self.spectrum)
    }
}
