use std::sync::Arc;

use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

/// Smallest 5-smooth integer >= `min`.
pub fn fft_size(min: usize) -> usize {
    let mut m = min.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// Real 3D FFT on an m³ box, stored as m × m × (m/2+1) complex values
/// indexed (i, j, k_z). Transforms skip lines that are known to be zero
/// (forward) or are not needed (inverse), which is what zero-padded
/// convolution produces.
pub struct RealFft3 {
    m: usize,
    mh: usize,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl RealFft3 {
    pub fn new(m: usize) -> Self {
        let mut real = RealFftPlanner::<f64>::new();
        let mut complex = FftPlanner::<f64>::new();
        Self {
            m,
            mh: m / 2 + 1,
            r2c: real.plan_fft_forward(m),
            c2r: real.plan_fft_inverse(m),
            fwd: complex.plan_fft_forward(m),
            inv: complex.plan_fft_inverse(m),
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn spectrum_len(&self) -> usize {
        self.m * self.m * self.mh
    }

    /// Full forward transform of an n³ block placed at the origin of the box.
    pub fn forward(&self, input: &[f64], n: usize) -> Vec<Complex<f64>> {
        let mut spec = self.forward_lines(input, n);
        self.axis_i(&mut spec, self.m, None, false);
        spec
    }

    /// Convolution of an n³ block with a precomputed spectrum, returning
    /// the n³ block at the origin; the result is scaled by 1/m³.
    pub fn convolve(&self, input: &[f64], n: usize, multiplier: &[Complex<f64>]) -> Vec<f64> {
        let mut spec = self.forward_lines(input, n);
        self.axis_i(&mut spec, n, Some(multiplier), true);
        self.inverse_lines(spec, n)
    }

    /// Transforms along k (real) and j for the nonzero input block.
    fn forward_lines(&self, input: &[f64], n: usize) -> Vec<Complex<f64>> {
        let (m, mh) = (self.m, self.mh);
        let mut spec = vec![Complex::new(0.0, 0.0); m * m * mh];
        let mut line = self.r2c.make_input_vec();
        let mut scratch = self.r2c.make_scratch_vec();
        for i in 0..n {
            for j in 0..n {
                line[..n].copy_from_slice(&input[(i * n + j) * n..(i * n + j + 1) * n]);
                line[n..].fill(0.0);
                let out = &mut spec[(i * m + j) * mh..(i * m + j + 1) * mh];
                self.r2c
                    .process_with_scratch(&mut line, out, &mut scratch)
                    .expect("buffer sizes match the plan");
            }
        }
        self.axis_j(&mut spec, n, &self.fwd);
        spec
    }

    /// Inverse along j for the kept rows, then the real inverse along k.
    fn inverse_lines(&self, mut spec: Vec<Complex<f64>>, n: usize) -> Vec<f64> {
        let (m, mh) = (self.m, self.mh);
        self.axis_j(&mut spec, n, &self.inv);
        let scale = 1.0 / (m * m * m) as f64;
        let mut out = vec![0.0; n * n * n];
        let mut line = self.c2r.make_output_vec();
        let mut scratch = self.c2r.make_scratch_vec();
        for i in 0..n {
            for j in 0..n {
                let input = &mut spec[(i * m + j) * mh..(i * m + j + 1) * mh];
                input[0].im = 0.0;
                if m % 2 == 0 {
                    input[mh - 1].im = 0.0;
                }
                self.c2r
                    .process_with_scratch(input, &mut line, &mut scratch)
                    .expect("buffer sizes match the plan");
                for (o, v) in out[(i * n + j) * n..(i * n + j + 1) * n].iter_mut().zip(&line) {
                    *o = v * scale;
                }
            }
        }
        out
    }

    /// Complex transform along j for slabs i < rows.
    fn axis_j(&self, spec: &mut [Complex<f64>], rows: usize, plan: &Arc<dyn Fft<f64>>) {
        let (m, mh) = (self.m, self.mh);
        let mut tmp = vec![Complex::new(0.0, 0.0); m * mh];
        let mut scratch = vec![Complex::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        for i in 0..rows {
            let slab = &mut spec[i * m * mh..(i + 1) * m * mh];
            for j in 0..m {
                for kz in 0..mh {
                    tmp[kz * m + j] = slab[j * mh + kz];
                }
            }
            plan.process_with_scratch(&mut tmp, &mut scratch);
            for j in 0..m {
                for kz in 0..mh {
                    slab[j * mh + kz] = tmp[kz * m + j];
                }
            }
        }
    }

    /// Forward transform along i for every (j, k_z) line; with a
    /// multiplier, also applies it and transforms back, storing rows i < keep.
    fn axis_i(&self, spec: &mut [Complex<f64>], keep: usize, multiplier: Option<&[Complex<f64>]>, back: bool) {
        let (m, mh) = (self.m, self.mh);
        let mut tmp = vec![Complex::new(0.0, 0.0); m * mh];
        let scratch_len = self.fwd.get_inplace_scratch_len().max(self.inv.get_inplace_scratch_len());
        let mut scratch = vec![Complex::new(0.0, 0.0); scratch_len];
        for j in 0..m {
            for i in 0..m {
                let row = &spec[(i * m + j) * mh..(i * m + j + 1) * mh];
                for kz in 0..mh {
                    tmp[kz * m + i] = row[kz];
                }
            }
            self.fwd.process_with_scratch(&mut tmp, &mut scratch);
            if let Some(mult) = multiplier {
                for i in 0..m {
                    let row = &mult[(i * m + j) * mh..(i * m + j + 1) * mh];
                    for kz in 0..mh {
                        tmp[kz * m + i] *= row[kz];
                    }
                }
            }
            if back {
                self.inv.process_with_scratch(&mut tmp, &mut scratch);
            }
            for i in 0..keep {
                let row = &mut spec[(i * m + j) * mh..(i * m + j + 1) * mh];
                for kz in 0..mh {
                    row[kz] = tmp[kz * m + i];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fft_sizes_are_smooth() {
        assert_eq!(fft_size(71), 72);
        assert_eq!(fft_size(127), 128);
        assert_eq!(fft_size(97), 100);
        assert_eq!(fft_size(1), 1);
    }

    #[test]
    fn convolution_with_delta_spectrum_is_identity() {
        let m = 12;
        let n = 6;
        let fft = RealFft3::new(m);
        let mut delta = vec![0.0; m * m * m];
        delta[0] = 1.0;
        let spec = fft.forward(&delta, m);
        let input: Vec<f64> = (0..n * n * n).map(|i| (i as f64 * 0.37).sin()).collect();
        let out = fft.convolve(&input, n, &spec);
        for (a, b) in input.iter().zip(&out) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn matches_direct_linear_convolution() {
        let n = 5;
        let reach = 2i64;
        let m = fft_size(n + reach as usize);
        let fft = RealFft3::new(m);
        let w = |a: i64, b: i64, c: i64| 1.0 / (1.0 + (a * a + 2 * b * b + 3 * c * c) as f64);
        let mut kernel = vec![0.0; m * m * m];
        let wrap = |a: i64| a.rem_euclid(m as i64) as usize;
        for a in -reach..=reach {
            for b in -reach..=reach {
                for c in -reach..=reach {
                    kernel[(wrap(a) * m + wrap(b)) * m + wrap(c)] = w(a, b, c);
                }
            }
        }
        let spec = fft.forward(&kernel, m);
        let input: Vec<f64> = (0..n * n * n).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let out = fft.convolve(&input, n, &spec);
        let ni = n as i64;
        for x in 0..ni {
            for y in 0..ni {
                for z in 0..ni {
                    let mut acc = 0.0;
                    for a in 0..ni {
                        for b in 0..ni {
                            for c in 0..ni {
                                let (dx, dy, dz) = (x - a, y - b, z - c);
                                if dx.abs() <= reach && dy.abs() <= reach && dz.abs() <= reach {
                                    acc += w(dx, dy, dz) * input[((a * ni + b) * ni + c) as usize];
                                }
                            }
                        }
                    }
                    let got = out[((x * ni + y) * ni + z) as usize];
                    assert!((acc - got).abs() < 1e-11, "{acc} vs {got}");
                }
            }
        }
    }
}
