use std::collections::HashMap;

use rustfft::num_complex::Complex;

use super::{Kernel, PdeConfig, PositivityFix};
use crate::control::ControlField;
use crate::error::{Error, Result};
use crate::grid::{FreeSpaceConvolver, GridSpec, RealFft3};
use crate::kernels::PhysicsParams;

const MAX_HALVINGS: u32 = 5;
const MAX_CLIPPED: f64 = 1e-3;

/// Where the chemoattractant of an advection stage comes from.
#[derive(Clone, Copy)]
pub(crate) enum Drive<'a> {
    /// K∗ρ of the density being advanced.
    SelfConsistent,
    /// K∗ρ^m stored at the two ends of the step, interpolated linearly.
    Frozen { start: &'a [f64], end: &'a [f64] },
}

/// One Strang step: half advection, heat flow, half advection.
pub(crate) struct Stepper {
    grid: GridSpec,
    chi: f64,
    cfl: f64,
    fix: PositivityFix,
    conv: Option<FreeSpaceConvolver>,
    /// s K∗f per control bin; `None` for a zero bin.
    control_potential: Vec<Option<Vec<f64>>>,
    heat: RealFft3,
    heat_multipliers: HashMap<u64, Vec<Complex<f64>>>,
    pub clipped_mass: f64,
    pub min_before_fix: f64,
}

impl Stepper {
    pub fn new(grid: GridSpec, f: &ControlField, params: &PhysicsParams, cfg: &PdeConfig, kernel: Kernel) -> Result<Self> {
        // without drift the kernel is never used
        let conv = if params.chi > 0.0 { Some(FreeSpaceConvolver::new(grid, &kernel.stencil(grid))?) } else { None };
        let control_potential = (0..f.bins())
            .map(|bin| match &conv {
                Some(c) if f.coeffs[bin].iter().any(|&a| a != 0.0) => {
                    let sample = f.eval_grid_bin(bin, grid);
                    let mut pot = c.apply_values(&sample.values);
                    pot.iter_mut().for_each(|v| *v *= params.control_sign);
                    Some(pot)
                }
                _ => None,
            })
            .collect();
        Ok(Self {
            grid,
            chi: params.chi,
            cfl: cfg.cfl,
            fix: cfg.positivity_fix,
            conv,
            control_potential,
            heat: RealFft3::new(grid.n),
            heat_multipliers: HashMap::new(),
            clipped_mass: 0.0,
            min_before_fix: f64::INFINITY,
        })
    }

    pub fn reset_accounting(&mut self) {
        self.clipped_mass = 0.0;
        self.min_before_fix = f64::INFINITY;
    }

    /// K∗ρ on the grid; only valid with drift.
    pub fn self_potential(&self, rho: &[f64]) -> Vec<f64> {
        self.conv.as_ref().expect("drift enabled").apply_values(rho)
    }

    pub fn has_drift(&self) -> bool {
        self.conv.is_some()
    }

    pub fn step(&mut self, rho: &mut Vec<f64>, tau: f64, bin: usize, drive: Drive) -> Result<()> {
        if self.has_drift() {
            self.advect(rho, tau, 0.0, bin, drive)?;
        }
        self.heat_flow(rho, tau);
        if self.has_drift() {
            self.advect(rho, tau, 0.5, bin, drive)?;
        }
        self.positivity(rho)
    }

    fn potential(&self, rho: &[f64], bin: usize, drive: Drive, frac: f64) -> Vec<f64> {
        let mut c = match drive {
            Drive::SelfConsistent => self.self_potential(rho),
            Drive::Frozen { start, end } => start.iter().zip(end).map(|(a, b)| a + frac * (b - a)).collect(),
        };
        if let Some(pot) = &self.control_potential[bin] {
            c.iter_mut().zip(pot).for_each(|(a, b)| *a += b);
        }
        c
    }

    /// Advances ∂_t ρ = -∇·(ρ χ∇c) over half of a step of length `tau`,
    /// starting at fraction `frac0` of the step, with Heun's method. The
    /// half step is halved until the CFL number is below the limit.
    fn advect(&self, rho: &mut Vec<f64>, tau: f64, frac0: f64, bin: usize, drive: Drive) -> Result<()> {
        let h = self.grid.h();
        let span = 0.5 * tau;
        let (mut vel, vmax) = self.face_velocities(&self.potential(rho, bin, drive, frac0));
        let mut halvings = 0;
        while vmax * span / f64::from(1u32 << halvings) > self.cfl * h {
            halvings += 1;
            if halvings > MAX_HALVINGS {
                return Err(Error::Numerical(format!(
                    "CFL limit exceeded after {MAX_HALVINGS} halvings: max speed {vmax}, step {span}, h {h}"
                )));
            }
        }
        let subs = 1usize << halvings;
        let ds = span / subs as f64;
        for sub in 0..subs {
            let fa = frac0 + 0.5 * sub as f64 / subs as f64;
            let fb = fa + 0.5 / subs as f64;
            if sub > 0 {
                vel = self.face_velocities(&self.potential(rho, bin, drive, fa)).0;
            }
            let k1 = self.flux_divergence(rho, &vel);
            let stage: Vec<f64> = rho.iter().zip(&k1).map(|(r, k)| r + ds * k).collect();
            let vel2 = self.face_velocities(&self.potential(&stage, bin, drive, fb)).0;
            let k2 = self.flux_divergence(&stage, &vel2);
            for ((r, a), b) in rho.iter_mut().zip(&k1).zip(&k2) {
                *r += 0.5 * ds * (a + b);
            }
        }
        Ok(())
    }

    /// χ (c_{i+1} - c_i)/h on the face above each node along each axis;
    /// faces on the upper boundary carry zero velocity.
    fn face_velocities(&self, c: &[f64]) -> ([Vec<f64>; 3], f64) {
        let n = self.grid.n;
        let scale = self.chi / self.grid.h();
        let strides = [n * n, n, 1];
        let mut vel = [vec![0.0; c.len()], vec![0.0; c.len()], vec![0.0; c.len()]];
        let mut vmax = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let idx = (i * n + j) * n + k;
                    let pos = [i, j, k];
                    for a in 0..3 {
                        if pos[a] + 1 < n {
                            let v = scale * (c[idx + strides[a]] - c[idx]);
                            vel[a][idx] = v;
                            vmax = vmax.max(v.abs());
                        }
                    }
                }
            }
        }
        (vel, vmax)
    }

    /// -∇·(ρ v) with centered face densities and zero flux through the box walls.
    fn flux_divergence(&self, rho: &[f64], vel: &[Vec<f64>; 3]) -> Vec<f64> {
        let n = self.grid.n;
        let inv_h = 1.0 / self.grid.h();
        let strides = [n * n, n, 1];
        let mut out = vec![0.0; rho.len()];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let idx = (i * n + j) * n + k;
                    let pos = [i, j, k];
                    let mut acc = 0.0;
                    for a in 0..3 {
                        let s = strides[a];
                        if pos[a] + 1 < n {
                            acc -= vel[a][idx] * 0.5 * (rho[idx] + rho[idx + s]);
                        }
                        if pos[a] > 0 {
                            acc += vel[a][idx - s] * 0.5 * (rho[idx - s] + rho[idx]);
                        }
                    }
                    out[idx] = acc * inv_h;
                }
            }
        }
        out
    }

    /// Exact heat flow for time `tau` on the periodic box, by Fourier multiplier.
    fn heat_flow(&mut self, rho: &mut Vec<f64>, tau: f64) {
        let n = self.grid.n;
        let half_width = self.grid.half_width;
        let mult = self.heat_multipliers.entry(tau.to_bits()).or_insert_with(|| {
            let mh = n / 2 + 1;
            let k0 = std::f64::consts::PI / half_width;
            let wave = |i: usize| {
                let f = if i <= n / 2 { i as f64 } else { i as f64 - n as f64 };
                (k0 * f).powi(2)
            };
            let mut m = Vec::with_capacity(n * n * mh);
            for i in 0..n {
                for j in 0..n {
                    for kz in 0..mh {
                        m.push(Complex::new((-(wave(i) + wave(j) + wave(kz)) * tau).exp(), 0.0));
                    }
                }
            }
            m
        });
        *rho = self.heat.convolve(rho, n, mult);
    }

    fn positivity(&mut self, rho: &mut [f64]) -> Result<()> {
        let min = rho.iter().copied().fold(f64::INFINITY, f64::min);
        self.min_before_fix = self.min_before_fix.min(min);
        if min >= 0.0 || self.fix == PositivityFix::Off {
            return Ok(());
        }
        let dv = self.grid.cell_volume();
        let mass: f64 = rho.iter().sum::<f64>() * dv;
        let negative: f64 = -rho.iter().filter(|&&v| v < 0.0).sum::<f64>() * dv;
        rho.iter_mut().for_each(|v| *v = v.max(0.0));
        let kept: f64 = rho.iter().sum::<f64>() * dv;
        if kept > 0.0 {
            let s = mass / kept;
            rho.iter_mut().for_each(|v| *v *= s);
        }
        self.clipped_mass += negative;
        if self.clipped_mass > MAX_CLIPPED * mass.abs() {
            return Err(Error::Numerical(format!(
                "positivity fix removed {} of mass {mass}, above the {MAX_CLIPPED} budget",
                self.clipped_mass
            )));
        }
        Ok(())
    }
}
