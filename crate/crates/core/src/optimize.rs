//! Derivative-free minimization over the control coefficients, with every
//! probe projected onto the admissible set, and the Γ-convergence study
//! comparing particle and PDE minima.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::control::ControlField;
use crate::cost::{CostConfig, ParticleCost, PdeCost};
use crate::density::GaussianMixture;
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::kernels::{KernelConfig, PhysicsParams};
use crate::numerics::median;
use crate::particles::SdeConfig;
use crate::pde::PdeConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    CompassSearch,
    NelderMead,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    #[serde(default)]
    pub method: Method,
    #[serde(default = "default_max_evals")]
    pub max_evals: usize,
    #[serde(default = "default_step_init")]
    pub step_init: f64,
    #[serde(default = "default_step_tol")]
    pub step_tol: f64,
    /// Common-random-number seed of every J_N probe.
    #[serde(default)]
    pub seed: u64,
}

fn default_max_evals() -> usize {
    60
}

fn default_step_init() -> f64 {
    0.5
}

fn default_step_tol() -> f64 {
    0.05
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            method: Method::default(),
            max_evals: default_max_evals(),
            step_init: default_step_init(),
            step_tol: default_step_tol(),
            seed: 0,
        }
    }
}

impl OptimConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.max_evals == 0 {
            v.push("optim.max_evals must be >= 1".into());
        }
        if !(self.step_tol > 0.0) {
            v.push(format!("optim.step_tol must be > 0, got {}", self.step_tol));
        }
        if !(self.step_tol < self.step_init) || !self.step_init.is_finite() {
            v.push(format!(
                "optim.step_tol = {} must be smaller than optim.step_init = {}",
                self.step_tol, self.step_init
            ));
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimResult {
    /// Best projected coefficients, row-major by time bin.
    pub coeffs: Vec<f64>,
    pub value: f64,
    pub evals_used: usize,
    /// The step (compass) or simplex size (Nelder-Mead) fell below step_tol.
    pub converged: bool,
    /// (evaluation index, value) of every probe.
    pub history: Vec<(usize, f64)>,
    /// Projected coefficients of every probe, in evaluation order.
    pub probes: Vec<Vec<f64>>,
}

impl OptimResult {
    pub fn write_history_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["eval", "value", "best"])?;
        let mut best = f64::INFINITY;
        for (k, v) in &self.history {
            best = best.min(*v);
            w.write_record([k.to_string(), v.to_string(), best.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Consecutive accepted values decreasing by nearly equal amounts signal an
/// objective that is unbounded below along the search path.
struct DescentWatch {
    accepted: Vec<f64>,
}

const COERCIVITY_WINDOW: usize = 50;

impl DescentWatch {
    fn accept(&mut self, value: f64) -> Result<()> {
        self.accepted.push(value);
        let n = self.accepted.len();
        if n <= COERCIVITY_WINDOW {
            return Ok(());
        }
        let tail = &self.accepted[n - COERCIVITY_WINDOW - 1..];
        let drops: Vec<f64> = tail.windows(2).map(|w| w[0] - w[1]).collect();
        let mean = drops.iter().sum::<f64>() / drops.len() as f64;
        let linear = drops.iter().all(|&d| d > 0.0 && (d - mean).abs() <= 0.1 * mean);
        if linear {
            return Err(Error::Coercivity { steps: COERCIVITY_WINDOW, last: value });
        }
        Ok(())
    }
}

/// Projects, evaluates and logs probe points within the evaluation budget.
struct Prober<'a> {
    objective: &'a mut dyn FnMut(&ControlField) -> Result<f64>,
    template: &'a ControlField,
    grid: GridSpec,
    budget: usize,
    history: Vec<(usize, f64)>,
    probes: Vec<Vec<f64>>,
}

impl Prober<'_> {
    fn exhausted(&self) -> bool {
        self.history.len() >= self.budget
    }

    /// None once the budget is spent.
    fn probe(&mut self, x: &[f64]) -> Result<Option<(Vec<f64>, f64)>> {
        if self.exhausted() {
            return Ok(None);
        }
        let f = ControlField::from_flat(self.template.spec.clone(), self.template.horizon, x).project(self.grid);
        let value = (self.objective)(&f)?;
        let coeffs = f.flat();
        if !value.is_finite() {
            return Err(Error::NonFinite { value, coeffs });
        }
        self.history.push((self.history.len(), value));
        self.probes.push(coeffs.clone());
        Ok(Some((coeffs, value)))
    }
}

/// Minimizes `objective` over the projected coefficients starting from f0.
pub fn minimize(
    objective: &mut dyn FnMut(&ControlField) -> Result<f64>,
    f0: &ControlField,
    grid: GridSpec,
    cfg: &OptimConfig,
) -> Result<OptimResult> {
    let v = cfg.violations();
    if !v.is_empty() {
        return Err(Error::Config(v));
    }
    let mut prober = Prober { objective, template: f0, grid, budget: cfg.max_evals, history: Vec::new(), probes: Vec::new() };
    let (coeffs, value, converged) = match cfg.method {
        Method::CompassSearch => compass(&mut prober, &f0.flat(), cfg)?,
        Method::NelderMead => nelder_mead(&mut prober, &f0.flat(), cfg)?,
    };
    Ok(OptimResult {
        coeffs,
        value,
        evals_used: prober.history.len(),
        converged,
        history: prober.history,
        probes: prober.probes,
    })
}

/// Polls ±step along every coordinate, moves to the best improving poll
/// point, and halves the step when none improves.
fn compass(prober: &mut Prober, x0: &[f64], cfg: &OptimConfig) -> Result<(Vec<f64>, f64, bool)> {
    let (mut x, mut fx) = prober.probe(x0)?.expect("budget of at least one evaluation");
    let mut watch = DescentWatch { accepted: vec![fx] };
    let mut step = cfg.step_init;
    'search: while step >= cfg.step_tol {
        let mut best: Option<(Vec<f64>, f64)> = None;
        for i in 0..x.len() {
            for sign in [1.0, -1.0] {
                let mut y = x.clone();
                y[i] += sign * step;
                let Some((yp, fy)) = prober.probe(&y)? else { break 'search };
                if fy < fx && best.as_ref().map_or(true, |b| fy < b.1) {
                    best = Some((yp, fy));
                }
            }
        }
        match best {
            Some((y, fy)) => {
                x = y;
                fx = fy;
                watch.accept(fx)?;
            }
            None => step *= 0.5,
        }
    }
    Ok((x, fx, step < cfg.step_tol))
}

fn affine(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(a, b)| a + t * (b - a)).collect()
}

/// Nelder-Mead with reflection 1, expansion 2, contraction and shrink 1/2,
/// on an initial simplex of edge step_init along the axes.
fn nelder_mead(prober: &mut Prober, x0: &[f64], cfg: &OptimConfig) -> Result<(Vec<f64>, f64, bool)> {
    let dim = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    simplex.push(prober.probe(x0)?.expect("budget of at least one evaluation"));
    let mut watch = DescentWatch { accepted: vec![simplex[0].1] };
    for i in 0..dim {
        let mut y = simplex[0].0.clone();
        y[i] += cfg.step_init;
        match prober.probe(&y)? {
            Some(p) => simplex.push(p),
            None => break,
        }
    }
    let mut converged = false;
    'search: while simplex.len() == dim + 1 {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let size = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if size < cfg.step_tol {
            converged = true;
            break;
        }
        let best_before = simplex[0].1;
        let worst = simplex[dim].clone();
        let mut centroid = vec![0.0; dim];
        for (x, _) in &simplex[..dim] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / dim as f64;
            }
        }
        let Some(reflected) = prober.probe(&affine(&centroid, &worst.0, -1.0))? else { break };
        let replacement = if reflected.1 < simplex[0].1 {
            let Some(expanded) = prober.probe(&affine(&centroid, &worst.0, -2.0))? else { break };
            Some(if expanded.1 < reflected.1 { expanded } else { reflected })
        } else if reflected.1 < simplex[dim - 1].1 {
            Some(reflected)
        } else {
            let outside = reflected.1 < worst.1;
            let toward = if outside { &reflected.0 } else { &worst.0 };
            let Some(contracted) = prober.probe(&affine(&centroid, toward, 0.5))? else { break };
            (contracted.1 < reflected.1.min(worst.1)).then_some(contracted)
        };
        match replacement {
            Some(p) => simplex[dim] = p,
            None => {
                let best = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    let Some(p) = prober.probe(&affine(&best, &v.0, 0.5))? else { break 'search };
                    *v = p;
                }
            }
        }
        let best_now = simplex.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        if best_now < best_before {
            watch.accept(best_now)?;
        }
    }
    let best = simplex.into_iter().min_by(|a, b| a.1.total_cmp(&b.1)).expect("non-empty simplex");
    Ok((best.0, best.1, converged))
}

/// Inputs shared by every cell of the Γ-convergence study.
#[derive(Debug, Clone)]
pub struct GammaSetup {
    pub rho0: GaussianMixture,
    pub params: PhysicsParams,
    pub kernel: KernelConfig,
    pub pde: PdeConfig,
    pub sde: SdeConfig,
    pub cost: CostConfig,
    pub optim: OptimConfig,
    pub grid: GridSpec,
    pub f0: ControlField,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaCell {
    pub n: usize,
    pub seed: u64,
    pub eps: f64,
    /// Minimizer f_N of J_N and J_N(f_N).
    pub coeffs: Vec<f64>,
    pub value: f64,
    pub stderr: f64,
    pub evals: usize,
    /// J_N at the PDE minimizer.
    pub value_at_pde_minimizer: f64,
    /// |J_N(f_N) - J(f̄)|.
    pub gap: f64,
    /// |J_N(f̄) - J(f̄)|.
    pub gap_at_pde_minimizer: f64,
    /// max-norm distance between f_N and f̄ coefficients; diagnostic only.
    pub minimizer_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaReport {
    pub schedule: Vec<usize>,
    pub seeds: Vec<u64>,
    pub pde: OptimResult,
    pub cells: Vec<GammaCell>,
    /// Per N, the median over seeds of `gap` and of `gap_at_pde_minimizer`.
    pub median_gaps: Vec<f64>,
    pub median_gaps_at_pde_minimizer: Vec<f64>,
}

impl GammaReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["n", "seed", "eps", "value", "stderr", "gap", "gap_at_pde_minimizer", "minimizer_distance", "evals"])?;
        for c in &self.cells {
            w.write_record([
                c.n.to_string(),
                c.seed.to_string(),
                c.eps.to_string(),
                c.value.to_string(),
                c.stderr.to_string(),
                c.gap.to_string(),
                c.gap_at_pde_minimizer.to_string(),
                c.minimizer_distance.to_string(),
                c.evals.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Minimizes J once and J_N for every (N, seed), with ε = N^{-β}.
pub fn gamma_study(setup: &GammaSetup, schedule: &[usize], seeds: &[u64]) -> Result<GammaReport> {
    if schedule.is_empty() || schedule.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config(format!("the particle schedule must be increasing, got {schedule:?}")));
    }
    if seeds.is_empty() {
        return Err(Error::config("the Γ-convergence study needs at least one seed"));
    }
    let pde_cost = PdeCost::new(&setup.rho0, &setup.params, &setup.pde, &setup.cost, setup.grid);
    let pde = minimize(&mut |f| Ok(pde_cost.eval(f)?.total), &setup.f0, setup.grid, &setup.optim)?;
    let f_bar = ControlField::from_flat(setup.f0.spec.clone(), setup.f0.horizon, &pde.coeffs);
    let mut cells = Vec::new();
    for &n in schedule {
        for &seed in seeds {
            let cost = ParticleCost::new(n, &setup.rho0, &setup.params, &setup.kernel, &setup.sde, &setup.cost, setup.grid, seed)?;
            let at_bar = cost.eval(&f_bar)?.total;
            let result = minimize(&mut |f| Ok(cost.eval(f)?.total), &setup.f0, setup.grid, &setup.optim)?;
            let best = ControlField::from_flat(setup.f0.spec.clone(), setup.f0.horizon, &result.coeffs);
            let stderr = cost.eval(&best)?.stderr.unwrap_or(0.0);
            cells.push(GammaCell {
                n,
                seed,
                eps: cost.eps(),
                minimizer_distance: result.coeffs.iter().zip(&pde.coeffs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
                gap: (result.value - pde.value).abs(),
                gap_at_pde_minimizer: (at_bar - pde.value).abs(),
                value_at_pde_minimizer: at_bar,
                value: result.value,
                stderr,
                evals: result.evals_used,
                coeffs: result.coeffs,
            });
        }
    }
    let per_n = |pick: fn(&GammaCell) -> f64| -> Vec<f64> {
        schedule
            .iter()
            .map(|&n| median(&cells.iter().filter(|c| c.n == n).map(pick).collect::<Vec<_>>()))
            .collect()
    };
    let median_gaps = per_n(|c| c.gap);
    let median_gaps_at_pde_minimizer = per_n(|c| c.gap_at_pde_minimizer);
    Ok(GammaReport {
        schedule: schedule.to_vec(),
        seeds: seeds.to_vec(),
        pde,
        cells,
        median_gaps,
        median_gaps_at_pde_minimizer,
    })
}
