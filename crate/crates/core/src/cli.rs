//! Experiment runner: one subcommand per experiment, each writing its result
//! files and a `manifest.json` into `<output_dir>/<subcommand>/`. A run that
//! fails after creating its directory still leaves a manifest marked failed.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::chaos::{a_alpha_frequency, chaos_study, ChaosSetup};
use crate::config::{Derived, ExperimentConfig};
use crate::cost::{CostBreakdown, ParticleCost, PdeCost};
use crate::error::{Error, Result};
use crate::grid::{write_field, write_slice_csv};
use crate::kernels::{build_kernel_table, run_lemma_suite, KernelConfig};
use crate::optimize::{gamma_study, minimize, GammaSetup};
use crate::particles::{run_replicas, ControlDrift, MeanFieldDrift, Simulation};
use crate::pde::{self, picard_solve, Kernel, Scheme, Trajectory};

#[derive(Debug, Parser)]
#[command(name = "mfclab", version, about = "Controlled mean-field particle systems and their Keller-Segel limit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment configuration (TOML).
    pub config: PathBuf,
    /// Overrides `output_dir` of the configuration.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// J along the Keller-Segel solution.
    Pde,
    /// The Monte-Carlo particle cost J_N at N = sde.particles.
    Particles,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Kernel table dump and the convolution lemma suite.
    KernelCheck(Common),
    /// Keller-Segel solve under the configured control.
    SolvePde(Common),
    /// Particle replicas, optionally coupled to the McKean-Vlasov system.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        coupled: bool,
    },
    /// J or J_N at the configured control.
    EvalCost {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "pde")]
        objective: Objective,
    },
    /// Minimizes J or J_N from the configured control.
    Optimize {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "pde")]
        objective: Objective,
    },
    /// Minimizers of J_N against the minimizer of J along the gamma schedule.
    GammaStudy(Common),
    /// Marginal convergence and coupling deviations along the chaos schedule.
    ChaosStudy(Common),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::KernelCheck(_) => "kernel-check",
            Command::SolvePde(_) => "solve-pde",
            Command::Simulate { .. } => "simulate",
            Command::EvalCost { .. } => "eval-cost",
            Command::Optimize { .. } => "optimize",
            Command::GammaStudy(_) => "gamma-study",
            Command::ChaosStudy(_) => "chaos-study",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::KernelCheck(c) | Command::SolvePde(c) | Command::GammaStudy(c) | Command::ChaosStudy(c) => c,
            Command::Simulate { common, .. } | Command::EvalCost { common, .. } | Command::Optimize { common, .. } => {
                common
            }
        }
    }
}

#[derive(Debug, Serialize)]
struct FileEntry {
    path: String,
    contents: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    subcommand: &'static str,
    options: Value,
    status: &'static str,
    exit_code: i32,
    error: Option<String>,
    violations: Vec<String>,
    config: Option<&'a ExperimentConfig>,
    derived: Option<Derived>,
    /// Relative to the manifest directory, in writing order.
    files: Vec<FileEntry>,
    summary: Value,
}

/// Output directory of one run and the files written into it so far.
struct Outputs {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

impl Outputs {
    fn path(&mut self, name: &str, contents: &str) -> PathBuf {
        self.files.push(FileEntry { path: name.into(), contents: contents.into() });
        self.dir.join(name)
    }

    fn json(&mut self, name: &str, contents: &str, value: &impl Serialize) -> Result<()> {
        let path = self.path(name, contents);
        std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
        Ok(())
    }

    fn trajectory(&mut self, prefix: &str, traj: &Trajectory) -> Result<()> {
        for (k, snap) in traj.snapshots.iter().enumerate() {
            let name = format!("{prefix}_{k:03}.bin");
            write_field(&self.path(&name, &format!("density at t = {} (field binary)", snap.time)), snap)?;
        }
        if let Some(last) = traj.snapshots.last() {
            let name = format!("{prefix}_final_slice.csv");
            write_slice_csv(&self.path(&name, "final density on the z = 0 plane"), last)?;
        }
        Ok(())
    }
}

/// Parses arguments, runs the subcommand and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    run(&cli.command)
}

pub fn run(command: &Command) -> i32 {
    let common = command.common();
    let loaded = std::fs::read_to_string(&common.config)
        .map_err(Error::from)
        .and_then(|text| ExperimentConfig::from_toml(&text));
    let mut cfg = match loaded {
        Ok(cfg) => cfg,
        Err(e) => {
            // without a configuration the output directory is only known from the flag
            if let Some(dir) = &common.output_dir {
                let _ = write_failure(command, &dir.join(command.name()), None, &e, Vec::new());
            }
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    if let Some(dir) = &common.output_dir {
        cfg.output_dir = dir.clone();
    }
    let dir = cfg.output_dir.join(command.name());
    if let Err(e) = cfg.validate() {
        let _ = write_failure(command, &dir, Some(&cfg), &e, Vec::new());
        eprintln!("error: {e}");
        return e.exit_code();
    }
    if cfg.threads > 0 {
        // the pool can only be set once per process; later runs reuse it
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
    }
    if let Err(e) = std::fs::create_dir_all(&dir) {
        let e = Error::from(e);
        eprintln!("error: {e}");
        return e.exit_code();
    }
    let mut out = Outputs { dir: dir.clone(), files: Vec::new() };
    match dispatch(command, &cfg, &mut out) {
        Ok(summary) => {
            let manifest = Manifest {
                tool: "mfclab",
                version: env!("CARGO_PKG_VERSION"),
                subcommand: command.name(),
                options: options(command),
                status: "ok",
                exit_code: 0,
                error: None,
                violations: Vec::new(),
                config: Some(&cfg),
                derived: Some(cfg.derived()),
                files: out.files,
                summary,
            };
            match write_manifest(&dir, &manifest) {
                Ok(()) => 0,
                Err(e) => {
                    eprintln!("error: {e}");
                    e.exit_code()
                }
            }
        }
        Err(e) => {
            let _ = write_failure(command, &dir, Some(&cfg), &e, out.files);
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn options(command: &Command) -> Value {
    match command {
        Command::Simulate { coupled, .. } => json!({ "coupled": coupled }),
        Command::EvalCost { objective, .. } | Command::Optimize { objective, .. } => json!({ "objective": objective }),
        _ => json!({}),
    }
}

fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(manifest)? + "\n")?;
    Ok(())
}

fn write_failure(
    command: &Command,
    dir: &Path,
    cfg: Option<&ExperimentConfig>,
    error: &Error,
    files: Vec<FileEntry>,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let violations = match error {
        Error::Config(v) => v.clone(),
        _ => Vec::new(),
    };
    let derived = cfg.filter(|c| c.violations().is_empty()).map(ExperimentConfig::derived);
    let manifest = Manifest {
        tool: "mfclab",
        version: env!("CARGO_PKG_VERSION"),
        subcommand: command.name(),
        options: options(command),
        status: "failed",
        exit_code: error.exit_code(),
        error: Some(error.to_string()),
        violations,
        config: cfg,
        derived,
        files,
        summary: Value::Null,
    };
    write_manifest(dir, &manifest)
}

fn dispatch(command: &Command, cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Value> {
    match command {
        Command::KernelCheck(_) => kernel_check(cfg, out),
        Command::SolvePde(_) => solve_pde(cfg, out),
        Command::Simulate { coupled, .. } => simulate(cfg, *coupled, out),
        Command::EvalCost { objective, .. } => eval_cost(cfg, *objective, out),
        Command::Optimize { objective, .. } => optimize(cfg, *objective, out),
        Command::GammaStudy(_) => gamma(cfg, out),
        Command::ChaosStudy(_) => chaos(cfg, out),
    }
}

fn kernel_check(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Value> {
    let table = build_kernel_table(&cfg.kernel, &cfg.physics)?;
    table.write_csv(&out.path("kernel_table.csv", "radial table of the cutoff kernel at kernel.eps: r, phi_eps, dphi_eps"))?;
    let report = run_lemma_suite(&cfg.kernel_check.eps, cfg.kernel_check.sigma, &cfg.physics)?;
    out.json("lemma_report.json", "convolution error sweeps and derivative sup-norm exponents", &report)?;
    Ok(json!({
        "eps": table.eps(),
        "coulomb_radius": table.coulomb_radius(),
        "sup_norms": table.bounds(),
        "mollified_slope": report.mollified_slope,
        "cutoff_slope": report.cutoff_slope,
        "field_constant": report.field_constant,
        "grad_exponent": report.grad_exponent,
        "hessian_exponent": report.hessian_exponent,
        "third_exponent": report.third_exponent,
    }))
}

fn solve_pde(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Value> {
    let rho0 = cfg.initial.sample_grid(cfg.grid);
    let f = cfg.control_field();
    let table = if cfg.pde.use_regularized_kernel { Some(build_kernel_table(&cfg.kernel, &cfg.physics)?) } else { None };
    let (traj, picard) = match cfg.pde.scheme {
        Scheme::Splitting => (pde::solve(&rho0, &f, &cfg.physics, &cfg.pde, table.as_ref())?, None),
        Scheme::Picard => {
            let kernel = table.as_ref().map_or(Kernel::Coulomb, Kernel::Regularized);
            let report = picard_solve(&rho0, &f, &cfg.physics, &cfg.pde, kernel, cfg.physics.horizon)?;
            let summary = report.summary();
            (report.trajectory, Some(summary))
        }
    };
    out.trajectory("snapshot", &traj)?;
    traj.monitor.write_csv(&out.path("monitor.csv", "a-priori norms per step: L^{3/2} power against 2 sqrt(C0), W^{1,q} norm"))?;
    if let Some(p) = &picard {
        out.json("picard.json", "successive-iterate L1 distances and contraction ratios", p)?;
    }
    Ok(json!({
        "steps": traj.steps,
        "times": traj.times(),
        "mass": traj.snapshots.iter().map(|s| s.mass()).collect::<Vec<_>>(),
        "mass_drift": traj.mass_drift,
        "clipped_mass": traj.clipped_mass,
        "min_before_fix": traj.min_before_fix,
        "boundary_mass": traj.boundary_mass,
        "sup_l_d2_norm": traj.monitor.sup_l_d2(),
        "monitor_within_bound": traj.monitor.within_bound(),
        "picard_converged": picard.map(|p| p.converged),
    }))
}

fn simulate(cfg: &ExperimentConfig, coupled: bool, out: &mut Outputs) -> Result<Value> {
    let n = cfg.sde.particles;
    let eps = cfg.sde.eps_for(n);
    let table = build_kernel_table(&KernelConfig { eps, ..cfg.kernel }, &cfg.physics)?;
    let f = cfg.control_field();
    let control = ControlDrift::new(&f, &table, cfg.grid, cfg.physics.chi, cfg.physics.control_sign)?;
    let mean_field = if coupled {
        let pde_cfg = crate::pde::PdeConfig { use_regularized_kernel: true, ..cfg.pde };
        let traj = pde::solve(&cfg.initial.sample_grid(cfg.grid), &f, &cfg.physics, &pde_cfg, Some(&table))?;
        out.trajectory("mean_field", &traj)?;
        Some(MeanFieldDrift::new(&traj, &table, cfg.physics.chi)?)
    } else {
        None
    };
    let mut sim = Simulation::new(n, &cfg.initial, &table, cfg.physics.chi, &control, cfg.grid, cfg.pde.snapshots, cfg.sde.dt, cfg.seed);
    sim.method = cfg.sde.force_method;
    if let Some(mf) = &mean_field {
        sim = sim.coupled(mf)?;
    }
    let times = sim.snapshot_times();
    let runs = run_replicas(&sim, &(0..cfg.sde.replicas as u64).collect::<Vec<_>>())?;

    let mut w = csv::Writer::from_path(out.path(
        "particles.csv",
        "interacting particle positions per replica and snapshot; mv_* columns hold the coupled McKean-Vlasov positions",
    ))?;
    w.write_record(["replica", "snapshot", "t", "particle", "x", "y", "z", "mv_x", "mv_y", "mv_z"])?;
    for run in &runs {
        for (k, snap) in run.snapshots.iter().enumerate() {
            for (i, x) in snap.iter().enumerate() {
                let mv = run.coupled.as_ref().map(|c| c[k][i]);
                let cell = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
                w.write_record([
                    run.replica.to_string(),
                    k.to_string(),
                    times[k].to_string(),
                    i.to_string(),
                    x[0].to_string(),
                    x[1].to_string(),
                    x[2].to_string(),
                    cell(mv.map(|m| m[0])),
                    cell(mv.map(|m| m[1])),
                    cell(mv.map(|m| m[2])),
                ])?;
            }
        }
    }
    w.flush()?;
    let deviations: Vec<f64> = runs.iter().map(|r| r.max_deviation).collect();
    Ok(json!({
        "particles": n,
        "replicas": cfg.sde.replicas,
        "eps": eps,
        "snapshot_times": times,
        "steps": sim.steps(),
        "escaped": runs.iter().map(|r| r.escaped).collect::<Vec<_>>(),
        "max_deviation": if coupled { Some(&deviations) } else { None },
        "a_alpha_frequency": coupled.then(|| a_alpha_frequency(&deviations, n, cfg.sde.alpha)),
    }))
}

fn pde_cost(cfg: &ExperimentConfig) -> Result<PdeCost> {
    let cost = PdeCost::new(&cfg.initial, &cfg.physics, &cfg.pde, &cfg.cost, cfg.grid);
    Ok(if cfg.pde.use_regularized_kernel { cost.regularized(build_kernel_table(&cfg.kernel, &cfg.physics)?) } else { cost })
}

fn particle_cost(cfg: &ExperimentConfig, seed: u64) -> Result<ParticleCost> {
    ParticleCost::new(cfg.sde.particles, &cfg.initial, &cfg.physics, &cfg.kernel, &cfg.sde, &cfg.cost, cfg.grid, seed)
}

fn write_integrands(out: &mut Outputs, j: &CostBreakdown) -> Result<()> {
    let mut w = csv::Writer::from_path(out.path("cost_integrands.csv", "cost integrands at the quadrature times"))?;
    w.write_record(["t", "tracking", "control"])?;
    for k in 0..j.times.len() {
        w.serialize((j.times[k], j.tracking_integrand[k], j.control_integrand[k]))?;
    }
    w.flush()?;
    Ok(())
}

fn eval_cost(cfg: &ExperimentConfig, objective: Objective, out: &mut Outputs) -> Result<Value> {
    let f = cfg.control_field();
    let (j, replica_totals) = match objective {
        Objective::Pde => (pde_cost(cfg)?.eval(&f)?, None),
        Objective::Particles => {
            let cost = particle_cost(cfg, cfg.seed)?;
            let eval = cost.evaluate(&f, None, cfg.cost.replicas)?;
            (eval.cost, Some(eval.replica_totals))
        }
    };
    out.json("cost.json", "tracking, control and total cost with the integrands", &j)?;
    write_integrands(out, &j)?;
    if let Some(totals) = &replica_totals {
        let mut w = csv::Writer::from_path(out.path("replica_totals.csv", "total cost of each replica"))?;
        w.write_record(["replica", "total"])?;
        for (r, t) in totals.iter().enumerate() {
            w.serialize((r, t))?;
        }
        w.flush()?;
    }
    Ok(json!({
        "objective": objective,
        "coefficients": f.flat(),
        "tracking": j.tracking,
        "control": j.control,
        "total": j.total,
        "stderr": j.stderr,
    }))
}

fn optimize(cfg: &ExperimentConfig, objective: Objective, out: &mut Outputs) -> Result<Value> {
    let f0 = cfg.control_field();
    let result = match objective {
        Objective::Pde => {
            let cost = pde_cost(cfg)?;
            minimize(&mut |f| Ok(cost.eval(f)?.total), &f0, cfg.grid, &cfg.optim)?
        }
        Objective::Particles => {
            let cost = particle_cost(cfg, cfg.optim.seed)?;
            minimize(&mut |f| Ok(cost.eval(f)?.total), &f0, cfg.grid, &cfg.optim)?
        }
    };
    out.json("optim_result.json", "best projected coefficients, value and every probe", &result)?;
    result.write_history_csv(&out.path("history.csv", "objective value of every evaluation and the running best"))?;
    Ok(json!({
        "objective": objective,
        "coefficients": result.coeffs,
        "value": result.value,
        "evals_used": result.evals_used,
        "converged": result.converged,
    }))
}

fn gamma(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Value> {
    let setup = GammaSetup {
        rho0: cfg.initial.clone(),
        params: cfg.physics,
        kernel: cfg.kernel,
        pde: cfg.pde,
        sde: cfg.sde,
        cost: cfg.cost.clone(),
        optim: cfg.optim,
        grid: cfg.grid,
        f0: cfg.control_field(),
    };
    let report = gamma_study(&setup, &cfg.gamma.schedule, &cfg.gamma.seeds)?;
    out.json("gamma_report.json", "PDE minimizer and the particle minimizer of every (N, seed) cell", &report)?;
    report.write_csv(&out.path("gamma.csv", "one row per (N, seed) cell"))?;
    Ok(json!({
        "schedule": report.schedule,
        "pde_value": report.pde.value,
        "pde_coefficients": report.pde.coeffs,
        "median_gaps": report.median_gaps,
        "median_gaps_at_pde_minimizer": report.median_gaps_at_pde_minimizer,
    }))
}

fn chaos(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Value> {
    let setup = ChaosSetup {
        rho0: cfg.initial.clone(),
        params: cfg.physics,
        kernel: cfg.kernel,
        pde: cfg.pde,
        sde: cfg.sde,
        cost: cfg.cost.clone(),
        chaos: cfg.chaos.clone(),
        grid: cfg.grid,
        f: cfg.control_field(),
    };
    let report = chaos_study(&setup)?;
    out.json("chaos_report.json", "per-cell marginal distances, deviation frequencies and the fitted slope", &report)?;
    report.write_csv(&out.path("chaos.csv", "one row per (N, seed) cell"))?;
    Ok(json!({
        "schedule": report.schedule,
        "per_n": report.per_n,
        "slope": report.slope,
        "slope_ci": report.slope_ci,
    }))
}
