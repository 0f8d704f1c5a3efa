use super::*;
use crate::control::{BoundProfile, Bump, ControlSpaceSpec};
use crate::density::GaussianMixture;
use crate::kernels::{build_kernel_table, KernelConfig};

fn space(bins: usize) -> ControlSpaceSpec {
    ControlSpaceSpec {
        q: 4.0,
        r: 4.0,
        bound: BoundProfile::Constant(2.0),
        bins,
        basis: vec![Bump { center: [-1.0, 0.0, 0.0], width: 0.6 }],
    }
}

fn setup(n: usize, chi: f64, horizon: f64) -> (DensityField, PhysicsParams, ControlField) {
    let grid = GridSpec::new(n, 4.0).unwrap();
    let rho0 = GaussianMixture::isotropic([0.0; 3], 0.8).sample_grid(grid);
    let params = PhysicsParams::new(chi, horizon, 4.0);
    (rho0, params, ControlField::zero(space(2), horizon))
}

fn mean_x(rho: &DensityField) -> f64 {
    let g = rho.spec;
    (0..g.len()).map(|i| g.node(i)[0] * rho.values[i]).sum::<f64>() * g.cell_volume()
}

#[test]
fn heat_flow_matches_the_gaussian_closed_form() {
    let (rho0, params, f) = setup(64, 0.0, 0.1);
    let traj = solve_keller_segel(&rho0, &f, &params, &PdeConfig::new(0.01, 5)).unwrap();
    for snap in &traj.snapshots {
        let exact = GaussianMixture::isotropic([0.0; 3], 0.8).heat_evolved(snap.time).sample_grid(rho0.spec);
        let err = snap.l1_distance(&exact).unwrap();
        assert!(err <= 5e-3, "t={} L1 error {err}", snap.time);
    }
    assert!((traj.snapshots.last().unwrap().time - 0.1).abs() < 1e-15);
    assert!(traj.mass_drift <= 1e-6);
}

#[test]
fn mass_is_conserved_with_drift_and_control() {
    let (rho0, params, f) = setup(32, 0.5, 0.25);
    let f = ControlField::from_flat(f.spec.clone(), 0.25, &[1.5, -1.0]);
    let traj = solve_keller_segel(&rho0, &f, &params, &PdeConfig::new(0.01, 6)).unwrap();
    assert_eq!(traj.snapshots.len(), 6);
    assert!(traj.mass_drift <= 1e-6, "{}", traj.mass_drift);
    assert!(traj.min_before_fix >= -1e-8, "{}", traj.min_before_fix);
    assert_eq!(traj.clipped_mass, 0.0);
}

#[test]
fn aggregation_concentrates_the_density() {
    let (rho0, free, f) = setup(32, 0.0, 0.25);
    let (_, attract, _) = setup(32, 2.0, 0.25);
    let cfg = PdeConfig::new(0.01, 3);
    let a = solve_keller_segel(&rho0, &f, &free, &cfg).unwrap();
    let b = solve_keller_segel(&rho0, &f, &attract, &cfg).unwrap();
    let last = |t: &Trajectory| *t.monitor.l_d2_norm.last().unwrap();
    assert!(last(&b) > last(&a));
}

#[test]
fn a_sink_control_pushes_mass_away_from_its_bump() {
    let (rho0, mut params, f) = setup(32, 1.0, 0.25);
    let f = ControlField::from_flat(f.spec.clone(), 0.25, &[2.0, 2.0]);
    let cfg = PdeConfig::new(0.01, 3);
    let sink = solve_keller_segel(&rho0, &f, &params, &cfg).unwrap();
    params.control_sign = 1.0;
    let source = solve_keller_segel(&rho0, &f, &params, &cfg).unwrap();
    assert!(mean_x(sink.snapshots.last().unwrap()) > 0.0);
    assert!(mean_x(source.snapshots.last().unwrap()) < 0.0);
}

#[test]
fn small_data_run_stays_below_the_monitor_bound() {
    let (rho0, params, f) = setup(32, 0.5, 0.25);
    let f = ControlField::from_flat(f.spec.clone(), 0.25, &[1.0, 1.0]).project(rho0.spec);
    let traj = solve_keller_segel(&rho0, &f, &params, &PdeConfig::new(0.01, 4)).unwrap();
    let m = &traj.monitor;
    assert!(m.within_bound());
    assert_eq!(m.times.len(), traj.steps + 1);
    assert!(m.l_d2_norm.iter().chain(&m.w1q_norm).all(|v| v.is_finite()));
    assert!((m.c0 - l_d2_power(&rho0)).abs() < 1e-15);
}

#[test]
fn regularized_solve_without_drift_is_the_heat_flow_bit_for_bit() {
    let (rho0, params, f) = setup(32, 0.0, 0.1);
    let table = build_kernel_table(&KernelConfig::new(0.2), &params).unwrap();
    let cfg = PdeConfig::new(0.01, 3);
    let a = solve_keller_segel(&rho0, &f, &params, &cfg).unwrap();
    let b = solve_regularized(&rho0, &f, &params, &cfg, &table).unwrap();
    assert_eq!(a.snapshots, b.snapshots);
}

#[test]
fn regularized_solution_approaches_the_coulomb_one() {
    let (rho0, params, f) = setup(32, 1.0, 0.1);
    let cfg = PdeConfig::new(0.01, 3);
    let exact = solve_keller_segel(&rho0, &f, &params, &cfg).unwrap();
    let dist = |eps: f64| {
        let table = build_kernel_table(&KernelConfig::new(eps), &params).unwrap();
        solve_regularized(&rho0, &f, &params, &cfg, &table).unwrap().sup_l1_distance(&exact).unwrap()
    };
    let (coarse, fine) = (dist(0.4), dist(0.2));
    assert!(fine < coarse && fine > 0.0, "{coarse} {fine}");
}

#[test]
fn picard_without_drift_converges_in_one_iteration() {
    let (rho0, params, f) = setup(32, 0.0, 0.25);
    let report = picard_solve(&rho0, &f, &params, &PdeConfig::new(0.01, 3), Kernel::Coulomb, 0.05).unwrap();
    assert!(report.converged);
    assert_eq!(report.iterations, 1);
    assert!(report.ratios.is_empty());
    assert_eq!(report.distances, vec![0.0]);
}

#[test]
fn picard_contracts_and_matches_the_splitting_solver() {
    let (rho0, params, f) = setup(32, 0.5, 0.25);
    let f = ControlField::from_flat(f.spec.clone(), 0.25, &[1.0, 1.0]).project(rho0.spec);
    let cfg = PdeConfig::new(0.005, 3);
    let report = picard_solve(&rho0, &f, &params, &cfg, Kernel::Coulomb, 0.05).unwrap();
    assert!(report.converged);
    assert!(report.ratios.iter().all(|&r| r < 1.0), "{:?}", report.ratios);
    let direct = solve_on(&rho0, &f, &params, &cfg, Kernel::Coulomb, 0.05).unwrap();
    let gap = report.trajectory.sup_l1_distance(&direct).unwrap();
    assert!(gap <= 5.0 * cfg.dt, "{gap}");
}

#[test]
fn excessive_drift_aborts_on_the_cfl_limit() {
    let (rho0, params, f) = setup(32, 1e6, 0.05);
    let err = solve_keller_segel(&rho0, &f, &params, &PdeConfig::new(0.01, 2)).unwrap_err();
    assert!(matches!(err, Error::Numerical(_)), "{err}");
}

#[test]
fn time_grid_contains_snapshots_and_bin_edges() {
    let (times, index) = time_grid(0.25, 16, &[0.0, 0.125, 0.25], 0.01);
    assert_eq!(times[0], 0.0);
    assert_eq!(*times.last().unwrap(), 0.25);
    assert_eq!(index.len(), 16);
    for (k, &i) in index.iter().enumerate() {
        assert!((times[i] - 0.25 * k as f64 / 15.0).abs() < 1e-15);
    }
    assert!(times.iter().any(|&t| (t - 0.125).abs() < 1e-15));
    assert!(times.windows(2).all(|w| w[1] > w[0] && w[1] - w[0] <= 0.01 + 1e-15));
}

#[test]
fn default_scenario_satisfies_the_smallness_condition() {
    let grid = GridSpec::new(64, 4.0).unwrap();
    let rho0 = GaussianMixture::isotropic([0.0; 3], 0.8).sample_grid(grid);
    let c0 = l_d2_power(&rho0);
    // ∫ρ^{3/2} of a Gaussian is (2πσ²)^{-3/4} (2/3)^{3/2}
    let exact = (2.0 * std::f64::consts::PI * 0.64f64).powf(-0.75) * (2.0f64 / 3.0).powf(1.5);
    assert!((c0 / exact - 1.0).abs() < 1e-6);
    let report = smallness_condition(c0, 0.5, 4.0, space(1).lr_norm_of_l(0.25));
    assert!((report.geometric_bound - 8.0 / 27.0).abs() < 1e-15);
    assert!(report.satisfied);
    let heavy = smallness_condition(c0, 0.5, 4.0, 20.0);
    assert!(!heavy.satisfied);
}

#[test]
fn invalid_configuration_lists_every_violation() {
    let (rho0, params, f) = setup(32, 0.5, 0.25);
    let mut cfg = PdeConfig::new(-1.0, 1);
    cfg.cfl = 2.0;
    match solve_keller_segel(&rho0, &f, &params, &cfg).unwrap_err() {
        Error::Config(v) => assert_eq!(v.len(), 3, "{v:?}"),
        e => panic!("{e}"),
    }
}
