use std::f64::consts::PI;

use proptest::prelude::*;
use statrs::function::erf::erf;

use super::*;
use crate::kernels::{build_kernel_table, mollifier, KernelConfig, PhysicsParams};
use crate::numerics::{gauss_legendre, integrate, loglog_fit};

fn spec(n: usize) -> GridSpec {
    GridSpec::new(n, 4.0).unwrap()
}

fn gaussian(sigma: f64) -> impl Fn([f64; 3]) -> f64 {
    move |x| {
        let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
        (-r2 / (2.0 * sigma * sigma)).exp() / (2.0 * PI * sigma * sigma).powf(1.5)
    }
}

#[test]
fn rejects_unsupported_sizes() {
    assert!(GridSpec::new(50, 4.0).is_err());
    assert!(GridSpec::new(64, -1.0).is_err());
    assert_eq!(GridSpec::new(64, 4.0).unwrap().h(), 0.125);
}

#[test]
fn nodes_are_symmetric() {
    let s = spec(32);
    for i in 0..32 {
        assert!((s.coord(i) + s.coord(31 - i)).abs() < 1e-15);
    }
}

#[test]
fn particle_at_node_deposits_into_that_node() {
    let s = spec(32);
    let p = [s.coord(3), s.coord(17), s.coord(31)];
    let (f, out) = deposit_particles(&[p], s);
    assert_eq!(out, 0);
    let idx = s.index(3, 17, 31);
    assert!((f.values[idx] * s.cell_volume() - 1.0).abs() < 1e-14);
    assert_eq!(f.values.iter().filter(|&&v| v != 0.0).count(), 1);
}

#[test]
fn particle_at_cell_centre_splits_evenly() {
    let s = spec(32);
    let h = s.h();
    let p = [s.coord(5) + 0.5 * h, s.coord(6) + 0.5 * h, s.coord(7) + 0.5 * h];
    let (f, _) = deposit_particles(&[p], s);
    for (di, dj, dk) in [(0, 0, 0), (1, 0, 0), (0, 1, 1), (1, 1, 1)] {
        let m = f.values[s.index(5 + di, 6 + dj, 7 + dk)] * s.cell_volume();
        assert!((m - 0.125).abs() < 1e-15);
    }
}

#[test]
fn uniform_cloud_deposits_unit_mass() {
    use rand::{Rng, SeedableRng};
    let s = spec(32);
    let lo = s.coord(0);
    let hi = s.coord(31);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let pts: Vec<[f64; 3]> =
        (0..1000).map(|_| [rng.gen_range(lo..hi), rng.gen_range(lo..hi), rng.gen_range(lo..hi)]).collect();
    let (f, out) = deposit_particles(&pts, s);
    assert_eq!(out, 0);
    assert!((f.mass() - 1.0).abs() < 1e-12);
}

#[test]
fn escaped_particles_are_counted_and_dropped() {
    let s = spec(32);
    let (f, out) = deposit_particles(&[[0.0; 3], [5.0, 0.0, 0.0]], s);
    assert_eq!(out, 1);
    assert!((f.mass() - 0.5).abs() < 1e-14);
}

#[test]
fn interpolation_is_exact_at_nodes_and_for_linear_fields() {
    let s = spec(32);
    let lin = DensityField::from_fn(s, 0.0, |x| 0.3 * x[0] - 1.2 * x[1] + 2.0 * x[2] + 0.7);
    let idx = s.index(4, 9, 20);
    assert_eq!(lin.interpolate(&s.node(idx)).0, lin.values[idx]);
    for p in [[0.123, -1.7, 2.9], [-3.3, 3.1, 0.01]] {
        let (v, clamped) = lin.interpolate(&p);
        assert!(!clamped);
        assert!((v - (0.3 * p[0] - 1.2 * p[1] + 2.0 * p[2] + 0.7)).abs() < 1e-12);
    }
    let (_, clamped) = lin.interpolate(&[4.5, 0.0, 0.0]);
    assert!(clamped);
}

#[test]
fn interpolation_error_is_second_order() {
    let g = gaussian(0.8);
    let probes: Vec<[f64; 3]> = (0..50)
        .map(|i| {
            let t = i as f64 * 0.61;
            [1.3 * t.sin(), 1.1 * (1.7 * t).cos(), 0.9 * (2.3 * t).sin()]
        })
        .collect();
    let ns = [64usize, 128];
    let errs: Vec<f64> = ns
        .iter()
        .map(|&n| {
            let f = DensityField::from_fn(spec(n), 0.0, &g);
            probes.iter().map(|p| (f.interpolate(p).0 - g(*p)).abs()).fold(0.0, f64::max)
        })
        .collect();
    let hs: Vec<f64> = ns.iter().map(|&n| 8.0 / n as f64).collect();
    let (slope, _) = loglog_fit(&hs, &errs);
    assert!((slope - 2.0).abs() < 0.25, "slope {slope}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn deposit_is_adjoint_to_interpolation(
        pts in prop::collection::vec((-3.8f64..3.8, -3.8f64..3.8, -3.8f64..3.8), 1..40),
        seed in 0u64..1000,
    ) {
        let s = spec(32);
        let g = DensityField::from_fn(s, 0.0, |x| ((x[0] + seed as f64) * 1.3).sin() + x[1] * x[2]);
        let pts: Vec<[f64; 3]> = pts.into_iter().map(|(a, b, c)| [a, b, c]).collect();
        let (dep, _) = deposit_particles(&pts, s);
        let lhs: f64 = pts.iter().map(|p| g.interpolate(p).0).sum::<f64>() / pts.len() as f64;
        let rhs = dep.dot(&g);
        prop_assert!((lhs - rhs).abs() < 1e-11 * (1.0 + lhs.abs()));
    }

    #[test]
    fn norms_are_monotone(vals in prop::collection::vec(0.0f64..5.0, 32 * 32 * 32..=32 * 32 * 32), bump in 0.0f64..1.0, p in 1.0f64..6.0) {
        let s = spec(32);
        let a = DensityField { spec: s, values: vals.clone(), time: 0.0 };
        let b = DensityField { spec: s, values: vals.iter().map(|v| v + bump).collect(), time: 0.0 };
        prop_assert!(a.lp_norm(p) <= b.lp_norm(p) * (1.0 + 1e-14));
    }
}

#[test]
fn lp_norms_of_simple_fields() {
    let s = spec(32);
    let c = DensityField::from_fn(s, 0.0, |_| 0.7);
    for p in [1.0, 2.0, 3.5] {
        assert!((c.lp_norm(p) / (0.7 * 8f64.powf(3.0 / p)) - 1.0).abs() < 1e-12);
    }
    let z = DensityField::zeros(s, 0.0);
    assert_eq!(z.lp_norm(2.0), 0.0);
    assert_eq!(z.w1q_norm(4.0), 0.0);
}

#[test]
fn gaussian_lp_norm_matches_separable_quadrature() {
    let sigma = 0.8;
    let s = spec(64);
    let f = DensityField::from_fn(s, 0.0, gaussian(sigma));
    let rule = gauss_legendre(200);
    for p in [2.0, 4.0] {
        let one_d = integrate(&rule, -4.0, 4.0, |x| (-p * x * x / (2.0 * sigma * sigma)).exp());
        let oracle = (one_d.powi(3) / (2.0 * PI * sigma * sigma).powf(1.5 * p)).powf(1.0 / p);
        assert!((f.lp_norm(p) / oracle - 1.0).abs() < 1e-4);
    }
}

#[test]
fn zero_field_convolves_to_zero() {
    let s = spec(32);
    let conv = FreeSpaceConvolver::new(s, &coulomb_stencil(s)).unwrap();
    let out = conv.apply(&DensityField::zeros(s, 0.0));
    assert!(out.values.iter().all(|&v| v == 0.0));
}

#[test]
fn coulomb_convolution_matches_gaussian_potential() {
    let sigma = 0.8;
    let s = spec(64);
    let rho = DensityField::from_fn(s, 0.0, gaussian(sigma));
    let conv = FreeSpaceConvolver::new(s, &coulomb_stencil(s)).unwrap();
    assert_eq!(conv.padded_size(), 128);
    let c = conv.apply(&rho);
    let mut worst = 0.0f64;
    for idx in 0..s.len() {
        let x = s.node(idx);
        let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        let exact = erf(r / (2f64.sqrt() * sigma)) / (4.0 * PI * r);
        worst = worst.max((c.values[idx] / exact - 1.0).abs());
    }
    assert!(worst <= 1e-3, "max relative error {worst}");
}

#[test]
fn convolution_is_translation_equivariant() {
    let s = spec(32);
    let f = DensityField::from_fn(s, 0.0, |x| {
        gaussian(0.5)([x[0] - 0.3, x[1] + 0.2, x[2]])
    });
    let mut shifted = DensityField::zeros(s, 0.0);
    for i in 0..31 {
        for j in 0..32 {
            for k in 0..32 {
                shifted.values[s.index(i + 1, j, k)] = f.values[s.index(i, j, k)];
            }
        }
    }
    // drop the last x-layer from the reference so both inputs carry the same samples
    let mut base = f.clone();
    for j in 0..32 {
        for k in 0..32 {
            base.values[s.index(31, j, k)] = 0.0;
        }
    }
    let conv = FreeSpaceConvolver::new(s, &coulomb_stencil(s)).unwrap();
    let a = conv.apply(&base);
    let b = conv.apply(&shifted);
    let scale = a.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for i in 0..31 {
        for j in 0..32 {
            for k in 0..32 {
                let d = a.values[s.index(i, j, k)] - b.values[s.index(i + 1, j, k)];
                assert!(d.abs() < 1e-13 * scale);
            }
        }
    }
}

#[test]
fn regularized_convolution_of_a_point_mass_reproduces_the_table() {
    let s = spec(32);
    let params = PhysicsParams::new(0.5, 0.25, 4.0);
    let table = build_kernel_table(&KernelConfig::new(0.5), &params).unwrap();
    let conv = FreeSpaceConvolver::new(s, &regularized_stencil(&table, s)).unwrap();
    let x0 = [0.31, -0.22, 0.05];
    let (dep, _) = deposit_particles(&[x0], s);
    let out = conv.apply(&dep);
    for idx in 0..s.len() {
        let x = s.node(idx);
        let r = ((x[0] - x0[0]).powi(2) + (x[1] - x0[1]).powi(2) + (x[2] - x0[2]).powi(2)).sqrt();
        if r > 6.0 * s.h() {
            let rel = (out.values[idx] / table.phi(r) - 1.0).abs();
            assert!(rel < 1e-2, "r={r} rel={rel}");
        }
    }
}

#[test]
fn regularized_stencil_tends_to_coulomb_for_small_eps() {
    let s = spec(32);
    let params = PhysicsParams::new(0.5, 0.25, 4.0);
    let coulomb = coulomb_stencil(s);
    let mut diffs = Vec::new();
    for eps in [0.1, 0.05, 0.025] {
        let table = build_kernel_table(&KernelConfig::new(eps), &params).unwrap();
        let reg = regularized_stencil(&table, s);
        let mut total = 0.0;
        for a in -3i64..=3 {
            for b in -3i64..=3 {
                for c in -3i64..=3 {
                    total += reg.weight(a, b, c) - coulomb.weight(a, b, c);
                }
            }
        }
        // Φ̃_ε - Φ integrates to a multiple of ε²
        diffs.push(total.abs());
    }
    let (slope, _) = loglog_fit(&[0.1, 0.05, 0.025], &diffs);
    assert!((slope - 2.0).abs() < 0.05, "slope {slope}");
}

fn single_particle_error(x0: [f64; 3], eps: f64, s: GridSpec) -> f64 {
    let (f, under) = smooth_empirical(&[x0], eps, s).unwrap();
    assert!(!under);
    assert!((f.mass() - 1.0).abs() < 1e-6);
    let mut worst = 0.0f64;
    for idx in 0..s.len() {
        let x = s.node(idx);
        let exact = mollifier([x[0] - x0[0], x[1] - x0[1], x[2] - x0[2]], eps);
        worst = worst.max((f.values[idx] - exact).abs());
    }
    worst / mollifier([0.0; 3], eps)
}

/// (h²/8) sup Σ_a |∂²_a j_ε| / j_ε(0), the trilinear interpolation bound.
fn cic_bound(eps: f64, h: f64) -> f64 {
    let d = 1e-4 * eps;
    let mut best = 0.0f64;
    for i in 0..=200 {
        for k in 0..=100 {
            let p = [-eps + i as f64 * eps / 100.0, k as f64 * eps / 100.0, 0.0];
            let mut acc = 0.0;
            for a in 0..3 {
                let (mut lo, mut hi) = (p, p);
                lo[a] -= d;
                hi[a] += d;
                acc += ((mollifier(hi, eps) - 2.0 * mollifier(p, eps) + mollifier(lo, eps)) / (d * d)).abs();
            }
            best = best.max(acc);
        }
    }
    best * h * h / 8.0 / mollifier([0.0; 3], eps)
}

#[test]
fn smoothing_a_single_particle_gives_the_mollifier() {
    let s = spec(64);
    let h = s.h();
    let eps = 4.0 * h;
    let node = s.coord(32);
    let offsets = [[0.25, -0.25, 0.25], [0.5, 0.5, 0.5], [0.5, 0.0, 0.0], [0.1, 0.5, 0.3]];
    let at = |offset: [f64; 3]| [node + offset[0] * h, node + offset[1] * h, node + offset[2] * h];
    assert!(single_particle_error([node; 3], eps, s) <= 5e-2);
    let bound = cic_bound(eps, h);
    for offset in offsets {
        let err = single_particle_error(at(offset), eps, s);
        assert!(err <= bound, "offset {offset:?}: {err} (bound {bound})");
    }
    // off-node particles need a wider mollifier to reach the same relative accuracy
    for offset in offsets {
        let err = single_particle_error(at(offset), 6.0 * h, s);
        assert!(err <= 5e-2, "offset {offset:?}: {err}");
    }
}

#[test]
fn smoothing_is_linear_in_particles() {
    let s = spec(32);
    let a = [-2.0, 0.0, 0.0];
    let b = [2.0, 0.5, 0.0];
    let (both, _) = smooth_empirical(&[a, b], 1.0, s).unwrap();
    let (fa, _) = smooth_empirical(&[a], 1.0, s).unwrap();
    let (fb, _) = smooth_empirical(&[b], 1.0, s).unwrap();
    for idx in 0..s.len() {
        assert!((both.values[idx] - 0.5 * (fa.values[idx] + fb.values[idx])).abs() < 1e-13);
    }
    let (_, under) = smooth_empirical(&[a], 0.3, s).unwrap();
    assert!(under);
}

#[test]
fn w1q_norm_of_gaussian_matches_radial_quadrature() {
    let sigma = 0.8;
    let s = spec(128);
    let g = gaussian(sigma);
    let f = DensityField::from_fn(s, 0.0, &g);
    let q = 4.0;
    let rule = gauss_legendre(200);
    let oracle = integrate(&rule, 0.0, 4.0 * 3f64.sqrt(), |r| {
        let v = g([r, 0.0, 0.0]);
        4.0 * PI * r * r * (v.powf(q) + (r / (sigma * sigma) * v).powf(q))
    });
    // the box clips the radial integral only where the integrand is negligible
    let got = f.w1q_norm(q);
    assert!((got / oracle.powf(1.0 / q) - 1.0).abs() < 2e-3, "{got}");
}

#[test]
fn field_file_round_trips() {
    let s = spec(32);
    let f = DensityField::from_fn(s, 0.125, gaussian(0.9));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rho.field");
    write_field(&path, &f).unwrap();
    assert_eq!(read_field(&path).unwrap(), f);
    write_slice_csv(&dir.path().join("slice.csv"), &f).unwrap();
}

