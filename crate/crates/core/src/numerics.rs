//! Quadrature rules and small statistics helpers shared by the study modules.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use gauss_quad::legendre::GaussLegendre;

/// Gauss-Legendre nodes and weights on [-1, 1], cached per degree.
pub fn gauss_legendre(deg: usize) -> Arc<Vec<(f64, f64)>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Vec<(f64, f64)>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("quadrature cache poisoned");
    guard
        .entry(deg)
        .or_insert_with(|| {
            let rule = GaussLegendre::new(deg.max(2)).expect("degree >= 2");
            Arc::new(rule.into_node_weight_pairs())
        })
        .clone()
}

/// Integrates `f` over [a, b] with the given node/weight pairs.
#[inline]
pub fn integrate(rule: &[(f64, f64)], a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    rule.iter().map(|&(x, w)| w * f(mid + half * x)).sum::<f64>() * half
}

/// Integrates over [a, b] split at the interior breakpoints (unsorted, duplicates allowed).
pub fn integrate_split(
    rule: &[(f64, f64)],
    a: f64,
    b: f64,
    breaks: &[f64],
    mut f: impl FnMut(f64) -> f64,
) -> f64 {
    let mut pts: Vec<f64> = breaks.iter().copied().filter(|&x| x > a && x < b).collect();
    pts.push(a);
    pts.push(b);
    pts.sort_by(|x, y| x.total_cmp(y));
    pts.dedup();
    pts.windows(2).map(|w| integrate(rule, w[0], w[1], &mut f)).sum()
}

/// Least-squares slope and intercept of log(y) against log(x).
pub fn loglog_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    linear_fit(&lx, &ly)
}

/// Least-squares slope and intercept of y against x.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Linear-interpolated quantile of a sample, `q` in [0, 1].
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Sample mean and standard error of the mean, summed in index order.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Trapezoid rule on (possibly non-uniform) abscissae.
pub fn trapezoid(ts: &[f64], ys: &[f64]) -> f64 {
    ts.windows(2)
        .zip(ys.windows(2))
        .map(|(t, y)| 0.5 * (t[1] - t[0]) * (y[0] + y[1]))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let rule = gauss_legendre(5);
        let v = integrate(&rule, 0.0, 2.0, |x| x.powi(9));
        assert!((v - 2f64.powi(10) / 10.0).abs() < 1e-10);
    }

    #[test]
    fn split_integration_handles_kinks() {
        let rule = gauss_legendre(8);
        let v = integrate_split(&rule, -1.0, 2.0, &[0.0], |x| x.abs());
        assert!((v - 2.5).abs() < 1e-14);
    }

    #[test]
    fn loglog_fit_recovers_power_law() {
        let xs = [0.2, 0.1, 0.05, 0.025];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(1.7)).collect();
        let (slope, icpt) = loglog_fit(&xs, &ys);
        assert!((slope - 1.7).abs() < 1e-12);
        assert!((icpt - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(median(&v), 2.5);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
    }

    #[test]
    fn trapezoid_is_exact_for_linear() {
        let ts = [0.0, 0.5, 2.0];
        let ys: Vec<f64> = ts.iter().map(|t| 3.0 * t + 1.0).collect();
        assert!((trapezoid(&ts, &ys) - 8.0).abs() < 1e-14);
    }
}
