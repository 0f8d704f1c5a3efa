use serde::{Deserialize, Serialize};

use crate::kernels::KernelTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForceMethod {
    #[default]
    Direct,
    CellList,
}

/// Kernel gradient for a pair separated by d = X_i - X_j.
#[inline]
fn pair_force(table: &KernelTable, d: [f64; 3]) -> [f64; 3] {
    let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    if r == 0.0 {
        return [0.0; 3];
    }
    let g = table.dphi(r) / r;
    [g * d[0], g * d[1], g * d[2]]
}

#[inline]
fn sub(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// (χ/N) Σ_{j≠i} ∇Φ̃_ε(X_i - X_j) for every i. The direct method visits
/// each pair once and adds the contributions to particle i in increasing j.
pub fn pairwise_drift(positions: &[[f64; 3]], table: &KernelTable, chi: f64, method: ForceMethod) -> Vec<[f64; 3]> {
    let n = positions.len();
    let mut acc = match method {
        ForceMethod::Direct => direct(positions, table),
        ForceMethod::CellList => cell_list(positions, table),
    };
    let scale = chi / n.max(1) as f64;
    for a in acc.iter_mut() {
        for c in a.iter_mut() {
            *c *= scale;
        }
    }
    acc
}

fn direct(positions: &[[f64; 3]], table: &KernelTable) -> Vec<[f64; 3]> {
    let n = positions.len();
    let mut acc = vec![[0.0; 3]; n];
    for i in 0..n {
        let xi = positions[i];
        let mut own = acc[i];
        for j in i + 1..n {
            let f = pair_force(table, sub(&xi, &positions[j]));
            for c in 0..3 {
                own[c] += f[c];
                acc[j][c] -= f[c];
            }
        }
        acc[i] = own;
    }
    acc
}

/// Same pair kernel, traversed cell by cell: first the particles in the 27
/// cells around i (cell size = table range), then every other particle.
fn cell_list(positions: &[[f64; 3]], table: &KernelTable) -> Vec<[f64; 3]> {
    let n = positions.len();
    if n == 0 {
        return Vec::new();
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in positions {
        for c in 0..3 {
            lo[c] = lo[c].min(p[c]);
            hi[c] = hi[c].max(p[c]);
        }
    }
    let size = table.r_max();
    let dims: Vec<usize> = (0..3).map(|c| (((hi[c] - lo[c]) / size).floor() as usize + 1).min(256)).collect();
    let cell_of = |p: &[f64; 3]| -> [usize; 3] {
        let mut k = [0usize; 3];
        for c in 0..3 {
            k[c] = (((p[c] - lo[c]) / size).floor() as usize).min(dims[c] - 1);
        }
        k
    };
    let flat = |k: [usize; 3]| (k[0] * dims[1] + k[1]) * dims[2] + k[2];
    let cells: Vec<[usize; 3]> = positions.iter().map(cell_of).collect();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
    for (i, k) in cells.iter().enumerate() {
        members[flat(*k)].push(i);
    }
    let near = |a: [usize; 3], b: [usize; 3]| (0..3).all(|c| a[c].abs_diff(b[c]) <= 1);
    let mut acc = vec![[0.0; 3]; n];
    for i in 0..n {
        let ki = cells[i];
        let mut close = [0.0; 3];
        for dx in -1i64..=1 {
            for dy in -1i64..=1 {
                for dz in -1i64..=1 {
                    let k = [ki[0] as i64 + dx, ki[1] as i64 + dy, ki[2] as i64 + dz];
                    if (0..3).any(|c| k[c] < 0 || k[c] >= dims[c] as i64) {
                        continue;
                    }
                    for &j in &members[flat([k[0] as usize, k[1] as usize, k[2] as usize])] {
                        if j != i {
                            let f = pair_force(table, sub(&positions[i], &positions[j]));
                            (0..3).for_each(|c| close[c] += f[c]);
                        }
                    }
                }
            }
        }
        let mut far = [0.0; 3];
        for j in 0..n {
            if !near(ki, cells[j]) {
                let f = pair_force(table, sub(&positions[i], &positions[j]));
                (0..3).for_each(|c| far[c] += f[c]);
            }
        }
        acc[i] = [close[0] + far[0], close[1] + far[1], close[2] + far[2]];
    }
    acc
}
