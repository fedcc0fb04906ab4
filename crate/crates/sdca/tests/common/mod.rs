//! Shared oracles for the integration tests: a brute-force 1-D minimizer
//! (dense grid + golden-section refinement) and an independent dense linear
//! solver, both deliberately written without reusing the library's solver
//! math.

#![allow(dead_code)]

use sdca::data::Dataset;

/// Minimize a unimodal function over [lo, hi]: scan a `grid_points` grid,
/// then golden-section the bracketing interval down to ~1e-13 width.
pub fn grid_golden_min<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, grid_points: usize) -> f64 {
    assert!(hi > lo && grid_points >= 3);
    let step = (hi - lo) / (grid_points - 1) as f64;
    let mut best_i = 0;
    let mut best_v = f64::INFINITY;
    for i in 0..grid_points {
        let v = f(lo + i as f64 * step);
        if v < best_v {
            best_v = v;
            best_i = i;
        }
    }
    let mut a = lo + best_i.saturating_sub(1) as f64 * step;
    let mut b = (lo + (best_i + 1) as f64 * step).min(hi);

    // golden-section refinement
    let inv_phi = 0.618_033_988_749_894_9;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..200 {
        if b - a < 1e-13 {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Solve the dense system M x = rhs by Gaussian elimination with partial
/// pivoting. `m` is row-major d x d.
pub fn solve_dense(mut m: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Vec<f64> {
    let d = rhs.len();
    assert!(m.len() == d && m.iter().all(|row| row.len() == d));
    for col in 0..d {
        let pivot = (col..d)
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        assert!(m[col][col].abs() > 1e-12, "singular system");
        let pivot_row = m[col].clone();
        for row in col + 1..d {
            let factor = m[row][col] / pivot_row[col];
            for (entry, &p) in m[row][col..].iter_mut().zip(&pivot_row[col..]) {
                *entry -= factor * p;
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut x = vec![0.0; d];
    for row in (0..d).rev() {
        let mut acc = rhs[row];
        for k in row + 1..d {
            acc -= m[row][k] * x[k];
        }
        x[row] = acc / m[row][row];
    }
    x
}

/// Closed-form ridge optimum w* = (A A^T / n + lambda I)^{-1} (A y / n),
/// where A's columns are the examples.
pub fn ridge_closed_form(ds: &Dataset, lambda: f64) -> Vec<f64> {
    let (n, d) = (ds.n(), ds.d());
    let mut xs = vec![vec![0.0; d]; n];
    for (j, x) in xs.iter_mut().enumerate() {
        ds.col(j).axpy(1.0, x);
    }
    let mut m = vec![vec![0.0; d]; d];
    let mut rhs = vec![0.0; d];
    for (x, &y) in xs.iter().zip(ds.labels()) {
        for a in 0..d {
            for b in 0..d {
                m[a][b] += x[a] * x[b] / n as f64;
            }
            rhs[a] += x[a] * y / n as f64;
        }
    }
    for (a, row) in m.iter_mut().enumerate() {
        row[a] += lambda;
    }
    solve_dense(m, rhs)
}

pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

pub fn rel_l2_error(got: &[f64], want: &[f64]) -> f64 {
    let diff: f64 = got
        .iter()
        .zip(want)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = want.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / norm.max(1e-300)
}
