//! Small dense solvers for the regression adjustment.

use alloc::vec;
use alloc::vec::Vec;

/// Solves `A X = B` in place by Gaussian elimination with partial pivoting.
/// `a` is `n x n` row-major, `b` is `n x k` row-major. Returns `None` when a
/// pivot is negligible relative to the largest entry.
pub fn solve(mut a: Vec<f64>, mut b: Vec<f64>, n: usize, k: usize) -> Option<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n * k);
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(scale > 0.0) {
        return None;
    }
    let tol = scale * 1e-12;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .expect("non-empty range");
        if a[pivot * n + col].abs() <= tol {
            return None;
        }
        if pivot != col {
            for j in 0..n {
                a.swap(col * n + j, pivot * n + j);
            }
            for j in 0..k {
                b.swap(col * k + j, pivot * k + j);
            }
        }
        let d = a[col * n + col];
        for row in col + 1..n {
            let f = a[row * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                a[row * n + j] -= f * a[col * n + j];
            }
            for j in 0..k {
                b[row * k + j] -= f * b[col * k + j];
            }
        }
    }
    let mut x = vec![0.0; n * k];
    for row in (0..n).rev() {
        for j in 0..k {
            let mut s = b[row * k + j];
            for c in row + 1..n {
                s -= a[row * n + c] * x[c * k + j];
            }
            x[row * k + j] = s / a[row * n + row];
        }
    }
    Some(x)
}

/// Weighted least squares: minimises `sum_i w_i |y_i - x_i beta|^2` for each
/// of the `k` response columns. `x` is `rows x p`, `y` is `rows x k`, both
/// row-major. Returns `beta` as `p x k`.
pub fn weighted_least_squares(x: &[f64], y: &[f64], w: &[f64], p: usize, k: usize) -> Option<Vec<f64>> {
    let rows = w.len();
    let mut xtx = vec![0.0; p * p];
    let mut xty = vec![0.0; p * k];
    for i in 0..rows {
        let wi = w[i];
        if wi == 0.0 {
            continue;
        }
        let xi = &x[i * p..(i + 1) * p];
        let yi = &y[i * k..(i + 1) * k];
        for a in 0..p {
            let wa = wi * xi[a];
            for b in a..p {
                xtx[a * p + b] += wa * xi[b];
            }
            for j in 0..k {
                xty[a * k + j] += wa * yi[j];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            xtx[a * p + b] = xtx[b * p + a];
        }
    }
    solve(xtx, xty, p, k)
}
