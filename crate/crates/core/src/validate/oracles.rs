//! Reference implementations used to check the estimators. They share no
//! numerical code with the estimators: linear systems are solved here by
//! plain Gaussian elimination.

use crate::dgm::expit;

/// Solves a dense square system by Gaussian elimination with partial
/// pivoting. `None` if a pivot vanishes.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    assert!(
        a.len() == n && a.iter().all(|r| r.len() == n),
        "square system"
    );
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        let pivot_row = a[col].clone();
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor == 0.0 {
                continue;
            }
            for (dst, src) in a[row][col..].iter_mut().zip(&pivot_row[col..]) {
                *dst -= factor * src;
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Minimizes Σ (wᵢ − dᵢ)² / (2dᵢ) subject to Σ wᵢ xᵢ = t by solving the
/// full Lagrangian (KKT) system in (w, λ):
///
/// ```text
/// wᵢ / dᵢ − xᵢᵀλ = 1        for each row i
/// Σᵢ xᵢₖ wᵢ      = tₖ       for each column k
/// ```
pub fn kkt_calibration(d: &[f64], rows: &[Vec<f64>], totals: &[f64]) -> Option<Vec<f64>> {
    let n = d.len();
    let p = totals.len();
    let size = n + p;
    let mut a = vec![vec![0.0; size]; size];
    let mut b = vec![0.0; size];
    for i in 0..n {
        a[i][i] = 1.0 / d[i];
        for k in 0..p {
            a[i][n + k] = -rows[i][k];
        }
        b[i] = 1.0;
    }
    for k in 0..p {
        for i in 0..n {
            a[n + k][i] = rows[i][k];
        }
        b[n + k] = totals[k];
    }
    gauss_solve(a, b).map(|mut s| {
        s.truncate(n);
        s
    })
}

/// Logistic maximum likelihood by Newton–Raphson from β = 0.
pub fn newton_logistic(rows: &[Vec<f64>], y: &[f64], max_iter: usize) -> Option<Vec<f64>> {
    let p = rows.first()?.len();
    let mut beta = vec![0.0; p];
    for _ in 0..max_iter {
        let mut hess = vec![vec![0.0; p]; p];
        let mut grad = vec![0.0; p];
        for (x, &yi) in rows.iter().zip(y) {
            let eta: f64 = x.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let mu = expit(eta);
            let w = mu * (1.0 - mu);
            for a in 0..p {
                grad[a] += x[a] * (yi - mu);
                for b in 0..p {
                    hess[a][b] += w * x[a] * x[b];
                }
            }
        }
        let step = gauss_solve(hess, grad)?;
        let size = step.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        for (b, s) in beta.iter_mut().zip(&step) {
            *b += s;
        }
        if size < 1e-13 {
            return Some(beta);
        }
    }
    Some(beta)
}

/// Central finite-difference gradient of `f` at `x` with step `h`.
pub fn central_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + h;
            let up = f(&probe);
            probe[k] = x[k] - h;
            let down = f(&probe);
            probe[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Mean and unbiased variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_solves_small_system() {
        let x = gauss_solve(vec![vec![0.0, 2.0], vec![3.0, 1.0]], vec![4.0, 5.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15);
        assert!(gauss_solve(vec![vec![1.0, 2.0], vec![2.0, 4.0]], vec![1.0, 2.0]).is_none());
    }

    #[test]
    fn kkt_intercept_only() {
        let rows = vec![vec![1.0]; 4];
        let w = kkt_calibration(&[3.0; 4], &rows, &[6.0]).unwrap();
        assert!(w.iter().all(|wi| (wi - 1.5).abs() < 1e-14));
    }

    #[test]
    fn newton_two_by_two_table() {
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for (x, ones, zeros) in [(1.0, 30, 10), (0.0, 10, 30)] {
            for k in 0..ones + zeros {
                rows.push(vec![1.0, x]);
                y.push(if k < ones { 1.0 } else { 0.0 });
            }
        }
        let beta = newton_logistic(&rows, &y, 50).unwrap();
        assert!((beta[1] - 9f64.ln()).abs() < 1e-12);
        assert!((beta[0] + 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn central_gradient_of_quadratic() {
        let g = central_gradient(|x| x[0] * x[0] + 3.0 * x[1], &[2.0, 5.0], 1e-5);
        assert!((g[0] - 4.0).abs() < 1e-8 && (g[1] - 3.0).abs() < 1e-8);
    }
}
