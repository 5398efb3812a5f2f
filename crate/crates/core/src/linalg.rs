//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// Condition number of `a` after symmetric diagonal scaling to unit diagonal.
///
/// Returns infinity when a diagonal entry is non-positive or the scaled
/// matrix is not positive definite.
pub fn scaled_condition(a: &DMatrix<f64>) -> f64 {
    let p = a.nrows();
    let mut scale = Vec::with_capacity(p);
    for i in 0..p {
        let d = a[(i, i)];
        if !(d > 0.0) || !d.is_finite() {
            return f64::INFINITY;
        }
        scale.push(1.0 / d.sqrt());
    }
    let scaled = DMatrix::from_fn(p, p, |i, j| a[(i, j)] * scale[i] * scale[j]);
    let eig = scaled.symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(min > 0.0) {
        return f64::INFINITY;
    }
    max / min
}

/// Solves `a x = b` for symmetric positive definite `a`.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    a.clone().cholesky().map(|c| c.solve(b))
}

/// Inverse of a symmetric positive definite matrix.
pub fn inverse_spd(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    a.clone().cholesky().map(|c| c.inverse())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn condition_of_identity_is_one() {
        let a = DMatrix::<f64>::identity(4, 4) * 7.0;
        assert!((scaled_condition(&a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_column_is_infinitely_ill_conditioned() {
        let mut a = DMatrix::<f64>::identity(3, 3);
        a[(2, 2)] = 0.0;
        assert!(scaled_condition(&a).is_infinite());
    }
}
