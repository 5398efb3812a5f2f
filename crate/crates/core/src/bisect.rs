//! Monotone bisection used by the intercept tuners.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bisection {
    pub x: f64,
    pub value: f64,
    pub iterations: usize,
}

/// Endpoint values when the target is not bracketed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NotBracketed {
    pub value_lo: f64,
    pub value_hi: f64,
}

/// Finds `x` in `[lo, hi]` with `f(x) ≈ target` for non-decreasing `f`.
///
/// Stops when the bracket is narrower than `x_tol` or `f` is within
/// `f_tol` of the target.
pub fn bisect_increasing<F>(
    mut f: F,
    mut lo: f64,
    mut hi: f64,
    target: f64,
    x_tol: f64,
    f_tol: f64,
    max_iter: usize,
) -> Result<Bisection, NotBracketed>
where
    F: FnMut(f64) -> f64,
{
    let value_lo = f(lo);
    let value_hi = f(hi);
    if !(value_lo <= target && target <= value_hi) {
        return Err(NotBracketed { value_lo, value_hi });
    }
    let mut best = Bisection {
        x: lo,
        value: value_lo,
        iterations: 0,
    };
    if (value_hi - target).abs() < (value_lo - target).abs() {
        best = Bisection {
            x: hi,
            value: value_hi,
            iterations: 0,
        };
    }
    for iter in 1..=max_iter {
        let mid = 0.5 * (lo + hi);
        let value = f(mid);
        best = Bisection {
            x: mid,
            value,
            iterations: iter,
        };
        if (value - target).abs() <= f_tol || hi - lo <= x_tol {
            break;
        }
        if value < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(best)
}
