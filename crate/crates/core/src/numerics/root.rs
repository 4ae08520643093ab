use super::Scalar;
use crate::error::{OsaError, Result};

/// Solves `f(x) = target` for a monotone `f` on `[lo, hi]` by bisection.
///
/// Bisects until the bracket stops shrinking in the scalar type, then
/// returns whichever endpoint has the smaller residual. Works for either
/// direction of monotonicity.
pub fn invert_monotone<S, F>(f: F, target: S, lo: S, hi: S) -> Result<S>
where
    S: Scalar,
    F: Fn(S) -> S,
{
    if !(lo <= hi) {
        return Err(OsaError::Invalid(format!("empty bracket [{lo}, {hi}]")));
    }
    let mut a = lo;
    let mut b = hi;
    let mut fa = f(a) - target;
    let fb = f(b) - target;
    if fa == S::zero() {
        return Ok(a);
    }
    if fb == S::zero() {
        return Ok(b);
    }
    if fa.signum() == fb.signum() || fa.is_nan() || fb.is_nan() {
        return Err(OsaError::Bracket {
            target: target.as_f64(),
            f_lo: (fa + target).as_f64(),
            f_hi: (fb + target).as_f64(),
        });
    }
    let mut best = (fa.abs(), a);
    if fb.abs() < best.0 {
        best = (fb.abs(), b);
    }
    let two = S::lit(2.0);
    for _ in 0..2000 {
        let mid = a + (b - a) / two;
        if mid <= a || mid >= b {
            break;
        }
        let fm = f(mid) - target;
        if fm.abs() < best.0 {
            best = (fm.abs(), mid);
        }
        if fm == S::zero() {
            return Ok(mid);
        }
        if fm.signum() == fa.signum() {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    Ok(best.1)
}
