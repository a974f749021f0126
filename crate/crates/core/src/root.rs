//! Bracketed root finding (Brent's method) for monotone scalar equations.

use alloc::format;

use crate::error::{Error, Result};
use crate::fmath::abs;

const MAX_ITER: usize = 200;
const MAX_EXPANSIONS: usize = 60;

fn same_sign(x: f64, y: f64) -> bool {
    (x > 0.0) == (y > 0.0)
}

/// Root of `f` inside `[a, b]`, which must bracket a sign change.
///
/// Iterates until the bracket width shrinks below a machine-level tolerance,
/// then reports the iterate with the smallest residual seen.
pub fn brent<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64) -> Result<(f64, f64)> {
    let mut a = a;
    let mut b = b;
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Ok((a, 0.0));
    }
    if fb == 0.0 {
        return Ok((b, 0.0));
    }
    if same_sign(fa, fb) {
        return Err(Error::Solver(format!(
            "interval [{a}, {b}] does not bracket a sign change (f(a)={fa:e}, f(b)={fb:e})"
        )));
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..MAX_ITER {
        if same_sign(fb, fc) {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if abs(fc) < abs(fb) {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * abs(b) + 1e-15;
        let xm = 0.5 * (c - b);
        if abs(xm) <= tol1 || fb == 0.0 {
            return Ok((b, fb));
        }
        if abs(e) >= tol1 && abs(fa) > abs(fb) {
            // Inverse quadratic interpolation, falling back to secant.
            let s = fb / fa;
            let (mut p, mut q) = if a == c {
                (2.0 * xm * s, 1.0 - s)
            } else {
                let q = fa / fc;
                let r = fb / fc;
                (
                    s * (2.0 * xm * q * (q - r) - (b - a) * (r - 1.0)),
                    (q - 1.0) * (r - 1.0) * (s - 1.0),
                )
            };
            if p > 0.0 {
                q = -q;
            }
            p = abs(p);
            let min1 = 3.0 * xm * q - abs(tol1 * q);
            let min2 = abs(e * q);
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        if abs(d) > tol1 {
            b += d;
        } else {
            b += if xm >= 0.0 { tol1 } else { -tol1 };
        }
        fb = f(b);
    }
    Err(Error::Solver(format!(
        "no convergence in {MAX_ITER} iterations; last iterate {b} with residual {fb:e}"
    )))
}

/// Brent on `[a, b]`, geometrically widening the interval around its center
/// until it brackets a sign change.
pub fn brent_expanding<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64) -> Result<(f64, f64)> {
    let center = 0.5 * (a + b);
    let mut half = 0.5 * (b - a);
    for _ in 0..MAX_EXPANSIONS {
        let (lo, hi) = (center - half, center + half);
        let (flo, fhi) = (f(lo), f(hi));
        if flo == 0.0 {
            return Ok((lo, 0.0));
        }
        if fhi == 0.0 {
            return Ok((hi, 0.0));
        }
        if !same_sign(flo, fhi) {
            return brent(f, lo, hi);
        }
        half *= 2.0;
    }
    Err(Error::Solver(format!(
        "no sign change found after expanding the bracket around {center} to half-width {half:e}"
    )))
}
