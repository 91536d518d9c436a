//! Safeguarded Newton iteration on a sign-changing bracket.
//!
//! Newton steps are accepted only while they stay strictly inside the
//! current bracket and shrink it at least as fast as bisection would;
//! otherwise the step falls back to bisection. Convergence is therefore
//! guaranteed for any continuous function with a sign change.

use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RootError {
    #[error("root not bracketed: f({lo}) = {f_lo}, f({hi}) = {f_hi}")]
    NotBracketed {
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
    },
    #[error("root solver did not converge after {iterations} iterations (bracket width {width:e})")]
    NoConvergence { iterations: usize, width: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct RootOptions<T> {
    /// Absolute tolerance on the root location.
    pub abs_tol: T,
    pub max_iter: usize,
}

impl<T: Real> Default for RootOptions<T> {
    fn default() -> Self {
        Self {
            abs_tol: T::lit(1e-14),
            max_iter: 200,
        }
    }
}

/// Finds a root of `f` in `[lo, hi]`. `f` returns the value and derivative.
pub fn newton_bisect<T, F>(mut f: F, lo: T, hi: T, opts: RootOptions<T>) -> Result<T, RootError>
where
    T: Real,
    F: FnMut(T) -> (T, T),
{
    let (mut a, mut b) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    let (fa, _) = f(a);
    let (fb, _) = f(b);
    if fa == T::zero() {
        return Ok(a);
    }
    if fb == T::zero() {
        return Ok(b);
    }
    if fa.signum() == fb.signum() || fa.is_nan() || fb.is_nan() {
        return Err(RootError::NotBracketed {
            lo: a.to_f64_lossy(),
            hi: b.to_f64_lossy(),
            f_lo: fa.to_f64_lossy(),
            f_hi: fb.to_f64_lossy(),
        });
    }
    // orient so that f(a) < 0 < f(b)
    let flip = fa > T::zero();
    let two = T::lit(2.0);
    let mut x = (a + b) / two;
    let mut last_step = (b - a).abs();
    for _ in 0..opts.max_iter {
        let (mut fx, dfx) = f(x);
        if flip {
            fx = -fx;
        }
        if fx == T::zero() {
            return Ok(x);
        }
        if fx < T::zero() {
            a = x;
        } else {
            b = x;
        }
        let dfx = if flip { -dfx } else { dfx };
        let newton = x - fx / dfx;
        let width = (b - a).abs();
        let candidate = if dfx != T::zero()
            && newton.is_finite()
            && newton > a.min(b)
            && newton < a.max(b)
            && (newton - x).abs() * two <= last_step
        {
            newton
        } else {
            (a + b) / two
        };
        last_step = (candidate - x).abs();
        x = candidate;
        if last_step <= opts.abs_tol || width <= opts.abs_tol {
            return Ok(x);
        }
    }
    Err(RootError::NoConvergence {
        iterations: opts.max_iter,
        width: (b - a).abs().to_f64_lossy(),
    })
}

/// Derivative-free root finding by regula falsi with the Illinois
/// modification. Stops when `|f| <= f_tol` or the bracket is narrower than
/// `x_tol`. Suited to noisy-but-continuous functions such as Monte Carlo
/// estimates under common random numbers.
pub fn illinois<T, F>(mut f: F, lo: T, hi: T, x_tol: T, f_tol: T, max_iter: usize) -> Result<(T, T), RootError>
where
    T: Real,
    F: FnMut(T) -> T,
{
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (f(a), f(b));
    if fa.signum() == fb.signum() || fa.is_nan() || fb.is_nan() {
        return Err(RootError::NotBracketed {
            lo: a.to_f64_lossy(),
            hi: b.to_f64_lossy(),
            f_lo: fa.to_f64_lossy(),
            f_hi: fb.to_f64_lossy(),
        });
    }
    let half = T::lit(0.5);
    let mut side = 0i8;
    for _ in 0..max_iter {
        if fa.abs() <= f_tol {
            return Ok((a, fa));
        }
        if fb.abs() <= f_tol {
            return Ok((b, fb));
        }
        if (b - a).abs() <= x_tol {
            return Ok(if fa.abs() < fb.abs() { (a, fa) } else { (b, fb) });
        }
        let mut c = (a * fb - b * fa) / (fb - fa);
        if !c.is_finite() || c <= a.min(b) || c >= a.max(b) {
            c = half * (a + b);
        }
        let fc = f(c);
        if fc.signum() == fb.signum() {
            b = c;
            fb = fc;
            if side == -1 {
                fa = fa * half;
            }
            side = -1;
        } else {
            a = c;
            fa = fc;
            if side == 1 {
                fb = fb * half;
            }
            side = 1;
        }
    }
    Err(RootError::NoConvergence {
        iterations: max_iter,
        width: (b - a).abs().to_f64_lossy(),
    })
}
