//! Adaptive Gauss–Kronrod (7/15) quadrature on a finite interval.

use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("quadrature did not reach relative tolerance {tol:e} within {max_intervals} subintervals (estimated error {error:e})")]
    NoConvergence { tol: f64, max_intervals: usize, error: f64 },
    #[error("integrand is not finite at {0}")]
    NonFinite(f64),
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
#[allow(clippy::excessive_precision)]
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_0,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<T: Real, F: FnMut(T) -> T>(f: &mut F, a: T, b: T) -> Result<(T, T), QuadratureError> {
    let half = T::lit(0.5);
    let center = half * (a + b);
    let half_len = half * (b - a);
    let fc = f(center);
    if !fc.is_finite() {
        return Err(QuadratureError::NonFinite(center.to_f64_lossy()));
    }
    let mut kronrod = fc * T::lit(WGK[7]);
    let mut gauss = fc * T::lit(WG[3]);
    for (j, &x) in XGK.iter().take(7).enumerate() {
        let dx = half_len * T::lit(x);
        let (f1, f2) = (f(center - dx), f(center + dx));
        if !f1.is_finite() || !f2.is_finite() {
            return Err(QuadratureError::NonFinite((center - dx).to_f64_lossy()));
        }
        kronrod = kronrod + T::lit(WGK[j]) * (f1 + f2);
        // odd Kronrod nodes are the Gauss nodes
        if j % 2 == 1 {
            gauss = gauss + T::lit(WG[j / 2]) * (f1 + f2);
        }
    }
    let integral = kronrod * half_len;
    let error = ((kronrod - gauss) * half_len).abs();
    Ok((integral, error))
}

/// Integrates `f` over `[a, b]` to relative tolerance `rel_tol` by repeatedly
/// bisecting the subinterval with the largest error estimate.
pub fn integrate<T, F>(mut f: F, a: T, b: T, rel_tol: T) -> Result<T, QuadratureError>
where
    T: Real,
    F: FnMut(T) -> T,
{
    const MAX_INTERVALS: usize = 2000;
    let (i0, e0) = gk15(&mut f, a, b)?;
    let mut parts = vec![(a, b, i0, e0)];
    let mut total = i0;
    let mut err = e0;
    // absolute floor for integrals that cancel to zero
    let floor = T::lit(1e-14);
    while err > rel_tol * total.abs() && err > floor {
        if parts.len() >= MAX_INTERVALS {
            return Err(QuadratureError::NoConvergence {
                tol: rel_tol.to_f64_lossy(),
                max_intervals: MAX_INTERVALS,
                error: err.to_f64_lossy(),
            });
        }
        let (worst, _) = parts
            .iter()
            .enumerate()
            .fold((0, T::neg_infinity()), |(bi, be), (i, p)| if p.3 > be { (i, p.3) } else { (bi, be) });
        let (lo, hi, _, _) = parts.swap_remove(worst);
        let mid = T::lit(0.5) * (lo + hi);
        let left = gk15(&mut f, lo, mid)?;
        let right = gk15(&mut f, mid, hi)?;
        parts.push((lo, mid, left.0, left.1));
        parts.push((mid, hi, right.0, right.1));
        total = parts.iter().fold(T::zero(), |s, p| s + p.2);
        err = parts.iter().fold(T::zero(), |s, p| s + p.3);
    }
    Ok(total)
}
