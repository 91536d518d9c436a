//! Pole-type heavy-tailed observables `φ(p) = Σ C_i d(p, p_i)^{-D/α} + shift`,
//! their scaling and centering sequences, truncations, and the cusp integrals
//! that decide which limit mechanism dominates on a cusped billiard.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interval::LsvMap;
use crate::quadrature::{integrate, QuadratureError};
use crate::rng::stream_rng;
use crate::roots::{illinois, RootError};
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObservableError {
    #[error("alpha must lie in (0,1) ∪ (1,2), got {0}")]
    InvalidAlpha(f64),
    #[error("pole location does not belong to the observable's phase space")]
    SpaceMismatch,
    #[error("observable has neither poles nor a shift")]
    Empty,
    #[error("non-finite pole coefficient or location")]
    NonFinite,
    #[error("evaluation at a pole")]
    PoleHit,
    #[error("centering for alpha > 1 needs a mean estimate")]
    MissingMean,
    #[error("cusp integral quadrature failed: {0}")]
    Quadrature(#[from] QuadratureError),
    #[error("no sign change of g on the bracket [{lo}, {hi}]")]
    NoSignChange { lo: f64, hi: f64 },
    #[error("Monte Carlo standard error {stderr:e} exceeds the root tolerance {tol:e}")]
    MonteCarloError { stderr: f64, tol: f64 },
    #[error("root search failed: {0}")]
    Root(#[from] RootError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// A state of either system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PhasePoint<T> {
    Interval(T),
    Collision { r: T, theta: T },
}

/// Phase space carrying the metric used by the poles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PhaseSpace<T> {
    /// `[0, 1]` with `|x - x'|`.
    Interval,
    /// Collision space `(r, θ)` with `|r - r'| + |θ - θ'|`, `r` periodic.
    Billiard { perimeter: T },
}

impl<T: Real> PhaseSpace<T> {
    pub fn dimension(&self) -> u32 {
        match self {
            PhaseSpace::Interval => 1,
            PhaseSpace::Billiard { .. } => 2,
        }
    }

    pub fn distance(&self, a: PhasePoint<T>, b: PhasePoint<T>) -> Result<T, ObservableError> {
        match (self, a, b) {
            (PhaseSpace::Interval, PhasePoint::Interval(x), PhasePoint::Interval(y)) => Ok((x - y).abs()),
            (
                PhaseSpace::Billiard { perimeter },
                PhasePoint::Collision { r: r1, theta: t1 },
                PhasePoint::Collision { r: r2, theta: t2 },
            ) => Ok(periodic_gap(r1, r2, *perimeter) + (t1 - t2).abs()),
            _ => Err(ObservableError::SpaceMismatch),
        }
    }

    fn contains(&self, p: &PhasePoint<T>) -> bool {
        matches!(
            (self, p),
            (PhaseSpace::Interval, PhasePoint::Interval(_)) | (PhaseSpace::Billiard { .. }, PhasePoint::Collision { .. })
        )
    }
}

#[inline]
fn periodic_gap<T: Real>(a: T, b: T, period: T) -> T {
    let d = (a - b).abs() % period;
    d.min(period - d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pole<T> {
    pub location: PhasePoint<T>,
    pub coefficient: T,
}

/// `φ(p) = Σ C_i d(p, p_i)^{-D/α} + shift`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservableSpec<T> {
    space: PhaseSpace<T>,
    poles: Vec<Pole<T>>,
    alpha: T,
    shift: T,
    neg_exponent: T,
}

impl<T: Real> ObservableSpec<T> {
    pub fn new(space: PhaseSpace<T>, poles: Vec<Pole<T>>, alpha: T, shift: T) -> Result<Self, ObservableError> {
        validate_alpha(alpha)?;
        if poles.is_empty() && shift == T::zero() {
            return Err(ObservableError::Empty);
        }
        for p in &poles {
            if !space.contains(&p.location) {
                return Err(ObservableError::SpaceMismatch);
            }
            let finite = match p.location {
                PhasePoint::Interval(x) => x.is_finite(),
                PhasePoint::Collision { r, theta } => r.is_finite() && theta.is_finite(),
            };
            if !finite || !p.coefficient.is_finite() {
                return Err(ObservableError::NonFinite);
            }
        }
        if !shift.is_finite() {
            return Err(ObservableError::NonFinite);
        }
        let dim = T::lit(space.dimension() as f64);
        Ok(Self {
            space,
            poles,
            alpha,
            shift,
            neg_exponent: -dim / alpha,
        })
    }

    /// `d(x, x_0)^{-1/α}` on the interval.
    pub fn interval_pole(x0: T, alpha: T) -> Result<Self, ObservableError> {
        Self::new(
            PhaseSpace::Interval,
            vec![Pole {
                location: PhasePoint::Interval(x0),
                coefficient: T::one(),
            }],
            alpha,
            T::zero(),
        )
    }

    /// `d((r, θ), (r_0, θ_0))^{-2/α}` on the collision space.
    pub fn billiard_pole(perimeter: T, r0: T, theta0: T, alpha: T) -> Result<Self, ObservableError> {
        Self::new(
            PhaseSpace::Billiard { perimeter },
            vec![Pole {
                location: PhasePoint::Collision { r: r0, theta: theta0 },
                coefficient: T::one(),
            }],
            alpha,
            T::zero(),
        )
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn shift(&self) -> T {
        self.shift
    }

    pub fn space(&self) -> PhaseSpace<T> {
        self.space
    }

    pub fn poles(&self) -> &[Pole<T>] {
        &self.poles
    }

    pub fn dimension(&self) -> u32 {
        self.space.dimension()
    }

    /// Pole exponent `D/α`.
    pub fn pole_exponent(&self) -> T {
        -self.neg_exponent
    }

    /// All coefficients multiplied by `lambda`; the shift is kept.
    pub fn scaled(&self, lambda: T) -> Self {
        let mut s = self.clone();
        for p in &mut s.poles {
            p.coefficient = p.coefficient * lambda;
        }
        s
    }

    pub fn with_shift(&self, shift: T) -> Self {
        let mut s = self.clone();
        s.shift = shift;
        s
    }

    pub fn eval(&self, p: PhasePoint<T>) -> Result<T, ObservableError> {
        let mut total = self.shift;
        for pole in &self.poles {
            let d = self.space.distance(p, pole.location)?;
            let term = d.powf(self.neg_exponent);
            if !term.is_finite() {
                return Err(ObservableError::PoleHit);
            }
            total = total + pole.coefficient * term;
        }
        Ok(total)
    }

    /// Interval evaluation without validation; infinite at a pole.
    #[inline]
    pub fn eval_interval(&self, x: T) -> T {
        let mut total = self.shift;
        for pole in &self.poles {
            if let PhasePoint::Interval(x0) = pole.location {
                total = total + pole.coefficient * (x - x0).abs().powf(self.neg_exponent);
            }
        }
        total
    }

    /// Collision-space evaluation without validation; infinite at a pole.
    #[inline]
    pub fn eval_collision(&self, r: T, theta: T) -> T {
        let perimeter = match self.space {
            PhaseSpace::Billiard { perimeter } => perimeter,
            PhaseSpace::Interval => return T::nan(),
        };
        let mut total = self.shift;
        for pole in &self.poles {
            if let PhasePoint::Collision { r: r0, theta: t0 } = pole.location {
                let d = periodic_gap(r, r0, perimeter) + (theta - t0).abs();
                total = total + pole.coefficient * d.powf(self.neg_exponent);
            }
        }
        total
    }

    /// Splits a value into its parts off and on the inducing set,
    /// `(φ 1_{M^c}, φ 1_M)`.
    #[inline]
    pub fn decompose(value: T, in_inducing_set: bool) -> (T, T) {
        if in_inducing_set {
            (T::zero(), value)
        } else {
            (value, T::zero())
        }
    }
}

fn validate_alpha<T: Real>(alpha: T) -> Result<(), ObservableError> {
    if !(alpha > T::zero() && alpha < T::lit(2.0)) || alpha == T::one() {
        return Err(ObservableError::InvalidAlpha(alpha.to_f64_lossy()));
    }
    Ok(())
}

/// `b_n = n^{1/α}`, slowly varying factor taken constant.
pub fn scaling_bn<T: Real>(n: u64, alpha: T) -> T {
    T::lit(n as f64).powf(T::one() / alpha)
}

/// `c_n = 0` for `α < 1`, `n μ(φ)` for `α > 1`.
pub fn centering_cn<T: Real>(n: u64, alpha: T, mean_estimate: Option<T>) -> Result<T, ObservableError> {
    validate_alpha(alpha)?;
    if alpha < T::one() {
        return Ok(T::zero());
    }
    let mean = mean_estimate.ok_or(ObservableError::MissingMean)?;
    Ok(T::lit(n as f64) * mean)
}

/// `ψ = φ 1{|φ| ≤ threshold}`, optionally centered by an estimate of `μ(ψ)`.
#[derive(Debug, Clone)]
pub struct Truncated<'a, T> {
    spec: &'a ObservableSpec<T>,
    threshold: T,
    mean: T,
}

pub fn truncate<T: Real>(spec: &ObservableSpec<T>, threshold: T) -> Result<Truncated<'_, T>, ObservableError> {
    if !(threshold > T::zero()) {
        return Err(ObservableError::InvalidArgument(format!(
            "truncation threshold must be positive, got {threshold}"
        )));
    }
    Ok(Truncated {
        spec,
        threshold,
        mean: T::zero(),
    })
}

impl<'a, T: Real> Truncated<'a, T> {
    pub fn threshold(&self) -> T {
        self.threshold
    }

    /// Truncation of an already evaluated value.
    #[inline]
    pub fn clamp(&self, value: T) -> T {
        if value.abs() <= self.threshold {
            value
        } else {
            T::zero()
        }
    }

    pub fn raw(&self, p: PhasePoint<T>) -> T {
        match self.spec.eval(p) {
            Ok(v) => self.clamp(v),
            // a pole is above every finite threshold
            Err(_) => T::zero(),
        }
    }

    pub fn centered(&self, p: PhasePoint<T>) -> T {
        self.raw(p) - self.mean
    }

    pub fn mean(&self) -> T {
        self.mean
    }

    pub fn with_mean(mut self, mean: T) -> Self {
        self.mean = mean;
        self
    }

    /// Sets the centering from sample points drawn from the invariant measure.
    pub fn with_estimated_mean<I: IntoIterator<Item = PhasePoint<T>>>(self, points: I) -> Self {
        let (mut sum, mut count) = (T::zero(), 0u64);
        for p in points {
            sum = sum + self.raw(p);
            count += 1;
        }
        let mean = if count > 0 { sum / T::lit(count as f64) } else { T::zero() };
        self.with_mean(mean)
    }
}

/// `I_{ψ,i}` and `I_i` for one cusp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CuspIntegrals {
    pub i_psi: f64,
    pub i_norm: f64,
}

impl CuspIntegrals {
    /// Whether `I_{ψ,i}` vanishes relative to the observable's own scale.
    pub fn is_zero(&self, scale: f64) -> bool {
        self.i_psi.abs() <= 1e-9 * scale.abs().max(f64::MIN_POSITIVE)
    }
}

/// `I_{ψ,i} = 1/4 ∫_0^π (ψ̄_+ + ψ̄_-) sin^{γ_i} θ dθ` and `I_i = 1/2 ∫_0^π sin^{γ_i} θ dθ`.
pub fn cusp_integrals<F>(mut boundary_values: F, gamma_i: f64) -> Result<CuspIntegrals, ObservableError>
where
    F: FnMut(f64) -> (f64, f64),
{
    const REL_TOL: f64 = 1e-10;
    let weight = |t: f64| t.sin().max(0.0).powf(gamma_i);
    let i_psi = 0.25
        * integrate(
            |t: f64| {
                let (p, m) = boundary_values(t);
                (p + m) * weight(t)
            },
            0.0,
            PI,
            REL_TOL,
        )?;
    let i_norm = 0.5 * integrate(weight, 0.0, PI, REL_TOL)?;
    Ok(CuspIntegrals { i_psi, i_norm })
}

/// One-sided limit `lim_{h→0+} f(r_i ± h)` by Richardson extrapolation along
/// `h_k = h_0 2^{-k}`. `side` is `+1.0` or `-1.0`.
pub fn boundary_limit<F: FnMut(f64) -> f64>(mut f: F, r_i: f64, side: f64, h0: f64) -> f64 {
    const LEVELS: usize = 6;
    let mut table: Vec<f64> = (0..LEVELS).map(|k| f(r_i + side * h0 * 0.5f64.powi(k as i32))).collect();
    // successive eliminations of the O(h), O(h^2), ... error terms
    for order in 1..LEVELS {
        let factor = 2f64.powi(order as i32);
        for k in 0..LEVELS - order {
            table[k] = (factor * table[k + 1] - table[k]) / (factor - 1.0);
        }
    }
    table[0]
}

/// Long-orbit average with batch-means standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: u64,
}

/// Batch-means estimate over `values`, split into `batches` contiguous blocks.
pub fn batch_means<I: IntoIterator<Item = f64>>(values: I, total: u64, batches: u64) -> MeanEstimate {
    let batches = batches.max(2).min(total.max(2));
    let per = (total / batches).max(1);
    let mut batch_sums = Vec::with_capacity(batches as usize);
    let (mut acc, mut in_batch, mut count, mut sum) = (0.0, 0u64, 0u64, 0.0);
    for v in values.into_iter().take(total as usize) {
        acc += v;
        sum += v;
        in_batch += 1;
        count += 1;
        if in_batch == per && (batch_sums.len() as u64) < batches {
            batch_sums.push(acc / per as f64);
            acc = 0.0;
            in_batch = 0;
        }
    }
    let mean = if count > 0 { sum / count as f64 } else { f64::NAN };
    let b = batch_sums.len() as f64;
    let stderr = if b >= 2.0 {
        let m = batch_sums.iter().sum::<f64>() / b;
        (batch_sums.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (b - 1.0) / b).sqrt()
    } else {
        f64::INFINITY
    };
    MeanEstimate {
        mean,
        stderr,
        samples: count,
    }
}

/// Birkhoff estimate of `μ_γ(φ)` along one equilibrium orbit.
pub fn lsv_mean(
    map: &LsvMap<f64>,
    spec: &ObservableSpec<f64>,
    iterates: u64,
    burn_in: usize,
    seed: u64,
    stream: u64,
) -> MeanEstimate {
    let mut rng = stream_rng(seed, stream);
    let mut x = map.equilibrium_sample(&mut rng, burn_in);
    let values = std::iter::from_fn(|| {
        x = map.apply(x);
        Some(spec.eval_interval(x))
    })
    .filter(|v| v.is_finite());
    batch_means(values, iterates, 64)
}

/// Birkhoff estimate of `μ_γ(d(·, x_0)^{-1/α})` for `α > 1`, with the
/// pole's contribution inside `|x - x_0| < δ` replaced by its local average
/// `δ^{-1/α} / (1 - 1/α)`. The invariant density is smooth near `x_0`, so the
/// bias is `O(δ^2)` while the estimator has finite variance.
#[allow(clippy::too_many_arguments)]
pub fn lsv_pole_mean(map: &LsvMap<f64>, x0: f64, alpha: f64, delta: f64, iterates: u64, burn_in: usize, seed: u64, stream: u64) -> MeanEstimate {
    let p = -1.0 / alpha;
    let inside = delta.powf(p) / (1.0 + p);
    let mut rng = stream_rng(seed, stream);
    let mut x = map.equilibrium_sample(&mut rng, burn_in);
    let values = std::iter::from_fn(|| {
        x = map.apply(x);
        let d = (x - x0).abs();
        Some(if d < delta { inside } else { d.powf(p) })
    });
    batch_means(values, iterates, 64)
}

/// Settings for [`find_balanced_x0`].
#[derive(Debug, Clone, Copy)]
pub struct BalanceOptions {
    pub iterates: u64,
    pub burn_in: usize,
    pub seed: u64,
    pub stream: u64,
    /// Tolerance on `|g(x_0)|`.
    pub tol: f64,
    /// Half-width of the window around the pole that is replaced by its local average.
    pub delta: f64,
}

impl Default for BalanceOptions {
    fn default() -> Self {
        Self {
            iterates: 100_000_000,
            burn_in: crate::interval::DEFAULT_BURN_IN,
            seed: 0,
            stream: crate::rng::AUX_STREAM_BASE,
            tol: 1e-3,
            delta: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BalancedPole {
    pub x0: f64,
    /// `g(x_0)` at the returned root, on the search orbit.
    pub g: f64,
    /// Batch-means standard error of `μ(φ)` at the root.
    pub stderr: f64,
    pub evaluations: usize,
}

/// `g(x_0) = φ(0) - μ(φ)` for `φ = d(·, x_0)^{-1/α}`, with `μ` estimated on
/// the orbit selected by `opts` (common random numbers across `x_0`).
pub fn balance_gap(map: &LsvMap<f64>, alpha: f64, x0: f64, opts: &BalanceOptions) -> Result<(f64, MeanEstimate), ObservableError> {
    if !(alpha > 1.0 && alpha < 2.0) {
        return Err(ObservableError::InvalidAlpha(alpha));
    }
    if !(x0 > opts.delta && x0 + opts.delta < 1.0) {
        return Err(ObservableError::InvalidArgument(format!("pole {x0} closer than δ to the boundary")));
    }
    let est = lsv_pole_mean(map, x0, alpha, opts.delta, opts.iterates, opts.burn_in, opts.seed, opts.stream);
    Ok((x0.powf(-1.0 / alpha) - est.mean, est))
}

/// Pole location `x_0` at which `φ(0) = μ(φ)`, the balanced case where the
/// indifferent fixed point's contribution cancels at first order.
pub fn find_balanced_x0(
    map: &LsvMap<f64>,
    alpha: f64,
    bracket: (f64, f64),
    opts: &BalanceOptions,
) -> Result<BalancedPole, ObservableError> {
    if !(alpha > 1.0 && alpha < 2.0) {
        return Err(ObservableError::InvalidAlpha(alpha));
    }
    let (lo, hi) = bracket;
    if !(0.0 < lo && lo < hi && hi < 1.0) {
        return Err(ObservableError::InvalidArgument(format!("bracket ({lo}, {hi}) must lie inside (0, 1)")));
    }
    let mut evaluations = 0usize;
    let mut g = |x0: f64| {
        evaluations += 1;
        balance_gap(map, alpha, x0, opts).map(|(g, _)| g).unwrap_or(f64::NAN)
    };
    let (g_lo, g_hi) = (g(lo), g(hi));
    if !(g_lo.signum() != g_hi.signum()) {
        return Err(ObservableError::NoSignChange { lo, hi });
    }
    let (x0, _) = illinois(&mut g, lo, hi, 1e-9, opts.tol / 10.0, 60)?;
    // the last evaluation is not necessarily at x0; re-evaluate for its error bar
    let (gx, est) = balance_gap(map, alpha, x0, opts)?;
    if est.stderr > opts.tol {
        return Err(ObservableError::MonteCarloError { stderr: est.stderr, tol: opts.tol });
    }
    Ok(BalancedPole {
        x0,
        g: gx,
        stderr: est.stderr,
        evaluations: evaluations + 1,
    })
}
