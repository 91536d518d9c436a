//! Liverani–Saussol–Vaienti intermittent maps of the unit interval.
//!
//! `T(x) = x (1 + (2x)^γ)` on `[0, 1/2)` and `T(x) = 2x - 1` on `[1/2, 1]`.
//! The point `x = 1/2` belongs to the right branch, so `T(1/2) = 0`.

use rand::Rng;
use thiserror::Error;

use crate::roots::{newton_bisect, RootError, RootOptions};
use crate::scalar::Real;

/// Default cap on the number of iterates spent looking for a return to `[1/2, 1]`.
pub const DEFAULT_RETURN_CAP: u64 = 1_000_000_000;

/// Default equilibrium burn-in.
pub const DEFAULT_BURN_IN: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntervalError {
    #[error("gamma must lie in [0, 1), got {0}")]
    InvalidGamma(f64),
    #[error("state {0} is outside [0, 1]")]
    StateOutOfRange(f64),
    #[error("state {0} is outside the inducing set [1/2, 1]")]
    NotInInducingSet(f64),
    #[error("no return to [1/2, 1] after {cap} iterates (orbit stagnating at {state:e})")]
    ReturnCapExceeded { cap: u64, state: f64 },
    #[error("partition depth must be at least 1")]
    EmptyPartition,
    #[error("ladder root solve failed at depth {depth}: {source}")]
    Ladder { depth: usize, source: RootError },
}

/// An LSV map `T_γ` with `0 <= γ < 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsvMap<T> {
    gamma: T,
}

impl<T: Real> LsvMap<T> {
    pub fn new(gamma: T) -> Result<Self, IntervalError> {
        if !(gamma >= T::zero() && gamma < T::one()) {
            return Err(IntervalError::InvalidGamma(gamma.to_f64_lossy()));
        }
        Ok(Self { gamma })
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    /// The left branch `t (1 + (2t)^γ)`, defined for every `t >= 0`.
    #[inline]
    pub fn left_branch(&self, t: T) -> T {
        let two = T::lit(2.0);
        t * (T::one() + (two * t).powf(self.gamma))
    }

    #[inline]
    fn left_branch_derivative(&self, t: T) -> T {
        let two = T::lit(2.0);
        T::one() + (T::one() + self.gamma) * (two * t).powf(self.gamma)
    }

    /// One application of the map. Total on `[0, 1]`.
    #[inline]
    pub fn apply(&self, x: T) -> T {
        let half = T::lit(0.5);
        if x < half {
            self.left_branch(x).min(T::one())
        } else {
            T::lit(2.0) * x - T::one()
        }
    }

    /// Applies the map `n` times, handing each new state `T^j(x)`, `j = 1..=n`,
    /// to `visit` and summing what it returns.
    pub fn orbit<F>(&self, start: T, n: usize, mut visit: F) -> OrbitSummary<T>
    where
        F: FnMut(T) -> T,
    {
        let mut x = start;
        let mut total = T::zero();
        for _ in 0..n {
            x = self.apply(x);
            total = total + visit(x);
        }
        OrbitSummary { final_state: x, total }
    }

    /// First return to `Y = [1/2, 1]` for a point of `Y`.
    pub fn first_return(&self, x: T) -> Result<(u64, T), IntervalError> {
        self.first_return_capped(x, DEFAULT_RETURN_CAP)
    }

    pub fn first_return_capped(&self, x: T, cap: u64) -> Result<(u64, T), IntervalError> {
        let half = T::lit(0.5);
        if !(x >= half && x <= T::one()) {
            return Err(IntervalError::NotInInducingSet(x.to_f64_lossy()));
        }
        let mut y = self.apply(x);
        let mut r = 1u64;
        while y < half {
            if r >= cap {
                return Err(IntervalError::ReturnCapExceeded { cap, state: y.to_f64_lossy() });
            }
            y = self.left_branch(y);
            r += 1;
        }
        Ok((r, y.min(T::one())))
    }

    /// Like [`first_return`](Self::first_return) but also feeds every visited
    /// state `T^j(x)`, `j = 1..=R`, to `visit`, returning the induced sum.
    pub fn induced_sum<F>(&self, x: T, cap: u64, mut visit: F) -> Result<(u64, T, T), IntervalError>
    where
        F: FnMut(T) -> T,
    {
        let half = T::lit(0.5);
        if !(x >= half && x <= T::one()) {
            return Err(IntervalError::NotInInducingSet(x.to_f64_lossy()));
        }
        let mut y = self.apply(x);
        let mut total = visit(y);
        let mut r = 1u64;
        while y < half {
            if r >= cap {
                return Err(IntervalError::ReturnCapExceeded { cap, state: y.to_f64_lossy() });
            }
            y = self.left_branch(y).min(T::one());
            total = total + visit(y);
            r += 1;
        }
        Ok((r, y, total))
    }

    /// Ladder of left-branch preimages of 1/2 and the matching cells of `Y`.
    pub fn build_partition(&self, depth: usize) -> Result<InducedPartition<T>, IntervalError> {
        if depth == 0 {
            return Err(IntervalError::EmptyPartition);
        }
        let half = T::lit(0.5);
        let mut x = Vec::with_capacity(depth + 1);
        x.push(half);
        for j in 1..=depth {
            let target = x[j - 1];
            let opts = RootOptions {
                abs_tol: T::lit(1e-14) * target.min(T::one()),
                max_iter: 400,
            };
            let root = newton_bisect(
                |t| (self.left_branch(t) - target, self.left_branch_derivative(t)),
                T::zero(),
                target,
                opts,
            )
            .map_err(|source| IntervalError::Ladder { depth: j, source })?;
            x.push(root);
        }
        // y_0 = 1 and T(y_j) = x_{j-1}
        let mut y = Vec::with_capacity(depth + 1);
        y.push(T::one());
        for j in 1..=depth {
            y.push((T::one() + x[j - 1]) / T::lit(2.0));
        }
        Ok(InducedPartition { x, y })
    }

    /// Draws a Lebesgue-uniform point and pushes it `burn_in` steps forward.
    pub fn equilibrium_sample<R: Rng + ?Sized>(&self, rng: &mut R, burn_in: usize) -> T {
        // open interval: x = 0 is the indifferent fixed point
        let u: f64 = rng.sample(rand::distributions::Open01);
        let mut x = T::lit(u);
        for _ in 0..burn_in {
            x = self.apply(x);
        }
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitSummary<T> {
    pub final_state: T,
    pub total: T,
}

/// Preimage ladder `x_0 = 1/2 > x_1 > ... > x_J` of the left branch together
/// with the cells of `Y` on which the return time is constant.
///
/// Cell `C_j = (y_j, y_{j-1})`, `y_0 = 1`, `T(y_j) = x_{j-1}`, carries return
/// time exactly `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct InducedPartition<T> {
    x: Vec<T>,
    y: Vec<T>,
}

impl<T: Real> InducedPartition<T> {
    pub fn depth(&self) -> usize {
        self.x.len() - 1
    }

    pub fn x_ladder(&self) -> &[T] {
        &self.x
    }

    pub fn y_ladder(&self) -> &[T] {
        &self.y
    }

    /// Open cell of `Y` on which the return time equals `j`, `1 <= j <= J`.
    pub fn cell(&self, j: usize) -> Option<(T, T)> {
        if j == 0 || j > self.depth() {
            return None;
        }
        Some((self.y[j], self.y[j - 1]))
    }

    /// Total Lebesgue length of `C_1, ..., C_J`.
    pub fn covered_length(&self) -> T {
        self.y[0] - self.y[self.depth()]
    }

    /// Return time of `y` read off the ladder, if `y` lies in one of the cells.
    pub fn return_time(&self, y: T) -> Option<usize> {
        // y ladder is strictly decreasing
        if y > self.y[0] || y <= self.y[self.depth()] {
            return None;
        }
        let idx = self.y.partition_point(|&v| v >= y);
        Some(idx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn map(g: f64) -> LsvMap<f64> {
        LsvMap::new(g).unwrap()
    }

    #[test]
    fn fixed_points_and_second_branch() {
        for g in [0.0, 0.3, 0.75] {
            assert_eq!(map(g).apply(0.0), 0.0);
            assert_eq!(map(g).apply(0.75), 0.5);
            assert_eq!(map(g).apply(1.0), 1.0);
            assert_eq!(map(g).apply(0.5), 0.0);
        }
    }

    #[test]
    fn hand_evaluation_gamma_half() {
        // (2^{1/2} * 0.25^{1/2} + 1) * 0.25
        let expected = (2f64.sqrt() * 0.5 + 1.0) * 0.25;
        assert!((map(0.5).apply(0.25) - expected).abs() < 1e-15);
        assert!((expected - 0.426_776_695_296_636_9).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_gamma() {
        assert!(LsvMap::new(1.0).is_err());
        assert!(LsvMap::new(-0.1).is_err());
        assert!(LsvMap::new(f64::NAN).is_err());
    }

    #[test]
    fn orbit_matches_stepwise() {
        let m = map(0.5);
        let s = m.orbit(0.3, 10, |x| x);
        let mut x = 0.3;
        let mut total = 0.0;
        for _ in 0..10 {
            x = m.apply(x);
            total += x;
        }
        assert_eq!(s.final_state, x);
        assert_eq!(s.total, total);
        assert_eq!(m.orbit(0.3, 1, |_| 1.0).total, 1.0);
        assert_eq!(m.orbit(0.0, 57, |x| x).total, 0.0);
    }

    #[test]
    fn escape_and_monotonicity() {
        let m = map(0.6);
        let mut prev = -1.0;
        for i in 1..5000 {
            let x = i as f64 / 10000.0;
            let tx = m.apply(x);
            assert!(tx > x);
            assert!(tx > prev);
            prev = tx;
        }
        let mut prev = -1.0;
        for i in 0..=5000 {
            let x = 0.5 + i as f64 / 10000.0;
            let tx = m.apply(x);
            assert!(tx > prev);
            prev = tx;
        }
    }

    #[test]
    fn indifferent_fixed_point() {
        // the finite-difference excess is (2h)^γ, below 1e-4 once γ > 0.53
        let m = map(0.6);
        let h = 1e-8;
        let slope = (m.apply(h) - m.apply(0.0)) / h;
        assert!((slope - 1.0).abs() < 1e-4);
    }

    #[test]
    fn first_return_examples() {
        let m = map(0.4);
        assert_eq!(m.first_return(0.75).unwrap(), (1, 0.5));
        assert_eq!(m.first_return(1.0).unwrap(), (1, 1.0));
        assert!(m.first_return(0.2).is_err());
    }

    #[test]
    fn return_cap_is_reported() {
        let m = map(0.9);
        // 2y - 1 = 1e-12: the escape takes far longer than the cap
        let err = m.first_return_capped(0.5 + 5e-13, 1000).unwrap_err();
        assert!(matches!(err, IntervalError::ReturnCapExceeded { cap: 1000, .. }));
    }

    #[test]
    fn ladder_first_rung_gamma_half() {
        // independent bisection of (sqrt(2) sqrt(t) + 1) t = 1/2
        let f = |t: f64| (2f64.sqrt() * t.sqrt() + 1.0) * t - 0.5;
        let (mut lo, mut hi) = (0.0, 0.5);
        while hi - lo > 1e-15 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let p = map(0.5).build_partition(3).unwrap();
        assert_eq!(p.x_ladder()[0], 0.5);
        assert!((p.x_ladder()[1] - lo).abs() < 1e-12);
        assert!((p.x_ladder()[1] - 0.284_920_145_499_026_6).abs() < 1e-12);
    }

    #[test]
    fn ladder_invariants() {
        let m = map(0.6);
        let p = m.build_partition(400).unwrap();
        let x = p.x_ladder();
        let y = p.y_ladder();
        for j in 1..=p.depth() {
            assert!(x[j] < x[j - 1] && x[j] > 0.0);
            assert!((m.apply(y[j]) - x[j - 1]).abs() < 1e-13);
            assert!(y[j] < y[j - 1]);
        }
        assert!(p.covered_length() < 0.5);
        let longer = m.build_partition(4000).unwrap();
        assert!(longer.covered_length() > p.covered_length());
        assert!(0.5 - longer.covered_length() < 1e-3);
    }

    #[test]
    fn ladder_decay_exponent() {
        // x_j j^{1/γ} settles to a constant: compare the local log-log slope
        let g = 0.5;
        let p = map(g).build_partition(20_000).unwrap();
        let x = p.x_ladder();
        let slope = (x[20_000].ln() - x[5_000].ln()) / (20_000f64.ln() - 5_000f64.ln());
        assert!((slope + 1.0 / g).abs() < 0.02, "slope {slope}");
    }

    #[test]
    fn partition_consistency() {
        let m = map(0.7);
        let p = m.build_partition(60).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for j in 1..=60 {
            let (lo, hi) = p.cell(j).unwrap();
            for _ in 0..20 {
                let u: f64 = rng.gen_range(0.05..0.95);
                let y = lo + u * (hi - lo);
                assert_eq!(m.first_return(y).unwrap().0 as usize, j);
                assert_eq!(p.return_time(y), Some(j));
            }
        }
    }

    #[test]
    fn burn_in_zero_is_uniform() {
        let m = map(0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let below = (0..n).filter(|_| m.equilibrium_sample(&mut rng, 0) < 0.25).count();
        assert!((below as f64 / n as f64 - 0.25).abs() < 0.01);
    }

    #[test]
    fn works_in_single_precision() {
        let m = LsvMap::<f32>::new(0.5).unwrap();
        assert!((m.apply(0.25f32) - 0.426_776_7).abs() < 1e-6);
        let p = m.build_partition(5).unwrap();
        assert!((p.x_ladder()[1] as f64 - 0.284_920_1).abs() < 1e-5);
    }
}
