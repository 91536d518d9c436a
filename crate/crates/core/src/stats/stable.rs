use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use rand_distr::{Distribution, Exp1};

/// Parametrization of the standard stable law `S(α, β)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StableParam {
    /// Nolan's S0: continuous in α, location shifted by `β tan(πα/2)` relative to S1.
    #[default]
    S0,
    /// Samorodnitsky–Taqqu S1: strictly stable for α ≠ 1.
    S1,
}

/// One draw from the standard stable law in the S0 parametrization.
pub fn sample_stable<R: Rng + ?Sized>(alpha: f64, skew: f64, rng: &mut R) -> f64 {
    sample_stable_param(alpha, skew, StableParam::S0, rng)
}

/// Chambers–Mallows–Stuck sampler.
pub fn sample_stable_param<R: Rng + ?Sized>(alpha: f64, skew: f64, param: StableParam, rng: &mut R) -> f64 {
    assert!(alpha > 0.0 && alpha <= 2.0, "alpha must lie in (0, 2]");
    assert!((-1.0..=1.0).contains(&skew), "skew must lie in [-1, 1]");
    // V uniform on the open interval (-π/2, π/2)
    let u: f64 = rng.sample(rand::distributions::Open01);
    let v = PI * (u - 0.5);
    let w: f64 = Exp1.sample(rng);

    if (alpha - 1.0).abs() < 1e-12 {
        let a = FRAC_PI_2 + skew * v;
        let x = (a * v.tan() - skew * (FRAC_PI_2 * w * v.cos() / a).ln()) / FRAC_PI_2;
        return match param {
            StableParam::S1 => x,
            // S0 and S1 coincide at α = 1 up to the 2/π β log σ term, zero for σ = 1
            StableParam::S0 => x,
        };
    }
    let zeta = -skew * (PI * alpha / 2.0).tan();
    let xi = (-zeta).atan() / alpha;
    let scale = (1.0 + zeta * zeta).powf(0.5 / alpha);
    let x1 = scale * (alpha * (v + xi)).sin() / v.cos().powf(1.0 / alpha)
        * ((v - alpha * (v + xi)).cos() / w).powf((1.0 - alpha) / alpha);
    match param {
        StableParam::S1 => x1,
        StableParam::S0 => x1 + zeta,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{hill_tail_index, quantile_sorted, sorted};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn draws(alpha: f64, skew: f64, param: StableParam, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| sample_stable_param(alpha, skew, param, &mut rng)).collect()
    }

    #[test]
    fn alpha_two_is_gaussian_with_variance_two() {
        let x = draws(2.0, 0.0, StableParam::S0, 1_000_000, 1);
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64;
        assert!((var - 2.0).abs() < 0.04, "var {var}");
    }

    /// Lévy law with unit scale: P(X <= x) = erfc(sqrt(1 / (2x))), so the
    /// median is 1 / (2 erfc^{-1}(1/2)^2).
    fn levy_median() -> f64 {
        let (mut lo, mut hi) = (0.1f64, 10.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if statrs::function::erf::erfc((1.0 / (2.0 * mid)).sqrt()) < 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn totally_skewed_half_is_levy() {
        let oracle = levy_median();
        assert!((oracle - 2.198).abs() < 1e-3);
        let s1 = sorted(&draws(0.5, 1.0, StableParam::S1, 1_000_000, 2));
        let m1 = quantile_sorted(&s1, 0.5);
        assert!((m1 / oracle - 1.0).abs() < 0.03, "S1 median {m1}");
        // S0 shifts the location by -β tan(π/4) = -1
        let s0 = sorted(&draws(0.5, 1.0, StableParam::S0, 1_000_000, 2));
        let m0 = quantile_sorted(&s0, 0.5);
        assert!((m0 - (oracle - 1.0)).abs() < 0.03 * oracle, "S0 median {m0}");
    }

    #[test]
    fn symmetric_tail_index() {
        for (alpha, seed) in [(0.6, 3), (1.2, 4), (1.5, 5), (1.8, 6)] {
            let x: Vec<f64> = draws(alpha, 0.0, StableParam::S0, 1_000_000, seed).iter().map(|v| v.abs()).collect();
            let k = crate::stats::default_hill_k(x.len());
            let h = hill_tail_index(&x, k).unwrap();
            assert!((h - alpha).abs() < 0.1, "alpha {alpha} hill {h}");
        }
    }

    #[test]
    fn cauchy_quartiles() {
        // α = 1, β = 0 is the standard Cauchy law: quartiles at ±1
        let s = sorted(&draws(1.0, 0.0, StableParam::S0, 400_000, 9));
        assert!((quantile_sorted(&s, 0.75) - 1.0).abs() < 0.02);
        assert!((quantile_sorted(&s, 0.25) + 1.0).abs() < 0.02);
    }
}
