use crate::stats::{quantile_sorted, sorted, StatsError};

/// Two-sample Kolmogorov–Smirnov statistic `sup_x |F_a(x) - F_b(x)|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::Empty);
    }
    let a = sorted(a);
    let b = sorted(b);
    Ok(ks_sorted(&a, &b))
}

fn ks_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        // step past every copy of the smaller value on both sides before comparing
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic critical value `c(level) sqrt((n + m) / (n m))`.
pub fn ks_critical_value(n: usize, m: usize, level: f64) -> f64 {
    let c = (-(level / 2.0).ln() / 2.0).sqrt();
    c * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}

pub fn median(values: &[f64]) -> f64 {
    quantile_sorted(&sorted(values), 0.5)
}

/// Stability check at a doubling of the horizon; see [`self_similarity_distance`].
pub fn self_similarity_check(samples_n: &[f64], samples_2n: &[f64], alpha: f64) -> Result<f64, StatsError> {
    self_similarity_distance(samples_n, samples_2n, 2.0, alpha)
}

/// KS distance between the median-aligned horizon-`rn` sample and the
/// median-aligned horizon-`n` sample dilated by `r^{1/α}`.
///
/// A strictly α-stable limit makes the two laws equal; aligning medians
/// removes any error in the centering constants.
pub fn self_similarity_distance(samples_n: &[f64], samples_rn: &[f64], ratio: f64, alpha: f64) -> Result<f64, StatsError> {
    if samples_n.len() != samples_rn.len() {
        return Err(StatsError::SizeMismatch(samples_n.len(), samples_rn.len()));
    }
    if samples_n.is_empty() {
        return Err(StatsError::Empty);
    }
    if !(alpha > 0.0 && alpha <= 2.0) || !(ratio > 1.0) {
        return Err(StatsError::InvalidParameter(format!("alpha {alpha}, ratio {ratio}")));
    }
    let dilation = ratio.powf(1.0 / alpha);
    let m_n = median(samples_n);
    let m_rn = median(samples_rn);
    let a: Vec<f64> = samples_rn.iter().map(|v| v - m_rn).collect();
    let b: Vec<f64> = samples_n.iter().map(|v| dilation * (v - m_n)).collect();
    ks_two_sample(&a, &b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::sample_stable_param;
    use crate::stats::StableParam;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn stable(alpha: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| sample_stable_param(alpha, 0.3, StableParam::S1, &mut rng)).collect()
    }

    #[test]
    fn identical_samples() {
        let a = stable(1.3, 1000, 1);
        assert_eq!(ks_two_sample(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn known_statistic() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [3.5, 4.5, 5.5, 6.5];
        // F_a(3) = 0.75, F_b(3) = 0
        assert!((ks_two_sample(&a, &b).unwrap() - 0.75).abs() < 1e-15);
        // ties across the samples
        let c = [1.0, 1.0, 2.0];
        let d = [1.0, 2.0, 2.0];
        assert!((ks_two_sample(&c, &d).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn symmetric() {
        let a = stable(1.2, 700, 2);
        let b = stable(1.8, 900, 3);
        assert_eq!(ks_two_sample(&a, &b).unwrap(), ks_two_sample(&b, &a).unwrap());
    }

    #[test]
    fn critical_value_matches_table() {
        let c = ks_critical_value(10_000, 10_000, 0.01);
        assert!((c - 1.6276 * (2.0f64 / 10_000.0).sqrt()).abs() < 1e-4);
    }

    #[test]
    fn same_law_passes_repeatedly() {
        // calibration: rejection rate at the 1% level over 50 independent pairs
        let crit = ks_critical_value(10_000, 10_000, 0.01);
        let rejections = (0..50)
            .filter(|t| {
                let a = stable(1.5, 10_000, 100 + 2 * t);
                let b = stable(1.5, 10_000, 101 + 2 * t);
                ks_two_sample(&a, &b).unwrap() > crit
            })
            .count();
        assert!(rejections <= 2, "{rejections} rejections");
    }

    #[test]
    fn different_indices_fail() {
        let crit = ks_critical_value(10_000, 10_000, 0.01);
        for t in 0..5 {
            let a = stable(1.2, 10_000, 200 + t);
            let b = stable(1.8, 10_000, 300 + t);
            assert!(ks_two_sample(&a, &b).unwrap() > crit);
        }
    }

    #[test]
    fn self_similarity_of_stable_sums() {
        let alpha = 1.4;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 5000;
        let x: Vec<f64> = (0..n).map(|_| sample_stable_param(alpha, 0.5, StableParam::S1, &mut rng)).collect();
        // independent sums of two draws
        let y: Vec<f64> = (0..n)
            .map(|_| {
                sample_stable_param(alpha, 0.5, StableParam::S1, &mut rng)
                    + sample_stable_param(alpha, 0.5, StableParam::S1, &mut rng)
            })
            .collect();
        let crit = ks_critical_value(n, n, 0.01);
        assert!(self_similarity_check(&x, &y, alpha).unwrap() < crit);
    }

    #[test]
    fn gaussian_self_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 20_000;
        let x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y: Vec<f64> = (0..n).map(|_| { let z: f64 = StandardNormal.sample(&mut rng); 2f64.sqrt() * z }).collect();
        let crit = ks_critical_value(n, n, 0.01);
        assert!(self_similarity_check(&x, &y, 2.0).unwrap() < crit);
        assert!(self_similarity_check(&x, &y, 1.2).unwrap() > crit);
    }

    #[test]
    fn size_mismatch() {
        assert!(self_similarity_check(&[1.0, 2.0], &[1.0], 1.5).is_err());
    }
}
