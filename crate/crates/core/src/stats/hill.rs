use crate::stats::StatsError;

/// Below this many order statistics the Hill estimate is too noisy to report.
pub const MIN_HILL_K: usize = 50;

/// Default number of order statistics, `⌊N^0.6⌋`.
pub fn default_hill_k(n: usize) -> usize {
    (n as f64).powf(0.6).floor() as usize
}

/// Hill estimate of the tail index from the `k` largest of the positive samples.
///
/// `α̂ = k / Σ_{i<k} ln(X_(i) / X_(k))` with `X_(0) >= X_(1) >= ...`.
/// Non-positive samples are ignored.
pub fn hill_tail_index(samples: &[f64], k: usize) -> Result<f64, StatsError> {
    if k < MIN_HILL_K {
        return Err(StatsError::TooFewOrderStatistics { k, min: MIN_HILL_K });
    }
    let mut top: Vec<f64> = samples.iter().copied().filter(|v| *v > 0.0).collect();
    if top.len() <= k {
        return Err(StatsError::KTooLarge { k, n: top.len() });
    }
    // only the k + 1 largest are needed
    let pivot = top.len() - k - 1;
    top.select_nth_unstable_by(pivot, |a, b| a.total_cmp(b));
    let tail = &top[pivot..];
    let threshold = tail[0];
    let sum: f64 = tail[1..].iter().map(|v| (v / threshold).ln()).sum();
    if !(sum > 0.0) || !sum.is_finite() {
        return Err(StatsError::Degenerate(format!(
            "top {k} order statistics carry no spread above {threshold}"
        )));
    }
    Ok(k as f64 / sum)
}

/// Hill estimates over a range of `k`, for a stability plot.
pub fn hill_k_stability(samples: &[f64], ks: &[usize]) -> Vec<(usize, Result<f64, StatsError>)> {
    ks.iter().map(|&k| (k, hill_tail_index(samples, k))).collect()
}
