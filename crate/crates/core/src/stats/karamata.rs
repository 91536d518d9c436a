//! Empirical check of the Karamata asymptotics for a regularly varying sample.
//!
//! The sample is streamed into a fine logarithmic histogram that keeps, per
//! bin, the count and the first and second absolute moments. Tail
//! probabilities and truncated moments at any threshold are then read off
//! with sub-bin interpolation, so samples far larger than memory can be used.

use serde::Serialize;

use crate::stats::StatsError;

/// Rows with fewer exceedances than this are flagged as unreliable.
const MIN_EXCEEDANCES: f64 = 10.0;

#[derive(Debug, Clone, Copy, Default)]
struct BinStats {
    count: f64,
    positive: f64,
    sum_abs: f64,
    sum_sq: f64,
    sum_signed: f64,
}

impl BinStats {
    fn add(&mut self, v: f64) {
        let a = v.abs();
        self.count += 1.0;
        if v > 0.0 {
            self.positive += 1.0;
        }
        self.sum_abs += a;
        self.sum_sq += a * a;
        self.sum_signed += v;
    }

    fn scaled(&self, w: f64) -> BinStats {
        BinStats {
            count: self.count * w,
            positive: self.positive * w,
            sum_abs: self.sum_abs * w,
            sum_sq: self.sum_sq * w,
            sum_signed: self.sum_signed * w,
        }
    }

    fn accumulate(&mut self, o: &BinStats) {
        self.count += o.count;
        self.positive += o.positive;
        self.sum_abs += o.sum_abs;
        self.sum_sq += o.sum_sq;
        self.sum_signed += o.sum_signed;
    }
}

/// Streaming log-binned summary of `|x|`, with signed first moments.
#[derive(Debug, Clone)]
pub struct TailHistogram {
    bins_per_decade: f64,
    log_min: f64,
    // bins[0] underflow, bins[last] overflow
    bins: Vec<BinStats>,
    total: u64,
}

impl Default for TailHistogram {
    fn default() -> Self {
        Self::new(1000, -15.0, 35.0)
    }
}

impl TailHistogram {
    pub fn new(bins_per_decade: usize, log10_min: f64, log10_max: f64) -> Self {
        let inner = ((log10_max - log10_min) * bins_per_decade as f64).ceil() as usize;
        Self {
            bins_per_decade: bins_per_decade as f64,
            log_min: log10_min,
            bins: vec![BinStats::default(); inner + 2],
            total: 0,
        }
    }

    fn inner_bins(&self) -> usize {
        self.bins.len() - 2
    }

    /// Continuous bin coordinate of `|x|`, clamped to the inner range.
    fn position(&self, a: f64) -> f64 {
        if a <= 0.0 {
            return f64::NEG_INFINITY;
        }
        (a.log10() - self.log_min) * self.bins_per_decade
    }

    pub fn add(&mut self, v: f64) {
        if !v.is_finite() {
            return;
        }
        let pos = self.position(v.abs());
        let idx = if pos < 0.0 {
            0
        } else if pos >= self.inner_bins() as f64 {
            self.bins.len() - 1
        } else {
            pos.floor() as usize + 1
        };
        self.bins[idx].add(v);
        self.total += 1;
    }

    pub fn len(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Statistics of the part of the sample with `|x| > u`.
    fn above(&self, u: f64) -> BinStats {
        let pos = self.position(u);
        let mut acc = BinStats::default();
        if pos < 0.0 {
            for b in &self.bins[1..] {
                acc.accumulate(b);
            }
            // the underflow bin is never split
            return acc;
        }
        if pos >= self.inner_bins() as f64 {
            return self.bins[self.bins.len() - 1];
        }
        let idx = pos.floor() as usize + 1;
        let frac_below = pos - pos.floor();
        for b in &self.bins[idx + 1..] {
            acc.accumulate(b);
        }
        acc.accumulate(&self.bins[idx].scaled(1.0 - frac_below));
        acc
    }

    fn totals(&self) -> BinStats {
        let mut acc = BinStats::default();
        for b in &self.bins {
            acc.accumulate(b);
        }
        acc
    }

    /// Empirical `P(|X| > u)`.
    pub fn tail_probability(&self, u: f64) -> f64 {
        self.above(u).count / self.total as f64
    }

    /// Threshold `b` with `n P(|X| > b) = 1`, i.e. the `1 - 1/n` quantile of `|X|`.
    pub fn scaling_threshold(&self, n: f64) -> Option<f64> {
        let target = self.total as f64 / n;
        if target < 1.0 || target > self.total as f64 {
            return None;
        }
        let last = self.bins.len() - 1;
        if self.bins[last].count >= target {
            return None;
        }
        let mut cum = self.bins[last].count;
        for idx in (1..last).rev() {
            let c = self.bins[idx].count;
            if cum + c >= target {
                let frac_above = (target - cum) / c;
                let pos = (idx - 1) as f64 + (1.0 - frac_above);
                return Some(10f64.powf(self.log_min + pos / self.bins_per_decade));
            }
            cum += c;
        }
        None
    }
}

impl FromIterator<f64> for TailHistogram {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut h = TailHistogram::default();
        for v in iter {
            h.add(v);
        }
        h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum KaramataItem {
    /// `n μ(|φ| > ε b_n) → ε^{-α}`
    TailCount,
    /// `μ(φ² 1{|φ| ≤ εb_n}) ~ α/(2-α) (εb_n)² μ(|φ| > εb_n)`
    TruncatedSecondMoment,
    /// `μ(|φ| 1{|φ| ≤ εb_n}) ~ α/(1-α) εb_n μ(|φ| > εb_n)`, α < 1
    TruncatedFirstMoment,
    /// `(n/b_n) μ(φ 1{|φ| > εb_n}) → ε^{1-α} (2p-1) α/(α-1)`, α > 1
    TailFirstMoment,
}

#[derive(Debug, Clone, Serialize)]
pub struct KaramataRow {
    pub n: f64,
    pub eps: f64,
    pub item: KaramataItem,
    pub threshold: f64,
    pub exceedances: f64,
    pub ratio: f64,
    pub residual: f64,
    /// Too few exceedances above `ε b_n` for the ratio to mean anything.
    pub insufficient: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct KaramataTable {
    pub alpha: f64,
    pub sample_size: u64,
    pub rows: Vec<KaramataRow>,
}

impl KaramataTable {
    pub fn max_residual(&self, item: KaramataItem) -> Option<f64> {
        self.rows
            .iter()
            .filter(|r| r.item == item && !r.insufficient)
            .map(|r| r.residual)
            .fold(None, |m, v| Some(m.map_or(v, |m: f64| m.max(v))))
    }

    pub fn rows_for(&self, item: KaramataItem) -> impl Iterator<Item = &KaramataRow> {
        self.rows.iter().filter(move |r| r.item == item)
    }
}

/// Deterministic Pareto(α) sample of size `n`: value `i` is the mean of the
/// Pareto law over its survival-probability cell `(i/n, (i+1)/n]`, so counts
/// and tail first moments above any cell boundary are exact. The top cell has
/// no finite mean for `α < 1`; there all cells use the midpoint quantile.
pub fn pareto_cell_means(alpha: f64, n: usize) -> impl Iterator<Item = f64> {
    let nf = n as f64;
    let e = 1.0 - 1.0 / alpha;
    (0..n).map(move |i| {
        let (a, b) = (i as f64 / nf, (i + 1) as f64 / nf);
        if alpha > 1.0 {
            nf * (b.powf(e) - a.powf(e)) / e
        } else {
            ((i as f64 + 0.5) / nf).powf(-1.0 / alpha)
        }
    })
}

/// Streams `samples` and tabulates ratios of each Karamata statement's two
/// sides on the `(n, ε)` grid. `b_n` is the empirical `1 - 1/n` quantile of
/// `|φ|`, so the `ε = 1` tail-count ratio is one by construction.
pub fn karamata_residuals<I>(samples: I, alpha: f64, eps_grid: &[f64], n_grid: &[f64]) -> Result<KaramataTable, StatsError>
where
    I: IntoIterator<Item = f64>,
{
    let hist: TailHistogram = samples.into_iter().collect();
    karamata_from_histogram(&hist, alpha, eps_grid, n_grid)
}

pub fn karamata_from_histogram(
    hist: &TailHistogram,
    alpha: f64,
    eps_grid: &[f64],
    n_grid: &[f64],
) -> Result<KaramataTable, StatsError> {
    if !(alpha > 0.0 && alpha < 2.0) || alpha == 1.0 {
        return Err(StatsError::InvalidParameter(format!("alpha must lie in (0,1)∪(1,2), got {alpha}")));
    }
    if hist.is_empty() {
        return Err(StatsError::Empty);
    }
    if eps_grid.iter().any(|e| !(*e > 0.0)) {
        return Err(StatsError::InvalidParameter("eps grid must be positive".into()));
    }
    let total = hist.len() as f64;
    let all = hist.totals();
    let mut rows = Vec::new();
    for &n in n_grid {
        let b_n = hist.scaling_threshold(n);
        for &eps in eps_grid {
            let u = b_n.map_or(f64::NAN, |b| eps * b);
            let above = if u.is_finite() { hist.above(u) } else { BinStats::default() };
            let insufficient = !u.is_finite() || above.count < MIN_EXCEEDANCES;
            let tail = above.count / total;
            let below_sq = (all.sum_sq - above.sum_sq) / total;
            let below_abs = (all.sum_abs - above.sum_abs) / total;

            let mut push = |item, ratio: f64| {
                rows.push(KaramataRow {
                    n,
                    eps,
                    item,
                    threshold: u,
                    exceedances: above.count,
                    ratio,
                    residual: (ratio - 1.0).abs(),
                    insufficient: insufficient || !ratio.is_finite(),
                });
            };

            push(KaramataItem::TailCount, n * tail / eps.powf(-alpha));
            push(
                KaramataItem::TruncatedSecondMoment,
                below_sq / (alpha / (2.0 - alpha) * u * u * tail),
            );
            if alpha < 1.0 {
                push(KaramataItem::TruncatedFirstMoment, below_abs / (alpha / (1.0 - alpha) * u * tail));
            } else {
                let p = if above.count > 0.0 { above.positive / above.count } else { f64::NAN };
                let lhs = n / b_n.unwrap_or(f64::NAN) * above.sum_signed / total;
                let rhs = eps.powf(1.0 - alpha) * (2.0 * p - 1.0) * alpha / (alpha - 1.0);
                push(KaramataItem::TailFirstMoment, lhs / rhs);
            }
        }
    }
    Ok(KaramataTable {
        alpha,
        sample_size: hist.len(),
        rows,
    })
}
