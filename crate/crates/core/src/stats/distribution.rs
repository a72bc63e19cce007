use serde::{Deserialize, Serialize};

use super::{check_finite, sample_variance, StatsError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiveNumber {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl FiveNumber {
    pub fn iqr(&self) -> f64 {
        self.q3 - self.q1
    }
}

/// Histogram, KDE curve and boxplot statistics of one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub n: usize,
    pub histogram: Vec<HistogramBin>,
    /// `(x, density)`; empty when the sample has zero spread.
    pub kde: Vec<(f64, f64)>,
    pub five_number: FiveNumber,
    /// Values outside the `1.5 * IQR` fences, ascending.
    pub outliers: Vec<f64>,
}

/// Equal-width histogram over `[min, max]` of `values`.
///
/// Bins are left-closed and right-open, except the last which is closed. A
/// sample with a single distinct value `v` is binned over `[v, v + 1]`.
pub fn histogram(values: &[f64], bins: usize) -> Result<Vec<HistogramBin>, StatsError> {
    if values.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    check_finite(values)?;
    let (lo, hi) = min_max(values);
    histogram_in_range(values, bins, lo, hi)
}

/// Histogram with caller-supplied edges; values outside `[lo, hi]` are
/// clamped into the first or last bin.
pub fn histogram_in_range(values: &[f64], bins: usize, lo: f64, hi: f64) -> Result<Vec<HistogramBin>, StatsError> {
    if bins == 0 {
        return Err(StatsError::DomainError("bins must be at least 1".into()));
    }
    check_finite(values)?;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(StatsError::DomainError(format!("invalid range [{lo}, {hi}]")));
    }
    let hi = if hi == lo { lo + 1.0 } else { hi };
    let width = (hi - lo) / bins as f64;

    let mut counts = vec![0usize; bins];
    for &v in values {
        let idx = ((v - lo) / width).floor();
        let idx = if idx < 0.0 { 0 } else { (idx as usize).min(bins - 1) };
        counts[idx] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            left: lo + width * i as f64,
            right: if i + 1 == bins { hi } else { lo + width * (i + 1) as f64 },
            count,
        })
        .collect())
}

/// Linearly interpolated quantile of an ascending slice (R type 7).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn five_number(values: &[f64]) -> Result<FiveNumber, StatsError> {
    if values.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    check_finite(values)?;
    let sorted = sorted(values);
    Ok(FiveNumber {
        min: sorted[0],
        q1: quantile(&sorted, 0.25),
        median: quantile(&sorted, 0.5),
        q3: quantile(&sorted, 0.75),
        max: sorted[sorted.len() - 1],
    })
}

/// Silverman's rule of thumb: `0.9 * min(sd, IQR / 1.34) * n^(-1/5)`.
///
/// When the IQR is zero but the standard deviation is not, the standard
/// deviation alone is used.
pub fn silverman_bandwidth(values: &[f64]) -> Result<f64, StatsError> {
    if values.len() < 2 {
        return Err(StatsError::InsufficientData {
            needed: 2,
            got: values.len(),
        });
    }
    check_finite(values)?;
    let sd = sample_variance(values).sqrt();
    let iqr = five_number(values)?.iqr();
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * (values.len() as f64).powf(-0.2);
    if h > 0.0 {
        Ok(h)
    } else {
        Err(StatsError::ZeroBandwidth)
    }
}

/// Gaussian kernel density estimate evaluated at each point of a sorted grid.
pub fn kde(values: &[f64], grid: &[f64]) -> Result<Vec<(f64, f64)>, StatsError> {
    let h = silverman_bandwidth(values)?;
    check_finite(grid)?;
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(StatsError::UnsortedGrid);
    }
    let norm = 1.0 / (values.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    Ok(grid
        .iter()
        .map(|&x| {
            let sum: f64 = values
                .iter()
                .map(|v| {
                    let z = (x - v) / h;
                    (-0.5 * z * z).exp()
                })
                .sum();
            (x, norm * sum)
        })
        .collect())
}

/// `points` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (points - 1) as f64;
            (0..points)
                .map(|i| if i + 1 == points { hi } else { lo + step * i as f64 })
                .collect()
        }
    }
}

/// Summarizes `values` with histogram edges `[lo, hi]` and the KDE evaluated
/// on `grid`. A zero-spread sample yields an empty KDE.
pub fn summarize(
    values: &[f64],
    bins: usize,
    (lo, hi): (f64, f64),
    grid: &[f64],
) -> Result<DistributionSummary, StatsError> {
    let five = five_number(values)?;
    let histogram = histogram_in_range(values, bins, lo, hi)?;
    let kde = match kde(values, grid) {
        Ok(curve) => curve,
        Err(StatsError::ZeroBandwidth) | Err(StatsError::InsufficientData { .. }) => Vec::new(),
        Err(e) => return Err(e),
    };
    let (low_fence, high_fence) = (five.q1 - 1.5 * five.iqr(), five.q3 + 1.5 * five.iqr());
    let outliers = sorted(values)
        .into_iter()
        .filter(|&v| v < low_fence || v > high_fence)
        .collect();
    Ok(DistributionSummary {
        n: values.len(),
        histogram,
        kde,
        five_number: five,
        outliers,
    })
}

pub(crate) fn min_max(values: &[f64]) -> (f64, f64) {
    values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    })
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    s
}
