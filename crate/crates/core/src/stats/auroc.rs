use super::{check_finite, StatsError};

/// Area under the ROC curve with `pos` as the positive class.
///
/// Equals the fraction of `(p, n)` pairs with `p > n`, counting ties as one
/// half. Runs in `O((|pos| + |neg|) log(|pos| + |neg|))` by sorting the
/// pooled scores and walking tie groups.
pub fn auroc(pos: &[f64], neg: &[f64]) -> Result<f64, StatsError> {
    if pos.is_empty() || neg.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    check_finite(pos)?;
    check_finite(neg)?;

    let mut pooled: Vec<(f64, bool)> = pos
        .iter()
        .map(|&v| (v, true))
        .chain(neg.iter().map(|&v| (v, false)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Twice the tie-credited win count, kept integral so the final value is
    // a single correctly rounded division.
    let mut twice_wins: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < pooled.len() {
        let value = pooled[i].0;
        let (mut p, mut n) = (0u128, 0u128);
        while i < pooled.len() && pooled[i].0 == value {
            if pooled[i].1 {
                p += 1;
            } else {
                n += 1;
            }
            i += 1;
        }
        twice_wins += 2 * p * neg_below + p * n;
        neg_below += n;
    }
    let total = 2 * pos.len() as u128 * neg.len() as u128;
    Ok(twice_wins as f64 / total as f64)
}
