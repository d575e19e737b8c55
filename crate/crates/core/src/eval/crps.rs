//! Continuous ranked probability score from predictive samples.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Energy-form CRPS estimate `mean|X - y| - ½ mean|X - X'|` with `X` and `X'`
/// two independent predictive samples.
///
/// The pairwise term is computed in `O(S log S)` by sorting `x2` and using
/// prefix sums.
pub fn crps_empirical(x: &[f64], x2: &[f64], y: f64) -> Result<f64> {
    if x.is_empty() || x2.is_empty() {
        return Err(Error::domain("CRPS needs non-empty predictive samples"));
    }
    let first = x.iter().map(|v| (v - y).abs()).sum::<f64>() / x.len() as f64;
    let second = mean_abs_diff(x, x2);
    Ok(first - 0.5 * second)
}

/// `mean_{a,b} |x_a - x2_b|`.
pub fn mean_abs_diff(x: &[f64], x2: &[f64]) -> f64 {
    let mut sorted = x2.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut prefix = Vec::with_capacity(sorted.len() + 1);
    prefix.push(0.0);
    for v in &sorted {
        prefix.push(prefix.last().unwrap() + v);
    }
    let n2 = sorted.len();
    let total = prefix[n2];
    let mut sum = 0.0;
    for &a in x {
        let k = sorted.partition_point(|&b| b < a);
        let below = a * k as f64 - prefix[k];
        let above = (total - prefix[k]) - a * (n2 - k) as f64;
        sum += below + above;
    }
    sum / (x.len() * n2) as f64
}

/// CRPS of `samples` split into a first part of `first` draws and the rest.
pub fn crps_split(samples: &[f64], first: usize, y: f64) -> Result<f64> {
    if first == 0 || first >= samples.len() {
        return Err(Error::domain(format!(
            "cannot split {} samples at {first}",
            samples.len()
        )));
    }
    crps_empirical(&samples[..first], &samples[first..], y)
}

/// Averages per-cell scores by week. `cells` pairs each score with its week.
pub fn average_by_week(cells: &[(i64, f64)]) -> BTreeMap<i64, f64> {
    let mut acc: BTreeMap<i64, (f64, usize)> = BTreeMap::new();
    for &(w, s) in cells {
        let e = acc.entry(w).or_default();
        e.0 += s;
        e.1 += 1;
    }
    acc.into_iter().map(|(w, (s, n))| (w, s / n as f64)).collect()
}
