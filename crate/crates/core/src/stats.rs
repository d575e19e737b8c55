//! Small statistical helpers shared across modules.

/// Empirical quantile with linear interpolation between order statistics
/// (`h = (n - 1) p`). `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Quantiles of unsorted `values` at each probability in `probs`.
pub fn quantiles(values: &[f64], probs: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    probs.iter().map(|&p| quantile_sorted(&sorted, p)).collect()
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample variance with `n - 1` denominator.
pub fn variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    if max == f64::INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `log(exp(a) + exp(b))`.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Evenly strided indices selecting `k` of `n` items (all of them when
/// `k >= n`).
pub fn strided_indices(n: usize, k: usize) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    (0..k).map(|i| i * n / k).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_definition() {
        let draws: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(quantiles(&draws, &[0.5])[0], 500.5);
        assert_eq!(quantiles(&[3.0; 7], &[0.025, 0.5, 0.975]), vec![3.0; 3]);
        assert_eq!(quantiles(&[4.0, 1.0], &[0.0, 0.25, 1.0]), vec![1.0, 1.75, 4.0]);
    }

    #[test]
    fn log_sum_exp_is_stable() {
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        assert!((log_add_exp(0.5f64.ln(), 0.25f64.ln()) - 0.75f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn strided_selection() {
        assert_eq!(strided_indices(10, 5), vec![0, 2, 4, 6, 8]);
        assert_eq!(strided_indices(3, 5), vec![0, 1, 2]);
    }

    proptest::proptest! {
        #[test]
        fn quantiles_are_monotone_and_bounded(
            values in proptest::collection::vec(-1e3f64..1e3, 1..200),
            mut probs in proptest::collection::vec(0.0f64..=1.0, 1..10),
        ) {
            probs.sort_by(f64::total_cmp);
            let q = quantiles(&values, &probs);
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            proptest::prop_assert!(q.windows(2).all(|w| w[0] <= w[1]));
            proptest::prop_assert!(q.iter().all(|&v| lo <= v && v <= hi));
        }
    }
}
