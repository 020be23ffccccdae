//! Small statistics helpers shared by feature extraction and rule fitting.

/// Linear-interpolation percentile over a pre-sorted ascending slice.
///
/// `q` is in percent (0..=100); the rank convention is `q/100 * (n - 1)`.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty slice");
    assert!((0.0..=100.0).contains(&q), "percentile q out of range: {q}");
    let rank = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = rank - lo as f64;
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Percentile of an unsorted slice (sorts a copy).
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    percentile_sorted(&sorted, q)
}

pub fn median(values: &[f64]) -> f64 {
    percentile(values, 50.0)
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population variance (divides by n).
pub fn variance(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_interpolates_on_one_to_hundred() {
        let values: Vec<f64> = (1..=100).map(|v| v as f64).collect();
        assert!((percentile(&values, 20.0) - 20.8).abs() < 1e-12);
        assert!((percentile(&values, 40.0) - 40.6).abs() < 1e-12);
        assert!((percentile(&values, 60.0) - 60.4).abs() < 1e-12);
        assert!((percentile(&values, 80.0) - 80.2).abs() < 1e-12);
    }

    #[test]
    fn percentile_endpoints() {
        let values = vec![3.0, 1.0, 2.0];
        assert_eq!(percentile(&values, 0.0), 1.0);
        assert_eq!(percentile(&values, 100.0), 3.0);
        assert_eq!(percentile(&values, 50.0), 2.0);
    }

    #[test]
    fn percentile_of_constant_is_constant() {
        let values = vec![7.5; 10];
        for q in [0.0, 20.0, 40.0, 60.0, 80.0, 100.0] {
            assert_eq!(percentile(&values, q), 7.5);
        }
    }

    #[test]
    fn variance_of_known_set() {
        let values = vec![1.0, 2.0, 3.0, 4.0];
        assert!((variance(&values) - 1.25).abs() < 1e-12);
    }
}
