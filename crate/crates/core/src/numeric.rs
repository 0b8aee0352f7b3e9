//! Small numeric helpers shared by the estimators and tests.

use statrs::distribution::{ContinuousCDF, Normal};

/// Neumaier-compensated sum, evaluated in slice order.
pub fn compensated_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for &x in values {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Arithmetic mean; `NaN` for an empty slice.
pub fn mean(values: &[f64]) -> f64 {
    compensated_sum(values) / values.len() as f64
}

/// Sample standard deviation (n − 1 denominator). `None` below two values.
pub fn sample_sd(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let m = mean(values);
    let sq: Vec<f64> = values.iter().map(|x| (x - m) * (x - m)).collect();
    Some((compensated_sum(&sq) / (values.len() - 1) as f64).sqrt())
}

/// Standard error of the mean.
pub fn standard_error(values: &[f64]) -> Option<f64> {
    sample_sd(values).map(|sd| sd / (values.len() as f64).sqrt())
}

/// Two-sided normal critical value for a central interval of `level`.
pub fn normal_critical_value(level: f64) -> f64 {
    let std = Normal::standard();
    std.inverse_cdf(0.5 + level / 2.0)
}

/// Linear-interpolation quantile of sorted data (R type 7).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}
