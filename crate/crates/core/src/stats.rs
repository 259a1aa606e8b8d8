//! Small numerical helpers shared across the estimators.

use statrs::distribution::{ContinuousCDF, Normal};

pub(crate) const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
#[inline]
pub fn std_normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Two-sided critical value `z` such that `P(|N(0,1)| <= z) = level`.
pub fn normal_critical_value(level: f64) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    normal.inverse_cdf(0.5 + level / 2.0)
}

/// Neumaier's compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.carry += (self.sum - t) + value;
        } else {
            self.carry += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.carry
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation with the `n - 1` denominator; `None` for fewer
/// than two values.
pub fn sample_sd(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    Some((ss / (values.len() - 1) as f64).sqrt())
}

pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Robust scale estimate `1.4826 * median(|v - median(v)|)`.
pub fn mad_sd(values: &[f64]) -> f64 {
    let center = median(values);
    let deviations: Vec<f64> = values.iter().map(|v| (v - center).abs()).collect();
    1.4826 * median(&deviations)
}

/// Silverman's rule-of-thumb bandwidth `1.06 * sd * m^(-1/5)`.
pub fn silverman_bandwidth(sd: f64, m: usize) -> f64 {
    1.06 * sd * (m as f64).powf(-0.2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn critical_value_matches_table() {
        assert_relative_eq!(normal_critical_value(0.95), 1.959964, epsilon = 1e-6);
        assert_relative_eq!(normal_critical_value(0.90), 1.644854, epsilon = 1e-6);
    }

    #[test]
    fn compensated_sum_recovers_cancelled_digits() {
        let mut s = CompensatedSum::default();
        for v in [1e16, 1.0, -1e16, 1.0] {
            s.add(v);
        }
        assert_eq!(s.total(), 2.0);
    }

    #[test]
    fn robust_summaries() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        // deviations from 2: 1, 1, 0, 1, 98 -> median 1
        assert_relative_eq!(mad_sd(&[1.0, 3.0, 2.0, 1.0, 100.0]), 1.4826);
        assert!(sample_sd(&[1.0]).is_none());
        assert_relative_eq!(sample_sd(&[1.0, 3.0]).unwrap(), 2f64.sqrt());
    }
}
