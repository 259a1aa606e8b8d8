//! Densities and integrals for the covariate sum `X0 = X_1 + ... + X_d`.

use quadrature::double_exponential;

use crate::error::{Error, Result};
use crate::stats::CompensatedSum;

/// Absolute tolerance requested from each piece of a piecewise integral.
pub const QUADRATURE_TOL: f64 = 1e-10;

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn factorial(n: u32) -> f64 {
    (1..=n).fold(1.0, |acc, i| acc * i as f64)
}

/// Density of the sum of `d` independent Uniform(0, 1) variables.
///
/// The alternating sum cancels badly for large `u`, so it is evaluated on
/// the short side of the (symmetric) support with compensated summation.
pub fn irwin_hall_pdf(d: u32, u: f64) -> f64 {
    if d == 0 || !(0.0..=d as f64).contains(&u) {
        return 0.0;
    }
    let u = u.min(d as f64 - u);
    let mut sum = CompensatedSum::default();
    for k in 0..=(u.floor() as u32) {
        let term = binomial(d, k) * (u - k as f64).powi(d as i32 - 1);
        sum.add(if k % 2 == 0 { term } else { -term });
    }
    (sum.total() / factorial(d - 1)).max(0.0)
}

/// Integral of `f` over `[a, b]`, split at `breaks` (points where `f` or its
/// derivatives jump).
pub fn integrate_piecewise(f: impl Fn(f64) -> f64, a: f64, b: f64, breaks: &[f64]) -> Result<f64> {
    let mut points = vec![a];
    points.extend(breaks.iter().copied().filter(|&x| x > a && x < b));
    points.push(b);
    points.sort_by(f64::total_cmp);
    let mut total = CompensatedSum::default();
    for w in points.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        let out = double_exponential::integrate(&f, w[0], w[1], QUADRATURE_TOL);
        if !out.integral.is_finite() || out.error_estimate > 1e-7 {
            return Err(Error::QuadratureFailure(format!(
                "on [{}, {}]: estimate {} with error {}",
                w[0], w[1], out.integral, out.error_estimate
            )));
        }
        total.add(out.integral);
    }
    Ok(total.total())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_cases() {
        assert_eq!(irwin_hall_pdf(1, 0.5), 1.0);
        assert_eq!(irwin_hall_pdf(2, 0.5), 0.5);
        assert_eq!(irwin_hall_pdf(2, 1.0), 1.0);
        assert_eq!(irwin_hall_pdf(3, -0.1), 0.0);
        assert!((irwin_hall_pdf(3, 1.5) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn symmetric() {
        for d in 1..=9 {
            for k in 0..20 {
                let u = d as f64 * k as f64 / 20.0;
                assert!((irwin_hall_pdf(d, u) - irwin_hall_pdf(d, d as f64 - u)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn piecewise_integral_of_a_kink() {
        let v = integrate_piecewise(|x: f64| x.abs(), -1.0, 2.0, &[0.0]).unwrap();
        assert!((v - 2.5).abs() < 1e-12);
    }
}
