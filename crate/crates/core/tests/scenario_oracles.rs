//! Checks of the simulation designs and fitted learners against quantities
//! computed independently: quadrature, latent-variable regressions and the
//! design's known functions.

use cgce::nuisance::Learner;
use cgce::simulation::{compliance_fn, oracle_learner, propensity_fn};
use cgce::{
    compute_derivative_matrices, estimate_marginals, estimate_rho_w, fit_nuisances_kernel, generate_dataset,
    solve_tau0_simple, solve_tau1_simple, true_tau, Estimand, Nuisance, Scenario, ScenarioSpec, SimulatedData,
};
use nalgebra::{DMatrix, DVector};
use ndarray::Array2;

fn spec(scenario: Scenario, d: usize, n: usize) -> ScenarioSpec {
    ScenarioSpec::new(scenario, d, n).unwrap()
}

fn x0s(data: &SimulatedData) -> Vec<f64> {
    let x = data.sample.x();
    (0..x.nrows()).map(|i| x.row(i).sum()).collect()
}

/// Covariate rows whose coordinates sum to each `x0`.
fn rows_with_sum(x0: &[f64], d: usize) -> Array2<f64> {
    Array2::from_shape_fn((x0.len(), d), |(i, _)| x0[i] / d as f64)
}

/// Least-squares fit of `r` on Legendre polynomials of degree < `p` in `x`
/// rescaled from `[lo, hi]`.
struct PolyFit {
    lo: f64,
    hi: f64,
    coef: DVector<f64>,
}

fn legendre(u: f64, p: usize) -> Vec<f64> {
    let mut out = vec![1.0, u];
    for k in 1..p.saturating_sub(1) {
        let k = k as f64;
        let next = ((2.0 * k + 1.0) * u * out[out.len() - 1] - k * out[out.len() - 2]) / (k + 1.0);
        out.push(next);
    }
    out.truncate(p);
    out
}

impl PolyFit {
    fn new(x: &[f64], r: &[f64], lo: f64, hi: f64, p: usize) -> Self {
        let mut xtx = DMatrix::<f64>::zeros(p, p);
        let mut xtr = DVector::<f64>::zeros(p);
        for (&xi, &ri) in x.iter().zip(r) {
            let b = DVector::from_vec(legendre(2.0 * (xi - lo) / (hi - lo) - 1.0, p));
            xtx += &b * b.transpose();
            xtr += &b * ri;
        }
        let coef = xtx.cholesky().expect("design is full rank").solve(&xtr);
        Self { lo, hi, coef }
    }

    fn at(&self, x: f64) -> f64 {
        let b = legendre(2.0 * (x - self.lo) / (self.hi - self.lo) - 1.0, self.coef.len());
        b.iter().zip(self.coef.iter()).map(|(a, c)| a * c).sum()
    }
}

fn central_grid(x0: &[f64], points: usize) -> Vec<f64> {
    let mut sorted = x0.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = sorted[sorted.len() / 20];
    let hi = sorted[sorted.len() - sorted.len() / 20];
    (0..points).map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64).collect()
}

#[test]
fn marginal_rates_match_quadrature() {
    let s1 = spec(Scenario::One, 1, 1_000_000);
    let data = generate_dataset(&s1, 11).unwrap();
    let m = estimate_marginals(&data.sample);
    let ep = s1.expect_x0(propensity_fn).unwrap();
    assert!((m.rho_z - ep).abs() < 0.002, "{} vs {ep}", m.rho_z);

    let small = spec(Scenario::One, 1, 100_000);
    let data = generate_dataset(&small, 12).unwrap();
    let eq = small.expect_x0(compliance_fn).unwrap();
    let rho = estimate_rho_w(&data.sample);
    assert!((rho - eq).abs() < 0.01, "{rho} vs {eq}");
}

#[test]
fn latent_complier_effects_match_truth() {
    for (scenario, d) in [(Scenario::One, 1), (Scenario::Two, 4), (Scenario::Two, 9)] {
        let sp = spec(scenario, d, 1_000_000);
        let data = generate_dataset(&sp, 13).unwrap();
        let (mut sum, mut count) = (0.0, 0usize);
        for i in 0..sp.n {
            if data.w[i] == 1.0 {
                sum += data.y1[i] - data.y0[i];
                count += 1;
            }
        }
        let truth = true_tau(&sp).unwrap();
        let latent = sum / count as f64;
        assert!((latent - truth).abs() < 0.01, "{scenario} d={d}: {latent} vs {truth}");
        assert!(data.sample.t().iter().zip(data.sample.z()).zip(&data.w).all(|((t, z), w)| *t == z * w));
    }
}

/// Largest gap, over the central 90% of the support, between the oracle's
/// outcome means and polynomial regressions on the latent outcomes. `mu3`
/// is a mixture over the latent complier status, so it is checked through
/// the two within-status regressions combined with the known compliance
/// score; this keeps the latent noise at the level of the outcome error.
fn oracle_mean_gap(scenario: Scenario, d: usize) -> f64 {
    let sp = spec(scenario, d, 1_000_000);
    let data = generate_dataset(&sp, 17).unwrap();
    let x0 = x0s(&data);
    let (lo, hi, _) = sp.x0_support();
    let grid = central_grid(&x0, 60);
    let estimand = Estimand::Mean;
    let pred = oracle_learner(&sp, &estimand).fit(&data.sample, &estimand, 0.0, 0.0, 0).unwrap();
    let gx = rows_with_sum(&grid, d);

    let fit = |w: f64, y: &[f64]| {
        let (x, r): (Vec<f64>, Vec<f64>) = (0..sp.n).filter(|&i| data.w[i] == w).map(|i| (x0[i], y[i])).unzip();
        PolyFit::new(&x, &r, lo, hi, 6)
    };
    // At tau = 0 the mean moments are the outcome means themselves.
    let fit1 = fit(1.0, &data.y1);
    let fit2 = fit(0.0, &data.y0);
    let fit3_complier = fit(1.0, &data.y0);
    let (m1, m2, m3) = (
        pred.mu(Nuisance::Mu1, gx.view(), 0.0),
        pred.mu(Nuisance::Mu2, gx.view(), 0.0),
        pred.mu(Nuisance::Mu3, gx.view(), 0.0),
    );
    let mut worst: f64 = 0.0;
    for (k, &g) in grid.iter().enumerate() {
        let q = compliance_fn(g);
        worst = worst
            .max((m1[k] - fit1.at(g)).abs())
            .max((m2[k] - fit2.at(g)).abs())
            .max((m3[k] - (q * fit3_complier.at(g) + (1.0 - q) * fit2.at(g))).abs());
    }
    worst
}

#[test]
fn oracle_outcome_means_match_latent_regressions() {
    for (scenario, d) in [(Scenario::One, 1), (Scenario::One, 4), (Scenario::Two, 4), (Scenario::Two, 9)] {
        let gap = oracle_mean_gap(scenario, d);
        assert!(gap < 0.02, "{scenario} d={d}: {gap}");
    }
}

/// Quantile moments are steep sigmoids in `x0`, which a low-order basis
/// cannot follow. Instead, within each of 20 strata of `x0`, the share of
/// latent outcomes at or below tau is compared with the oracle's moment
/// averaged over the same units.
#[test]
fn oracle_quantile_moments_match_latent_frequencies() {
    let alpha = 0.5;
    let estimand = Estimand::Quantile { alpha };
    for (scenario, d) in [(Scenario::One, 1), (Scenario::Two, 4), (Scenario::Two, 9)] {
        let sp = spec(scenario, d, 1_000_000);
        let data = generate_dataset(&sp, 19).unwrap();
        let x0 = x0s(&data);
        let pred = oracle_learner(&sp, &estimand).fit(&data.sample, &estimand, 0.0, 0.0, 0).unwrap();
        let mut order: Vec<usize> = (0..sp.n).collect();
        order.sort_by(|&a, &b| x0[a].total_cmp(&x0[b]));
        let mut worst: f64 = 0.0;
        for tau in [median(&data.y0), median(&data.y1)] {
            for stratum in order.chunks(sp.n / 20) {
                let x = data.sample.x().select(ndarray::Axis(0), stratum);
                let check = |which, members: &dyn Fn(usize) -> bool, y: &[f64]| {
                    let mu = pred.mu(which, x.view(), tau);
                    let (mut model, mut latent, mut count) = (0.0, 0.0, 0usize);
                    for (k, &i) in stratum.iter().enumerate() {
                        if members(i) {
                            model += mu[k];
                            latent += f64::from(y[i] <= tau) - alpha;
                            count += 1;
                        }
                    }
                    ((model - latent) / count as f64).abs()
                };
                worst = worst
                    .max(check(Nuisance::Mu1, &|i| data.w[i] == 1.0, &data.y1))
                    .max(check(Nuisance::Mu2, &|i| data.w[i] == 0.0, &data.y0))
                    .max(check(Nuisance::Mu3, &|_| true, &data.y0));
            }
        }
        assert!(worst < 0.02, "{scenario} d={d}: {worst}");
    }
}

fn median(y: &[f64]) -> f64 {
    let mut v = y.to_vec();
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn oracle_compliance_is_the_design_score() {
    let sp = spec(Scenario::Two, 4, 200);
    let data = generate_dataset(&sp, 3).unwrap();
    let pred = oracle_learner(&sp, &Estimand::Mean)
        .fit(&data.sample, &Estimand::Mean, 0.0, 0.0, 0)
        .unwrap();
    let q = pred.q(data.sample.x());
    for (i, qi) in q.iter().enumerate() {
        assert_eq!(*qi, compliance_fn(data.sample.row(i).sum()));
    }
}

#[test]
fn kernel_fits_recover_design_functions() {
    let fit = |n: usize| {
        let data = generate_dataset(&spec(Scenario::One, 1, n), 21).unwrap();
        let t1 = solve_tau1_simple(&data.sample, &Estimand::Mean).unwrap();
        let t0 = solve_tau0_simple(&data.sample, &Estimand::Mean).unwrap();
        (fit_nuisances_kernel(&data.sample, &Estimand::Mean, t1, t0).unwrap(), t1)
    };
    let (pred, _) = fit(10_000);
    let grid: Vec<f64> = (0..=300).map(|k| 1.0 + 3.0 * k as f64 / 300.0).collect();
    let gx = rows_with_sum(&grid, 1);
    let q = pred.q(gx.view());
    let mse = grid
        .iter()
        .zip(&q)
        .map(|(x, qh)| (qh - compliance_fn(*x)).powi(2))
        .sum::<f64>()
        / grid.len() as f64;
    assert!(mse < 0.005, "q mse {mse}");

    // Where the treated compliers are thin the pointwise noise at n = 10^4
    // is about 0.15 on its own, so the outcome fit is checked on more data.
    let (pred, t1) = fit(1_000_000);
    let inner: Vec<f64> = grid.iter().copied().filter(|x| (1.3..=3.7).contains(x)).collect();
    let mu1 = pred.mu(Nuisance::Mu1, rows_with_sum(&inner, 1).view(), t1);
    let worst = inner
        .iter()
        .zip(&mu1)
        .map(|(x, m)| (m - (2.0 + 4.0 * x - t1)).abs())
        .fold(0.0, f64::max);
    assert!(worst < 0.15, "mu1 sup error {worst}");
}

#[test]
fn kernel_fits_are_deterministic() {
    let sp = spec(Scenario::One, 4, 2_000);
    let data = generate_dataset(&sp, 5).unwrap();
    let s = &data.sample;
    let a = fit_nuisances_kernel(s, &Estimand::Mean, 17.0, 8.0).unwrap();
    let b = fit_nuisances_kernel(s, &Estimand::Mean, 17.0, 8.0).unwrap();
    assert_eq!(a.q(s.x()), b.q(s.x()));
    for which in [Nuisance::Mu1, Nuisance::Mu2, Nuisance::Mu3] {
        assert_eq!(a.mu(which, s.x(), 3.0), b.mu(which, s.x(), 3.0));
    }
}

/// `1 / a` against a centered difference of the raw step equation over a
/// window several times wider than the kernel bandwidth.
#[test]
fn quantile_derivatives_match_finite_differences() {
    let sp = spec(Scenario::One, 1, 200_000);
    let data = generate_dataset(&sp, 8).unwrap();
    let s = &data.sample;
    let spec = Estimand::Quantile { alpha: 0.5 };
    let t1 = solve_tau1_simple(s, &spec).unwrap();
    let t0 = solve_tau0_simple(s, &spec).unwrap();
    let a = compute_derivative_matrices(s, &spec, t1, t0).unwrap();
    let n = s.n() as f64;
    let delta = 0.3;
    for (w, tau, inv) in [
        (cgce::simple::tau1_weights(s), t1, a.a1),
        (cgce::simple::tau0_weights(s), t0, a.a0),
    ] {
        let f = |tau: f64| w.iter().zip(s.y()).map(|(w, y)| w * spec.u(*y, tau)).sum::<f64>() / n;
        let slope = (f(tau + delta) - f(tau - delta)) / (2.0 * delta);
        let ratio = 1.0 / inv / slope;
        assert!((ratio - 1.0).abs() < 0.1, "ratio {ratio}");
    }
}
