//! Nadaraya–Watson regression with product kernels.
//!
//! The one-dimensional kernel depends on the covariate dimension: Gaussian
//! for `d = 1`, a sixth-order Gaussian-based kernel for `d = 4`, a tenth-order
//! one for `d = 9`, and Gaussian again for anything else. Higher orders cut
//! the smoothing bias that would otherwise dominate in moderate dimensions.

use ndarray::ArrayView2;

use crate::error::{Error, Result};
use crate::model::{Estimand, ObservedSample};
use crate::nuisance::{subgroups, FittedColumn, Learner, MuColumn, Nuisance, NuisanceModel, NuisancePredictors, ZeroColumn};
use crate::roots::Curve;
use crate::stats::{sample_sd, std_normal_pdf, INV_SQRT_2PI};

/// Denominators smaller than this fall back to the subgroup mean.
pub const DEFAULT_ETA: f64 = 1e-8;

/// `exp(-x)` is exactly zero in `f64` beyond this.
const EXP_UNDERFLOW: f64 = 746.0;

/// The one-dimensional kernel used in each coordinate of the product.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelFamily {
    Gaussian,
    /// `(15 - 10x^2 + x^4) phi(x) / 8`.
    Order6,
    /// `(945 - 1260x^2 + 378x^4 - 36x^6 + x^8) phi(x) / 384`.
    Order10,
}

impl KernelFamily {
    pub fn for_dimension(d: usize) -> Self {
        match d {
            4 => KernelFamily::Order6,
            9 => KernelFamily::Order10,
            _ => KernelFamily::Gaussian,
        }
    }

    /// Polynomial factor multiplying `phi(x)`.
    #[inline]
    fn poly(self, x: f64) -> f64 {
        let x2 = x * x;
        match self {
            KernelFamily::Gaussian => 1.0,
            KernelFamily::Order6 => (15.0 + x2 * (-10.0 + x2)) / 8.0,
            KernelFamily::Order10 => {
                (945.0 + x2 * (-1260.0 + x2 * (378.0 + x2 * (-36.0 + x2)))) / 384.0
            }
        }
    }

    pub fn eval(self, x: f64) -> f64 {
        self.poly(x) * std_normal_pdf(x)
    }
}

/// One-dimensional kernel for covariate dimension `d`.
pub fn kernel_function(d: usize, x: f64) -> f64 {
    KernelFamily::for_dimension(d).eval(x)
}

/// `h_j = 1.5 sqrt(d) m^(-1/(2d+1)) sigma_j`.
pub fn default_bandwidth(d: usize, m: usize, sigma_hat: &[f64]) -> Result<Vec<f64>> {
    if m < 2 {
        return Err(Error::InvalidConfig(format!(
            "bandwidth needs at least 2 rows, got {m}"
        )));
    }
    let scale = 1.5 * (d as f64).sqrt() * (m as f64).powf(-1.0 / (2 * d + 1) as f64);
    sigma_hat
        .iter()
        .enumerate()
        .map(|(j, &s)| {
            if s > 0.0 && s.is_finite() {
                Ok(scale * s)
            } else {
                Err(Error::ZeroVarianceCovariate(j))
            }
        })
        .collect()
}

/// Kernel family, per-coordinate bandwidths and the denominator guard.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub bandwidths: Vec<f64>,
    pub eta: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, bandwidths: Vec<f64>) -> Result<Self> {
        if let Some(j) = bandwidths.iter().position(|h| !(*h > 0.0 && h.is_finite())) {
            return Err(Error::InvalidConfig(format!(
                "bandwidth {j} must be positive, got {}",
                bandwidths[j]
            )));
        }
        Ok(Self {
            family,
            bandwidths,
            eta: DEFAULT_ETA,
        })
    }

    /// Default family and bandwidths for a fold.
    pub fn for_fold(s: &ObservedSample) -> Result<Self> {
        let d = s.d();
        let sigma: Vec<f64> = (0..d)
            .map(|j| {
                let col: Vec<f64> = s.x().column(j).to_vec();
                sample_sd(&col).unwrap_or(0.0)
            })
            .collect();
        Self::new(KernelFamily::for_dimension(d), default_bandwidth(d, s.n(), &sigma)?)
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    fn norm(&self) -> f64 {
        INV_SQRT_2PI.powi(self.bandwidths.len() as i32)
    }
}

/// Training points of one subgroup, pre-divided by the bandwidths.
struct Design {
    family: KernelFamily,
    d: usize,
    norm: f64,
    inv_h: Vec<f64>,
    eta: f64,
    /// Row-major `m x d`.
    scaled: Vec<f64>,
    m: usize,
}

impl Design {
    fn new(spec: &KernelSpec, x: ArrayView2<'_, f64>, rows: &[usize]) -> Self {
        let d = x.ncols();
        let inv_h: Vec<f64> = spec.bandwidths.iter().map(|h| 1.0 / h).collect();
        let mut scaled = Vec::with_capacity(rows.len() * d);
        for &i in rows {
            for j in 0..d {
                scaled.push(x[[i, j]] * inv_h[j]);
            }
        }
        Design {
            family: spec.family,
            d,
            norm: spec.norm(),
            inv_h,
            eta: spec.eta,
            scaled,
            m: rows.len(),
        }
    }

    /// Kernel weights of every training point at one query, written into
    /// `out`. Returns their sum.
    fn weights(&self, query: &[f64], out: &mut [f64]) -> f64 {
        let d = self.d;
        let q: Vec<f64> = (0..d).map(|j| query[j] * self.inv_h[j]).collect();
        let gaussian = self.family == KernelFamily::Gaussian;
        let mut total = 0.0;
        for (k, w) in out.iter_mut().enumerate() {
            let row = &self.scaled[k * d..(k + 1) * d];
            let mut e = 0.0;
            let mut poly = 1.0;
            for j in 0..d {
                let u = q[j] - row[j];
                e += u * u;
                if !gaussian {
                    poly *= self.family.poly(u);
                }
            }
            e *= 0.5;
            *w = if e > EXP_UNDERFLOW {
                0.0
            } else {
                self.norm * poly * (-e).exp()
            };
            total += *w;
        }
        total
    }

    /// Nadaraya–Watson fit of `r` at every row of `x`.
    fn regress(&self, r: &[f64], x: ArrayView2<'_, f64>) -> Vec<f64> {
        let fallback = r.iter().sum::<f64>() / r.len() as f64;
        let mut w = vec![0.0; self.m];
        let mut query = vec![0.0; self.d];
        (0..x.nrows())
            .map(|i| {
                for j in 0..self.d {
                    query[j] = x[[i, j]];
                }
                let s = self.weights(&query, &mut w);
                if s.abs() < self.eta {
                    fallback
                } else {
                    w.iter().zip(r).map(|(w, r)| w * r).sum::<f64>() / s
                }
            })
            .collect()
    }
}

/// Nadaraya–Watson estimate at a single query point, using the training rows
/// where `mask` is true.
pub fn kernel_regress(
    train_x: ArrayView2<'_, f64>,
    train_r: &[f64],
    mask: &[bool],
    query: &[f64],
    spec: &KernelSpec,
) -> Result<f64> {
    let rows: Vec<usize> = (0..train_x.nrows()).filter(|&i| mask[i]).collect();
    if rows.is_empty() {
        return Err(Error::InvalidConfig("kernel regression on an empty subgroup".into()));
    }
    let design = Design::new(spec, train_x, &rows);
    let r: Vec<f64> = rows.iter().map(|&i| train_r[i]).collect();
    let q = ndarray::ArrayView2::from_shape((1, query.len()), query)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    Ok(design.regress(&r, q)[0])
}

struct Subgroup {
    design: Design,
    y: Vec<f64>,
}

/// Kernel nuisance fits; all four regressions are evaluated lazily at query
/// time.
pub struct KernelModel {
    estimand: Estimand,
    q: Subgroup,
    mu1: Subgroup,
    mu2: Option<Subgroup>,
    mu3: Subgroup,
}

impl KernelModel {
    fn subgroup(&self, which: Nuisance) -> Option<&Subgroup> {
        match which {
            Nuisance::Q => Some(&self.q),
            Nuisance::Mu1 => Some(&self.mu1),
            Nuisance::Mu2 => self.mu2.as_ref(),
            Nuisance::Mu3 => Some(&self.mu3),
        }
    }
}

impl NuisanceModel for KernelModel {
    fn q_values(&self, x: ArrayView2<'_, f64>) -> Vec<f64> {
        self.q
            .design
            .regress(&self.q.y, x)
            .into_iter()
            .map(|v| v.clamp(0.0, 1.0))
            .collect()
    }

    fn mu_column<'a>(&'a self, which: Nuisance, x: ArrayView2<'a, f64>) -> Box<dyn MuColumn + 'a> {
        let Some(group) = self.subgroup(which) else {
            return Box::new(ZeroColumn { n: x.nrows() });
        };
        match self.estimand {
            Estimand::Mean => Box::new(FittedColumn {
                fitted: group.design.regress(&group.y, x),
                shift: true,
            }),
            Estimand::Quantile { alpha } => Box::new(QuantileColumn { group, x, alpha }),
        }
    }
}

/// `E{1(Y <= tau) | x} - alpha` by kernel smoothing, for every tau.
///
/// Any weighted sum of these predictions is a step function of tau with
/// jumps at the training outcomes, so it is passed to the root finder in
/// that form.
struct QuantileColumn<'a> {
    group: &'a Subgroup,
    x: ArrayView2<'a, f64>,
    alpha: f64,
}

impl QuantileColumn<'_> {
    /// Calls `f(i, weights, sum)` for each query row; `weights` is `None`
    /// when the fallback to the subgroup mean applies.
    fn for_each_row(&self, mut f: impl FnMut(usize, Option<&[f64]>, f64)) {
        let design = &self.group.design;
        let mut w = vec![0.0; design.m];
        let mut query = vec![0.0; design.d];
        for i in 0..self.x.nrows() {
            for (q, &v) in query.iter_mut().zip(self.x.row(i)) {
                *q = v;
            }
            let s = design.weights(&query, &mut w);
            if s.abs() < design.eta {
                f(i, None, s);
            } else {
                f(i, Some(&w), s);
            }
        }
    }
}

impl MuColumn for QuantileColumn<'_> {
    fn values(&self, tau: f64) -> Vec<f64> {
        let y = &self.group.y;
        let below: Vec<f64> = y.iter().map(|&v| if v <= tau { 1.0 } else { 0.0 }).collect();
        let fallback = below.iter().sum::<f64>() / y.len() as f64;
        let mut out = vec![0.0; self.x.nrows()];
        self.for_each_row(|i, w, s| {
            out[i] = match w {
                Some(w) => w.iter().zip(&below).map(|(w, b)| w * b).sum::<f64>() / s,
                None => fallback,
            } - self.alpha;
        });
        out
    }

    fn curve(&self, coef: &[f64]) -> Curve<'_> {
        let m = self.group.y.len();
        let mut jumps = vec![0.0; m];
        let mut spread = 0.0;
        self.for_each_row(|i, w, s| {
            let c = coef[i];
            if c == 0.0 {
                return;
            }
            match w {
                Some(w) => {
                    let scale = c / s;
                    for (acc, wk) in jumps.iter_mut().zip(w) {
                        *acc += scale * wk;
                    }
                }
                None => spread += c / m as f64,
            }
        });
        Curve::Step {
            constant: -self.alpha * coef.iter().sum::<f64>(),
            jumps: self
                .group
                .y
                .iter()
                .zip(jumps)
                .map(|(&y, v)| (y, v + spread))
                .collect(),
        }
    }
}

/// Kernel learner. Bandwidths default to the rule in [`default_bandwidth`],
/// computed from the training fold.
#[derive(Debug, Clone, Default)]
pub struct KernelLearner {
    pub bandwidths: Option<Vec<f64>>,
    pub eta: Option<f64>,
}

impl Learner for KernelLearner {
    fn label(&self) -> String {
        "eff-kernel".into()
    }

    fn fit(
        &self,
        train: &ObservedSample,
        spec: &Estimand,
        _tau1_init: f64,
        _tau0_init: f64,
        _seed: u64,
    ) -> Result<NuisancePredictors> {
        let mut kspec = match &self.bandwidths {
            Some(h) => {
                if h.len() != train.d() {
                    return Err(Error::InvalidConfig(format!(
                        "{} bandwidths for {} covariates",
                        h.len(),
                        train.d()
                    )));
                }
                KernelSpec::new(KernelFamily::for_dimension(train.d()), h.clone())?
            }
            None => KernelSpec::for_fold(train)?,
        };
        if let Some(eta) = self.eta {
            kspec = kspec.with_eta(eta);
        }
        fit_with_spec(train, spec, &kspec)
    }
}

fn fit_with_spec(train: &ObservedSample, spec: &Estimand, kspec: &KernelSpec) -> Result<NuisancePredictors> {
    let groups = subgroups(train)?;
    let x = train.x();
    let make = |rows: &[usize], target: &[f64]| Subgroup {
        design: Design::new(kspec, x, rows),
        y: rows.iter().map(|&i| target[i]).collect(),
    };
    let model = KernelModel {
        estimand: *spec,
        q: make(&groups.q, train.t()),
        mu1: make(&groups.mu1, train.y()),
        mu2: groups.mu2.as_deref().map(|rows| make(rows, train.y())),
        mu3: make(&groups.mu3, train.y()),
    };
    let mut out = NuisancePredictors::new(Box::new(model), "eff-kernel");
    out.notes.push(format!(
        "bandwidths [{}]",
        kspec
            .bandwidths
            .iter()
            .map(|h| format!("{h:.4}"))
            .collect::<Vec<_>>()
            .join(", ")
    ));
    if groups.mu2.is_none() {
        out.notes.push("no noncompliers in fold; mu2 set to zero".into());
    }
    Ok(out)
}

/// Fits the four kernel regressions on `fold` with the default bandwidths.
///
/// The kernel fits are refit lazily for every tau, so the initial values are
/// not needed; they are accepted for symmetry with the other learners.
pub fn fit_nuisances_kernel(
    fold: &ObservedSample,
    spec: &Estimand,
    tau1_init: f64,
    tau0_init: f64,
) -> Result<NuisancePredictors> {
    KernelLearner::default().fit(fold, spec, tau1_init, tau0_init, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::{array, Array2};

    #[test]
    fn kernel_values_at_zero() {
        assert_relative_eq!(kernel_function(1, 0.0), 0.3989423, epsilon = 1e-7);
        assert_relative_eq!(kernel_function(4, 0.0), 0.7480169, epsilon = 1e-6);
        assert_relative_eq!(kernel_function(4, 0.0), 15.0 / 8.0 * INV_SQRT_2PI, epsilon = 1e-14);
        assert_relative_eq!(kernel_function(9, 0.0), 945.0 / 384.0 * INV_SQRT_2PI, epsilon = 1e-12);
        assert_eq!(kernel_function(3, 0.7), std_normal_pdf(0.7));
    }

    #[test]
    fn bandwidth_rule() {
        let h = default_bandwidth(1, 5000, &[1.0]).unwrap();
        assert_relative_eq!(h[0], 1.5 / 5000f64.cbrt(), epsilon = 1e-14);
        assert_relative_eq!(h[0], 0.08772, epsilon = 1e-5);
        let h = default_bandwidth(4, 5000, &[1.0, 2.0, 1.0, 1.0]).unwrap();
        assert_relative_eq!(h[0], 3.0 * (-(5000f64.ln()) / 9.0).exp(), epsilon = 1e-12);
        assert_relative_eq!(h[1], 2.0 * h[0], epsilon = 1e-15);
        assert_eq!(default_bandwidth(1, 10, &[0.0]), Err(Error::ZeroVarianceCovariate(0)));
    }

    fn spec_with(h: f64) -> KernelSpec {
        KernelSpec::new(KernelFamily::Gaussian, vec![h]).unwrap()
    }

    #[test]
    fn single_point_and_constant_response() {
        let x = array![[1.0], [2.0], [3.0]];
        let mask = [false, true, false];
        let r = [9.0, 4.0, 7.0];
        for q in [-3.0, 2.0, 2.3] {
            assert_eq!(kernel_regress(x.view(), &r, &mask, &[q], &spec_with(0.5)).unwrap(), 4.0);
        }
        let c = [2.5; 3];
        let v = kernel_regress(x.view(), &c, &[true; 3], &[1.7], &spec_with(0.5)).unwrap();
        assert_relative_eq!(v, 2.5, epsilon = 1e-14);
    }

    #[test]
    fn wide_bandwidth_gives_subgroup_mean() {
        let x = array![[1.0], [2.0], [5.0], [7.0]];
        let r = [1.0, 2.0, 6.0, 100.0];
        let mask = [true, true, true, false];
        let v = kernel_regress(x.view(), &r, &mask, &[0.3], &spec_with(1e6)).unwrap();
        assert!((v - 3.0).abs() < 1e-6);
    }

    #[test]
    fn tiny_bandwidth_interpolates() {
        let x = array![[0.0], [1e-3], [2.0]];
        let r = [1.0, 5.0, -2.0];
        // With eta at zero the ratio stays well defined even though the
        // weights are tiny.
        let spec = spec_with(1e-6).with_eta(0.0);
        for (i, &ri) in r.iter().enumerate() {
            let v = kernel_regress(x.view(), &r, &[true; 3], &[x[[i, 0]]], &spec).unwrap();
            assert_relative_eq!(v, ri, max_relative = 1e-15);
        }
    }

    #[test]
    fn underflow_falls_back_to_mean() {
        let x = array![[0.0], [1.0]];
        let r = [2.0, 4.0];
        let v = kernel_regress(x.view(), &r, &[true; 2], &[100.0], &spec_with(0.1)).unwrap();
        assert_eq!(v, 3.0);
    }

    #[test]
    fn quantile_curve_matches_values() {
        let x = Array2::from_shape_vec((6, 1), vec![0.1, 0.4, 0.5, 0.9, 1.3, 2.0]).unwrap();
        let y = [1.0, 3.0, 2.0, 5.0, 4.0, 0.5];
        let rows = [0, 1, 2, 3, 4, 5];
        let group = Subgroup {
            design: Design::new(&spec_with(0.3), x.view(), &rows),
            y: y.to_vec(),
        };
        let query = array![[0.2], [1.0], [50.0]];
        let col = QuantileColumn {
            group: &group,
            x: query.view(),
            alpha: 0.3,
        };
        let coef = [0.7, -1.2, 2.0];
        let curve = col.curve(&coef);
        for tau in [0.0, 1.0, 2.5, 4.5, 6.0] {
            let direct: f64 = col.values(tau).iter().zip(coef).map(|(m, c)| m * c).sum();
            assert_relative_eq!(curve.value(tau), direct, epsilon = 1e-12);
        }
    }
}
