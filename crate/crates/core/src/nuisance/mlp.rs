//! A small fully connected ReLU network trained with Adam and early stopping.
//!
//! Inputs and targets are standardized on the training part of each
//! subgroup. The stopping rule compares validation losses on the original
//! target scale so that the configured thresholds keep their meaning.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Estimand, ObservedSample};
use crate::nuisance::{subgroups, FittedColumn, Learner, MuColumn, Nuisance, NuisanceModel, NuisancePredictors, ZeroColumn};
use crate::seeds::{derive_seed, rng_from};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MlpLoss {
    Squared,
    /// Logistic output with binary cross-entropy; only meaningful for `q`.
    CrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MlpConfig {
    pub hidden_layers: usize,
    pub width: usize,
    pub learning_rate: f64,
    /// Upper and lower bounds on the number of training epochs.
    pub max_iter: usize,
    pub min_iter: usize,
    /// Epochs without sufficient validation improvement before stopping.
    pub patience: usize,
    pub min_delta_q: f64,
    pub min_delta_mu: f64,
    pub validation_fraction: f64,
    pub batch_size: usize,
    pub q_loss: MlpLoss,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 4,
            width: 512,
            learning_rate: 0.01,
            max_iter: 800,
            min_iter: 50,
            patience: 10,
            min_delta_q: 1e-6,
            min_delta_mu: 1e-4,
            validation_fraction: 0.2,
            batch_size: 200,
            q_loss: MlpLoss::Squared,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

/// Smallest training set a network is fitted on.
pub const MIN_TRAIN_ROWS: usize = 10;

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("mlp: {m}")));
        if self.hidden_layers == 0 || self.width == 0 || self.batch_size == 0 {
            return bad("layer count, width and batch size must be positive");
        }
        if self.max_iter == 0 || self.min_iter == 0 || self.patience == 0 {
            return bad("iteration counts and patience must be positive");
        }
        if self.min_iter > self.max_iter {
            return bad("min_iter exceeds max_iter");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation fraction must lie in (0, 1)");
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return bad("learning rate must be positive");
        }
        Ok(())
    }

    fn split(&self, n: usize) -> (usize, usize) {
        let n_val = ((self.validation_fraction * n as f64).round() as usize).max(1);
        (n.saturating_sub(n_val), n_val)
    }

    /// Smallest subgroup that leaves [`MIN_TRAIN_ROWS`] for training.
    fn min_subgroup(&self) -> usize {
        (MIN_TRAIN_ROWS..).find(|&n| self.split(n).0 >= MIN_TRAIN_ROWS).unwrap()
    }
}

#[derive(Clone)]
struct Layer {
    w: Array2<f32>,
    b: Array1<f32>,
}

#[derive(Clone)]
struct Net {
    layers: Vec<Layer>,
}

impl Net {
    fn new(input: usize, cfg: &MlpConfig, rng: &mut impl Rng) -> Self {
        let mut layers = Vec::with_capacity(cfg.hidden_layers + 1);
        let mut fan_in = input;
        for k in 0..=cfg.hidden_layers {
            let fan_out = if k == cfg.hidden_layers { 1 } else { cfg.width };
            let sd = (2.0 / fan_in.max(1) as f32).sqrt();
            let normal = Normal::new(0.0f32, sd).unwrap();
            let w = Array2::from_shape_simple_fn((fan_in, fan_out), || normal.sample(rng));
            layers.push(Layer {
                w,
                b: Array1::zeros(fan_out),
            });
            fan_in = fan_out;
        }
        Net { layers }
    }

    /// Activations of every layer: the input, each hidden layer after ReLU,
    /// then the linear output.
    fn forward_all(&self, x: Array2<f32>) -> Vec<Array2<f32>> {
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x);
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = acts[k].dot(&layer.w);
            z += &layer.b;
            if k < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            acts.push(z);
        }
        acts
    }

    fn forward(&self, x: Array2<f32>) -> Array1<f32> {
        let mut acts = self.forward_all(x);
        acts.pop().unwrap().remove_axis(Axis(1))
    }

    /// Gradients for a batch, given the output-layer gradient.
    fn backward(&self, acts: &[Array2<f32>], mut delta: Array2<f32>) -> Vec<Layer> {
        let mut grads: Vec<Layer> = Vec::with_capacity(self.layers.len());
        for k in (0..self.layers.len()).rev() {
            let gw = acts[k].t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            if k > 0 {
                let mut prev = delta.dot(&self.layers[k].w.t());
                ndarray::Zip::from(&mut prev)
                    .and(&acts[k])
                    .for_each(|d, &a| {
                        if a <= 0.0 {
                            *d = 0.0
                        }
                    });
                delta = prev;
            }
            grads.push(Layer { w: gw, b: gb });
        }
        grads.reverse();
        grads
    }
}

struct Adam {
    m: Vec<Layer>,
    v: Vec<Layer>,
    step: i32,
    lr: f32,
    b1: f32,
    b2: f32,
    eps: f32,
}

impl Adam {
    fn new(net: &Net, cfg: &MlpConfig) -> Self {
        let zeros = || {
            net.layers
                .iter()
                .map(|l| Layer {
                    w: Array2::zeros(l.w.raw_dim()),
                    b: Array1::zeros(l.b.raw_dim()),
                })
                .collect::<Vec<_>>()
        };
        Adam {
            m: zeros(),
            v: zeros(),
            step: 0,
            lr: cfg.learning_rate as f32,
            b1: cfg.beta1 as f32,
            b2: cfg.beta2 as f32,
            eps: cfg.adam_eps as f32,
        }
    }

    fn update(&mut self, net: &mut Net, grads: &[Layer]) {
        self.step += 1;
        let (b1, b2, eps) = (self.b1, self.b2, self.eps);
        let lr = self.lr * (1.0 - b2.powi(self.step)).sqrt() / (1.0 - b1.powi(self.step));
        let state = self.m.iter_mut().zip(self.v.iter_mut());
        for ((layer, g), (m, v)) in net.layers.iter_mut().zip(grads).zip(state) {
            let apply = |p: &mut f32, g: &f32, m: &mut f32, v: &mut f32| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * *m / (v.sqrt() + eps);
            };
            ndarray::Zip::from(&mut layer.w)
                .and(&g.w)
                .and(&mut m.w)
                .and(&mut v.w)
                .for_each(apply);
            ndarray::Zip::from(&mut layer.b)
                .and(&g.b)
                .and(&mut m.b)
                .and(&mut v.b)
                .for_each(apply);
        }
    }
}

/// Outcome of fitting one network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainReport {
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
}

struct Scaler {
    mean: Vec<f32>,
    sd: Vec<f32>,
}

impl Scaler {
    fn fit(x: ArrayView2<'_, f64>) -> Self {
        let (n, d) = x.dim();
        let mut mean = vec![0.0f32; d];
        let mut sd = vec![1.0f32; d];
        for j in 0..d {
            let col = x.column(j);
            let m = col.sum() / n as f64;
            let v = col.iter().map(|c| (c - m) * (c - m)).sum::<f64>() / n as f64;
            mean[j] = m as f32;
            if v > 0.0 {
                sd[j] = v.sqrt() as f32;
            }
        }
        Scaler { mean, sd }
    }

    fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f32> {
        let mut out = x.mapv(|v| v as f32);
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.mean[j], self.sd[j]);
            col.mapv_inplace(|v| (v - m) / s);
        }
        out
    }
}

/// A trained regression network with its input and target scaling.
struct Trained {
    net: Net,
    inputs: Scaler,
    target_mean: f64,
    target_sd: f64,
    loss: MlpLoss,
    report: TrainReport,
}

impl Trained {
    fn predict(&self, x: ArrayView2<'_, f64>) -> Vec<f64> {
        if x.nrows() == 0 {
            return Vec::new();
        }
        let out = self.net.forward(self.inputs.apply(x));
        out.iter()
            .map(|&v| match self.loss {
                MlpLoss::Squared => v as f64 * self.target_sd + self.target_mean,
                MlpLoss::CrossEntropy => sigmoid(v as f64),
            })
            .collect()
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Fits one network on `(x, r)` with early stopping.
fn train(
    x: ArrayView2<'_, f64>,
    r: &[f64],
    loss: MlpLoss,
    min_delta: f64,
    cfg: &MlpConfig,
    seed: u64,
) -> Result<Trained> {
    let n = r.len();
    let mut rng = rng_from(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let (n_train, _) = cfg.split(n);
    let (train_idx, val_idx) = order.split_at(n_train);

    let x_train = x.select(Axis(0), train_idx);
    let inputs = Scaler::fit(x_train.view());
    let xs_train = inputs.apply(x_train.view());
    let xs_val = inputs.apply(x.select(Axis(0), val_idx).view());
    let r_train: Vec<f64> = train_idx.iter().map(|&i| r[i]).collect();
    let r_val: Vec<f64> = val_idx.iter().map(|&i| r[i]).collect();

    let (target_mean, target_sd) = match loss {
        MlpLoss::Squared => {
            let m = r_train.iter().sum::<f64>() / n_train as f64;
            let v = r_train.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n_train as f64;
            (m, if v > 0.0 { v.sqrt() } else { 1.0 })
        }
        MlpLoss::CrossEntropy => (0.0, 1.0),
    };
    let targets: Array1<f32> = r_train
        .iter()
        .map(|v| ((v - target_mean) / target_sd) as f32)
        .collect();

    let mut net = Net::new(x.ncols(), cfg, &mut rng);
    let mut adam = Adam::new(&net, cfg);
    let validation_loss = |net: &Net| -> f64 {
        let pred = net.forward(xs_val.clone());
        let total: f64 = pred
            .iter()
            .zip(&r_val)
            .map(|(&p, &y)| match loss {
                MlpLoss::Squared => {
                    let e = p as f64 * target_sd + target_mean - y;
                    e * e
                }
                MlpLoss::CrossEntropy => {
                    let z = p as f64;
                    // log(1 + e^z) - y z, computed stably
                    z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z
                }
            })
            .sum();
        total / r_val.len() as f64
    };

    let mut best = (validation_loss(&net), 0usize, net.clone());
    if !best.0.is_finite() {
        return Err(Error::TrainingDiverged);
    }
    let mut stale = 0;
    let mut epochs = 0;
    let mut batch_order: Vec<usize> = (0..n_train).collect();
    for epoch in 1..=cfg.max_iter {
        epochs = epoch;
        batch_order.shuffle(&mut rng);
        for chunk in batch_order.chunks(cfg.batch_size) {
            let xb = xs_train.select(Axis(0), chunk);
            let yb: Array1<f32> = chunk.iter().map(|&i| targets[i]).collect();
            let acts = net.forward_all(xb);
            let out = acts.last().unwrap().slice(s![.., 0]);
            let scale = 1.0 / chunk.len() as f32;
            let delta: Array1<f32> = match loss {
                MlpLoss::Squared => (&out - &yb) * scale,
                MlpLoss::CrossEntropy => ndarray::Zip::from(&out)
                    .and(&yb)
                    .map_collect(|&z, &y| (1.0 / (1.0 + (-z).exp()) - y) * scale),
            };
            let grads = net.backward(&acts, delta.insert_axis(Axis(1)));
            adam.update(&mut net, &grads);
        }
        let v = validation_loss(&net);
        if !v.is_finite() {
            return Err(Error::TrainingDiverged);
        }
        if v < best.0 - min_delta {
            best = (v, epoch, net.clone());
            stale = 0;
        } else {
            stale += 1;
        }
        if epoch >= cfg.min_iter && stale >= cfg.patience {
            break;
        }
    }
    let (best_validation_loss, best_epoch, net) = best;
    Ok(Trained {
        net,
        inputs,
        target_mean,
        target_sd,
        loss,
        report: TrainReport {
            epochs,
            best_epoch,
            best_validation_loss,
        },
    })
}

/// Four trained networks. For quantile targets the indicator is fixed at the
/// initial tau values, so the predictions do not move with tau.
pub struct MlpModel {
    estimand: Estimand,
    q: Trained,
    mu1: Trained,
    mu2: Option<Trained>,
    mu3: Trained,
}

impl MlpModel {
    pub fn reports(&self) -> Vec<(Nuisance, TrainReport)> {
        let mut out = vec![(Nuisance::Q, self.q.report), (Nuisance::Mu1, self.mu1.report)];
        if let Some(m) = &self.mu2 {
            out.push((Nuisance::Mu2, m.report));
        }
        out.push((Nuisance::Mu3, self.mu3.report));
        out
    }
}

impl NuisanceModel for MlpModel {
    fn q_values(&self, x: ArrayView2<'_, f64>) -> Vec<f64> {
        self.q.predict(x).into_iter().map(|v| v.clamp(0.0, 1.0)).collect()
    }

    fn mu_column<'a>(&'a self, which: Nuisance, x: ArrayView2<'a, f64>) -> Box<dyn MuColumn + 'a> {
        let net = match which {
            Nuisance::Q => Some(&self.q),
            Nuisance::Mu1 => Some(&self.mu1),
            Nuisance::Mu2 => self.mu2.as_ref(),
            Nuisance::Mu3 => Some(&self.mu3),
        };
        match net {
            Some(net) => Box::new(FittedColumn {
                fitted: net.predict(x),
                shift: self.estimand == Estimand::Mean,
            }),
            None => Box::new(ZeroColumn { n: x.nrows() }),
        }
    }
}

/// Trains the four nuisance networks on `fold`.
///
/// Quantile targets `1(y <= tau) - alpha` are built at `tau1_init` (for
/// `mu1`) and `tau0_init` (for `mu2`, `mu3`).
pub fn fit_nuisances_mlp(
    fold: &ObservedSample,
    spec: &Estimand,
    tau1_init: f64,
    tau0_init: f64,
    cfg: &MlpConfig,
    seed: u64,
) -> Result<NuisancePredictors> {
    cfg.validate()?;
    let groups = subgroups(fold)?;
    let min = cfg.min_subgroup();
    let check = |which: Nuisance, rows: &[usize]| {
        if rows.len() < min {
            Err(Error::SubgroupTooSmall {
                which,
                size: rows.len(),
                min,
            })
        } else {
            Ok(())
        }
    };
    check(Nuisance::Q, &groups.q)?;
    check(Nuisance::Mu1, &groups.mu1)?;
    if let Some(rows) = &groups.mu2 {
        check(Nuisance::Mu2, rows)?;
    }
    check(Nuisance::Mu3, &groups.mu3)?;

    let target = |rows: &[usize], tau: f64| -> Vec<f64> {
        rows.iter()
            .map(|&i| match spec {
                Estimand::Mean => fold.y()[i],
                Estimand::Quantile { .. } => spec.u(fold.y()[i], tau),
            })
            .collect()
    };
    let fit = |which: Nuisance, rows: &[usize], r: Vec<f64>, loss: MlpLoss, min_delta: f64| {
        let x = fold.x().select(Axis(0), rows);
        train(x.view(), &r, loss, min_delta, cfg, derive_seed(seed, &[which as u64]))
    };

    let q_target: Vec<f64> = groups.q.iter().map(|&i| fold.t()[i]).collect();
    let q = fit(Nuisance::Q, &groups.q, q_target, cfg.q_loss, cfg.min_delta_q)?;
    let mu1 = fit(
        Nuisance::Mu1,
        &groups.mu1,
        target(&groups.mu1, tau1_init),
        MlpLoss::Squared,
        cfg.min_delta_mu,
    )?;
    let mu2 = match &groups.mu2 {
        Some(rows) => Some(fit(
            Nuisance::Mu2,
            rows,
            target(rows, tau0_init),
            MlpLoss::Squared,
            cfg.min_delta_mu,
        )?),
        None => None,
    };
    let mu3 = fit(
        Nuisance::Mu3,
        &groups.mu3,
        target(&groups.mu3, tau0_init),
        MlpLoss::Squared,
        cfg.min_delta_mu,
    )?;

    let model = MlpModel {
        estimand: *spec,
        q,
        mu1,
        mu2,
        mu3,
    };
    let notes = model
        .reports()
        .into_iter()
        .map(|(which, r)| {
            format!(
                "{which}: {} epochs, best {} (validation loss {:.3e})",
                r.epochs, r.best_epoch, r.best_validation_loss
            )
        })
        .collect();
    let mut out = NuisancePredictors::new(Box::new(model), "eff-mlp");
    out.notes = notes;
    Ok(out)
}

/// MLP learner; the training seed is combined with the fold seed.
#[derive(Debug, Clone, Default)]
pub struct MlpLearner {
    pub config: MlpConfig,
}

impl Learner for MlpLearner {
    fn label(&self) -> String {
        "eff-mlp".into()
    }

    fn fit(
        &self,
        train: &ObservedSample,
        spec: &Estimand,
        tau1_init: f64,
        tau0_init: f64,
        seed: u64,
    ) -> Result<NuisancePredictors> {
        fit_nuisances_mlp(train, spec, tau1_init, tau0_init, &self.config, seed)
    }
}
