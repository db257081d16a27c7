//! Training the redundancy weight by exact gradients through the fixed
//! reconstruction chain, with Adam and a one-cycle learning-rate schedule.

use std::path::PathBuf;

use ndarray::{Array3, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{LineSinogramStack, ProjectionStack, Volume};
use crate::error::{check_shape, Error, Result};
use crate::pipeline::Pipeline;
use crate::scalar::Real;
use crate::transforms::{conebeam_backproject_adjoint, diff_s_adjoint};
use crate::weights::{apply_weight_view, gaussian_smooth, WeightMap, WeightRole, DEFAULT_SMOOTHING_SIGMA};

/// Scale of the random initialization when no analytic map exists.
pub const FALLBACK_INIT_SCALE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Base learning rate `lr₀`.
    pub learning_rate: f64,
    /// Peak rate is `peak_factor · lr₀`.
    pub peak_factor: f64,
    /// Schedule starts at `lr₀ / div_factor`.
    pub div_factor: f64,
    /// Schedule ends at `lr₀ / final_div_factor`.
    pub final_div_factor: f64,
    /// Fraction of all steps spent warming up.
    pub warmup_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Fraction of samples, taken from the front, used for training.
    pub train_fraction: f64,
    /// Gaussian width in grid bins for the post-training smoothing.
    pub smoothing_sigma: f64,
    /// Learn one map per view instead of one shared map.
    pub per_view: bool,
    /// Dataset manifest, when training from files.
    pub dataset: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            learning_rate: 5e-5,
            peak_factor: 10.0,
            div_factor: 1.0,
            final_div_factor: 100.0,
            warmup_fraction: 0.3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-5,
            seed: 0,
            train_fraction: 0.8,
            smoothing_sigma: DEFAULT_SMOOTHING_SIGMA,
            per_view: false,
            dataset: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.into()));
        if self.epochs < 1 {
            return bad("epochs must be at least 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        if !(self.peak_factor > 0.0 && self.div_factor > 0.0 && self.final_div_factor > 0.0) {
            return bad("one-cycle factors must be positive");
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return bad("warmup fraction must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return bad("Adam needs betas in [0, 1) and a positive epsilon");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return bad("train fraction must lie in (0, 1]");
        }
        if self.smoothing_sigma < 0.0 {
            return bad("smoothing sigma must be non-negative");
        }
        Ok(())
    }
}

/// Mean squared difference over all voxels.
pub fn mse_loss<T: Real>(x: &Volume<T>, x_gt: &Volume<T>) -> Result<f64> {
    check_shape(x_gt.data.shape(), x.data.shape())?;
    let sum = Zip::from(&x.data).and(&x_gt.data).fold(0.0, |acc, &a, &b| {
        let d = a.f64() - b.f64();
        acc + d * d
    });
    Ok(sum / x.data.len() as f64)
}

/// State of one forward pass kept for the gradient.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    pub z: Volume<T>,
}

/// The reconstruction chain with its trainable redundancy layer.
pub struct Network<'a, T> {
    pub pipeline: &'a Pipeline<T>,
    pub weights: WeightMap<T>,
    cache: Option<ForwardCache<T>>,
}

impl<'a, T: Real> Network<'a, T> {
    pub fn new(pipeline: &'a Pipeline<T>, weights: WeightMap<T>) -> Result<Self> {
        pipeline.check_weights(&weights)?;
        Ok(Network {
            pipeline,
            weights,
            cache: None,
        })
    }

    /// Rectified reconstruction from precomputed Grangeat data; keeps `z`.
    pub fn forward(&mut self, s: &LineSinogramStack<T>) -> Result<Volume<T>> {
        let z = self.pipeline.reconstruct_from_sinograms(s, &self.weights)?;
        let x = z.rectified();
        self.cache = Some(ForwardCache { z });
        Ok(x)
    }

    pub fn cache(&self) -> Option<&ForwardCache<T>> {
        self.cache.as_ref()
    }

    /// Loss and its gradient with respect to the redundancy weight, for the
    /// Grangeat data `s` of the last forward pass.
    pub fn backward(&self, s: &LineSinogramStack<T>, x_gt: &Volume<T>) -> Result<(f64, WeightMap<T>)> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::MissingCache("backward called before forward".into()))?;
        gradient_from_cache(self.pipeline, s, &cache.z, x_gt, &self.weights)
    }
}

fn gradient_from_cache<T: Real>(
    pipe: &Pipeline<T>,
    s: &LineSinogramStack<T>,
    z: &Volume<T>,
    x_gt: &Volume<T>,
    w_red: &WeightMap<T>,
) -> Result<(f64, WeightMap<T>)> {
    check_shape(z.data.shape(), x_gt.data.shape())?;
    let n = z.data.len() as f64;
    let mut loss = 0.0;
    let mut residual = Array3::<T>::zeros(z.data.raw_dim());
    Zip::from(&mut residual).and(&z.data).and(&x_gt.data).for_each(|r, &zv, &g| {
        let zv = zv.f64();
        let d = zv.max(0.0) - g.f64();
        loss += d * d;
        if zv > 0.0 {
            *r = T::of(2.0 * d / n);
        }
    });
    let residual = Volume::from_data(&z.grid, residual)?;
    let cfg = &pipe.cfg;
    let u = conebeam_backproject_adjoint(&residual, &cfg.geometry, &cfg.detector)?;
    let ratio = pipe.radon().weight_ratio();
    let ds = cfg.line_grid.s_spacing;
    let per_view: Vec<_> = u
        .data
        .outer_iter()
        .zip(s.data.outer_iter())
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(u_view, s_view)| {
            let mut weighted = u_view.to_owned();
            apply_weight_view(&mut weighted.view_mut(), pipe.detector_weight(), 0)?;
            let mut line = pipe.radon().forward(&weighted.view())?;
            line.mapv_inplace(|v| v * T::of(ratio));
            let q = diff_s_adjoint(&line.view(), ds)?;
            Ok(&q * &s_view)
        })
        .collect::<Result<Vec<_>>>()?;
    let (n_mu, n_s) = cfg.line_grid.shape();
    let mut grad = Array3::<T>::zeros((w_red.n_layers(), n_mu, n_s));
    if w_red.is_shared() {
        let mut layer = grad.index_axis_mut(Axis(0), 0);
        for g in &per_view {
            layer += g;
        }
    } else {
        for (mut layer, g) in grad.axis_iter_mut(Axis(0)).zip(&per_view) {
            layer.assign(g);
        }
    }
    Ok((loss / n, WeightMap::per_view(w_red.role, grad, w_red.trainable)))
}

/// Gradient of `mse_loss(reconstruct(p, w_red), x_gt)` with respect to
/// `w_red`, together with the loss.
pub fn grad_wred<T: Real>(
    pipe: &Pipeline<T>,
    p: &ProjectionStack<T>,
    x_gt: &Volume<T>,
    w_red: &WeightMap<T>,
) -> Result<(f64, WeightMap<T>)> {
    let s = pipe.grangeat_stage(p)?;
    let mut net = Network::new(pipe, w_red.clone())?;
    net.forward(&s)?;
    net.backward(&s, x_gt)
}

/// Adam moments with bias correction.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub first: Array3<f64>,
    pub second: Array3<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(shape: (usize, usize, usize), beta1: f64, beta2: f64, epsilon: f64) -> Self {
        AdamState {
            first: Array3::zeros(shape),
            second: Array3::zeros(shape),
            step: 0,
            beta1,
            beta2,
            epsilon,
        }
    }
}

pub fn adam_step<T: Real>(state: &mut AdamState, weights: &mut WeightMap<T>, grad: &WeightMap<T>, lr: f64) -> Result<()> {
    check_shape(state.first.shape(), weights.values.shape())?;
    check_shape(state.first.shape(), grad.values.shape())?;
    state.step += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    Zip::from(&mut weights.values)
        .and(&grad.values)
        .and(&mut state.first)
        .and(&mut state.second)
        .for_each(|w, &g, m, v| {
            let g = g.f64();
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let update = lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            *w = T::of(w.f64() - update);
        });
    Ok(())
}

/// One-cycle learning rate: linear warmup from `lr₀/div` to the peak over
/// the first `warmup_fraction` of the steps, then cosine annealing to
/// `lr₀/final_div` at the last step.
pub fn onecycle_lr(step: usize, total_steps: usize, cfg: &TrainConfig) -> f64 {
    let lr0 = cfg.learning_rate;
    let start = lr0 / cfg.div_factor;
    let peak = lr0 * cfg.peak_factor;
    let end = lr0 / cfg.final_div_factor;
    let warm = (cfg.warmup_fraction * total_steps as f64).round() as usize;
    if step == 0 {
        return start;
    }
    if step <= warm {
        return start + (peak - start) * step as f64 / warm as f64;
    }
    let span = total_steps.saturating_sub(1).saturating_sub(warm);
    if span == 0 {
        return end;
    }
    let progress = ((step - warm) as f64 / span as f64).min(1.0);
    end + 0.5 * (peak - end) * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Projections of one scene and its ground-truth volume.
#[derive(Clone, Debug)]
pub struct TrainSample<T> {
    pub projections: ProjectionStack<T>,
    pub ground_truth: Volume<T>,
}

/// Indices of the training and validation samples: the first
/// `round(fraction · n)` (at least one) train, the rest validate.
pub fn split_dataset(n: usize, train_fraction: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n);
    Ok(((0..n_train).collect(), (n_train..n).collect()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_mse: f64,
    /// `None` without validation samples.
    pub val_mse: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub raw: WeightMap<T>,
    pub smoothed: WeightMap<T>,
    /// Epoch 0 is the untrained initialization.
    pub history: Vec<EpochLoss>,
}

/// Seeded uniform initialization in `(-σ₀, σ₀)`, `σ₀` the mean magnitude of
/// the analytic map when the orbit has one.
pub fn random_init<T: Real>(pipe: &Pipeline<T>, seed: u64, per_view: bool) -> WeightMap<T> {
    let scale = pipe
        .analytic_weights()
        .map(|w| w.mean_abs())
        .unwrap_or(FALLBACK_INIT_SCALE);
    let layers = if per_view { pipe.cfg.geometry.n_views() } else { 1 };
    let (n_mu, n_s) = pipe.cfg.line_grid.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = Array3::from_shape_simple_fn((layers, n_mu, n_s), || T::of(rng.gen_range(-scale..scale)));
    WeightMap::per_view(WeightRole::Redundancy, values, true)
}

fn mean_loss<T: Real>(pipe: &Pipeline<T>, data: &[(LineSinogramStack<T>, &Volume<T>)], w: &WeightMap<T>) -> Result<Option<f64>> {
    if data.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    for (s, gt) in data {
        let x = pipe.reconstruct_from_sinograms(s, w)?.rectified();
        total += mse_loss(&x, gt)?;
    }
    Ok(Some(total / data.len() as f64))
}

/// Per-sample Adam training in fixed sample order. `init` overrides the
/// random initialization.
pub fn train<T: Real>(
    pipe: &Pipeline<T>,
    samples: &[TrainSample<T>],
    cfg: &TrainConfig,
    init: Option<WeightMap<T>>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let (train_idx, val_idx) = split_dataset(samples.len(), cfg.train_fraction)?;
    let prepare = |idx: &[usize]| -> Result<Vec<(LineSinogramStack<T>, &Volume<T>)>> {
        idx.iter()
            .map(|&i| Ok((pipe.grangeat_stage(&samples[i].projections)?, &samples[i].ground_truth)))
            .collect()
    };
    let train_set = prepare(&train_idx)?;
    let val_set = prepare(&val_idx)?;

    let mut net = Network::new(pipe, init.unwrap_or_else(|| random_init(pipe, cfg.seed, cfg.per_view)))?;
    let mut adam = AdamState::new(net.weights.values.dim(), cfg.beta1, cfg.beta2, cfg.epsilon);
    let total = cfg.epochs * train_set.len();
    let mut history = vec![EpochLoss {
        epoch: 0,
        train_mse: mean_loss(pipe, &train_set, &net.weights)?.unwrap_or(f64::NAN),
        val_mse: mean_loss(pipe, &val_set, &net.weights)?,
    }];
    log::info!("epoch 0: train {:.6e}", history[0].train_mse);
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        for (sample, (s, gt)) in train_idx.iter().zip(&train_set) {
            net.forward(s)?;
            let (loss, grad) = net.backward(s, gt)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    value: loss,
                    epoch,
                    sample: *sample,
                });
            }
            adam_step(&mut adam, &mut net.weights, &grad, onecycle_lr(step, total, cfg))?;
            step += 1;
        }
        let row = EpochLoss {
            epoch,
            train_mse: mean_loss(pipe, &train_set, &net.weights)?.unwrap_or(f64::NAN),
            val_mse: mean_loss(pipe, &val_set, &net.weights)?,
        };
        if !row.train_mse.is_finite() {
            return Err(Error::NonFiniteLoss {
                value: row.train_mse,
                epoch,
                sample: train_idx[0],
            });
        }
        log::info!("epoch {epoch}: train {:.6e} val {:?}", row.train_mse, row.val_mse);
        history.push(row);
    }
    let raw = net.weights;
    let smoothed = gaussian_smooth(&raw, cfg.smoothing_sigma)?;
    Ok(TrainOutcome { raw, smoothed, history })
}
