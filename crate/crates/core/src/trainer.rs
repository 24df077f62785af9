//! Mini-batch training loop: encode, align, decode, reconstruct, optional task
//! supervision, then clipped AdamW under a warm-restart cosine schedule.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{PlatoError, Result};
use crate::linalg::Matrix;
use crate::neural::{ModelDims, Mode, ParamGrads, PlatoModel, Standardizer, DEFAULT_DROPOUT, DEFAULT_HIDDEN, DEFAULT_LATENT};
use crate::objectives::{
    alignment_loss, reconstruction_loss, task_loss, total_loss, LinearSurrogate, LogRow, LossParts, LossReport,
    LossWeights, RecBatch, TaskKind,
};
use crate::rng;
use crate::simkit::TomographyDataset;
use crate::theorylab::GradientBundle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub restart_period: f64,
    pub period_mult: f64,
    pub grad_clip_max_norm: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub latent: usize,
    pub dropout: f64,
    pub use_attention: bool,
    pub task: Option<TaskKind>,
    #[serde(flatten)]
    pub loss: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs: 100,
            base_lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
            restart_period: 10.0,
            period_mult: 2.0,
            grad_clip_max_norm: 1.0,
            seed: 0,
            hidden: DEFAULT_HIDDEN.to_vec(),
            latent: DEFAULT_LATENT,
            dropout: DEFAULT_DROPOUT,
            use_attention: true,
            task: None,
            loss: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.base_lr, self.eps, self.restart_period, self.grad_clip_max_norm];
        if self.batch_size < 2 || self.epochs == 0 || self.latent == 0 || positive.iter().any(|v| !(*v > 0.0)) {
            return Err(PlatoError::InvalidArgument("training hyperparameters must be positive (batch >= 2)".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(0.0..1.0).contains(&self.dropout) {
            return Err(PlatoError::InvalidArgument("betas and dropout must lie in [0, 1)".into()));
        }
        if self.weight_decay < 0.0 || self.period_mult < 1.0 {
            return Err(PlatoError::InvalidArgument("weight_decay >= 0 and period_mult >= 1 required".into()));
        }
        self.loss.validate()
    }
}

/// Cosine annealing with warm restarts; `epoch` may be fractional.
pub fn lr_schedule(epoch: f64, cfg: &TrainConfig) -> f64 {
    let mut t = epoch.max(0.0);
    let mut period = cfg.restart_period;
    while t >= period {
        t -= period;
        period *= cfg.period_mult;
    }
    cfg.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * t / period).cos())
}

/// Rescales in place when the global L2 norm exceeds `max_norm`. Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut ParamGrads, max_norm: f64) -> Result<f64> {
    let norm = grads.global_norm();
    if !norm.is_finite() {
        return Err(PlatoError::numeric("gradients", format!("global norm is {norm}")));
    }
    if norm > max_norm {
        let s = max_norm / norm;
        grads.0.iter_mut().flatten().for_each(|g| *g *= s);
    }
    Ok(norm)
}

/// Moment accumulators for decoupled-weight-decay Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn for_shapes(shapes: &[usize]) -> Self {
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn for_model(model: &PlatoModel) -> Self {
        Self::for_shapes(&model.tensors().iter().map(|t| t.len()).collect::<Vec<_>>())
    }
}

pub fn optimizer_step(params: &mut [&mut Vec<f64>], state: &mut AdamState, grads: &ParamGrads, lr: f64, cfg: &TrainConfig) -> Result<()> {
    if params.len() != grads.0.len() || params.len() != state.m.len() {
        return Err(PlatoError::shape("optimizer tensors", params.len(), grads.0.len()));
    }
    for (i, (p, g)) in params.iter().zip(&grads.0).enumerate() {
        if p.len() != g.len() || p.len() != state.m[i].len() {
            return Err(PlatoError::shape(format!("optimizer tensor {i}"), p.len(), g.len()));
        }
    }
    state.step += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.step as i32);
    for (i, (p, g)) in params.iter_mut().zip(&grads.0).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..p.len() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            p[j] -= lr * cfg.weight_decay * p[j];
            p[j] -= lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Training inputs in matrix form.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub noisy: [Matrix; 3],
    /// Clean indicators; only rows flagged in `labeled` are read.
    pub clean: [Matrix; 3],
    pub labeled: Vec<bool>,
    pub task_labels: Option<Matrix>,
    pub surrogate: Option<LinearSurrogate>,
}

impl TrainData {
    pub fn from_dataset(ds: &TomographyDataset) -> Self {
        let noisy = ds.noisy_series().channels;
        let clean = ds.clean_series().channels;
        Self {
            noisy,
            clean,
            labeled: ds.samples.iter().map(|s| s.clean_labeled).collect(),
            task_labels: None,
            surrogate: None,
        }
    }

    /// Attaches link-delay labels and the ridge surrogate used by the link task.
    pub fn with_link_task(mut self, ds: &TomographyDataset, ridge: f64) -> Result<Self> {
        let rows: Vec<Vec<f64>> = ds.samples.iter().map(|s| s.link_truth.delay_ms.clone()).collect();
        self.task_labels = Some(Matrix::from_rows(&rows));
        self.surrogate = Some(LinearSurrogate::link(ds.routing.entries(), ridge)?);
        Ok(self)
    }

    /// Attaches labels and surrogate for `task`. Topology has no surrogate,
    /// so the data is returned unchanged and the task weight is gated off.
    pub fn with_task(mut self, ds: &TomographyDataset, task: TaskKind, ridge: f64) -> Result<Self> {
        match task {
            TaskKind::Link => self.with_link_task(ds, ridge),
            TaskKind::Od => {
                let rows: Vec<Vec<f64>> = ds.samples.iter().map(|s| s.od_flows_mbps.clone()).collect();
                let r = ds.routing.entries();
                let lp = &ds.link_params;
                let cols = ds.routing.link_index();
                let base: Vec<f64> = cols.iter().map(|&l| lp.base_delay_ms[l]).collect();
                let cap: Vec<f64> = cols.iter().map(|&l| lp.capacity_mbps[l]).collect();
                self.task_labels = Some(Matrix::from_rows(&rows));
                self.surrogate = Some(LinearSurrogate::od(r, &base, &cap, &r.transpose(), ridge)?);
                Ok(self)
            }
            TaskKind::Topo => {
                log::warn!("topology task has no differentiable surrogate; task loss disabled");
                Ok(self)
            }
        }
    }

    pub fn len(&self) -> usize {
        self.labeled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labeled.is_empty()
    }

    pub fn dims(&self) -> [usize; 3] {
        [0, 1, 2].map(|k| self.noisy[k].cols())
    }

    fn batch(&self, idx: &[usize]) -> Batch {
        Batch {
            noisy: [0, 1, 2].map(|k| self.noisy[k].select_rows(idx)),
            clean: [0, 1, 2].map(|k| self.clean[k].select_rows(idx)),
            labeled: idx.iter().map(|&i| self.labeled[i]).collect(),
            task: self.task_labels.as_ref().map(|t| t.select_rows(idx)),
        }
    }
}

struct Batch {
    noisy: [Matrix; 3],
    clean: [Matrix; 3],
    labeled: Vec<bool>,
    task: Option<Matrix>,
}

/// Weighted loss and parameter gradients for one batch.
pub struct StepResult {
    pub report: LossReport,
    pub grads: ParamGrads,
}

fn effective_weights(cfg: &TrainConfig, data: &TrainData) -> LossWeights {
    let mut w = cfg.loss;
    if w.lambda_task > 0.0 {
        let usable = matches!(cfg.task, Some(TaskKind::Link | TaskKind::Od))
            && data.surrogate.as_ref().is_some_and(|s| Some(s.task) == cfg.task)
            && data.task_labels.is_some();
        if !usable {
            log::warn!("task weight set without a differentiable surrogate; forcing lambda_task = 0");
            w.lambda_task = 0.0;
        }
    }
    w
}

fn batch_step(model: &PlatoModel, batch: &Batch, data: &TrainData, cfg: &TrainConfig, w: &LossWeights, mode: Mode) -> Result<StepResult> {
    let out = model.forward_traced(&batch.noisy, mode)?;
    let (align, mut g_lat) = alignment_loss(&[&out.latents[0], &out.latents[1], &out.latents[2]], w.tau)?;
    let rec_batches: Vec<RecBatch<'_>> = (0..3)
        .map(|k| RecBatch { recon: &out.recon[k], noisy: &batch.noisy[k], clean: &batch.clean[k] })
        .collect();
    let rec = reconstruction_loss(&rec_batches, &batch.labeled, w)?;
    let mut g_rec = rec.grads.clone();
    let mut task = 0.0;
    if w.lambda_task > 0.0 {
        let labels = batch.task.as_ref().expect("checked by effective_weights");
        let (v, g) = task_loss(&out.recon[0], labels, data.surrogate.as_ref(), cfg.task.expect("checked"))?;
        task = v;
        g_rec[0] = g_rec[0].scale(w.lambda_rec).add(&g.scale(w.lambda_task));
        for k in 1..3 {
            g_rec[k] = g_rec[k].scale(w.lambda_rec);
        }
    } else {
        g_rec.iter_mut().for_each(|g| *g = g.scale(w.lambda_rec));
    }
    g_lat.iter_mut().for_each(|g| *g = g.scale(w.lambda_align));
    let report = total_loss(LossParts { align, rec: rec.value, task }, w, rec.sigma)?;
    let g_lat: [Matrix; 3] = g_lat.try_into().expect("three channels");
    let g_rec: [Matrix; 3] = g_rec.try_into().expect("three channels");
    let grads = model.backward(&out, &g_lat, &g_rec)?.params;
    Ok(StepResult { report, grads })
}

/// Loss and gradients on the given rows, without dropout.
pub fn evaluate_batch(model: &PlatoModel, data: &TrainData, idx: &[usize], cfg: &TrainConfig) -> Result<StepResult> {
    let w = effective_weights(cfg, data);
    batch_step(model, &data.batch(idx), data, cfg, &w, Mode::Eval)
}

/// Model with architecture from `cfg` and input statistics fitted on `data`.
pub fn init_model(data: &TrainData, cfg: &TrainConfig) -> PlatoModel {
    let dims = ModelDims { input: data.dims(), hidden: cfg.hidden.clone(), latent: cfg.latent };
    let mut model = PlatoModel::new(dims, rng::derive_seed(cfg.seed, "model", 0));
    model.use_attention = cfg.use_attention;
    model.dropout = cfg.dropout;
    model.standardizer = Standardizer::fit(&data.noisy);
    model
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the epoch with the lowest mean training loss.
    pub model: PlatoModel,
    pub log: Vec<LogRow>,
    pub epoch_losses: Vec<f64>,
    pub best_epoch: Option<usize>,
    pub best_loss: f64,
    /// Set when training stopped on a non-finite loss.
    pub diverged: Option<String>,
}

pub fn train(data: &TrainData, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_from(init_model(data, cfg), data, cfg)
}

pub fn train_from(mut model: PlatoModel, data: &TrainData, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.len() < cfg.batch_size {
        return Err(PlatoError::InvalidArgument(format!(
            "dataset has {} samples, fewer than batch size {}",
            data.len(),
            cfg.batch_size
        )));
    }
    let w = effective_weights(cfg, data);
    let mut outcome = TrainOutcome {
        model: model.clone(),
        log: Vec::new(),
        epoch_losses: Vec::new(),
        best_epoch: None,
        best_loss: f64::INFINITY,
        diverged: None,
    };
    if w.lambda_align == 0.0 && w.lambda_rec == 0.0 && w.lambda_task == 0.0 {
        log::warn!("all loss weights are zero; nothing to optimize");
        return Ok(outcome);
    }
    let mut state = AdamState::for_model(&model);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut shuffle = rng::stream(cfg.seed, "shuffle", 0);
    let batches_per_epoch = data.len().div_ceil(cfg.batch_size);
    let mut step: u64 = 0;
    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut sum = 0.0;
        let mut count = 0usize;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            if idx.len() < 2 {
                continue;
            }
            let frac = epoch as f64 + b as f64 / batches_per_epoch as f64;
            let lr = lr_schedule(frac, cfg);
            let mode = Mode::Train { seed: rng::derive_seed(cfg.seed, "step", step) };
            let result = batch_step(&model, &data.batch(idx), data, cfg, &w, mode);
            let StepResult { report, mut grads } = match result {
                Ok(r) if r.report.total.is_finite() => r,
                Ok(r) => {
                    outcome.diverged = Some(format!("total loss {} at step {step}", r.report.total));
                    break 'epochs;
                }
                Err(e @ (PlatoError::Numeric { .. } | PlatoError::DegenerateEmbedding { .. })) => {
                    outcome.diverged = Some(format!("{e} at step {step}"));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            if let Err(e) = clip_global_norm(&mut grads, cfg.grad_clip_max_norm) {
                outcome.diverged = Some(format!("{e} at step {step}"));
                break 'epochs;
            }
            optimizer_step(&mut model.tensors_mut(), &mut state, &grads, lr, cfg)?;
            step += 1;
            outcome.log.push(LogRow {
                step,
                align: report.align,
                rec: report.rec,
                task: report.task,
                total: report.total,
                lr,
            });
            sum += report.total;
            count += 1;
        }
        let mean = sum / count.max(1) as f64;
        outcome.epoch_losses.push(mean);
        if mean < outcome.best_loss {
            outcome.best_loss = mean;
            outcome.best_epoch = Some(epoch);
            outcome.model = model.clone();
        }
    }
    if let Some(reason) = &outcome.diverged {
        log::warn!("training diverged ({reason}); keeping last finite checkpoint");
    }
    Ok(outcome)
}

/// Per-indicator reconstruction gradients restricted to the encoder
/// parameters, evaluated without dropout on the given rows.
pub fn encoder_gradient_bundle(model: &PlatoModel, data: &TrainData, idx: &[usize], cfg: &TrainConfig) -> Result<GradientBundle> {
    let batch = data.batch(idx);
    let out = model.forward_traced(&batch.noisy, Mode::Eval)?;
    let rec_batches: Vec<RecBatch<'_>> = (0..3)
        .map(|k| RecBatch { recon: &out.recon[k], noisy: &batch.noisy[k], clean: &batch.clean[k] })
        .collect();
    let rec = reconstruction_loss(&rec_batches, &batch.labeled, &cfg.loss)?;
    let zero_lat = out.latents.clone().map(|z| z.scale(0.0));
    let n_enc = model.encoder_tensor_count();
    let mut grads = Vec::with_capacity(3);
    for k in 0..3 {
        let mut g_rec = out.recon.clone().map(|r| r.scale(0.0));
        g_rec[k] = rec.grads[k].clone();
        let g = model.backward(&out, &zero_lat, &g_rec)?.params;
        grads.push(g.0[..n_enc].iter().flatten().copied().collect());
    }
    Ok(GradientBundle::new(grads, vec![1.0; 3]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_points() {
        let cfg = TrainConfig::default();
        assert!((lr_schedule(0.0, &cfg) - 1e-3).abs() < 1e-15);
        assert!((lr_schedule(5.0, &cfg) - 5e-4).abs() < 1e-15);
        assert!((lr_schedule(10.0, &cfg) - 1e-3).abs() < 1e-15);
        assert!((lr_schedule(20.0, &cfg) - 5e-4).abs() < 1e-15);
        assert!((lr_schedule(30.0, &cfg) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn clipping() {
        let mut small = ParamGrads(vec![vec![0.3, 0.4]]);
        clip_global_norm(&mut small, 1.0).unwrap();
        assert_eq!(small.0[0], vec![0.3, 0.4]);
        let mut big = ParamGrads(vec![vec![0.0, 4.0], vec![0.0]]);
        let pre = big.flat();
        clip_global_norm(&mut big, 1.0).unwrap();
        assert!((big.global_norm() - 1.0).abs() < 1e-12);
        let post = big.flat();
        let cos = crate::linalg::dot(&pre, &post) / (crate::linalg::norm2(&pre) * crate::linalg::norm2(&post));
        assert!((cos - 1.0).abs() < 1e-12);
        let mut bad = ParamGrads(vec![vec![f64::NAN]]);
        assert!(clip_global_norm(&mut bad, 1.0).is_err());
    }

    #[test]
    fn adam_first_step() {
        let cfg = TrainConfig { weight_decay: 0.0, ..Default::default() };
        let mut p = vec![0.5];
        let mut st = AdamState::for_shapes(&[1]);
        optimizer_step(&mut [&mut p], &mut st, &ParamGrads(vec![vec![1.0]]), 1e-3, &cfg).unwrap();
        assert!((p[0] - (0.5 - 1e-3)).abs() < 1e-9);
        let mut q = vec![0.5];
        let mut st = AdamState::for_shapes(&[1]);
        optimizer_step(&mut [&mut q], &mut st, &ParamGrads(vec![vec![0.0]]), 1e-3, &cfg).unwrap();
        assert_eq!(q[0], 0.5);
        assert!(optimizer_step(&mut [&mut q], &mut st, &ParamGrads(vec![vec![0.0, 1.0]]), 1e-3, &cfg).is_err());
    }
}
