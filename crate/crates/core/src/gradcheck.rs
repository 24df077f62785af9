//! Central finite-difference checks of the analytic gradients, both through
//! the whole training objective (parameters) and through the model alone
//! (parameters and inputs).

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{PlatoError, Result};
use crate::linalg::Matrix;
use crate::neural::{ForwardOutput, Mode, PlatoModel};
use crate::objectives::{LinearSurrogate, LossWeights, RecMode, TaskKind};
use crate::rng;
use crate::trainer::{evaluate_batch, init_model, TrainConfig, TrainData};

/// Upper bound on checked network size.
pub const MAX_PARAMS: usize = 1000;
const STEP: f64 = 1e-5;
const FLOOR: f64 = 1e-8;
/// Smallest step as a fraction of the initial one when avoiding kinks.
const MIN_SHRINK: f64 = 1e-3;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckCase {
    pub seed: u64,
    pub input: [usize; 3],
    pub hidden: Vec<usize>,
    pub latent: usize,
    pub batch: usize,
    pub use_attention: bool,
    pub rec_mode: RecMode,
    pub with_task: bool,
    pub dropout: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GradCheckResult {
    pub params: usize,
    /// Worst error of the training-objective parameter gradient.
    pub objective: f64,
    /// Worst error of the model-level parameter gradient.
    pub model_params: f64,
    /// Worst error of the model-level input gradient.
    pub model_inputs: f64,
}

impl GradCheckResult {
    pub fn max(&self) -> f64 {
        self.objective.max(self.model_params).max(self.model_inputs)
    }
}

/// Deterministic family of small configurations varying shape, depth,
/// attention, reconstruction mode, task head and dropout.
pub fn standard_cases(count: usize, seed: u64) -> Vec<GradCheckCase> {
    (0..count)
        .map(|i| {
            let case_seed = rng::derive_seed(seed, "gradcheck-case", i as u64);
            let mut r = rng::stream(case_seed, "shape", 0);
            let depth = 1 + i % 2;
            GradCheckCase {
                seed: case_seed,
                input: [r.random_range(3..7), r.random_range(2..6), r.random_range(2..6)],
                hidden: (0..depth).map(|_| r.random_range(5..8)).collect(),
                latent: r.random_range(2..5),
                batch: r.random_range(4..9),
                use_attention: i % 4 != 3,
                rec_mode: if i % 3 == 2 { RecMode::PlainMse } else { RecMode::HuberNormalized },
                with_task: i % 2 == 1,
                dropout: if i % 5 == 4 { 0.3 } else { 0.0 },
            }
        })
        .collect()
}

/// `|a − n| / (|a| + 1e-8)` for analytic `a` and numeric `n`.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + FLOOR)
}

fn random(r: &mut rng::Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| r.random_range(lo..hi))
}

fn fixture(case: &GradCheckCase) -> Result<(TrainData, TrainConfig)> {
    let mut r = rng::stream(case.seed, "fixture", 0);
    let n = case.batch;
    let noisy = case.input.map(|d| random(&mut r, n, d, 0.5, 2.0));
    let clean = [0, 1, 2].map(|k| {
        let e = random(&mut r, n, case.input[k], -0.3, 0.3);
        noisy[k].add(&e)
    });
    let labeled = (0..n).map(|i| i % 2 == 0).collect();
    let links = case.input[0] + 1;
    let (task_labels, surrogate) = if case.with_task {
        let routing = Matrix::from_fn(case.input[0], links, |i, j| if (i + j) % 2 == 0 || i == j { 1.0 } else { 0.0 });
        (Some(random(&mut r, n, links, 0.0, 3.0)), Some(LinearSurrogate::link(&routing, 0.1)?))
    } else {
        (None, None)
    };
    let data = TrainData { noisy, clean, labeled, task_labels, surrogate };
    let cfg = TrainConfig {
        seed: case.seed,
        hidden: case.hidden.clone(),
        latent: case.latent,
        dropout: case.dropout,
        use_attention: case.use_attention,
        task: case.with_task.then_some(TaskKind::Link),
        loss: LossWeights {
            lambda_task: if case.with_task { 0.5 } else { 0.0 },
            rec_mode: case.rec_mode,
            ..LossWeights::default()
        },
        ..TrainConfig::default()
    };
    Ok((data, cfg))
}

/// Central difference of `eval(δ)`, shrinking the step while the two stencil
/// points see different ReLU activation patterns.
fn central(h0: f64, mut eval: impl FnMut(f64) -> Result<(f64, Vec<bool>)>) -> Result<f64> {
    let mut h = h0;
    loop {
        let (up, pu) = eval(h)?;
        let (down, pd) = eval(-h)?;
        if pu == pd || h <= h0 * MIN_SHRINK {
            return Ok((up - down) / (2.0 * h));
        }
        h /= 10.0;
    }
}

fn fd_params(model: &mut PlatoModel, analytic: &[f64], mut f: impl FnMut(&PlatoModel) -> Result<(f64, Vec<bool>)>) -> Result<f64> {
    let mut worst = 0.0f64;
    let mut flat = 0;
    for t in 0..model.tensors().len() {
        for i in 0..model.tensors()[t].len() {
            let orig = model.tensors()[t][i];
            let numeric = central(STEP * orig.abs().max(1.0), |delta| {
                model.tensors_mut()[t][i] = orig + delta;
                let v = f(model);
                model.tensors_mut()[t][i] = orig;
                v
            })?;
            worst = worst.max(rel_err(analytic[flat], numeric));
            flat += 1;
        }
    }
    Ok(worst)
}

fn inner(a: &Matrix, b: &Matrix) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum()
}

fn probe(out: &ForwardOutput, c: &[Matrix; 3], d: &[Matrix; 3]) -> f64 {
    (0..3).map(|k| inner(&out.latents[k], &c[k]) + inner(&out.recon[k], &d[k])).sum()
}

fn probed(model: &PlatoModel, x: &[Matrix; 3], mode: Mode, c: &[Matrix; 3], d: &[Matrix; 3]) -> Result<(f64, Vec<bool>)> {
    let out = model.forward_traced(x, mode)?;
    Ok((probe(&out, c, d), out.relu_pattern().unwrap_or_default()))
}

pub fn check(case: &GradCheckCase) -> Result<GradCheckResult> {
    let (data, cfg) = fixture(case)?;
    let mut model = init_model(&data, &cfg);
    // Positive biases keep every ReLU row alive in these narrow networks.
    let mut r = rng::stream(case.seed, "bias", 0);
    for (t, tensor) in model.tensors_mut().into_iter().enumerate() {
        if t % 2 == 1 {
            tensor.iter_mut().for_each(|b| *b += r.random_range(0.05..0.3));
        }
    }
    let params = model.param_count();
    if params > MAX_PARAMS {
        return Err(PlatoError::InvalidArgument(format!("{params} parameters exceed the check limit {MAX_PARAMS}")));
    }
    let idx: Vec<usize> = (0..case.batch).collect();

    let analytic = evaluate_batch(&model, &data, &idx, &cfg)?.grads.flat();
    let objective = fd_params(&mut model, &analytic, |m| {
        let total = evaluate_batch(m, &data, &idx, &cfg)?.report.total;
        Ok((total, m.forward_traced(&data.noisy, Mode::Eval)?.relu_pattern().unwrap_or_default()))
    })?;

    // Model alone under a fixed dropout mask, probed with random linear functionals.
    let mode = if case.dropout > 0.0 { Mode::Train { seed: case.seed } } else { Mode::Eval };
    let mut r = rng::stream(case.seed, "probe", 0);
    let c = [0, 1, 2].map(|_| random(&mut r, case.batch, case.latent, -1.0, 1.0));
    let d = case.input.map(|dim| random(&mut r, case.batch, dim, -1.0, 1.0));
    let out = model.forward_traced(&data.noisy, mode)?;
    let grads = model.backward(&out, &c, &d)?;
    let model_params = fd_params(&mut model, &grads.params.flat(), |m| probed(m, &data.noisy, mode, &c, &d))?;

    let mut model_inputs = 0.0f64;
    let mut x = data.noisy.clone();
    for k in 0..3 {
        for i in 0..case.batch {
            for j in 0..case.input[k] {
                let orig = x[k][(i, j)];
                let numeric = central(STEP * orig.abs().max(1.0), |delta| {
                    x[k][(i, j)] = orig + delta;
                    let v = probed(&model, &x, mode, &c, &d);
                    x[k][(i, j)] = orig;
                    v
                })?;
                model_inputs = model_inputs.max(rel_err(grads.inputs[k][(i, j)], numeric));
            }
        }
    }
    Ok(GradCheckResult { params, objective, model_params, model_inputs })
}
