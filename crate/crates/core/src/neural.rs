//! Fixed-architecture feed-forward substrate: one encoder per indicator, one
//! attention-aggregating decoder per indicator, exact reverse-mode gradients.
//!
//! Shapes: encoders map `d_i → hidden… → latent`, decoders mirror them.
//! Inputs are standardized with per-feature statistics from the training
//! split and decoder outputs are mapped back through the same statistics.

use std::io::{Read, Write};
use std::path::Path as FsPath;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{PlatoError, Result};
use crate::linalg::{dot, Matrix};
use crate::rng;

pub const CHANNELS: usize = 3;
pub const DEFAULT_HIDDEN: [usize; 2] = [128, 64];
pub const DEFAULT_LATENT: usize = 32;
pub const DEFAULT_DROPOUT: f64 = 0.1;

/// Fully connected layer, weight stored `out × in` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Uniform in `±√(6/(fan_in+fan_out))`, zero bias.
    pub fn glorot(in_dim: usize, out_dim: usize, rng: &mut rng::Rng) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weight = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Self {
            in_dim,
            out_dim,
            weight,
            bias: vec![0.0; out_dim],
        }
    }

    fn w_row(&self, o: usize) -> &[f64] {
        &self.weight[o * self.in_dim..(o + 1) * self.in_dim]
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        debug_assert_eq!(x.cols(), self.in_dim);
        let mut y = Matrix::zeros(x.rows(), self.out_dim);
        for n in 0..x.rows() {
            let xr = x.row(n);
            let yr = y.row_mut(n);
            for (o, yo) in yr.iter_mut().enumerate() {
                *yo = self.bias[o] + dot(self.w_row(o), xr);
            }
        }
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `∂L/∂x`.
    pub fn backward(&self, x: &Matrix, gy: &Matrix, grad: &mut Linear) -> Matrix {
        let mut gx = Matrix::zeros(x.rows(), self.in_dim);
        for n in 0..x.rows() {
            let xr = x.row(n);
            let gyr = gy.row(n);
            for (o, &g) in gyr.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                grad.bias[o] += g;
                let gw = &mut grad.weight[o * self.in_dim..(o + 1) * self.in_dim];
                for (w, &xi) in gw.iter_mut().zip(xr) {
                    *w += g * xi;
                }
                let wr = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
                for (gxi, &w) in gx.row_mut(n).iter_mut().zip(wr) {
                    *gxi += g * w;
                }
            }
        }
        gx
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Forward/backward mode. Dropout is active only in training mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train { seed: u64 },
    Eval,
}

/// ReLU multilayer perceptron with identity output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

#[derive(Debug, Clone)]
struct MlpCache {
    /// Input seen by each layer (after activation and dropout of the previous one).
    inputs: Vec<Matrix>,
    /// Pre-activations of hidden layers.
    pre: Vec<Matrix>,
    /// Inverted-dropout multipliers per hidden layer.
    masks: Vec<Option<Vec<f64>>>,
}

impl Mlp {
    pub fn new(dims: &[usize], rng: &mut rng::Rng) -> Self {
        Self {
            layers: dims.windows(2).map(|w| Linear::glorot(w[0], w[1], rng)).collect(),
        }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            layers: dims.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("nonempty mlp").out_dim
    }

    fn run(&self, x: &Matrix, dropout: f64, mode: Mode, stream_tag: u64) -> (Matrix, MlpCache) {
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::new(),
            masks: Vec::new(),
        };
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h);
            cache.inputs.push(h);
            if li == last {
                return (z, cache);
            }
            let mut a = z.clone();
            a.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
            let mask = match mode {
                Mode::Train { seed } if dropout > 0.0 => {
                    let mut r = rng::stream(seed, "dropout", stream_tag * 16 + li as u64);
                    let keep = 1.0 / (1.0 - dropout);
                    let m: Vec<f64> = (0..a.as_slice().len())
                        .map(|_| if r.random::<f64>() < dropout { 0.0 } else { keep })
                        .collect();
                    a.as_mut_slice().iter_mut().zip(&m).for_each(|(v, k)| *v *= k);
                    Some(m)
                }
                _ => None,
            };
            cache.pre.push(z);
            cache.masks.push(mask);
            h = a;
        }
        unreachable!("loop returns at the output layer")
    }

    pub fn forward(&self, x: &Matrix, dropout: f64, mode: Mode) -> Matrix {
        self.run(x, dropout, mode, 0).0
    }

    fn backward(&self, cache: &MlpCache, gout: &Matrix, grads: &mut Mlp) -> Matrix {
        let mut g = gout.clone();
        for li in (0..self.layers.len()).rev() {
            let gin = self.layers[li].backward(&cache.inputs[li], &g, &mut grads.layers[li]);
            if li == 0 {
                return gin;
            }
            // back through dropout and ReLU of hidden layer li-1
            let pre = &cache.pre[li - 1];
            let mut gh = gin;
            let mask = cache.masks[li - 1].as_deref();
            for (idx, v) in gh.as_mut_slice().iter_mut().enumerate() {
                let active = pre.as_slice()[idx] > 0.0;
                let m = mask.map_or(1.0, |m| m[idx]);
                *v = if active { *v * m } else { 0.0 };
            }
            g = gh;
        }
        unreachable!("loop returns at the first layer")
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Linear::param_count).sum()
    }
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for n in 0..out.rows() {
        let row = out.row_mut(n);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

fn check_rows(latents: &[&Matrix]) -> Result<usize> {
    let n = latents[0].rows();
    for z in latents {
        if z.rows() != n {
            return Err(PlatoError::shape("latent rows", n, z.rows()));
        }
        if z.cols() != latents[0].cols() {
            return Err(PlatoError::shape("latent dims", latents[0].cols(), z.cols()));
        }
    }
    Ok(n)
}

/// Attention aggregation: `z_agg = Σ_k w_k z_k` with `w = softmax(att([z_1, z_2, z_3]))`.
pub fn aggregate_latents(att: &Linear, latents: [&Matrix; 3]) -> Result<(Matrix, Matrix)> {
    check_rows(&latents)?;
    let cat = Matrix::hstack(&latents);
    if cat.cols() != att.in_dim {
        return Err(PlatoError::shape("attention input", att.in_dim, cat.cols()));
    }
    let weights = softmax_rows(&att.forward(&cat));
    Ok((combine(&weights, latents), weights))
}

fn combine(weights: &Matrix, latents: [&Matrix; 3]) -> Matrix {
    let (n, d) = latents[0].shape();
    let mut out = Matrix::zeros(n, d);
    for i in 0..n {
        let orow = out.row_mut(i);
        for (k, z) in latents.iter().enumerate() {
            let w = weights[(i, k)];
            for (o, v) in orow.iter_mut().zip(z.row(i)) {
                *o += w * v;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input: [usize; 3],
    pub hidden: Vec<usize>,
    pub latent: usize,
}

impl ModelDims {
    pub fn standard(input: [usize; 3]) -> Self {
        Self {
            input,
            hidden: DEFAULT_HIDDEN.to_vec(),
            latent: DEFAULT_LATENT,
        }
    }

    fn encoder_dims(&self, k: usize) -> Vec<usize> {
        let mut d = vec![self.input[k]];
        d.extend(&self.hidden);
        d.push(self.latent);
        d
    }

    fn decoder_dims(&self, k: usize) -> Vec<usize> {
        let mut d = vec![self.latent];
        d.extend(self.hidden.iter().rev());
        d.push(self.input[k]);
        d
    }
}

/// Per-feature affine map applied to inputs and inverted on outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: [Vec<f64>; 3],
    pub scale: [Vec<f64>; 3],
}

impl Standardizer {
    pub fn identity(dims: [usize; 3]) -> Self {
        Self {
            mean: dims.map(|d| vec![0.0; d]),
            scale: dims.map(|d| vec![1.0; d]),
        }
    }

    pub fn fit(inputs: &[Matrix; 3]) -> Self {
        let mean = [0, 1, 2].map(|k| inputs[k].column_means());
        let scale = [0, 1, 2].map(|k| {
            inputs[k]
                .column_stds()
                .into_iter()
                .map(|s| if s > 1e-12 { s } else { 1.0 })
                .collect()
        });
        Self { mean, scale }
    }

    fn apply(&self, k: usize, x: &Matrix) -> Matrix {
        Matrix::from_fn(x.rows(), x.cols(), |i, j| (x[(i, j)] - self.mean[k][j]) / self.scale[k][j])
    }

    fn invert(&self, k: usize, s: &Matrix) -> Matrix {
        Matrix::from_fn(s.rows(), s.cols(), |i, j| self.mean[k][j] + self.scale[k][j] * s[(i, j)])
    }

    fn len(&self) -> usize {
        self.mean.iter().map(Vec::len).sum::<usize>() * 2
    }
}

/// Encoders, decoders and attention networks for the three indicator channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatoModel {
    pub dims: ModelDims,
    pub use_attention: bool,
    pub dropout: f64,
    pub encoders: Vec<Mlp>,
    pub decoders: Vec<Mlp>,
    pub attention: Vec<Linear>,
    pub standardizer: Standardizer,
}

/// Gradients shaped like [`PlatoModel::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads(pub Vec<Vec<f64>>);

impl ParamGrads {
    pub fn global_norm(&self) -> f64 {
        self.0.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.0.iter().flatten().copied().collect()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().flatten().all(|&v| v == 0.0)
    }
}

#[derive(Debug, Clone)]
struct ForwardCache {
    std_inputs: [Matrix; 3],
    enc: Vec<MlpCache>,
    dec: Vec<MlpCache>,
    cat: Matrix,
}

/// Result of a forward pass; holds the backward cache when traced.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub latents: [Matrix; 3],
    pub recon: [Matrix; 3],
    /// Attention weights per decoder (`N × 3`); uniform one-hot when attention is off.
    pub weights: [Matrix; 3],
    cache: Option<ForwardCache>,
}

impl ForwardOutput {
    pub fn is_traced(&self) -> bool {
        self.cache.is_some()
    }

    /// Sign of every hidden pre-activation; `None` for untraced passes.
    pub fn relu_pattern(&self) -> Option<Vec<bool>> {
        let c = self.cache.as_ref()?;
        Some(
            c.enc
                .iter()
                .chain(&c.dec)
                .flat_map(|m| &m.pre)
                .flat_map(|p| p.as_slice().iter().map(|v| *v > 0.0))
                .collect(),
        )
    }
}

pub struct Gradients {
    pub params: ParamGrads,
    /// `∂L/∂x` for the raw (unstandardized) inputs.
    pub inputs: [Matrix; 3],
}

impl PlatoModel {
    pub fn new(dims: ModelDims, seed: u64) -> Self {
        let mut rng = rng::stream(seed, "init", 0);
        let encoders = (0..CHANNELS).map(|k| Mlp::new(&dims.encoder_dims(k), &mut rng)).collect();
        let decoders = (0..CHANNELS).map(|k| Mlp::new(&dims.decoder_dims(k), &mut rng)).collect();
        let attention = (0..CHANNELS)
            .map(|_| Linear::glorot(CHANNELS * dims.latent, CHANNELS, &mut rng))
            .collect();
        Self {
            standardizer: Standardizer::identity(dims.input),
            dims,
            use_attention: true,
            dropout: DEFAULT_DROPOUT,
            encoders,
            decoders,
            attention,
        }
    }

    /// Same architecture with every parameter zero.
    pub fn zeros_like(&self) -> Self {
        let dims = &self.dims;
        Self {
            dims: dims.clone(),
            use_attention: self.use_attention,
            dropout: self.dropout,
            encoders: (0..CHANNELS).map(|k| Mlp::zeros(&dims.encoder_dims(k))).collect(),
            decoders: (0..CHANNELS).map(|k| Mlp::zeros(&dims.decoder_dims(k))).collect(),
            attention: (0..CHANNELS).map(|_| Linear::zeros(CHANNELS * dims.latent, CHANNELS)).collect(),
            standardizer: self.standardizer.clone(),
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for mlp in self.encoders.iter().chain(&self.decoders) {
            for l in &mlp.layers {
                out.push(&l.weight);
                out.push(&l.bias);
            }
        }
        for l in &self.attention {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = Vec::new();
        for mlp in self.encoders.iter_mut().chain(self.decoders.iter_mut()) {
            for l in &mut mlp.layers {
                out.push(&mut l.weight);
                out.push(&mut l.bias);
            }
        }
        for l in &mut self.attention {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    /// Number of leading tensors that belong to the encoders.
    pub fn encoder_tensor_count(&self) -> usize {
        self.encoders.iter().map(|m| m.layers.len() * 2).sum()
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.tensors().into_iter().flatten().copied().collect()
    }

    fn check_inputs(&self, inputs: &[Matrix; 3]) -> Result<usize> {
        let n = inputs[0].rows();
        for (k, x) in inputs.iter().enumerate() {
            if x.cols() != self.dims.input[k] {
                return Err(PlatoError::shape(
                    format!("input channel {k}"),
                    format!("{} columns", self.dims.input[k]),
                    format!("{} columns", x.cols()),
                ));
            }
            if x.rows() != n {
                return Err(PlatoError::shape("input rows", n, x.rows()));
            }
        }
        Ok(n)
    }

    /// Encodes one channel: standardize then run the encoder MLP.
    pub fn encode(&self, channel: usize, x: &Matrix, mode: Mode) -> Result<Matrix> {
        if x.cols() != self.dims.input[channel] {
            return Err(PlatoError::shape(
                format!("encoder {channel}"),
                self.dims.input[channel],
                x.cols(),
            ));
        }
        let s = self.standardizer.apply(channel, x);
        Ok(self.encoders[channel].run(&s, self.dropout, mode, channel as u64).0)
    }

    /// Decodes one channel from the three latents.
    pub fn decode(&self, channel: usize, latents: [&Matrix; 3], mode: Mode) -> Result<Matrix> {
        for z in latents {
            if z.cols() != self.dims.latent {
                return Err(PlatoError::shape("decoder latent", self.dims.latent, z.cols()));
            }
        }
        check_rows(&latents)?;
        let agg = if self.use_attention {
            aggregate_latents(&self.attention[channel], latents)?.0
        } else {
            latents[channel].clone()
        };
        let out = self.decoders[channel].run(&agg, self.dropout, mode, 3 + channel as u64).0;
        Ok(self.standardizer.invert(channel, &out))
    }

    pub fn forward(&self, inputs: &[Matrix; 3], mode: Mode) -> Result<ForwardOutput> {
        self.forward_impl(inputs, mode, false)
    }

    /// Forward pass that records everything [`PlatoModel::backward`] needs.
    pub fn forward_traced(&self, inputs: &[Matrix; 3], mode: Mode) -> Result<ForwardOutput> {
        self.forward_impl(inputs, mode, true)
    }

    fn forward_impl(&self, inputs: &[Matrix; 3], mode: Mode, trace: bool) -> Result<ForwardOutput> {
        let n = self.check_inputs(inputs)?;
        let std_inputs = [0, 1, 2].map(|k| self.standardizer.apply(k, &inputs[k]));
        let mut enc_caches = Vec::with_capacity(CHANNELS);
        let mut latents = Vec::with_capacity(CHANNELS);
        for k in 0..CHANNELS {
            let (z, c) = self.encoders[k].run(&std_inputs[k], self.dropout, mode, k as u64);
            latents.push(z);
            enc_caches.push(c);
        }
        let latents: [Matrix; 3] = latents.try_into().expect("three channels");
        let cat = Matrix::hstack(&[&latents[0], &latents[1], &latents[2]]);

        let mut dec_caches = Vec::with_capacity(CHANNELS);
        let mut recon = Vec::with_capacity(CHANNELS);
        let mut weights = Vec::with_capacity(CHANNELS);
        for k in 0..CHANNELS {
            let (agg, w) = if self.use_attention {
                let w = softmax_rows(&self.attention[k].forward(&cat));
                (combine(&w, [&latents[0], &latents[1], &latents[2]]), w)
            } else {
                (latents[k].clone(), Matrix::from_fn(n, 3, |_, j| (j == k) as u8 as f64))
            };
            let (out, c) = self.decoders[k].run(&agg, self.dropout, mode, 3 + k as u64);
            recon.push(self.standardizer.invert(k, &out));
            weights.push(w);
            dec_caches.push(c);
        }
        Ok(ForwardOutput {
            latents,
            recon: recon.try_into().expect("three channels"),
            weights: weights.try_into().expect("three channels"),
            cache: trace.then_some(ForwardCache {
                std_inputs,
                enc: enc_caches,
                dec: dec_caches,
                cat,
            }),
        })
    }

    /// Reverse-mode gradients given upstream gradients on latents and reconstructions.
    pub fn backward(
        &self,
        out: &ForwardOutput,
        grad_latents: &[Matrix; 3],
        grad_recon: &[Matrix; 3],
    ) -> Result<Gradients> {
        let cache = out.cache.as_ref().ok_or_else(|| {
            PlatoError::State("backward called on an untraced forward pass".into())
        })?;
        for k in 0..CHANNELS {
            if grad_latents[k].shape() != out.latents[k].shape() {
                return Err(PlatoError::shape(
                    "latent gradient",
                    format!("{:?}", out.latents[k].shape()),
                    format!("{:?}", grad_latents[k].shape()),
                ));
            }
            if grad_recon[k].shape() != out.recon[k].shape() {
                return Err(PlatoError::shape(
                    "reconstruction gradient",
                    format!("{:?}", out.recon[k].shape()),
                    format!("{:?}", grad_recon[k].shape()),
                ));
            }
        }
        let mut grads = self.zeros_like();
        let n = out.latents[0].rows();
        let d = self.dims.latent;
        let mut gz: Vec<Matrix> = grad_latents.to_vec();

        for k in 0..CHANNELS {
            // through the output de-standardization
            let scale = &self.standardizer.scale[k];
            let gout = Matrix::from_fn(n, self.dims.input[k], |i, j| grad_recon[k][(i, j)] * scale[j]);
            let gagg = self.decoders[k].backward(&cache.dec[k], &gout, &mut grads.decoders[k]);
            if !self.use_attention {
                gz[k] = gz[k].add(&gagg);
                continue;
            }
            let w = &out.weights[k];
            let mut glogit = Matrix::zeros(n, CHANNELS);
            for i in 0..n {
                let ga = gagg.row(i);
                let mut gw = [0.0; CHANNELS];
                for j in 0..CHANNELS {
                    gw[j] = dot(ga, out.latents[j].row(i));
                    let wij = w[(i, j)];
                    for (g, &a) in gz[j].row_mut(i).iter_mut().zip(ga) {
                        *g += wij * a;
                    }
                }
                let mix: f64 = (0..CHANNELS).map(|j| w[(i, j)] * gw[j]).sum();
                for j in 0..CHANNELS {
                    glogit[(i, j)] = w[(i, j)] * (gw[j] - mix);
                }
            }
            let gcat = self.attention[k].backward(&cache.cat, &glogit, &mut grads.attention[k]);
            for i in 0..n {
                for j in 0..CHANNELS {
                    let src = &gcat.row(i)[j * d..(j + 1) * d];
                    for (g, &s) in gz[j].row_mut(i).iter_mut().zip(src) {
                        *g += s;
                    }
                }
            }
        }

        let mut ginputs = Vec::with_capacity(CHANNELS);
        for k in 0..CHANNELS {
            let gs = self.encoders[k].backward(&cache.enc[k], &gz[k], &mut grads.encoders[k]);
            debug_assert_eq!(gs.shape(), cache.std_inputs[k].shape());
            let scale = &self.standardizer.scale[k];
            ginputs.push(Matrix::from_fn(gs.rows(), gs.cols(), |i, j| gs[(i, j)] / scale[j]));
        }
        Ok(Gradients {
            params: ParamGrads(grads.tensors().into_iter().map(<[f64]>::to_vec).collect()),
            inputs: ginputs.try_into().expect("three channels"),
        })
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"PLATONT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// JSON header stored in front of the little-endian parameter payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub dims: ModelDims,
    pub use_attention: bool,
    pub dropout: f64,
    /// Number of trainable `f64` values at the start of the payload.
    pub param_count: usize,
    /// Number of standardizer `f64` values following the parameters.
    pub standardizer_len: usize,
    pub deviation_flags: Vec<String>,
    #[serde(default)]
    pub config: serde_json::Value,
}

/// Byte layout:
///
/// ```text
/// 0..8     magic "PLATONT\0"
/// 8..16    header length H (u64 LE)
/// 16..16+H header JSON (UTF-8)
/// then     param_count f64 LE       (tensors in `PlatoModel::tensors` order)
/// then     standardizer_len f64 LE  (mean[0..3] then scale[0..3])
/// ```
pub fn write_checkpoint(model: &PlatoModel, config: serde_json::Value, mut w: impl Write) -> Result<()> {
    let header = CheckpointHeader {
        format_version: CHECKPOINT_VERSION,
        dims: model.dims.clone(),
        use_attention: model.use_attention,
        dropout: model.dropout,
        param_count: model.param_count(),
        standardizer_len: model.standardizer.len(),
        deviation_flags: vec!["batchnorm_replaced_by_input_standardization".to_string()],
        config,
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    let s = &model.standardizer;
    let values = model
        .tensors()
        .into_iter()
        .flatten()
        .chain(s.mean.iter().flatten())
        .chain(s.scale.iter().flatten());
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint(mut r: impl Read) -> Result<(PlatoModel, CheckpointHeader)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(PlatoError::Format("not a checkpoint file".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let header: CheckpointHeader =
        serde_json::from_slice(&json).map_err(|e| PlatoError::Format(e.to_string()))?;
    let mut model = PlatoModel::new(header.dims.clone(), 0);
    model.use_attention = header.use_attention;
    model.dropout = header.dropout;
    if model.param_count() != header.param_count || model.standardizer.len() != header.standardizer_len {
        return Err(PlatoError::Format("checkpoint sizes disagree with dims".into()));
    }
    let mut buf = [0u8; 8];
    let mut next = |r: &mut dyn Read| -> Result<f64> {
        r.read_exact(&mut buf)?;
        Ok(f64::from_le_bytes(buf))
    };
    for t in model.tensors_mut() {
        for v in t.iter_mut() {
            *v = next(&mut r)?;
        }
    }
    for part in [&mut model.standardizer.mean, &mut model.standardizer.scale] {
        for ch in part.iter_mut() {
            for v in ch.iter_mut() {
                *v = next(&mut r)?;
            }
        }
    }
    Ok((model, header))
}

pub fn save_checkpoint(model: &PlatoModel, config: serde_json::Value, path: impl AsRef<FsPath>) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(model, config, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<FsPath>) -> Result<(PlatoModel, CheckpointHeader)> {
    read_checkpoint(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> PlatoModel {
        PlatoModel::new(
            ModelDims {
                input: [3, 2, 4],
                hidden: vec![5, 4],
                latent: 3,
            },
            1,
        )
    }

    fn batch(model: &PlatoModel, n: usize, seed: u64) -> [Matrix; 3] {
        let mut r = rng::stream(seed, "batch", 0);
        model.dims.input.map(|d| Matrix::from_fn(n, d, |_, _| r.random_range(-1.0..1.0)))
    }

    #[test]
    fn zero_encoder_gives_zero_latents() {
        let mut m = tiny();
        m.encoders = m.zeros_like().encoders;
        let x = batch(&m, 4, 0);
        let z = m.encode(0, &x[0], Mode::Eval).unwrap();
        assert!(z.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encode_shape_error_names_dims() {
        let m = tiny();
        let err = m.encode(0, &Matrix::zeros(2, 7), Mode::Eval).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('3') && msg.contains('7'), "{msg}");
    }

    #[test]
    fn eval_is_deterministic_train_uses_dropout_stream() {
        let m = tiny();
        let x = batch(&m, 6, 2);
        let a = m.forward(&x, Mode::Eval).unwrap();
        let b = m.forward(&x, Mode::Eval).unwrap();
        assert_eq!(a.recon, b.recon);
        let t1 = m.forward(&x, Mode::Train { seed: 5 }).unwrap();
        let t2 = m.forward(&x, Mode::Train { seed: 5 }).unwrap();
        assert_eq!(t1.recon, t2.recon);
    }

    #[test]
    fn uniform_attention_averages_latents() {
        let att = Linear::zeros(6, 3);
        let z = [
            Matrix::from_rows(&[vec![1.0, 2.0]]),
            Matrix::from_rows(&[vec![3.0, 0.0]]),
            Matrix::from_rows(&[vec![-1.0, 4.0]]),
        ];
        let (agg, w) = aggregate_latents(&att, [&z[0], &z[1], &z[2]]).unwrap();
        for j in 0..3 {
            assert!((w[(0, j)] - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((agg[(0, 0)] - 1.0).abs() < 1e-15 && (agg[(0, 1)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn saturated_attention_selects_delay() {
        let mut att = Linear::zeros(6, 3);
        att.bias = vec![50.0, -50.0, -50.0];
        let z = [
            Matrix::from_rows(&[vec![0.7, -0.2]]),
            Matrix::from_rows(&[vec![3.0, 9.0]]),
            Matrix::from_rows(&[vec![-1.0, 4.0]]),
        ];
        let (agg, _) = aggregate_latents(&att, [&z[0], &z[1], &z[2]]).unwrap();
        assert!(agg.max_abs_diff(&z[0]) < 1e-10);
        let bad = Matrix::zeros(2, 2);
        assert!(aggregate_latents(&att, [&z[0], &bad, &z[2]]).is_err());
    }

    #[test]
    fn zero_decoder_gives_zero_reconstruction() {
        let mut m = tiny();
        m.decoders = m.zeros_like().decoders;
        let out = m.forward(&batch(&m, 3, 1), Mode::Eval).unwrap();
        assert!(out.recon.iter().all(|r| r.as_slice().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn row_permutation_commutes() {
        let m = tiny();
        let x = batch(&m, 5, 3);
        let perm = [3, 0, 4, 1, 2];
        let xp = [0, 1, 2].map(|k| x[k].select_rows(&perm));
        let a = m.forward(&x, Mode::Eval).unwrap();
        let b = m.forward(&xp, Mode::Eval).unwrap();
        for k in 0..3 {
            assert_eq!(a.recon[k].select_rows(&perm), b.recon[k]);
        }
    }

    #[test]
    fn backward_needs_trace() {
        let m = tiny();
        let x = batch(&m, 2, 0);
        let out = m.forward(&x, Mode::Eval).unwrap();
        let gl = out.latents.clone();
        let gr = out.recon.clone();
        assert!(matches!(m.backward(&out, &gl, &gr), Err(PlatoError::State(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let m = tiny();
        let x = batch(&m, 3, 0);
        let out = m.forward_traced(&x, Mode::Train { seed: 1 }).unwrap();
        let gl = out.latents.clone().map(|z| z.scale(0.0));
        let gr = out.recon.clone().map(|z| z.scale(0.0));
        let g = m.backward(&out, &gl, &gr).unwrap();
        assert!(g.params.is_zero());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut m = tiny();
        m.standardizer.mean[1][0] = 0.25;
        let mut buf = Vec::new();
        write_checkpoint(&m, serde_json::json!({"k": 1}), &mut buf).unwrap();
        let (back, header) = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        assert_eq!(header.param_count, m.param_count());
        assert!(read_checkpoint(&b"garbage!garbage!"[..]).is_err());
    }
}
