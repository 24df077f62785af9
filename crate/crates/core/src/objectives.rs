//! Loss terms and their gradients with respect to latents and reconstructions.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{PlatoError, Result};
use crate::linalg::{dot, norm2, Cholesky, Matrix};

pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RecMode {
    #[default]
    HuberNormalized,
    PlainMse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_align: f64,
    pub lambda_rec: f64,
    pub lambda_task: f64,
    pub tau: f64,
    pub huber_delta: f64,
    pub rec_mode: RecMode,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_align: 1.0,
            lambda_rec: 2.0,
            lambda_task: 0.0,
            tau: 0.7,
            huber_delta: 1.0,
            rec_mode: RecMode::HuberNormalized,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.lambda_align, self.lambda_rec, self.lambda_task];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(PlatoError::InvalidArgument(format!("loss weights must be >= 0, got {w:?}")));
        }
        if !(self.tau > 0.0) || !(self.huber_delta > 0.0) {
            return Err(PlatoError::InvalidArgument("tau and huber_delta must be positive".into()));
        }
        Ok(())
    }
}

/// Contrastive alignment across every ordered channel pair.
///
/// `L = -(1/N) Σ_{i≠j} Σ_n log[ exp(s_nn/τ) / ((1/N) Σ_m exp(s_nm/τ)) ]`
/// with `s` the cosine similarity between row `n` of channel `i` and row `m`
/// of channel `j`. Returns the value and `∂L/∂z` per channel.
pub fn alignment_loss(latents: &[&Matrix], tau: f64) -> Result<(f64, Vec<Matrix>)> {
    if latents.len() < 2 {
        return Err(PlatoError::InvalidArgument("alignment needs at least two channels".into()));
    }
    if !(tau > 0.0) {
        return Err(PlatoError::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    let (n, d) = latents[0].shape();
    if n < 2 {
        return Err(PlatoError::InvalidArgument(format!("alignment needs N >= 2, got {n}")));
    }
    for z in latents {
        if z.shape() != (n, d) {
            return Err(PlatoError::shape("latent batch", format!("{n}x{d}"), format!("{}x{}", z.rows(), z.cols())));
        }
    }
    // unit rows and norms
    let mut units = Vec::with_capacity(latents.len());
    let mut norms = Vec::with_capacity(latents.len());
    for (c, z) in latents.iter().enumerate() {
        let mut u = (*z).clone();
        let mut ns = Vec::with_capacity(n);
        for r in 0..n {
            let len = norm2(z.row(r));
            if !(len > 0.0) || !len.is_finite() {
                return Err(PlatoError::DegenerateEmbedding { channel: c, row: r });
            }
            u.row_mut(r).iter_mut().for_each(|v| *v /= len);
            ns.push(len);
        }
        units.push(u);
        norms.push(ns);
    }
    let nf = n as f64;
    let mut value = 0.0;
    let mut grads: Vec<Matrix> = latents.iter().map(|_| Matrix::zeros(n, d)).collect();
    for i in 0..latents.len() {
        for j in 0..latents.len() {
            if i == j {
                continue;
            }
            let s = units[i].matmul_t(&units[j]);
            // G_nm = dL/dS_nm
            let mut g = Matrix::zeros(n, n);
            for a in 0..n {
                let row = s.row(a);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max) / tau;
                let sum: f64 = row.iter().map(|v| (v / tau - max).exp()).sum();
                let log_mean = max + sum.ln() - nf.ln();
                value += row[a] / tau - log_mean;
                for (b, gv) in g.row_mut(a).iter_mut().enumerate() {
                    let p = (row[b] / tau - max).exp() / sum;
                    let delta = (a == b) as u8 as f64;
                    *gv = -(delta - p) / (tau * nf);
                }
            }
            // chain through cosine similarity
            for a in 0..n {
                let gs = g.row(a);
                let sr = s.row(a);
                let coef: f64 = gs.iter().zip(sr).map(|(x, y)| x * y).sum();
                let inv = 1.0 / norms[i][a];
                let ua: Vec<f64> = units[i].row(a).to_vec();
                let out = grads[i].row_mut(a);
                for b in 0..n {
                    if gs[b] == 0.0 {
                        continue;
                    }
                    for (o, &v) in out.iter_mut().zip(units[j].row(b)) {
                        *o += gs[b] * v * inv;
                    }
                }
                for (o, &u) in out.iter_mut().zip(&ua) {
                    *o -= coef * u * inv;
                }
            }
            for b in 0..n {
                let inv = 1.0 / norms[j][b];
                let mut coef = 0.0;
                let mut acc = vec![0.0; d];
                for a in 0..n {
                    let gab = g[(a, b)];
                    coef += gab * s[(a, b)];
                    for (o, &u) in acc.iter_mut().zip(units[i].row(a)) {
                        *o += gab * u;
                    }
                }
                let vb = units[j].row(b);
                for ((o, acc), &v) in grads[j].row_mut(b).iter_mut().zip(&acc).zip(vb) {
                    *o += (acc - coef * v) * inv;
                }
            }
        }
    }
    Ok((-value / nf, grads))
}

fn huber(r: f64, delta: f64) -> (f64, f64) {
    if r.abs() <= delta {
        (0.5 * r * r, r)
    } else {
        (delta * (r.abs() - 0.5 * delta), delta * r.signum())
    }
}

/// Per-batch inputs for the reconstruction loss of one indicator.
pub struct RecBatch<'a> {
    pub recon: &'a Matrix,
    pub noisy: &'a Matrix,
    pub clean: &'a Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecOutput {
    pub value: f64,
    pub grads: Vec<Matrix>,
    /// Per-indicator scale actually used (1 in plain mode).
    pub sigma: Vec<f64>,
    /// Indicators whose scale hit the floor.
    pub floored: Vec<usize>,
}

fn pooled_std(m: &Matrix, rows: &[usize]) -> f64 {
    let vals: Vec<f64> = rows.iter().flat_map(|&r| m.row(r).iter().copied()).collect();
    if vals.is_empty() {
        return 0.0;
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64).sqrt()
}

/// Hybrid reconstruction loss. Labeled rows are pulled towards the clean
/// target, the rest towards their own noisy observation; the two
/// expectations are taken separately and summed.
///
/// In Huber mode every indicator's term is divided by `max(σ_k, 1e-6)`, the
/// batch std of the clean labeled targets (of the noisy targets if the batch
/// has no labeled rows), and the indicators are averaged.
pub fn reconstruction_loss(batches: &[RecBatch<'_>], labeled: &[bool], weights: &LossWeights) -> Result<RecOutput> {
    let n = labeled.len();
    let clean_rows: Vec<usize> = (0..n).filter(|&r| labeled[r]).collect();
    let noisy_rows: Vec<usize> = (0..n).filter(|&r| !labeled[r]).collect();
    let mut out = RecOutput {
        value: 0.0,
        grads: Vec::with_capacity(batches.len()),
        sigma: Vec::with_capacity(batches.len()),
        floored: Vec::new(),
    };
    let huber_mode = weights.rec_mode == RecMode::HuberNormalized;
    for (k, b) in batches.iter().enumerate() {
        let shape = b.recon.shape();
        if shape.0 != n || b.noisy.shape() != shape || b.clean.shape() != shape {
            return Err(PlatoError::shape(
                format!("reconstruction batch {k}"),
                format!("{n}x{}", shape.1),
                format!("{:?}/{:?}/{:?}", shape, b.noisy.shape(), b.clean.shape()),
            ));
        }
        let d = shape.1 as f64;
        let sigma = if huber_mode {
            let raw = if clean_rows.is_empty() { pooled_std(b.noisy, &noisy_rows) } else { pooled_std(b.clean, &clean_rows) };
            if raw < SIGMA_FLOOR {
                log::warn!("indicator {k}: constant targets in batch, scale floored at {SIGMA_FLOOR}");
                out.floored.push(k);
            }
            raw.max(SIGMA_FLOOR)
        } else {
            1.0
        };
        let mut g = Matrix::zeros(shape.0, shape.1);
        let mut term = 0.0;
        for (rows, target) in [(&clean_rows, b.clean), (&noisy_rows, b.noisy)] {
            if rows.is_empty() {
                continue;
            }
            let count = rows.len() as f64;
            for &r in rows.iter() {
                for c in 0..shape.1 {
                    let res = b.recon[(r, c)] - target[(r, c)];
                    if huber_mode {
                        let (v, dv) = huber(res, weights.huber_delta);
                        term += v / (count * d);
                        g[(r, c)] = dv / (count * d);
                    } else {
                        term += res * res / count;
                        g[(r, c)] = 2.0 * res / count;
                    }
                }
            }
        }
        let factor = if huber_mode { 1.0 / (sigma * batches.len() as f64) } else { 1.0 };
        out.value += term * factor;
        out.grads.push(g.scale(factor));
        out.sigma.push(sigma);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Link,
    Od,
    Topo,
}

impl std::str::FromStr for TaskKind {
    type Err = PlatoError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "link" => Ok(Self::Link),
            "od" => Ok(Self::Od),
            "topo" => Ok(Self::Topo),
            other => Err(PlatoError::InvalidArgument(format!("unknown task '{other}'"))),
        }
    }
}

/// Differentiable affine task head `Γ(x) = M x + c`, built from closed-form
/// ridge solves so gradients pass straight through.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSurrogate {
    pub task: TaskKind,
    pub operator: Matrix,
    pub offset: Vec<f64>,
}

/// `(RᵀR + λI)⁻¹ Rᵀ`.
pub fn ridge_operator(r: &Matrix, lambda: f64) -> Result<Matrix> {
    let mut gram = r.t_matmul(r);
    gram.add_diag(lambda);
    let chol = Cholesky::factor(&gram).map_err(|_| {
        PlatoError::RankDeficient("normal equations are singular; use a positive ridge".into())
    })?;
    Ok(chol.solve_matrix(&r.transpose()))
}

impl LinearSurrogate {
    /// Path delays to link delays.
    pub fn link(routing: &Matrix, lambda: f64) -> Result<Self> {
        Ok(Self {
            task: TaskKind::Link,
            operator: ridge_operator(routing, lambda)?,
            offset: vec![0.0; routing.cols()],
        })
    }

    /// Path delays to OD flows through a first-order load model
    /// `load_l ≈ cap_l (d_l/d0_l − 1) / 4`, then the ridge inverse of the
    /// link-by-pair incidence `od_routing`.
    pub fn od(routing: &Matrix, base_delay: &[f64], capacity: &[f64], od_routing: &Matrix, lambda: f64) -> Result<Self> {
        if base_delay.len() != routing.cols() || capacity.len() != routing.cols() || od_routing.rows() != routing.cols() {
            return Err(PlatoError::shape("od surrogate", routing.cols(), base_delay.len()));
        }
        let to_link = ridge_operator(routing, lambda)?;
        let to_pair = ridge_operator(od_routing, lambda)?;
        let scale: Vec<f64> = base_delay.iter().zip(capacity).map(|(d0, c)| c / (4.0 * d0)).collect();
        let scaled = Matrix::from_fn(to_link.rows(), to_link.cols(), |i, j| scale[i] * to_link[(i, j)]);
        let link_offset: Vec<f64> = capacity.iter().map(|c| -c / 4.0).collect();
        Ok(Self {
            task: TaskKind::Od,
            operator: to_pair.matmul(&scaled),
            offset: to_pair.matvec(&link_offset),
        })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.operator.matvec(x);
        y.iter_mut().zip(&self.offset).for_each(|(v, c)| *v += c);
        y
    }
}

/// Mean over rows of `‖Γ(x̂_n) − y_n‖²` and its gradient in `x̂`.
pub fn task_loss(recon: &Matrix, labels: &Matrix, surrogate: Option<&LinearSurrogate>, task: TaskKind) -> Result<(f64, Matrix)> {
    let gamma = match (task, surrogate) {
        (TaskKind::Topo, _) => {
            return Err(PlatoError::UnsupportedTask("topology inference has no differentiable surrogate".into()))
        }
        (_, None) => return Err(PlatoError::UnsupportedTask(format!("{task:?} task needs a surrogate"))),
        (_, Some(s)) if s.task != task => {
            return Err(PlatoError::InvalidArgument(format!("surrogate built for {:?}, asked for {task:?}", s.task)))
        }
        (_, Some(s)) => s,
    };
    if recon.cols() != gamma.operator.cols() || labels.cols() != gamma.operator.rows() || labels.rows() != recon.rows() {
        return Err(PlatoError::shape(
            "task batch",
            format!("{}x{} -> {}", recon.rows(), gamma.operator.cols(), gamma.operator.rows()),
            format!("{}x{} -> {}x{}", recon.rows(), recon.cols(), labels.rows(), labels.cols()),
        ));
    }
    let n = recon.rows() as f64;
    let mut value = 0.0;
    let mut grad = Matrix::zeros(recon.rows(), recon.cols());
    for r in 0..recon.rows() {
        let res: Vec<f64> = gamma.apply(recon.row(r)).iter().zip(labels.row(r)).map(|(a, b)| a - b).collect();
        value += dot(&res, &res) / n;
        let g = gamma.operator.t_matvec(&res);
        grad.row_mut(r).iter_mut().zip(g).for_each(|(o, v)| *o = 2.0 * v / n);
    }
    Ok((value, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub align: f64,
    pub rec: f64,
    pub task: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub align: f64,
    pub rec: f64,
    pub task: f64,
    pub total: f64,
    pub sigma: Vec<f64>,
}

pub fn total_loss(parts: LossParts, weights: &LossWeights, sigma: Vec<f64>) -> Result<LossReport> {
    for (name, v) in [("align", parts.align), ("rec", parts.rec), ("task", parts.task)] {
        if !v.is_finite() {
            return Err(PlatoError::numeric(name, format!("loss component is {v}")));
        }
    }
    let task = if weights.lambda_task == 0.0 { 0.0 } else { weights.lambda_task * parts.task };
    Ok(LossReport {
        align: parts.align,
        rec: parts.rec,
        task: parts.task,
        total: weights.lambda_align * parts.align + weights.lambda_rec * parts.rec + task,
        sigma,
    })
}

/// One row of the training CSV log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub align: f64,
    pub rec: f64,
    pub task: f64,
    pub total: f64,
    pub lr: f64,
}

pub const LOG_HEADER: &str = "step,L_align,L_rec,L_task,L_total,lr";

pub fn format_log(rows: &[LogRow]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{},{}", r.step, r.align, r.rec, r.task, r.total, r.lr);
    }
    s
}

pub fn write_log(rows: &[LogRow], mut w: impl Write) -> Result<()> {
    w.write_all(format_log(rows).as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_embeddings_zero() {
        let z = Matrix::from_rows(&vec![vec![1.0, 2.0, 3.0]; 4]);
        let (v, g) = alignment_loss(&[&z, &z, &z], 0.7).unwrap();
        assert!(v.abs() < 1e-12);
        assert!(g.iter().all(|m| m.as_slice().iter().all(|x| x.abs() < 1e-12)));
    }

    #[test]
    fn orthonormal_pair_anchor() {
        let z = Matrix::identity(2);
        let (v, _) = alignment_loss(&[&z, &z], 1.0).unwrap();
        assert!((v + 0.75977).abs() < 1e-4, "{v}");
        let rotated = z.select_rows(&[1, 0]);
        let (w, _) = alignment_loss(&[&z, &rotated], 1.0).unwrap();
        assert!(w >= v);
    }

    #[test]
    fn zero_row_is_degenerate() {
        let a = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]);
        let b = Matrix::identity(2);
        let err = alignment_loss(&[&b, &a], 1.0).unwrap_err();
        assert!(matches!(err, PlatoError::DegenerateEmbedding { channel: 1, row: 1 }));
    }

    #[test]
    fn huber_single_residual() {
        let recon = Matrix::from_rows(&[vec![0.5]]);
        let zero = Matrix::zeros(1, 1);
        let w = LossWeights::default();
        // one labeled row, clean target 0; scale floors because a single value has zero spread
        let out = reconstruction_loss(&[RecBatch { recon: &recon, noisy: &zero, clean: &zero }], &[true], &w).unwrap();
        assert_eq!(out.floored, vec![0]);
        assert!((out.value * SIGMA_FLOOR - 0.125).abs() < 1e-12);
    }

    #[test]
    fn perfect_reconstruction_zero_both_modes() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 5.0]]);
        for mode in [RecMode::HuberNormalized, RecMode::PlainMse] {
            let w = LossWeights { rec_mode: mode, ..Default::default() };
            let out = reconstruction_loss(&[RecBatch { recon: &x, noisy: &x, clean: &x }], &[true, false], &w).unwrap();
            assert_eq!(out.value, 0.0);
        }
    }

    #[test]
    fn totals() {
        let w = LossWeights { lambda_task: 1.0, ..Default::default() };
        let r = total_loss(LossParts { align: 1.0, rec: 2.0, task: 3.0 }, &w, vec![]).unwrap();
        assert_eq!(r.total, 8.0);
        let z = LossWeights { lambda_align: 0.0, lambda_rec: 0.0, lambda_task: 0.0, ..Default::default() };
        assert_eq!(total_loss(LossParts { align: 1.0, rec: 2.0, task: 3.0 }, &z, vec![]).unwrap().total, 0.0);
        let d = LossWeights::default();
        assert_eq!((d.lambda_align, d.lambda_rec), (1.0, 2.0));
        let err = total_loss(LossParts { align: 0.0, rec: f64::NAN, task: 0.0 }, &w, vec![]).unwrap_err();
        assert!(err.to_string().contains("rec"));
    }

    #[test]
    fn identity_task_gradient() {
        let r = Matrix::identity(1);
        let s = LinearSurrogate::link(&r, 0.0).unwrap();
        let x = Matrix::from_rows(&[vec![3.0]]);
        let y = Matrix::from_rows(&[vec![1.0]]);
        let (v, g) = task_loss(&x, &y, Some(&s), TaskKind::Link).unwrap();
        assert_eq!(v, 4.0);
        assert_eq!(g[(0, 0)], 4.0);
        let (v0, _) = task_loss(&y, &y, Some(&s), TaskKind::Link).unwrap();
        assert_eq!(v0, 0.0);
        assert!(matches!(task_loss(&x, &y, Some(&s), TaskKind::Topo), Err(PlatoError::UnsupportedTask(_))));
    }

    #[test]
    fn log_header() {
        let s = format_log(&[LogRow { step: 1, align: 0.5, rec: 1.0, task: 0.0, total: 2.5, lr: 1e-3 }]);
        assert!(s.starts_with("step,L_align,L_rec,L_task,L_total,lr\n1,0.5,1,0,2.5,0.001"));
    }
}
