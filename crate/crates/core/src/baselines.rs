//! Linear denoising baselines: PCA on the concatenated indicators and
//! pairwise CCA between indicator views. Both operate on per-feature
//! standardized data.

use serde::{Deserialize, Serialize};

use crate::error::{PlatoError, Result};
use crate::linalg::{dot, norm2, Cholesky, Matrix};
use crate::simkit::IndicatorSeries;
use crate::theorylab::symmetric_eigen;

pub const DEFAULT_RANK: usize = 32;
const WHITEN_RIDGE: f64 = 1e-6;
const PINV_RIDGE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Scaler {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Scaler {
    fn fit(x: &Matrix) -> Self {
        let scale = x.column_stds().into_iter().map(|s| if s > 1e-12 { s } else { 1.0 }).collect();
        Self { mean: x.column_means(), scale }
    }

    fn forward(&self, x: &Matrix) -> Matrix {
        Matrix::from_fn(x.rows(), x.cols(), |i, j| (x[(i, j)] - self.mean[j]) / self.scale[j])
    }

    fn inverse(&self, s: &Matrix) -> Matrix {
        Matrix::from_fn(s.rows(), s.cols(), |i, j| self.mean[j] + self.scale[j] * s[(i, j)])
    }
}

fn check_finite(x: &Matrix, what: &str) -> Result<()> {
    if x.all_finite() {
        Ok(())
    } else {
        Err(PlatoError::numeric(what, "non-finite input"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    scaler: Scaler,
    /// Principal directions as columns (`p × k`), orthonormal.
    pub components: Matrix,
    pub k: usize,
}

impl PcaModel {
    pub fn fit(x: &Matrix, k: usize) -> Result<Self> {
        check_finite(x, "pca")?;
        let (n, p) = x.shape();
        if k == 0 || k > p || k >= n {
            return Err(PlatoError::InvalidArgument(format!("pca rank k={k} must satisfy 1 <= k <= {p} and k < N={n}")));
        }
        let scaler = Scaler::fit(x);
        let cov = scaler.forward(x).covariance();
        let eig = symmetric_eigen(&cov)?;
        let idx: Vec<usize> = (0..k).collect();
        Ok(Self { scaler, components: eig.vectors.select_cols(&idx), k })
    }

    pub fn denoise(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.components.rows() {
            return Err(PlatoError::shape("pca input", self.components.rows(), x.cols()));
        }
        let s = self.scaler.forward(x);
        let proj = s.matmul(&self.components).matmul_t(&self.components);
        Ok(self.scaler.inverse(&proj))
    }
}

pub fn pca_fit_denoise(x: &Matrix, k: usize) -> Result<(PcaModel, Matrix)> {
    let model = PcaModel::fit(x, k)?;
    let out = model.denoise(x)?;
    Ok((model, out))
}

/// PCA on the concatenated indicators, split back per channel.
pub fn pca_denoise_series(series: &IndicatorSeries, k: usize) -> Result<IndicatorSeries> {
    let x = series.concatenated();
    let k = k.min(x.cols()).min(x.rows().saturating_sub(1));
    let (_, out) = pca_fit_denoise(&x, k)?;
    Ok(IndicatorSeries::from_concatenated(&out, series.dims()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcaModel {
    scaler_c: Scaler,
    scaler_d: Scaler,
    pub w_c: Matrix,
    pub w_d: Matrix,
    back_c: Matrix,
    back_d: Matrix,
    /// Canonical correlations, descending.
    pub correlations: Vec<f64>,
}

/// `(C + ρI)^{-1/2}` through the eigen-decomposition.
fn inverse_sqrt(cov: &Matrix) -> Result<Matrix> {
    let mut c = cov.clone();
    c.add_diag(WHITEN_RIDGE);
    let eig = symmetric_eigen(&c)?;
    let n = c.rows();
    let v = &eig.vectors;
    let inv: Vec<f64> = eig.values.iter().map(|&l| 1.0 / l.max(WHITEN_RIDGE).sqrt()).collect();
    Ok(Matrix::from_fn(n, n, |i, j| (0..n).map(|m| v[(i, m)] * inv[m] * v[(j, m)]).sum()))
}

fn cross_covariance(a: &Matrix, b: &Matrix) -> Matrix {
    let denom = (a.rows().max(2) - 1) as f64;
    a.t_matmul(b).scale(1.0 / denom)
}

pub fn cca_fit(view_c: &Matrix, view_d: &Matrix, k: usize) -> Result<CcaModel> {
    check_finite(view_c, "cca")?;
    check_finite(view_d, "cca")?;
    if view_c.rows() != view_d.rows() {
        return Err(PlatoError::shape("cca views", view_c.rows(), view_d.rows()));
    }
    let (p, q) = (view_c.cols(), view_d.cols());
    if k == 0 || k > p.min(q) {
        return Err(PlatoError::InvalidArgument(format!("cca rank k={k} must satisfy 1 <= k <= {}", p.min(q))));
    }
    let scaler_c = Scaler::fit(view_c);
    let scaler_d = Scaler::fit(view_d);
    let c = scaler_c.forward(view_c);
    let d = scaler_d.forward(view_d);
    let wc_full = inverse_sqrt(&c.covariance())?;
    let wd_full = inverse_sqrt(&d.covariance())?;
    let t = wc_full.matmul(&cross_covariance(&c, &d)).matmul(&wd_full);
    let eig = symmetric_eigen(&t.matmul_t(&t))?;
    let mut u = Matrix::zeros(p, k);
    let mut v = Matrix::zeros(q, k);
    let mut correlations = Vec::with_capacity(k);
    for j in 0..k {
        let sigma = eig.values[j].max(0.0).sqrt();
        correlations.push(sigma.min(1.0));
        let uj = eig.vectors.column(j);
        let vj = t.t_matvec(&uj);
        for i in 0..p {
            u[(i, j)] = uj[i];
        }
        if sigma > 1e-12 {
            for i in 0..q {
                v[(i, j)] = vj[i] / sigma;
            }
        }
    }
    let w_c = wc_full.matmul(&u);
    let w_d = wd_full.matmul(&v);
    // report the correlation actually achieved on the training views
    let (pc, pd) = (c.matmul(&w_c), d.matmul(&w_d));
    for (j, r) in correlations.iter_mut().enumerate() {
        let (a, b) = (pc.column(j), pd.column(j));
        let (na, nb) = (norm2(&a), norm2(&b));
        if na > 0.0 && nb > 0.0 {
            *r = (dot(&a, &b) / (na * nb)).clamp(0.0, 1.0);
        }
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| correlations[j].total_cmp(&correlations[i]));
    let w_c = w_c.select_cols(&order);
    let w_d = w_d.select_cols(&order);
    Ok(CcaModel {
        back_c: back_projection(&c, &w_c)?,
        back_d: back_projection(&d, &w_d)?,
        scaler_c,
        scaler_d,
        w_c,
        w_d,
        correlations: order.iter().map(|&i| correlations[i]).collect(),
    })
}

/// Least-squares map from canonical variates back to the view,
/// `B = (WᵀΣW + ρI)⁻¹ WᵀΣ`, so that `x ≈ (xW)B`.
fn back_projection(x: &Matrix, w: &Matrix) -> Result<Matrix> {
    let cov = x.covariance();
    let sw = cov.matmul(w);
    let mut gram = w.t_matmul(&sw);
    let scale = (0..gram.rows()).map(|i| gram[(i, i)]).fold(0.0, f64::max).max(1e-300);
    gram.add_diag(PINV_RIDGE * scale);
    Ok(Cholesky::factor(&gram)?.solve_matrix(&sw.transpose()))
}

pub fn cca_denoise(model: &CcaModel, view_c: &Matrix, view_d: &Matrix) -> Result<(Matrix, Matrix)> {
    if view_c.cols() != model.w_c.rows() || view_d.cols() != model.w_d.rows() {
        return Err(PlatoError::shape("cca views", model.w_c.rows(), view_c.cols()));
    }
    let c = model.scaler_c.forward(view_c).matmul(&model.w_c).matmul(&model.back_c);
    let d = model.scaler_d.forward(view_d).matmul(&model.w_d).matmul(&model.back_d);
    Ok((model.scaler_c.inverse(&c), model.scaler_d.inverse(&d)))
}

/// Pairwise CCA on (delay, loss) and (delay, bandwidth); the delay view is
/// the average of its two reconstructions.
pub fn cca_denoise_series(series: &IndicatorSeries, k: usize) -> Result<IndicatorSeries> {
    let [delay, loss, bw] = &series.channels;
    let k1 = k.min(delay.cols()).min(loss.cols());
    let k2 = k.min(delay.cols()).min(bw.cols());
    let m1 = cca_fit(delay, loss, k1)?;
    let (d1, l) = cca_denoise(&m1, delay, loss)?;
    let m2 = cca_fit(delay, bw, k2)?;
    let (d2, b) = cca_denoise(&m2, delay, bw)?;
    Ok(IndicatorSeries { channels: [d1.add(&d2).scale(0.5), l, b] })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng as _;

    fn random(n: usize, p: usize, seed: u64) -> Matrix {
        let mut r = rng::stream(seed, "test", 0);
        Matrix::from_fn(n, p, |_, _| r.random_range(-1.0..1.0))
    }

    #[test]
    fn pca_subspace_exact() {
        let basis = random(2, 5, 1);
        let coef = random(40, 2, 2);
        let x = coef.matmul(&basis);
        let (_, out) = pca_fit_denoise(&x, 2).unwrap();
        assert!(out.max_abs_diff(&x) < 1e-8);
        let y = random(30, 4, 3);
        let (_, full) = pca_fit_denoise(&y, 4).unwrap();
        assert!(full.max_abs_diff(&y) < 1e-9);
        assert!(pca_fit_denoise(&y, 5).is_err());
    }

    #[test]
    fn cca_same_view_perfect() {
        let x = random(60, 3, 4);
        let m = cca_fit(&x, &x, 3).unwrap();
        assert!(m.correlations.iter().all(|&c| (c - 1.0).abs() < 1e-6), "{:?}", m.correlations);
        let (c, d) = cca_denoise(&m, &x, &x).unwrap();
        assert!(c.max_abs_diff(&x) < 1e-4 && d.max_abs_diff(&x) < 1e-4);
    }
}
