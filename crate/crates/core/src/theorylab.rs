//! Symmetric eigensolver plus executable checks of the PMI-kernel shift
//! bound and the shared-subspace gradient bound.
//!
//! Note on symbols: `epsilon` in this module is always the off-diagonal
//! smoothness width of a PMI matrix (or the subspace residual ratio for
//! gradient bundles), never the measurement noise used by the simulator.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{PlatoError, Result};
use crate::linalg::{dot, Matrix};
use crate::rng;

const MAX_SWEEPS: usize = 100;

/// Eigen-decomposition with eigenvalues sorted in descending order and the
/// matching orthonormal eigenvectors stored as columns.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Matrix,
}

fn check_symmetric(m: &Matrix) -> Result<()> {
    if m.rows() != m.cols() {
        return Err(PlatoError::Validation(format!(
            "eigensolver needs a square matrix, got {:?}",
            m.shape()
        )));
    }
    let scale = m.as_slice().iter().fold(1.0f64, |a, v| a.max(v.abs()));
    if !m.is_symmetric(1e-10 * scale) {
        return Err(PlatoError::Validation("matrix is not symmetric".into()));
    }
    if !m.all_finite() {
        return Err(PlatoError::numeric("symmetric_eigen", "non-finite entry"));
    }
    Ok(())
}

/// Cyclic Jacobi sweeps until the off-diagonal Frobenius mass drops below
/// `1e-12 · ‖M‖_F`.
fn jacobi(m: &Matrix, want_vectors: bool) -> (Vec<f64>, Option<Matrix>) {
    let n = m.rows();
    let mut a = m.clone();
    // symmetrize exactly so the rotations see one consistent matrix
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = avg;
            a[(j, i)] = avg;
        }
    }
    let mut v = want_vectors.then(|| Matrix::identity(n));
    let total = a.frobenius_norm();
    let target = 1e-12 * total;

    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += a[(i, j)] * a[(i, j)];
                }
            }
        }
        if off.sqrt() <= target || total == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;

                if let Some(v) = v.as_mut() {
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }
    }
    ((0..n).map(|i| a[(i, i)]).collect(), v)
}

pub fn symmetric_eigen(m: &Matrix) -> Result<SymmetricEigen> {
    check_symmetric(m)?;
    let (values, vectors) = jacobi(m, true);
    let vectors = vectors.expect("vectors requested");
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]));
    Ok(SymmetricEigen {
        values: order.iter().map(|&i| values[i]).collect(),
        vectors: vectors.select_cols(&order),
    })
}

/// Eigenvalues only, descending.
pub fn symmetric_eigenvalues(m: &Matrix) -> Result<Vec<f64>> {
    check_symmetric(m)?;
    let (mut values, _) = jacobi(m, false);
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(values)
}

pub fn min_eigenvalue(m: &Matrix) -> Result<f64> {
    Ok(*symmetric_eigenvalues(m)?
        .last()
        .ok_or_else(|| PlatoError::InvalidArgument("empty matrix".into()))?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PmiProvenance {
    Counts,
    Synthetic { rho_min: f64, epsilon: f64 },
}

/// Symmetric matrix of pointwise mutual information values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PmiMatrix {
    pub k: Matrix,
    pub provenance: PmiProvenance,
}

impl PmiMatrix {
    pub fn new(k: Matrix, provenance: PmiProvenance) -> Result<Self> {
        if k.rows() != k.cols() || k.rows() == 0 {
            return Err(PlatoError::Validation("PMI matrix must be square and nonempty".into()));
        }
        if !k.is_symmetric(1e-12) {
            return Err(PlatoError::Validation("PMI matrix must be symmetric".into()));
        }
        if !(0..k.rows()).all(|i| k[(i, i)].is_finite()) {
            return Err(PlatoError::Validation("PMI diagonal must be finite".into()));
        }
        Ok(Self { k, provenance })
    }

    pub fn n(&self) -> usize {
        self.k.rows()
    }

    /// `max_{i≠j} |K_ij|`
    pub fn alpha(&self) -> f64 {
        let n = self.n();
        let mut a = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    a = a.max(self.k[(i, j)].abs());
                }
            }
        }
        a
    }

    pub fn min_diag(&self) -> f64 {
        (0..self.n()).map(|i| self.k[(i, i)]).fold(f64::INFINITY, f64::min)
    }

    fn off_diag_range(&self) -> Option<(f64, f64)> {
        let n = self.n();
        if n < 2 {
            return None;
        }
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    lo = lo.min(self.k[(i, j)]);
                    hi = hi.max(self.k[(i, j)]);
                }
            }
        }
        Some((lo, hi))
    }

    /// Feature rows `f(x_i)` with `⟨f(x_i), f(x_j)⟩ = K_ij + shift`, available
    /// when `K + shift·I` is PSD.
    pub fn feature_map(&self, shift: f64) -> Result<Matrix> {
        let mut shifted = self.k.clone();
        shifted.add_diag(shift);
        let eig = symmetric_eigen(&shifted)?;
        let scale = eig.values.first().map_or(1.0, |v| v.abs().max(1.0));
        if eig.values.iter().any(|&l| l < -1e-8 * scale) {
            return Err(PlatoError::numeric(
                "feature_map",
                "shifted kernel is not positive semi-definite",
            ));
        }
        let n = self.n();
        Ok(Matrix::from_fn(n, n, |i, j| {
            eig.vectors[(i, j)] * eig.values[j].max(0.0).sqrt()
        }))
    }
}

/// Empirical PMI from a symmetric co-occurrence table with +1 Laplace smoothing.
pub fn pmi_from_counts(counts: &[Vec<u64>]) -> Result<PmiMatrix> {
    let n = counts.len();
    if n == 0 || counts.iter().any(|r| r.len() != n) {
        return Err(PlatoError::InvalidArgument("counts must be a square table".into()));
    }
    let total_raw: u64 = counts.iter().flatten().sum();
    if total_raw == 0 {
        return Err(PlatoError::InvalidArgument("all co-occurrence counts are zero".into()));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if counts[i][j] != counts[j][i] {
                return Err(PlatoError::Validation(format!(
                    "co-occurrence counts must be symmetric; ({i},{j}) differs"
                )));
            }
        }
    }
    let smoothed = Matrix::from_fn(n, n, |i, j| counts[i][j] as f64 + 1.0);
    let total: f64 = smoothed.as_slice().iter().sum();
    let row: Vec<f64> = (0..n).map(|i| smoothed.row(i).iter().sum::<f64>() / total).collect();
    let col: Vec<f64> = (0..n)
        .map(|j| (0..n).map(|i| smoothed[(i, j)]).sum::<f64>() / total)
        .collect();
    let k = Matrix::from_fn(n, n, |i, j| {
        ((smoothed[(i, j)] / total) / (row[i] * col[j])).ln()
    });
    PmiMatrix::new(k, PmiProvenance::Counts)
}

/// Outcome of checking the smoothness-based PSD condition (part II).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SmoothnessCheck {
    pub rho_min: f64,
    pub epsilon: f64,
    pub a1_holds: bool,
    pub a2_holds: bool,
    pub epsilon_condition: bool,
    /// `None` unless all three conditions hold.
    pub min_eig_psd: Option<bool>,
}

impl SmoothnessCheck {
    pub fn precondition_holds(&self) -> bool {
        self.a1_holds && self.a2_holds && self.epsilon_condition
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShiftReport {
    pub n: usize,
    pub alpha: f64,
    pub min_diag: f64,
    pub c_bound: f64,
    pub min_eig_k: f64,
    pub min_eig_shifted: f64,
    pub shift_certified: bool,
    pub smoothness: Option<SmoothnessCheck>,
}

pub const PSD_TOL: f64 = 1e-8;

fn smoothness_check(pmi: &PmiMatrix, min_eig: f64) -> Option<SmoothnessCheck> {
    let n = pmi.n() as f64;
    let (rho_min, epsilon) = match pmi.provenance {
        PmiProvenance::Synthetic { rho_min, epsilon } => (rho_min, epsilon),
        PmiProvenance::Counts => {
            // Fit the tightest (ρ_min, ε) the off-diagonals admit, then widen ε
            // to the smallest value meeting ε ≥ N|log ρ_min|.
            let (lo, hi) = pmi.off_diag_range()?;
            let log_rho = lo.min(0.0);
            let eps_fit = hi - log_rho;
            (log_rho.exp(), eps_fit.max(n * log_rho.abs()))
        }
    };
    if !(rho_min > 0.0 && rho_min <= 1.0) {
        return None;
    }
    let log_rho = rho_min.ln();
    let tol = 1e-12;
    let k = &pmi.k;
    let mut a1 = true;
    let mut a2 = true;
    for i in 0..pmi.n() {
        if k[(i, i)] < n * epsilon + log_rho - tol {
            a2 = false;
        }
        for j in 0..pmi.n() {
            if i != j && (k[(i, j)] < log_rho - tol || k[(i, j)] > log_rho + epsilon + tol) {
                a1 = false;
            }
        }
    }
    let epsilon_condition = epsilon >= n * log_rho.abs();
    let holds = a1 && a2 && epsilon_condition;
    Some(SmoothnessCheck {
        rho_min,
        epsilon,
        a1_holds: a1,
        a2_holds: a2,
        epsilon_condition,
        min_eig_psd: holds.then_some(min_eig >= -PSD_TOL),
    })
}

/// Computes the explicit shift `C = max(0, (N−1)α − min_i K_ii)` and
/// certifies `K + C·I ⪰ 0` numerically.
pub fn theorem1_shift(pmi: &PmiMatrix) -> Result<ShiftReport> {
    let n = pmi.n();
    let alpha = pmi.alpha();
    let min_diag = pmi.min_diag();
    let c_bound = (((n - 1) as f64) * alpha - min_diag).max(0.0);
    let min_eig_k = min_eigenvalue(&pmi.k)?;
    let mut shifted = pmi.k.clone();
    shifted.add_diag(c_bound);
    let min_eig_shifted = min_eigenvalue(&shifted)?;
    Ok(ShiftReport {
        n,
        alpha,
        min_diag,
        c_bound,
        min_eig_k,
        min_eig_shifted,
        shift_certified: min_eig_shifted >= -PSD_TOL,
        smoothness: smoothness_check(pmi, min_eig_k),
    })
}

/// Random PMI matrix satisfying the smoothness assumptions (A1) and (A2).
pub fn build_a1a2_instance(n: usize, rho_min: f64, epsilon: f64, seed: u64) -> Result<PmiMatrix> {
    if n < 2 {
        return Err(PlatoError::InvalidArgument("N must be at least 2".into()));
    }
    if !(rho_min > 0.0 && rho_min <= 1.0) || epsilon < 0.0 || !epsilon.is_finite() {
        return Err(PlatoError::InvalidArgument(format!(
            "need ρ_min ∈ (0,1] and ε ≥ 0, got ρ_min={rho_min}, ε={epsilon}"
        )));
    }
    let mut rng = rng::stream(seed, "a1a2", n as u64);
    let log_rho = rho_min.ln();
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = n as f64 * epsilon + log_rho + rng.random::<f64>();
        for j in (i + 1)..n {
            let v = log_rho + epsilon * rng.random::<f64>();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    PmiMatrix::new(k, PmiProvenance::Synthetic { rho_min, epsilon })
}

/// Component gradients `g_1..g_m` with their combination weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradientBundle {
    pub grads: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// Residual ratio target used to pick the subspace dimension.
    pub epsilon_target: f64,
}

pub const DEFAULT_EPSILON_TARGET: f64 = 0.05;

impl GradientBundle {
    pub fn new(grads: Vec<Vec<f64>>, weights: Vec<f64>) -> Self {
        Self {
            grads,
            weights,
            epsilon_target: DEFAULT_EPSILON_TARGET,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Prop1Report {
    pub m: usize,
    pub r: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub eta: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// `‖λ‖²·Σ‖g_i‖²`, the bound without the subspace factor.
    pub naive_rhs: f64,
    pub holds: bool,
}

/// Measures `(r, ε, δ, η)` from the gradients and evaluates
/// `‖Aλ‖² ≤ (1+η)(1+δ)/r · ‖λ‖² Σ‖g_i‖²`.
pub fn proposition1_check(bundle: &GradientBundle) -> Result<Prop1Report> {
    let m = bundle.grads.len();
    if m == 0 || bundle.weights.len() != m {
        return Err(PlatoError::InvalidArgument(format!(
            "need m ≥ 1 gradients with m weights (got {m} and {})",
            bundle.weights.len()
        )));
    }
    let p = bundle.grads[0].len();
    if bundle.grads.iter().any(|g| g.len() != p) {
        return Err(PlatoError::shape("proposition1_check", p, "ragged gradients"));
    }
    let norms_sq: Vec<f64> = bundle.grads.iter().map(|g| dot(g, g)).collect();
    let s: f64 = norms_sq.iter().sum();
    if s == 0.0 {
        return Err(PlatoError::InvalidArgument("all gradients are zero".into()));
    }

    // Right singular structure from the m×m Gram matrix AᵀA.
    let gram = Matrix::from_fn(m, m, |i, j| dot(&bundle.grads[i], &bundle.grads[j]));
    let eig = symmetric_eigen(&gram)?;
    let sigma_max_sq = eig.values[0].max(0.0);
    let rank = eig
        .values
        .iter()
        .filter(|&&l| l > 1e-24 * sigma_max_sq.max(f64::MIN_POSITIVE))
        .count()
        .max(1);

    // Left singular vectors u_k = A v_k / σ_k, re-orthonormalized.
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(rank);
    for k in 0..rank {
        let mut u = vec![0.0; p];
        for (i, g) in bundle.grads.iter().enumerate() {
            let c = eig.vectors[(i, k)];
            if c != 0.0 {
                for (ui, gi) in u.iter_mut().zip(g) {
                    *ui += c * gi;
                }
            }
        }
        for b in &basis {
            let proj = dot(&u, b);
            for (ui, bi) in u.iter_mut().zip(b) {
                *ui -= proj * bi;
            }
        }
        let nrm = dot(&u, &u).sqrt();
        if nrm == 0.0 {
            break;
        }
        u.iter_mut().for_each(|x| *x /= nrm);
        basis.push(u);
    }

    // coefficients c[i][k] = ⟨g_i, u_k⟩
    let coeffs: Vec<Vec<f64>> = bundle
        .grads
        .iter()
        .map(|g| basis.iter().map(|u| dot(g, u)).collect())
        .collect();

    let residual_ratio = |r: usize| -> f64 {
        bundle
            .grads
            .iter()
            .enumerate()
            .map(|(i, g)| {
                if norms_sq[i] == 0.0 {
                    return 0.0;
                }
                let mut e = g.clone();
                for (k, u) in basis.iter().take(r).enumerate() {
                    let c = coeffs[i][k];
                    for (ei, ui) in e.iter_mut().zip(u) {
                        *ei -= c * ui;
                    }
                }
                (dot(&e, &e) / norms_sq[i]).sqrt()
            })
            .fold(0.0, f64::max)
    };

    let mut r = basis.len();
    let mut epsilon = residual_ratio(r);
    for cand in 1..basis.len() {
        let e = residual_ratio(cand);
        if e <= bundle.epsilon_target {
            r = cand;
            epsilon = e;
            break;
        }
    }

    // Projected Gram ÃᵀÃ in coefficient space.
    let proj_gram = Matrix::from_fn(m, m, |i, j| dot(&coeffs[i][..r], &coeffs[j][..r]));
    let trace: f64 = (0..m).map(|i| proj_gram[(i, i)]).sum();
    let lam_max = symmetric_eigenvalues(&proj_gram)?[0].max(0.0);
    let rf = r as f64;
    let delta = if trace > 0.0 {
        (lam_max * rf / trace - 1.0).max(0.0)
    } else {
        0.0
    };
    let eta = 2.0 * epsilon * (rf / (1.0 + delta)).sqrt() + epsilon * epsilon * rf / (1.0 + delta);

    let mut g_tot = vec![0.0; p];
    for (g, &w) in bundle.grads.iter().zip(&bundle.weights) {
        for (t, gi) in g_tot.iter_mut().zip(g) {
            *t += w * gi;
        }
    }
    let lhs = dot(&g_tot, &g_tot);
    let lam_sq = dot(&bundle.weights, &bundle.weights);
    let naive_rhs = lam_sq * s;
    let rhs = (1.0 + eta) * (1.0 + delta) / rf * naive_rhs;
    Ok(Prop1Report {
        m,
        r,
        epsilon,
        delta,
        eta,
        lhs,
        rhs,
        naive_rhs,
        holds: lhs <= rhs * (1.0 + 1e-10),
    })
}

/// Bundle of `m` gradients near a planted `rank`-dimensional subspace.
pub fn planted_bundle(m: usize, p: usize, rank: usize, residual: f64, seed: u64) -> GradientBundle {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rng::stream(seed, "planted-bundle", 0);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let basis: Vec<Vec<f64>> = (0..rank).map(|_| (0..p).map(|_| normal()).collect()).collect();
    let grads = (0..m)
        .map(|_| {
            let coef: Vec<f64> = (0..rank).map(|_| normal()).collect();
            (0..p)
                .map(|j| {
                    let signal: f64 = basis.iter().zip(&coef).map(|(b, c)| b[j] * c).sum();
                    signal + residual * normal()
                })
                .collect()
        })
        .collect();
    let weights = (0..m).map(|_| normal().abs() + 0.1).collect();
    GradientBundle::new(grads, weights)
}

/// Kind of matrix drawn for one Theorem-1 trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    RandomSymmetric,
    Counts,
    A1A2,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Theorem1Trial {
    pub index: usize,
    pub kind: KernelKind,
    pub seed: u64,
    pub report: ShiftReport,
    /// `min_eig(K + C·I)`, nonnegative up to tolerance when certified.
    pub slack: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Theorem1Sweep {
    pub trials: Vec<Theorem1Trial>,
    pub certified: usize,
    pub part2_trials: usize,
    pub part2_psd: usize,
}

impl Theorem1Sweep {
    pub fn all_hold(&self) -> bool {
        self.certified == self.trials.len() && self.part2_psd == self.part2_trials
    }
}

/// Largest kernel size drawn by the sweeps.
pub const SWEEP_MAX_N: usize = 64;

fn draw_kernel(kind: KernelKind, seed: u64) -> Result<PmiMatrix> {
    let mut rng = rng::stream(seed, "thm1-trial", 0);
    let n = rng.random_range(2..=SWEEP_MAX_N);
    match kind {
        KernelKind::RandomSymmetric => {
            let scale = rng.random_range(0.1..5.0);
            let mut k = Matrix::zeros(n, n);
            for i in 0..n {
                for j in i..n {
                    let v = scale * (2.0 * rng.random::<f64>() - 1.0);
                    k[(i, j)] = v;
                    k[(j, i)] = v;
                }
            }
            PmiMatrix::new(k, PmiProvenance::Synthetic { rho_min: 1.0, epsilon: 0.0 })
        }
        KernelKind::Counts => {
            let boost = rng.random_range(0..50u64);
            let counts: Vec<Vec<u64>> = (0..n)
                .map(|i| (0..n).map(|j| rng.random_range(0..20u64) + if i == j { boost } else { 0 }).collect())
                .collect();
            let sym: Vec<Vec<u64>> = (0..n).map(|i| (0..n).map(|j| counts[i][j] + counts[j][i]).collect()).collect();
            pmi_from_counts(&sym)
        }
        KernelKind::A1A2 => {
            let rho_min: f64 = rng.random_range(0.05..1.0);
            let epsilon = n as f64 * rho_min.ln().abs() * rng.random_range(1.0..1.5);
            build_a1a2_instance(n, rho_min, epsilon, rng::derive_seed(seed, "a1a2-instance", 0))
        }
    }
}

/// Runs `trials` Theorem-1 checks cycling through random, counts-derived and
/// (A1)/(A2) kernels with `N ≤ 64`.
pub fn theorem1_sweep(trials: usize, seed: u64) -> Result<Theorem1Sweep> {
    const KINDS: [KernelKind; 3] = [KernelKind::RandomSymmetric, KernelKind::Counts, KernelKind::A1A2];
    let mut out = Theorem1Sweep { trials: Vec::with_capacity(trials), certified: 0, part2_trials: 0, part2_psd: 0 };
    for index in 0..trials {
        let kind = KINDS[index % 3];
        let trial_seed = rng::derive_seed(seed, "thm1", index as u64);
        let report = theorem1_shift(&draw_kernel(kind, trial_seed)?)?;
        out.certified += report.shift_certified as usize;
        if let Some(psd) = report.smoothness.as_ref().and_then(|s| s.min_eig_psd) {
            out.part2_trials += 1;
            out.part2_psd += psd as usize;
        }
        let slack = report.min_eig_shifted;
        out.trials.push(Theorem1Trial { index, kind, seed: trial_seed, report, slack });
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Prop1Trial {
    pub index: usize,
    pub seed: u64,
    pub p: usize,
    pub planted_rank: usize,
    pub residual: f64,
    pub report: Prop1Report,
    /// `rhs − lhs`.
    pub slack: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Prop1Sweep {
    pub trials: Vec<Prop1Trial>,
    pub holds: usize,
}

impl Prop1Sweep {
    pub fn all_hold(&self) -> bool {
        self.holds == self.trials.len()
    }
}

/// Checks the gradient bound on `trials` planted low-rank bundles.
pub fn proposition1_sweep(trials: usize, seed: u64) -> Result<Prop1Sweep> {
    let mut out = Prop1Sweep { trials: Vec::with_capacity(trials), holds: 0 };
    for index in 0..trials {
        let trial_seed = rng::derive_seed(seed, "prop1", index as u64);
        let mut rng = rng::stream(trial_seed, "prop1-shape", 0);
        let m = rng.random_range(2..=8);
        let p = rng.random_range(8..=256);
        let planted_rank = rng.random_range(1..=m.min(p));
        let residual = rng.random_range(0.0..0.05);
        let report = proposition1_check(&planted_bundle(m, p, planted_rank, residual, trial_seed))?;
        out.holds += report.holds as usize;
        let slack = report.rhs - report.lhs;
        out.trials.push(Prop1Trial { index, seed: trial_seed, p, planted_rank, residual, report, slack });
    }
    Ok(out)
}
