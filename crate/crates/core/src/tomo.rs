//! Downstream tomography: congested-link diagnosis, linear inverses for
//! link and OD quantities, covariance-based tree inference, and the
//! evaluation metrics shared by every pipeline.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{PlatoError, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::netmodel::{Network, ProbePath, RoutingMatrix};

// ---------------------------------------------------------------- metrics

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub fpr: f64,
}

impl Confusion {
    pub fn from_sets(predicted: &[bool], truth: &[bool]) -> Result<Self> {
        if predicted.len() != truth.len() {
            return Err(PlatoError::shape("diagnosis", truth.len(), predicted.len()));
        }
        let mut c = Confusion::default();
        for (&p, &t) in predicted.iter().zip(truth) {
            match (p, t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn merge(&mut self, other: Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }

    /// Precision is 1 for an empty prediction against empty truth and 0 for an
    /// empty prediction against nonempty truth; recall is 1 when truth is empty.
    pub fn scores(&self) -> ClassScores {
        let (tp, fp, fn_, tn) = (self.tp as f64, self.fp as f64, self.fn_ as f64, self.tn as f64);
        let precision = if self.tp + self.fp == 0 {
            if self.fn_ == 0 { 1.0 } else { 0.0 }
        } else {
            tp / (tp + fp)
        };
        let recall = if self.tp + self.fn_ == 0 { 1.0 } else { tp / (tp + fn_) };
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        let fpr = if self.fp + self.tn == 0 { 0.0 } else { fp / (fp + tn) };
        ClassScores { precision, recall, f1, fpr }
    }
}

/// Fraction of differing off-diagonal entries.
pub fn hamming_distance(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.shape() != b.shape() || a.rows() != a.cols() {
        return Err(PlatoError::shape("adjacency", format!("{:?}", a.shape()), format!("{:?}", b.shape())));
    }
    let n = a.rows();
    if n < 2 {
        return Ok(0.0);
    }
    let mut diff = 0usize;
    for i in 0..n {
        for j in 0..n {
            if i != j && (a[(i, j)] - b[(i, j)]).abs() > 0.5 {
                diff += 1;
            }
        }
    }
    Ok(diff as f64 / (n * (n - 1)) as f64)
}

pub fn frobenius_distance(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(PlatoError::shape("adjacency", format!("{:?}", a.shape()), format!("{:?}", b.shape())));
    }
    Ok(a.sub(b).frobenius_norm())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorGap {
    pub mean: f64,
    pub std: f64,
}

/// Per-entry absolute deviation of `estimate` from `reference`.
pub fn error_gap(estimate: &[f64], reference: &[f64]) -> Result<ErrorGap> {
    if estimate.len() != reference.len() {
        return Err(PlatoError::shape("error gap", reference.len(), estimate.len()));
    }
    if estimate.is_empty() {
        return Ok(ErrorGap { mean: 0.0, std: 0.0 });
    }
    let dev: Vec<f64> = estimate.iter().zip(reference).map(|(a, b)| (a - b).abs()).collect();
    let n = dev.len() as f64;
    let mean = dev.iter().sum::<f64>() / n;
    let std = (dev.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n).sqrt();
    Ok(ErrorGap { mean, std })
}

// ------------------------------------------------------- link diagnosis

/// Per-path delay thresholds `μ + kσ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathThresholds {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub k_sigma: f64,
}

impl PathThresholds {
    /// Calibrates on rows of noise-free path delays (samples × paths).
    pub fn calibrate(delays: &Matrix, k_sigma: f64) -> Result<Self> {
        if delays.rows() < 2 {
            return Err(PlatoError::InvalidArgument("threshold calibration needs at least two samples".into()));
        }
        Ok(Self { mean: delays.column_means(), std: delays.column_stds(), k_sigma })
    }

    /// Per-path calibration restricted to rows where `normal[(row, path)]` holds;
    /// falls back to all rows for a path with fewer than two normal rows.
    pub fn calibrate_normal(delays: &Matrix, normal: &[Vec<bool>], k_sigma: f64) -> Result<Self> {
        let all = Self::calibrate(delays, k_sigma)?;
        if normal.len() != delays.rows() {
            return Err(PlatoError::shape("calibration mask", delays.rows(), normal.len()));
        }
        let (mut mean, mut std) = (all.mean, all.std);
        for p in 0..delays.cols() {
            let vals: Vec<f64> = (0..delays.rows()).filter(|&r| normal[r][p]).map(|r| delays[(r, p)]).collect();
            if vals.len() < 2 {
                continue;
            }
            let n = vals.len() as f64;
            let m = vals.iter().sum::<f64>() / n;
            mean[p] = m;
            std[p] = (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
        }
        Ok(Self { mean, std, k_sigma })
    }

    pub fn threshold(&self, path: usize) -> f64 {
        self.mean[path] + self.k_sigma * self.std[path]
    }

    pub fn flag(&self, delays: &[f64]) -> Vec<bool> {
        delays.iter().enumerate().map(|(p, &d)| d > self.threshold(p)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisResult {
    /// Predicted congested links, as column indices of the routing matrix.
    pub predicted: Vec<usize>,
    /// Fraction of each link's paths that were flagged.
    pub scores: Vec<f64>,
    pub congested_paths: Vec<bool>,
}

impl DiagnosisResult {
    pub fn predicted_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.scores.len()];
        self.predicted.iter().for_each(|&l| m[l] = true);
        m
    }
}

/// Greedy cover of the flagged paths.
///
/// Links that lie only on flagged paths are tried first; each round takes
/// the one covering the most unexplained flagged paths (ties: smaller id).
/// Paths still unexplained afterwards are covered by any link, preferring
/// higher coverage, then fewer normal paths touched, then smaller id.
pub fn diagnose_congested_links(path_delays: &[f64], routing: &RoutingMatrix, thresholds: &PathThresholds) -> Result<DiagnosisResult> {
    let r = routing.entries();
    if path_delays.len() != r.rows() || thresholds.mean.len() != r.rows() {
        return Err(PlatoError::shape("path measurements", r.rows(), path_delays.len()));
    }
    let flagged = thresholds.flag(path_delays);
    Ok(cover_flagged(&flagged, r))
}

pub fn cover_flagged(flagged: &[bool], r: &Matrix) -> DiagnosisResult {
    let (p, l) = r.shape();
    let on = |path: usize, link: usize| r[(path, link)] > 0.5;
    let mut normal_hits = vec![0usize; l];
    let mut flagged_hits = vec![0usize; l];
    for path in 0..p {
        for link in 0..l {
            if on(path, link) {
                if flagged[path] {
                    flagged_hits[link] += 1;
                } else {
                    normal_hits[link] += 1;
                }
            }
        }
    }
    let scores: Vec<f64> = (0..l)
        .map(|k| {
            let total = flagged_hits[k] + normal_hits[k];
            if total == 0 { 0.0 } else { flagged_hits[k] as f64 / total as f64 }
        })
        .collect();
    let mut unexplained: Vec<bool> = flagged.to_vec();
    let mut chosen = Vec::new();
    for consistent_only in [true, false] {
        loop {
            let mut best: Option<(usize, usize, usize)> = None; // (cover, normal, link)
            for link in 0..l {
                if chosen.contains(&link) || (consistent_only && normal_hits[link] > 0) {
                    continue;
                }
                let cover = (0..p).filter(|&q| unexplained[q] && on(q, link)).count();
                if cover == 0 {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bc, bn, _)) => cover > bc || (cover == bc && !consistent_only && normal_hits[link] < bn),
                };
                if better {
                    best = Some((cover, normal_hits[link], link));
                }
            }
            let Some((_, _, link)) = best else { break };
            chosen.push(link);
            for q in 0..p {
                if on(q, link) {
                    unexplained[q] = false;
                }
            }
        }
    }
    chosen.sort_unstable();
    DiagnosisResult { predicted: chosen, scores, congested_paths: flagged.to_vec() }
}

// ------------------------------------------------------- linear inverses

/// Minimizes `‖y − Rx‖² + λ‖x − x₀‖²`, optionally subject to `x ≥ 0`.
pub fn solve_linear_inverse(y: &[f64], r: &Matrix, ridge: f64, nonneg: bool, prior: Option<&[f64]>) -> Result<Vec<f64>> {
    if y.len() != r.rows() {
        return Err(PlatoError::shape("measurements", r.rows(), y.len()));
    }
    if !(ridge >= 0.0) {
        return Err(PlatoError::InvalidArgument(format!("ridge must be >= 0, got {ridge}")));
    }
    let n = r.cols();
    if let Some(x0) = prior {
        if x0.len() != n {
            return Err(PlatoError::shape("prior", n, x0.len()));
        }
    }
    let mut g = r.t_matmul(r);
    g.add_diag(ridge);
    let mut b = r.t_matvec(y);
    if let Some(x0) = prior {
        b.iter_mut().zip(x0).for_each(|(bi, xi)| *bi += ridge * xi);
    }
    let chol = Cholesky::factor(&g).map_err(|_| {
        PlatoError::RankDeficient(format!("normal equations of a {}x{} system are singular; use ridge > 0", r.rows(), n))
    })?;
    let x = chol.solve(&b);
    if !nonneg || x.iter().all(|&v| v >= 0.0) {
        return Ok(x);
    }
    nonneg_quadratic(&g, &b)
}

/// Active-set solve of `min ½xᵀGx − bᵀx` over `x ≥ 0` for positive definite `G`.
fn nonneg_quadratic(g: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-12 * scale;
    let mut x = vec![0.0; n];
    let mut passive: Vec<usize> = Vec::new();
    for _ in 0..(3 * n + 10) {
        let gx = g.matvec(&x);
        let w: Vec<f64> = (0..n).map(|i| b[i] - gx[i]).collect();
        let next = (0..n)
            .filter(|i| !passive.contains(i))
            .max_by(|&i, &j| w[i].total_cmp(&w[j]).then(j.cmp(&i)))
            .filter(|&i| w[i] > tol);
        let Some(j) = next else { break };
        passive.push(j);
        for _ in 0..(3 * n + 10) {
            passive.sort_unstable();
            let sub = Matrix::from_fn(passive.len(), passive.len(), |a, c| g[(passive[a], passive[c])]);
            let rhs: Vec<f64> = passive.iter().map(|&i| b[i]).collect();
            let s_p = Cholesky::factor(&sub)?.solve(&rhs);
            if s_p.iter().all(|&v| v > 0.0) {
                x.iter_mut().for_each(|v| *v = 0.0);
                passive.iter().zip(&s_p).for_each(|(&i, &v)| x[i] = v);
                break;
            }
            let mut alpha = f64::INFINITY;
            for (k, &i) in passive.iter().enumerate() {
                if s_p[k] <= 0.0 {
                    alpha = alpha.min(x[i] / (x[i] - s_p[k]));
                }
            }
            for (k, &i) in passive.iter().enumerate() {
                x[i] += alpha * (s_p[k] - x[i]);
            }
            passive.retain(|&i| x[i] > tol);
            for (i, v) in x.iter_mut().enumerate() {
                if !passive.contains(&i) {
                    *v = 0.0;
                }
            }
        }
    }
    let residual = kkt_residual(g, b, &x) / scale;
    if residual > 1e-8 {
        return Err(PlatoError::numeric("nonneg solve", format!("KKT residual {residual:e}")));
    }
    Ok(x)
}

/// `max_i |min(x_i, (Gx − b)_i)|`, zero exactly at the nonnegative optimum.
pub fn kkt_residual(g: &Matrix, b: &[f64], x: &[f64]) -> f64 {
    let gx = g.matvec(x);
    (0..x.len()).map(|i| x[i].min(gx[i] - b[i]).abs()).fold(0.0, f64::max)
}

pub const OD_RIDGE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdEstimate {
    pub flows_mbps: Vec<f64>,
    pub residual: f64,
}

/// Gravity-regularized nonnegative inverse of `loads = A·flows`, with `A`
/// the link × OD-pair incidence.
pub fn estimate_od(link_loads: &[f64], od_incidence: &Matrix, prior: &[f64]) -> Result<OdEstimate> {
    let flows = solve_linear_inverse(link_loads, od_incidence, OD_RIDGE, true, Some(prior))?;
    let fit = od_incidence.matvec(&flows);
    let residual = fit.iter().zip(link_loads).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    Ok(OdEstimate { flows_mbps: flows, residual })
}

/// Link delays from path delays (ridge inverse), then utilization through
/// the inverse of `d = d0(1 + 4u²)`, then load `u·capacity`.
pub fn link_loads_from_delays(path_delays: &[f64], routing: &Matrix, base_delay: &[f64], capacity: &[f64], ridge: f64) -> Result<Vec<f64>> {
    let d = solve_linear_inverse(path_delays, routing, ridge, false, Some(base_delay))?;
    Ok(d.iter()
        .zip(base_delay)
        .zip(capacity)
        .map(|((d, d0), c)| ((d / d0 - 1.0) / 4.0).clamp(0.0, 1.0).sqrt() * c)
        .collect())
}

// ----------------------------------------------------- topology inference

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferredTopology {
    /// Symmetric 0/1 adjacency over `root`, the receivers, then internal nodes.
    pub adjacency: Matrix,
    /// Network node id of the root and each receiver (`labels[0]` is the root).
    pub labels: Vec<usize>,
    pub internal_count: usize,
}

impl InferredTopology {
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.adjacency.rows();
        let mut e = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if self.adjacency[(i, j)] > 0.5 {
                    e.push((i, j));
                }
            }
        }
        e
    }
}

/// Root-based probing scheme for tree inference: one leaf sends to the others.
#[derive(Debug, Clone, PartialEq)]
pub struct RootedProbes {
    pub root: usize,
    pub receivers: Vec<usize>,
    /// Row of the routing matrix for each receiver's path from the root.
    pub path_rows: Vec<usize>,
}

/// Picks the smallest leaf as root and every other leaf with a measured path from it.
pub fn rooted_probes(net: &Network, routing: &RoutingMatrix) -> Result<RootedProbes> {
    let leaves = net.leaves();
    let root = *leaves.first().ok_or_else(|| PlatoError::InvalidArgument("network has no leaves".into()))?;
    let mut receivers = Vec::new();
    let mut rows = Vec::new();
    for &leaf in &leaves[1..] {
        let row = routing
            .path_index()
            .iter()
            .position(|&(s, d)| (s, d) == (root, leaf) || (s, d) == (leaf, root))
            .ok_or_else(|| PlatoError::Validation(format!("no probing path between root {root} and leaf {leaf}")))?;
        receivers.push(leaf);
        rows.push(row);
    }
    if receivers.len() < 2 {
        return Err(PlatoError::InvalidArgument("tree inference needs at least two receivers".into()));
    }
    Ok(RootedProbes { root, receivers, path_rows: rows })
}

/// Shared-path covariance `Σ_{l ∈ P_i ∩ P_j} var_l` for root-based paths.
pub fn shared_path_covariance(paths: &[&ProbePath], link_var: &[f64]) -> Matrix {
    let sets: Vec<BTreeSet<usize>> = paths.iter().map(|p| p.links.iter().copied().collect()).collect();
    Matrix::from_fn(paths.len(), paths.len(), |i, j| sets[i].intersection(&sets[j]).map(|&l| link_var[l]).sum())
}

pub const COVARIANCE_WINDOW: usize = 64;

/// Mean of per-window sample covariances of path delays (rows are time).
pub fn windowed_covariance(delays: &Matrix, window: usize) -> Result<Matrix> {
    if window < 2 || delays.rows() < window {
        return Err(PlatoError::InvalidArgument(format!("need at least {window} samples, have {}", delays.rows())));
    }
    let windows = delays.rows() / window;
    let mut acc = Matrix::zeros(delays.cols(), delays.cols());
    for w in 0..windows {
        let idx: Vec<usize> = (w * window..(w + 1) * window).collect();
        acc = acc.add(&delays.select_rows(&idx).covariance());
    }
    Ok(acc.scale(1.0 / windows as f64))
}

/// Recursive neighbor joining on a shared-path covariance over the receivers.
///
/// Repeatedly joins the pair with the largest covariance; every other active
/// node whose covariance with the first member is within `tolerance` of that
/// maximum joins the same parent. Cluster covariances are averages of the
/// members'. The last active node attaches to the root.
pub fn infer_topology_rnj(cov: &Matrix, root_label: usize, receiver_labels: &[usize], tolerance: f64) -> Result<InferredTopology> {
    let n = cov.rows();
    if cov.cols() != n || receiver_labels.len() != n {
        return Err(PlatoError::shape("covariance", receiver_labels.len(), n));
    }
    if !cov.is_symmetric(1e-9 * cov.frobenius_norm().max(1e-300)) {
        return Err(PlatoError::Validation("covariance matrix is not symmetric".into()));
    }
    if n < 2 {
        return Err(PlatoError::InvalidArgument("need at least two receivers".into()));
    }
    // node 0 is the root, 1..=n receivers, internal nodes appended
    let mut edges: Vec<(usize, usize)> = Vec::new();
    let mut active: Vec<usize> = (1..=n).collect();
    let mut c: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let key = |a: usize, b: usize| if a < b { (a, b) } else { (b, a) };
    for i in 0..n {
        for j in i + 1..n {
            c.insert((i + 1, j + 1), cov[(i, j)]);
        }
    }
    let mut next = n + 1;
    while active.len() > 1 {
        let mut best = (f64::NEG_INFINITY, 0, 0);
        for (ai, &a) in active.iter().enumerate() {
            for &b in &active[ai + 1..] {
                let v = c[&key(a, b)];
                if v > best.0 {
                    best = (v, a, b);
                }
            }
        }
        let (max, a, b) = best;
        let mut members = vec![a, b];
        for &m in &active {
            if m != a && m != b && c[&key(a, m)] >= max - tolerance {
                members.push(m);
            }
        }
        let k = next;
        next += 1;
        active.retain(|x| !members.contains(x));
        for &o in &active {
            let avg = members.iter().map(|&m| c[&key(m, o)]).sum::<f64>() / members.len() as f64;
            c.insert(key(k, o), avg);
        }
        for &m in &members {
            edges.push((k, m));
        }
        active.push(k);
    }
    edges.push((0, active[0]));
    let total = next;
    let mut adjacency = Matrix::zeros(total, total);
    for (u, v) in edges {
        adjacency[(u, v)] = 1.0;
        adjacency[(v, u)] = 1.0;
    }
    let mut labels = vec![root_label];
    labels.extend_from_slice(receiver_labels);
    Ok(InferredTopology { adjacency, labels, internal_count: total - n - 1 })
}

/// Node identity independent of numbering: a labeled leaf, or an internal
/// node named by the receivers below it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum NodeKey {
    Leaf(usize),
    Internal(Vec<usize>),
}

/// Canonical edge set of a tree rooted at `root`, with unlabeled nodes of a
/// single child contracted.
fn canonical_edges(adj: &[Vec<usize>], root: usize, label: &dyn Fn(usize) -> Option<usize>) -> BTreeSet<(NodeKey, NodeKey)> {
    let n = adj.len();
    let mut parent = vec![usize::MAX; n];
    let mut order = vec![root];
    parent[root] = root;
    let mut i = 0;
    while i < order.len() {
        let u = order[i];
        for &v in &adj[u] {
            if parent[v] == usize::MAX {
                parent[v] = u;
                order.push(v);
            }
        }
        i += 1;
    }
    let children: Vec<Vec<usize>> = (0..n).map(|u| adj[u].iter().copied().filter(|&v| parent[v] == u && v != root).collect()).collect();
    let mut cluster: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &u in order.iter().rev() {
        let mut s: Vec<usize> = children[u].iter().flat_map(|&v| cluster[v].clone()).collect();
        if let Some(l) = label(u) {
            if u != root {
                s.push(l);
            }
        }
        s.sort_unstable();
        cluster[u] = s;
    }
    let node_key = |u: usize| match label(u) {
        Some(l) => Some(NodeKey::Leaf(l)),
        None if children[u].len() >= 2 => Some(NodeKey::Internal(cluster[u].clone())),
        None => None,
    };
    let mut edges = BTreeSet::new();
    for &u in &order {
        if u == root {
            continue;
        }
        let Some(ku) = node_key(u) else { continue };
        let mut p = parent[u];
        let kp = loop {
            if let Some(k) = node_key(p) {
                break k;
            }
            p = parent[p];
        };
        edges.insert(if ku < kp { (ku, kp) } else { (kp, ku) });
    }
    edges
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopologyScore {
    pub hamming: f64,
    pub frobenius: f64,
}

/// Compares an inferred tree with the ground-truth network over the union of
/// canonical nodes; degree-2 relay nodes of the truth are invisible to
/// end-to-end probing and are contracted.
pub fn score_topology(inferred: &InferredTopology, truth: &Network) -> Result<TopologyScore> {
    let root = inferred.labels[0];
    let n_inf = inferred.adjacency.rows();
    let inf_adj: Vec<Vec<usize>> = (0..n_inf).map(|i| (0..n_inf).filter(|&j| inferred.adjacency[(i, j)] > 0.5).collect()).collect();
    let inf_label = |u: usize| inferred.labels.get(u).copied();
    let a = canonical_edges(&inf_adj, 0, &inf_label);

    let receivers: BTreeSet<usize> = inferred.labels.iter().copied().collect();
    let truth_adj: Vec<Vec<usize>> = (0..truth.node_count()).map(|u| truth.neighbors(u).iter().map(|&(v, _)| v).collect()).collect();
    let truth_label = |u: usize| receivers.contains(&u).then_some(u);
    let b = canonical_edges(&truth_adj, root, &truth_label);

    let mut nodes: BTreeSet<NodeKey> = BTreeSet::new();
    for (x, y) in a.iter().chain(&b) {
        nodes.insert(x.clone());
        nodes.insert(y.clone());
    }
    let index: BTreeMap<NodeKey, usize> = nodes.into_iter().enumerate().map(|(i, k)| (k, i)).collect();
    let m = index.len();
    let to_matrix = |edges: &BTreeSet<(NodeKey, NodeKey)>| {
        let mut mat = Matrix::zeros(m, m);
        for (x, y) in edges {
            mat[(index[x], index[y])] = 1.0;
            mat[(index[y], index[x])] = 1.0;
        }
        mat
    };
    let (ma, mb) = (to_matrix(&a), to_matrix(&b));
    Ok(TopologyScore { hamming: hamming_distance(&ma, &mb)?, frobenius: frobenius_distance(&ma, &mb)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::Link;

    #[test]
    fn confusion_example() {
        let c = Confusion { tp: 2, fp: 1, fn_: 1, tn: 5 };
        let s = c.scores();
        assert!((s.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.fpr - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(Confusion::default().scores().precision, 1.0);
        assert_eq!(Confusion { fn_: 1, ..Default::default() }.scores().precision, 0.0);
    }

    #[test]
    fn distances() {
        let a = Matrix::zeros(2, 2);
        assert_eq!(hamming_distance(&a, &a).unwrap(), 0.0);
        assert!((frobenius_distance(&Matrix::identity(2), &a).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        let gap = error_gap(&[1.0, 3.0], &[1.0, 1.0]).unwrap();
        assert_eq!((gap.mean, gap.std), (1.0, 1.0));
    }

    #[test]
    fn single_path_single_link() {
        let r = Matrix::identity(1);
        let d = cover_flagged(&[true], &r);
        assert_eq!(d.predicted, vec![0]);
        assert!(cover_flagged(&[false], &r).predicted.is_empty());
    }

    #[test]
    fn shared_link_explains_two_paths() {
        // paths: {0,1}, {0,2}, {3}; flagged: first two
        let r = Matrix::from_rows(&[vec![1.0, 1.0, 0.0, 0.0], vec![1.0, 0.0, 1.0, 0.0], vec![0.0, 0.0, 0.0, 1.0]]);
        assert_eq!(cover_flagged(&[true, true, false], &r).predicted, vec![0]);
    }

    #[test]
    fn identity_inverse_and_prior_limit() {
        let y = [3.0, -1.0];
        assert_eq!(solve_linear_inverse(&y, &Matrix::identity(2), 0.0, false, None).unwrap(), y.to_vec());
        let r = Matrix::from_rows(&[vec![1.0, 1.0]]);
        let x = solve_linear_inverse(&[10.0], &r, 1e-9, false, Some(&[6.0, 4.0])).unwrap();
        assert!((x[0] - 6.0).abs() < 1e-6 && (x[1] - 4.0).abs() < 1e-6);
        assert!(matches!(solve_linear_inverse(&[10.0], &r, 0.0, false, None), Err(PlatoError::RankDeficient(_))));
    }

    #[test]
    fn nonneg_clips_negative_component() {
        let r = Matrix::identity(2);
        let x = solve_linear_inverse(&[2.0, -3.0], &r, 0.1, true, None).unwrap();
        assert!(x.iter().all(|&v| v >= 0.0));
        assert_eq!(x[1], 0.0);
        assert!((x[0] - 2.0 / 1.1).abs() < 1e-12);
    }

    #[test]
    fn dedicated_links_recover_od() {
        let est = estimate_od(&[5.0, 7.0], &Matrix::identity(2), &[5.0, 7.0]).unwrap();
        assert!((est.flows_mbps[0] - 5.0).abs() < 1e-8 && (est.flows_mbps[1] - 7.0).abs() < 1e-8);
    }

    #[test]
    fn star_from_equal_covariance() {
        let cov = Matrix::from_rows(&[vec![3.0, 1.0, 1.0], vec![1.0, 3.0, 1.0], vec![1.0, 1.0, 3.0]]);
        let t = infer_topology_rnj(&cov, 0, &[1, 2, 3], 1e-9).unwrap();
        assert_eq!(t.internal_count, 1);
        // star: hub 4 joins receivers 1..3 and the root
        let net = Network::new(
            5,
            (0..4).map(|i| Link { id: i, a: if i == 0 { 0 } else { i }, b: 4, capacity_mbps: 100.0 }).collect(),
        )
        .unwrap();
        let t = infer_topology_rnj(&cov, 0, &[1, 2, 3], 1e-9).unwrap();
        assert_eq!(score_topology(&t, &net).unwrap().hamming, 0.0);
        let asym = Matrix::from_rows(&[vec![1.0, 0.5], vec![0.4, 1.0]]);
        assert!(matches!(infer_topology_rnj(&asym, 0, &[1, 2], 0.0), Err(PlatoError::Validation(_))));
    }
}
