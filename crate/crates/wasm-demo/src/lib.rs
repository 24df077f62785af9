//! Browser bindings. Each export returns a JSON string; the `*_json`
//! functions hold the logic and are callable natively.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use platont_core::baselines::pca_denoise_series;
use platont_core::linalg::Matrix;
use platont_core::netmodel::Network;
use platont_core::pipeline::{build_scenario, EvalConfig, EvalContext};
use platont_core::simkit::{NoiseConfig, NoiseKind};
use platont_core::theorylab::{build_a1a2_instance, symmetric_eigenvalues, theorem1_shift};
use platont_core::tomo::{infer_topology_rnj, rooted_probes, score_topology, windowed_covariance, COVARIANCE_WINDOW};

const MAX_KERNEL: usize = 64;
const MAX_NODES: usize = 40;
const SERIES_PATHS: usize = 3;

fn to_json(v: &impl Serialize) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct KernelView {
    n: usize,
    alpha: f64,
    c_bound: f64,
    eigenvalues: Vec<f64>,
    shifted_eigenvalues: Vec<f64>,
    min_eig: f64,
    min_eig_shifted: f64,
    certified: bool,
    precondition: bool,
    psd_without_shift: Option<bool>,
}

/// Random (A1)/(A2) PMI kernel with its spectrum before and after the shift.
pub fn kernel_shift_json(n: usize, rho_min: f64, epsilon: f64, seed: u64) -> Result<String, String> {
    if !(2..=MAX_KERNEL).contains(&n) {
        return Err(format!("N must be in 2..={MAX_KERNEL}"));
    }
    let pmi = build_a1a2_instance(n, rho_min, epsilon, seed).map_err(|e| e.to_string())?;
    let report = theorem1_shift(&pmi).map_err(|e| e.to_string())?;
    let mut shifted = pmi.k.clone();
    shifted.add_diag(report.c_bound);
    let smooth = report.smoothness.as_ref();
    to_json(&KernelView {
        n,
        alpha: report.alpha,
        c_bound: report.c_bound,
        eigenvalues: symmetric_eigenvalues(&pmi.k).map_err(|e| e.to_string())?,
        shifted_eigenvalues: symmetric_eigenvalues(&shifted).map_err(|e| e.to_string())?,
        min_eig: report.min_eig_k,
        min_eig_shifted: report.min_eig_shifted,
        certified: report.shift_certified,
        precondition: smooth.is_some_and(|s| s.precondition_holds()),
        psd_without_shift: smooth.and_then(|s| s.min_eig_psd),
    })
}

#[derive(Serialize)]
struct PathSeries {
    src: usize,
    dst: usize,
    hops: usize,
    clean: Vec<f64>,
    noisy: Vec<f64>,
    pca: Vec<f64>,
}

#[derive(Serialize)]
struct NoiseView {
    links: Vec<(usize, usize)>,
    path_count: usize,
    series: Vec<PathSeries>,
    mse_raw: [f64; 3],
    mse_pca: [f64; 3],
}

fn noise_kind(kind: &str) -> Result<NoiseKind, String> {
    kind.parse().map_err(|e: platont_core::PlatoError| e.to_string())
}

/// Delay series of a few probing paths: clean, noisy and PCA-denoised.
pub fn noisy_paths_json(nodes: usize, seed: u64, level: f64, kind: &str, horizon: usize) -> Result<String, String> {
    if !(4..=MAX_NODES).contains(&nodes) {
        return Err(format!("nodes must be in 4..={MAX_NODES}"));
    }
    let noise = NoiseConfig { level, kind: noise_kind(kind)? };
    let (net, ds) = build_scenario(seed, nodes, horizon.clamp(32, 512), noise).map_err(|e| e.to_string())?;
    let clean = ds.clean_series();
    let noisy = ds.noisy_series();
    let pca = pca_denoise_series(&noisy, EvalConfig::default().pca_rank).map_err(|e| e.to_string())?;
    let series = ds
        .paths
        .paths()
        .iter()
        .take(SERIES_PATHS)
        .enumerate()
        .map(|(i, p)| PathSeries {
            src: p.src,
            dst: p.dst,
            hops: p.links.len(),
            clean: clean.channels[0].column(i),
            noisy: noisy.channels[0].column(i),
            pca: pca.channels[0].column(i),
        })
        .collect();
    to_json(&NoiseView {
        links: net.links().iter().map(|l| (l.a, l.b)).collect(),
        path_count: ds.paths.len(),
        series,
        mse_raw: noisy.mse_to(&clean),
        mse_pca: pca.mse_to(&clean),
    })
}

#[derive(Serialize)]
struct TreeView {
    truth: Vec<(usize, usize)>,
    root: usize,
    receivers: Vec<usize>,
    /// Inferred edges; nodes below `labels.len()` are root and receivers,
    /// the rest are inferred internal nodes.
    inferred: Vec<(usize, usize)>,
    labels: Vec<usize>,
    hamming: f64,
    frobenius: f64,
    noise_free_hamming: f64,
}

fn edges(net: &Network) -> Vec<(usize, usize)> {
    net.links().iter().map(|l| (l.a, l.b)).collect()
}

/// RNJ reconstruction from windowed covariances of noisy root-path delays,
/// scored against the true tree.
pub fn infer_tree_json(nodes: usize, seed: u64, level: f64, kind: &str) -> Result<String, String> {
    if !(4..=MAX_NODES).contains(&nodes) {
        return Err(format!("nodes must be in 4..={MAX_NODES}"));
    }
    let noise = NoiseConfig { level, kind: noise_kind(kind)? };
    let (net, ds) = build_scenario(seed, nodes, 256, noise).map_err(|e| e.to_string())?;
    let probes = rooted_probes(&net, &ds.routing).map_err(|e| e.to_string())?;
    let cfg = EvalConfig { od_slots: 1, ..EvalConfig::default() };
    let ctx = EvalContext::new(&ds, cfg).map_err(|e| e.to_string())?;
    let noise_free = ctx.noise_free_topology().map_err(|e| e.to_string())?;
    let delays: Matrix = ds.noisy_series().channels[0].select_cols(&probes.path_rows);
    let cov = windowed_covariance(&delays, COVARIANCE_WINDOW).map_err(|e| e.to_string())?;
    let max = cov.as_slice().iter().cloned().fold(0.0, f64::max);
    let tree = infer_topology_rnj(&cov, probes.root, &probes.receivers, cfg.rnj_tolerance * max).map_err(|e| e.to_string())?;
    let score = score_topology(&tree, &net).map_err(|e| e.to_string())?;
    to_json(&TreeView {
        truth: edges(&net),
        root: probes.root,
        receivers: probes.receivers.clone(),
        inferred: tree.edges(),
        labels: tree.labels.clone(),
        hamming: score.hamming,
        frobenius: score.frobenius,
        noise_free_hamming: noise_free.hamming,
    })
}

fn js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = kernelShift)]
pub fn kernel_shift(n: usize, rho_min: f64, epsilon: f64, seed: u32) -> Result<String, JsError> {
    js(kernel_shift_json(n, rho_min, epsilon, seed as u64))
}

#[wasm_bindgen(js_name = noisyPaths)]
pub fn noisy_paths(nodes: usize, seed: u32, level: f64, kind: &str, horizon: usize) -> Result<String, JsError> {
    js(noisy_paths_json(nodes, seed as u64, level, kind, horizon))
}

#[wasm_bindgen(js_name = inferTree)]
pub fn infer_tree(nodes: usize, seed: u32, level: f64, kind: &str) -> Result<String, JsError> {
    js(infer_tree_json(nodes, seed as u64, level, kind))
}
