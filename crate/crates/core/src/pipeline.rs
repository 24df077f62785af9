//! Scenario construction, denoising pipelines, per-task evaluation and the
//! experiment matrix with its reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{cca_denoise_series, pca_denoise_series, DEFAULT_RANK};
use crate::error::{PlatoError, Result};
use crate::netmodel::{default_probe_pairs, enumerate_paths, generate_random_tree, Network, PathSet};
use crate::neural::{Mode, PlatoModel};
use crate::rng;
use crate::simkit::{build_dataset, DatasetSpec, IndicatorSeries, NoiseConfig, NoiseKind, TomographyDataset, NOISE_GRID};
use crate::tomo::{
    diagnose_congested_links, error_gap, estimate_od, infer_topology_rnj, link_loads_from_delays, rooted_probes,
    score_topology, shared_path_covariance, windowed_covariance, ClassScores, Confusion, PathThresholds, RootedProbes,
    TopologyScore, COVARIANCE_WINDOW,
};
use crate::trainer::{train, TrainConfig, TrainData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pipeline {
    Clean,
    Raw,
    Pca,
    Cca,
    Platont,
}

impl Pipeline {
    pub const ALL: [Pipeline; 5] = [Pipeline::Clean, Pipeline::Raw, Pipeline::Pca, Pipeline::Cca, Pipeline::Platont];

    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Clean => "clean",
            Pipeline::Raw => "raw",
            Pipeline::Pca => "pca",
            Pipeline::Cca => "cca",
            Pipeline::Platont => "platont",
        }
    }
}

impl FromStr for Pipeline {
    type Err = PlatoError;
    fn from_str(s: &str) -> Result<Self> {
        Pipeline::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| PlatoError::InvalidArgument(format!("unknown pipeline '{s}'")))
    }
}

/// Probing paths for a network: leaf pairs on trees.
pub fn probe_paths(net: &Network, seed: u64) -> Result<PathSet> {
    enumerate_paths(net, &default_probe_pairs(net, seed))
}

/// Tree size drawn from `range` (inclusive) for a seed.
pub fn scenario_nodes(range: (usize, usize), seed: u64) -> usize {
    let span = (range.1 - range.0 + 1) as u64;
    range.0 + (rng::derive_seed(seed, "nodes", 0) % span) as usize
}

/// Knobs for the downstream tasks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub threshold_sigma: f64,
    pub link_ridge: f64,
    pub od_slots: usize,
    pub covariance_window: usize,
    /// RNJ merge tolerance as a fraction of the largest covariance.
    pub rnj_tolerance: f64,
    pub pca_rank: usize,
    pub cca_rank: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            threshold_sigma: 2.0,
            link_ridge: 1e-3,
            od_slots: 300,
            covariance_window: COVARIANCE_WINDOW,
            rnj_tolerance: 0.05,
            pca_rank: DEFAULT_RANK,
            cca_rank: DEFAULT_RANK,
        }
    }
}

/// Indicator series produced by a pipeline for every sample of the dataset.
pub fn denoise(ds: &TomographyDataset, pipeline: Pipeline, model: Option<&PlatoModel>, eval: &EvalConfig) -> Result<IndicatorSeries> {
    let noisy = ds.noisy_series();
    match pipeline {
        Pipeline::Clean => Ok(ds.clean_series()),
        Pipeline::Raw => Ok(noisy),
        Pipeline::Pca => pca_denoise_series(&noisy, eval.pca_rank),
        Pipeline::Cca => cca_denoise_series(&noisy, eval.cca_rank),
        Pipeline::Platont => {
            let model = model.ok_or_else(|| PlatoError::InvalidArgument("platont pipeline needs a trained model".into()))?;
            let out = model.forward(&noisy.channels, Mode::Eval)?;
            Ok(IndicatorSeries { channels: out.recon })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Link,
    Od,
    Topo,
    All,
}

impl FromStr for Task {
    type Err = PlatoError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "link" => Ok(Task::Link),
            "od" => Ok(Task::Od),
            "topo" => Ok(Task::Topo),
            "all" => Ok(Task::All),
            other => Err(PlatoError::InvalidArgument(format!("unknown task '{other}'"))),
        }
    }
}

impl Task {
    fn covers(self, t: Task) -> bool {
        self == Task::All || self == t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkMetrics {
    pub confusion: Confusion,
    pub scores: ClassScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdMetrics {
    pub mean_gap: f64,
    pub std_gap: f64,
    /// Mean absolute deviation per evaluated time slot.
    pub slot_gaps: Vec<f64>,
}

/// Metrics for one denoised series against the dataset's truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    /// Reconstruction MSE to clean indicators on samples without clean labels.
    pub mse: [f64; 3],
    pub link: Option<LinkMetrics>,
    pub od: Option<OdMetrics>,
    pub topo: Option<TopologyScore>,
}

/// Dataset-derived state shared by all pipelines of a scenario.
pub struct EvalContext<'a> {
    pub ds: &'a TomographyDataset,
    pub net: Network,
    pub cfg: EvalConfig,
    pub thresholds: PathThresholds,
    pub unlabeled: Vec<usize>,
    pub od_slots: Vec<usize>,
    pub od_reference: Vec<Vec<f64>>,
    pub probes: Option<RootedProbes>,
}

impl<'a> EvalContext<'a> {
    pub fn new(ds: &'a TomographyDataset, cfg: EvalConfig) -> Result<Self> {
        let net = ds.network()?;
        let clean = ds.clean_series();
        let labeled = ds.labeled_indices();
        let calib = if labeled.len() >= 2 { labeled } else { (0..ds.len()).collect() };
        let links = ds.routing.link_index();
        let normal: Vec<Vec<bool>> = calib
            .iter()
            .map(|&t| {
                let congested = &ds.samples[t].link_truth.congested;
                (0..ds.routing.path_count())
                    .map(|p| ds.routing.links_on_path(p).iter().all(|&c| !congested[links[c]]))
                    .collect()
            })
            .collect();
        let thresholds = PathThresholds::calibrate_normal(&clean.channels[0].select_rows(&calib), &normal, cfg.threshold_sigma)?;
        let unlabeled = ds.unlabeled_indices();
        let od_slots: Vec<usize> = unlabeled.iter().copied().take(cfg.od_slots).collect();
        let probes = if net.is_tree() { rooted_probes(&net, &ds.routing).ok() } else { None };
        let mut ctx = Self { ds, net, cfg, thresholds, unlabeled, od_slots, od_reference: Vec::new(), probes };
        ctx.od_reference = ctx.od_estimates(&clean)?;
        Ok(ctx)
    }

    fn od_estimates(&self, series: &IndicatorSeries) -> Result<Vec<Vec<f64>>> {
        let r = self.ds.routing.entries();
        let lp = &self.ds.link_params;
        let incidence = r.transpose();
        let hops: Vec<f64> = self.ds.routing.row_sums().iter().map(|&h| h as f64).collect();
        let mean_hops = hops.iter().sum::<f64>() / hops.len() as f64;
        self.od_slots
            .iter()
            .map(|&t| {
                let loads = link_loads_from_delays(series.channels[0].row(t), r, &lp.base_delay_ms, &lp.capacity_mbps, self.cfg.link_ridge)?;
                let total = loads.iter().sum::<f64>() / mean_hops;
                let prior = self.ds.od.gravity_prior(total.max(1e-9));
                Ok(estimate_od(&loads, &incidence, &prior)?.flows_mbps)
            })
            .collect()
    }

    pub fn link_metrics(&self, series: &IndicatorSeries) -> Result<LinkMetrics> {
        let mut confusion = Confusion::default();
        for &t in &self.unlabeled {
            let diag = diagnose_congested_links(series.channels[0].row(t), &self.ds.routing, &self.thresholds)?;
            let truth = &self.ds.samples[t].link_truth.congested;
            let truth_cols: Vec<bool> = self.ds.routing.link_index().iter().map(|&l| truth[l]).collect();
            confusion.merge(Confusion::from_sets(&diag.predicted_mask(), &truth_cols)?);
        }
        Ok(LinkMetrics { confusion, scores: confusion.scores() })
    }

    pub fn od_metrics(&self, series: &IndicatorSeries) -> Result<OdMetrics> {
        let est = self.od_estimates(series)?;
        let mut slot_gaps = Vec::with_capacity(est.len());
        let mut all_est = Vec::new();
        let mut all_ref = Vec::new();
        for (e, r) in est.iter().zip(&self.od_reference) {
            slot_gaps.push(error_gap(e, r)?.mean);
            all_est.extend_from_slice(e);
            all_ref.extend_from_slice(r);
        }
        let gap = error_gap(&all_est, &all_ref)?;
        Ok(OdMetrics { mean_gap: gap.mean, std_gap: gap.std, slot_gaps })
    }

    fn probes(&self) -> Result<&RootedProbes> {
        self.probes.as_ref().ok_or_else(|| PlatoError::UnsupportedTask("topology inference needs a tree with at least three leaves".into()))
    }

    /// RNJ on windowed empirical covariances of the root-path delays.
    pub fn topo_metrics(&self, series: &IndicatorSeries) -> Result<TopologyScore> {
        let probes = self.probes()?;
        let delays = series.channels[0].select_cols(&probes.path_rows);
        let cov = windowed_covariance(&delays, self.cfg.covariance_window)?;
        let max = cov.as_slice().iter().cloned().fold(0.0, f64::max);
        let tree = infer_topology_rnj(&cov, probes.root, &probes.receivers, self.cfg.rnj_tolerance * max)?;
        score_topology(&tree, &self.net)
    }

    /// RNJ on the exact shared-path metric from per-link delay variances.
    pub fn noise_free_topology(&self) -> Result<TopologyScore> {
        let probes = self.probes()?;
        let paths: Vec<_> = probes.path_rows.iter().map(|&r| &self.ds.paths.paths()[r]).collect();
        let cov = shared_path_covariance(&paths, &self.ds.link_delay_variances());
        let max = cov.as_slice().iter().cloned().fold(0.0, f64::max);
        let tree = infer_topology_rnj(&cov, probes.root, &probes.receivers, 1e-9 * max)?;
        score_topology(&tree, &self.net)
    }

    pub fn evaluate(&self, series: &IndicatorSeries, task: Task) -> Result<EvalRecord> {
        let clean = self.ds.clean_series().select_rows(&self.unlabeled);
        let mse = series.select_rows(&self.unlabeled).mse_to(&clean);
        Ok(EvalRecord {
            mse,
            link: task.covers(Task::Link).then(|| self.link_metrics(series)).transpose()?,
            od: task.covers(Task::Od).then(|| self.od_metrics(series)).transpose()?,
            topo: task.covers(Task::Topo).then(|| self.topo_metrics(series)).transpose()?,
        })
    }
}

// ------------------------------------------------------------ experiments

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seeds: Vec<u64>,
    pub node_range: (usize, usize),
    pub horizon: usize,
    pub noise_levels: Vec<f64>,
    pub noise_kinds: Vec<NoiseKind>,
    pub pipelines: Vec<Pipeline>,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3],
            node_range: (19, 30),
            horizon: 512,
            noise_levels: NOISE_GRID.to_vec(),
            noise_kinds: vec![NoiseKind::Channel, NoiseKind::Random],
            pipelines: Pipeline::ALL.to_vec(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() || self.noise_levels.is_empty() || self.noise_kinds.is_empty() || self.pipelines.is_empty() {
            return Err(PlatoError::InvalidArgument("seeds, noise grid, noise kinds and pipelines must be nonempty".into()));
        }
        if self.noise_levels.iter().any(|&l| !(l > 0.0)) {
            return Err(PlatoError::InvalidArgument("noise levels must be positive".into()));
        }
        if self.node_range.0 < 3 || self.node_range.0 > self.node_range.1 {
            return Err(PlatoError::InvalidArgument(format!("bad node range {:?}", self.node_range)));
        }
        self.train.validate()
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(&json)[..8])
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub seed: u64,
    pub topology: String,
    pub nodes: usize,
    pub noise_level: f64,
    pub noise_kind: NoiseKind,
    pub pipeline: Pipeline,
    pub record: Option<EvalRecord>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsBundle {
    pub manifest: Manifest,
    pub config: RunConfig,
    pub cells: Vec<CellResult>,
    /// Noise-free RNJ score per seed.
    pub noise_free_topology: BTreeMap<u64, TopologyScore>,
}

impl ResultsBundle {
    pub fn all_ok(&self) -> bool {
        self.cells.iter().all(|c| c.error.is_none())
    }

    pub fn cell(&self, seed: u64, level: f64, kind: NoiseKind, pipeline: Pipeline) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.seed == seed && c.noise_level == level && c.noise_kind == kind && c.pipeline == pipeline)
    }
}

pub fn manifest(config: &RunConfig) -> Manifest {
    Manifest {
        config_hash: config.hash(),
        seeds: config.seeds.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    }
}

/// Tree, probing paths and dataset for one matrix cell.
pub fn build_scenario(seed: u64, nodes: usize, horizon: usize, noise: NoiseConfig) -> Result<(Network, TomographyDataset)> {
    let net = generate_random_tree(nodes, rng::derive_seed(seed, "topology", 0))?;
    let paths = probe_paths(&net, seed)?;
    let ds = build_dataset(&net, &paths, &DatasetSpec::new(horizon, noise), rng::derive_seed(seed, "dataset", 0))?;
    Ok((net, ds))
}

fn run_cell(ds: &TomographyDataset, ctx: &EvalContext<'_>, pipeline: Pipeline, cfg: &RunConfig, model: &mut Option<PlatoModel>) -> Result<EvalRecord> {
    if pipeline == Pipeline::Platont && model.is_none() {
        let mut tc = cfg.train.clone();
        tc.seed = rng::derive_seed(cfg.train.seed, "train", ds.header.seed);
        let outcome = train(&TrainData::from_dataset(ds), &tc)?;
        if let Some(reason) = outcome.diverged {
            log::warn!("training diverged: {reason}");
        }
        *model = Some(outcome.model);
    }
    let series = denoise(ds, pipeline, model.as_ref(), &ctx.cfg)?;
    ctx.evaluate(&series, Task::All)
}

/// Runs every (seed, noise level, noise kind, pipeline) cell. Failing cells
/// carry their error and do not stop the others.
pub fn run_experiment_matrix(config: &RunConfig, mut progress: impl FnMut(&CellResult)) -> Result<ResultsBundle> {
    config.validate()?;
    let mut cells = Vec::new();
    let mut noise_free = BTreeMap::new();
    for &seed in &config.seeds {
        let nodes = scenario_nodes(config.node_range, seed);
        for &kind in &config.noise_kinds {
            for &level in &config.noise_levels {
                let noise = NoiseConfig { level, kind };
                let scenario = build_scenario(seed, nodes, config.horizon, noise);
                let (topology, mut failure) = match &scenario {
                    Ok((net, _)) => (net.topology_hash(), None),
                    Err(e) => (String::new(), Some(e.to_string())),
                };
                let ctx = match &scenario {
                    Ok((_, ds)) => match EvalContext::new(ds, config.eval) {
                        Ok(ctx) => Some(ctx),
                        Err(e) => {
                            failure = Some(e.to_string());
                            None
                        }
                    },
                    Err(_) => None,
                };
                if let Some(ctx) = &ctx {
                    if !noise_free.contains_key(&seed) {
                        if let Ok(score) = ctx.noise_free_topology() {
                            noise_free.insert(seed, score);
                        }
                    }
                }
                let mut model = None;
                for &pipeline in &config.pipelines {
                    let outcome = match (&scenario, &ctx) {
                        (Ok((_, ds)), Some(ctx)) => run_cell(ds, ctx, pipeline, config, &mut model).map_err(|e| e.to_string()),
                        _ => Err(failure.clone().unwrap_or_default()),
                    };
                    let cell = CellResult {
                        seed,
                        topology: topology.clone(),
                        nodes,
                        noise_level: level,
                        noise_kind: kind,
                        pipeline,
                        record: outcome.as_ref().ok().cloned(),
                        error: outcome.err(),
                    };
                    progress(&cell);
                    cells.push(cell);
                }
            }
        }
    }
    Ok(ResultsBundle { manifest: manifest(config), config: config.clone(), cells, noise_free_topology: noise_free })
}

// ---------------------------------------------------------------- reports

/// Relative change in percent; absolute percentage points when the base is zero.
pub fn relative_change(value: f64, base: f64) -> f64 {
    if base.abs() > 1e-12 {
        100.0 * (value - base) / base.abs()
    } else {
        100.0 * (value - base)
    }
}

/// Averages of a pipeline's metrics over the noise grid for one seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mse: [f64; 3],
    pub f1: f64,
    pub fpr: f64,
    /// Relative F1 loss vs the clean pipeline, percent.
    pub f1_degradation: f64,
    /// Relative FPR increase vs the clean pipeline, percent.
    pub fpr_increase: f64,
    pub od_gap: f64,
    pub hamming: f64,
    pub frobenius: f64,
    pub cells: usize,
}

/// Per-seed summary over all noise cells; `None` if any cell of the pipeline
/// or of its clean reference is missing or failed.
pub fn summarize(bundle: &ResultsBundle, seed: u64, pipeline: Pipeline, levels: Option<&[f64]>) -> Option<Summary> {
    let cfg = &bundle.config;
    let levels = levels.unwrap_or(&cfg.noise_levels);
    let mut s = Summary { mse: [0.0; 3], f1: 0.0, fpr: 0.0, f1_degradation: 0.0, fpr_increase: 0.0, od_gap: 0.0, hamming: 0.0, frobenius: 0.0, cells: 0 };
    for &kind in &cfg.noise_kinds {
        for &level in levels {
            let rec = bundle.cell(seed, level, kind, pipeline)?.record.as_ref()?;
            let base = bundle.cell(seed, level, kind, Pipeline::Clean)?.record.as_ref()?;
            let (link, base_link) = (rec.link.as_ref()?, base.link.as_ref()?);
            for k in 0..3 {
                s.mse[k] += rec.mse[k];
            }
            s.f1 += link.scores.f1;
            s.fpr += link.scores.fpr;
            s.f1_degradation += -relative_change(link.scores.f1, base_link.scores.f1);
            s.fpr_increase += relative_change(link.scores.fpr, base_link.scores.fpr);
            s.od_gap += rec.od.as_ref()?.mean_gap;
            let topo = rec.topo.as_ref()?;
            s.hamming += topo.hamming;
            s.frobenius += topo.frobenius;
            s.cells += 1;
        }
    }
    if s.cells == 0 {
        return None;
    }
    let n = s.cells as f64;
    s.mse.iter_mut().for_each(|v| *v /= n);
    for v in [&mut s.f1, &mut s.fpr, &mut s.f1_degradation, &mut s.fpr_increase, &mut s.od_gap, &mut s.hamming, &mut s.frobenius] {
        *v /= n;
    }
    Some(s)
}

fn fmt_change(v: f64, worse_is_up: bool) -> String {
    let arrow = if (v > 0.0) == worse_is_up { if worse_is_up { "▲" } else { "▼" } } else if worse_is_up { "▼" } else { "▲" };
    if v == 0.0 {
        "0.00%".to_string()
    } else {
        format!("{arrow}{:.2}%", v.abs())
    }
}

/// Markdown report: one row per seed and pipeline plus a totals row of means.
pub fn report(bundle: &ResultsBundle) -> String {
    let mut out = String::from("# PlatoNT experiment report\n\n");
    let cfg = &bundle.config;
    let levels: Vec<String> = cfg.noise_levels.iter().map(|l| l.to_string()).collect();
    let _ = writeln!(out, "Noise grid: {{{}}}; kinds: {}; config hash `{}`.\n", levels.join(", "),
        cfg.noise_kinds.iter().map(|k| k.name()).collect::<Vec<_>>().join(", "), bundle.manifest.config_hash);
    out.push_str("| seed | pipeline | MSE delay | MSE loss | MSE bw | F1 | F1 change | FPR | FPR change | OD gap | Hamming | Frobenius |\n");
    out.push_str("|---|---|---|---|---|---|---|---|---|---|---|---|\n");
    let seeds: Vec<u64> = {
        let mut s: Vec<u64> = bundle.cells.iter().map(|c| c.seed).collect();
        s.dedup();
        s
    };
    for &pipeline in &cfg.pipelines {
        let mut rows = Vec::new();
        for &seed in &seeds {
            match summarize(bundle, seed, pipeline, None) {
                Some(s) => {
                    let _ = writeln!(out, "| {seed} | {} | {}|", pipeline.name(), summary_cells(&s));
                    rows.push(s);
                }
                None => {
                    let _ = writeln!(out, "| {seed} | {} | missing cells |||||||||||", pipeline.name());
                }
            }
        }
        if !rows.is_empty() {
            let _ = writeln!(out, "| total | {} | {}|", pipeline.name(), summary_cells(&mean_summary(&rows)));
        }
    }
    let failed: Vec<&CellResult> = bundle.cells.iter().filter(|c| c.error.is_some()).collect();
    if !failed.is_empty() {
        out.push_str("\n## Failed cells\n\n");
        for c in failed {
            let _ = writeln!(out, "- seed {} {} {} {}: {}", c.seed, c.noise_kind.name(), c.noise_level, c.pipeline.name(), c.error.as_deref().unwrap_or(""));
        }
    }
    out
}

fn summary_cells(s: &Summary) -> String {
    format!(
        "{:.4} | {:.3e} | {:.3} | {:.3} | {} | {:.4} | {} | {:.3} | {:.4} | {:.3} ",
        s.mse[0], s.mse[1], s.mse[2], s.f1, fmt_change(-s.f1_degradation, false), s.fpr, fmt_change(s.fpr_increase, true), s.od_gap, s.hamming, s.frobenius
    )
}

/// Field-wise mean of summaries.
pub fn mean_summary(rows: &[Summary]) -> Summary {
    let n = rows.len() as f64;
    let avg = |f: &dyn Fn(&Summary) -> f64| rows.iter().map(f).sum::<f64>() / n;
    Summary {
        mse: [avg(&|s| s.mse[0]), avg(&|s| s.mse[1]), avg(&|s| s.mse[2])],
        f1: avg(&|s| s.f1),
        fpr: avg(&|s| s.fpr),
        f1_degradation: avg(&|s| s.f1_degradation),
        fpr_increase: avg(&|s| s.fpr_increase),
        od_gap: avg(&|s| s.od_gap),
        hamming: avg(&|s| s.hamming),
        frobenius: avg(&|s| s.frobenius),
        cells: rows.iter().map(|s| s.cells).sum(),
    }
}

/// Table-1 style CSV: link diagnosis per seed, noise cell and pipeline.
pub fn link_table_csv(bundle: &ResultsBundle) -> String {
    let mut s = String::from("seed,topology,noise_kind,noise_level,pipeline,precision,recall,f1,fpr,f1_change_pct,fpr_change_pct\n");
    for c in &bundle.cells {
        let Some(link) = c.record.as_ref().and_then(|r| r.link.as_ref()) else { continue };
        let base = bundle.cell(c.seed, c.noise_level, c.noise_kind, Pipeline::Clean).and_then(|b| b.record.as_ref()).and_then(|r| r.link.as_ref());
        let (df1, dfpr) = base.map_or((f64::NAN, f64::NAN), |b| (relative_change(link.scores.f1, b.scores.f1), relative_change(link.scores.fpr, b.scores.fpr)));
        let _ = writeln!(s, "{},{},{},{},{},{},{},{},{},{},{}", c.seed, c.topology, c.noise_kind.name(), c.noise_level, c.pipeline.name(),
            link.scores.precision, link.scores.recall, link.scores.f1, link.scores.fpr, df1, dfpr);
    }
    s
}

/// Table-2 style CSV: topology distances.
pub fn topology_table_csv(bundle: &ResultsBundle) -> String {
    let mut s = String::from("seed,topology,noise_kind,noise_level,pipeline,hamming,frobenius\n");
    for c in &bundle.cells {
        let Some(t) = c.record.as_ref().and_then(|r| r.topo.as_ref()) else { continue };
        let _ = writeln!(s, "{},{},{},{},{},{},{}", c.seed, c.topology, c.noise_kind.name(), c.noise_level, c.pipeline.name(), t.hamming, t.frobenius);
    }
    s
}

/// Per-slot OD error gaps.
pub fn od_series_csv(bundle: &ResultsBundle) -> String {
    let mut s = String::from("seed,noise_kind,noise_level,pipeline,slot,error_gap\n");
    for c in &bundle.cells {
        let Some(od) = c.record.as_ref().and_then(|r| r.od.as_ref()) else { continue };
        for (i, g) in od.slot_gaps.iter().enumerate() {
            let _ = writeln!(s, "{},{},{},{},{},{}", c.seed, c.noise_kind.name(), c.noise_level, c.pipeline.name(), i, g);
        }
    }
    s
}

/// Per-slot gaps averaged over the noise cells of one seed.
pub fn mean_slot_gaps(bundle: &ResultsBundle, seed: u64, pipeline: Pipeline) -> Option<Vec<f64>> {
    let mut acc: Option<Vec<f64>> = None;
    let mut count = 0.0;
    for c in bundle.cells.iter().filter(|c| c.seed == seed && c.pipeline == pipeline) {
        let gaps = &c.record.as_ref()?.od.as_ref()?.slot_gaps;
        let a = acc.get_or_insert_with(|| vec![0.0; gaps.len()]);
        a.iter_mut().zip(gaps).for_each(|(x, g)| *x += g);
        count += 1.0;
    }
    acc.map(|a| a.into_iter().map(|v| v / count).collect())
}

/// Empty-bundle helper for report tests and the `report` subcommand.
pub fn empty_bundle(config: RunConfig) -> ResultsBundle {
    ResultsBundle { manifest: manifest(&config), config, cells: Vec::new(), noise_free_topology: BTreeMap::new() }
}

pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}
