//! Synthetic measurement generator.
//!
//! A shared latent congestion vector `z_t` follows an AR(1) law; every link
//! reads it through a fixed loading row, which yields link utilization and
//! from it delay, loss and available bandwidth. Path indicators aggregate
//! link states (sum, complementary product, min) and are then corrupted by
//! one of two noise models.

use std::path::Path as FsPath;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{PlatoError, Result};
use crate::linalg::Matrix;
use crate::netmodel::{build_routing_matrix, Network, PathSet, RoutingMatrix, TopologyFile};
use crate::rng;

pub const SCHEMA_VERSION: u32 = 1;
pub const AR_COEFF: f64 = 0.9;
pub const AR_INNOVATION: f64 = 0.1;
pub const DEFAULT_THETA_C: f64 = 0.7;
pub const DEFAULT_CLEAN_FRACTION: f64 = 0.2;

/// The three indicator channels, in model channel order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Indicator {
    Delay,
    Loss,
    Bandwidth,
}

impl Indicator {
    pub const ALL: [Indicator; 3] = [Indicator::Delay, Indicator::Loss, Indicator::Bandwidth];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Indicator::Delay => "delay",
            Indicator::Loss => "loss",
            Indicator::Bandwidth => "bandwidth",
        }
    }

    /// Clamp into the physical domain of the indicator.
    pub fn clamp(self, v: f64) -> f64 {
        match self {
            Indicator::Loss => v.clamp(0.0, 1.0),
            _ => v.max(0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub latent_dim: usize,
    pub theta_c: f64,
    /// Link bias `b_ℓ` is drawn uniformly from this range.
    pub bias_range: (f64, f64),
    /// Base (propagation) delay `d0_ℓ` range in ms.
    pub base_delay_ms: (f64, f64),
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            latent_dim: 4,
            theta_c: DEFAULT_THETA_C,
            bias_range: (0.0, 0.9),
            base_delay_ms: (1.0, 5.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkState {
    pub delay_ms: f64,
    pub loss_rate: f64,
    pub avail_bw_mbps: f64,
    pub utilization: f64,
    pub congested: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentCongestion {
    pub t: usize,
    pub z: Vec<f64>,
}

/// Fixed per-link generative parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    /// `|L| × q` unit-norm loading rows.
    pub loading: Matrix,
    pub bias: Vec<f64>,
    pub base_delay_ms: Vec<f64>,
    pub capacity_mbps: Vec<f64>,
}

impl LinkParams {
    pub fn sample(net: &Network, cfg: &SimConfig, seed: u64) -> Result<Self> {
        if cfg.latent_dim == 0 {
            return Err(PlatoError::InvalidArgument("latent dimension must be ≥ 1".into()));
        }
        let mut rng = rng::stream(seed, "link-params", 0);
        let l = net.link_count();
        let q = cfg.latent_dim;
        let mut loading = Matrix::zeros(l, q);
        for i in 0..l {
            let row = loading.row_mut(i);
            loop {
                row.iter_mut()
                    .for_each(|v| *v = StandardNormal.sample(&mut rng));
                let n = crate::linalg::norm2(row);
                if n > 1e-12 {
                    row.iter_mut().for_each(|v| *v /= n);
                    break;
                }
            }
        }
        let (blo, bhi) = cfg.bias_range;
        let (dlo, dhi) = cfg.base_delay_ms;
        let bias = (0..l)
            .map(|_| blo + (bhi - blo) * rand::Rng::random::<f64>(&mut rng))
            .collect();
        let base_delay_ms = (0..l)
            .map(|_| dlo + (dhi - dlo) * rand::Rng::random::<f64>(&mut rng))
            .collect();
        Ok(Self {
            loading,
            bias,
            base_delay_ms,
            capacity_mbps: net.capacities(),
        })
    }

    pub fn link_count(&self) -> usize {
        self.bias.len()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Link states for one latent vector.
pub fn link_states_at(params: &LinkParams, z: &[f64], theta_c: f64) -> Vec<LinkState> {
    let pre = params.loading.matvec(z);
    (0..params.link_count())
        .map(|l| {
            let u = sigmoid(pre[l] + params.bias[l]);
            LinkState {
                delay_ms: params.base_delay_ms[l] * (1.0 + 4.0 * u * u),
                loss_rate: 0.001 + 0.3 * (u - theta_c).max(0.0) / (1.0 - theta_c),
                avail_bw_mbps: params.capacity_mbps[l] * (1.0 - u),
                utilization: u,
                congested: u > theta_c,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateTrajectory {
    pub params: LinkParams,
    pub theta_c: f64,
    pub latents: Vec<LatentCongestion>,
    pub links: Vec<Vec<LinkState>>,
}

impl StateTrajectory {
    pub fn horizon(&self) -> usize {
        self.latents.len()
    }
}

/// Simulates `horizon` steps of the latent AR(1) process and derived link states.
pub fn simulate_states(net: &Network, cfg: &SimConfig, horizon: usize, seed: u64) -> Result<StateTrajectory> {
    if horizon == 0 {
        return Err(PlatoError::InvalidArgument("horizon must be ≥ 1".into()));
    }
    let params = LinkParams::sample(net, cfg, seed)?;
    let q = cfg.latent_dim;
    let stationary_sd = AR_INNOVATION / (1.0 - AR_COEFF * AR_COEFF).sqrt();
    let mut init = rng::stream(seed, "latent-init", 0);
    let mut z: Vec<f64> = (0..q)
        .map(|_| {
            let g: f64 = StandardNormal.sample(&mut init);
            stationary_sd * g
        })
        .collect();
    let mut latents = Vec::with_capacity(horizon);
    let mut links = Vec::with_capacity(horizon);
    for t in 0..horizon {
        if t > 0 {
            let mut step = rng::stream(seed, "latent-step", t as u64);
            for v in z.iter_mut() {
                let eta: f64 = StandardNormal.sample(&mut step);
                *v = AR_COEFF * *v + AR_INNOVATION * eta;
            }
        }
        links.push(link_states_at(&params, &z, cfg.theta_c));
        latents.push(LatentCongestion { t, z: z.clone() });
    }
    Ok(StateTrajectory {
        params,
        theta_c: cfg.theta_c,
        latents,
        links,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathMeasurement {
    pub delay_ms: f64,
    pub loss_rate: f64,
    pub bottleneck_bw_mbps: f64,
}

/// Additive delay, multiplicative loss, bottleneck bandwidth.
pub fn aggregate_path(link_states: &[LinkState], path: &[usize]) -> Result<PathMeasurement> {
    if path.is_empty() {
        return Err(PlatoError::InvalidArgument("empty path".into()));
    }
    let mut delay = 0.0;
    let mut keep = 1.0;
    let mut bw = f64::INFINITY;
    for &l in path {
        let s = link_states.get(l).ok_or_else(|| {
            PlatoError::InvalidArgument(format!("link {l} out of range"))
        })?;
        delay += s.delay_ms;
        keep *= 1.0 - s.loss_rate;
        bw = bw.min(s.avail_bw_mbps);
    }
    Ok(PathMeasurement {
        delay_ms: delay,
        loss_rate: 1.0 - keep,
        bottleneck_bw_mbps: bw,
    })
}

/// Time × path matrices for each of the three indicators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorSeries {
    pub channels: [Matrix; 3],
}

impl IndicatorSeries {
    pub fn channel(&self, ind: Indicator) -> &Matrix {
        &self.channels[ind.index()]
    }

    pub fn len(&self) -> usize {
        self.channels[0].rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> [usize; 3] {
        [
            self.channels[0].cols(),
            self.channels[1].cols(),
            self.channels[2].cols(),
        ]
    }

    pub fn select_rows(&self, idx: &[usize]) -> IndicatorSeries {
        IndicatorSeries {
            channels: [
                self.channels[0].select_rows(idx),
                self.channels[1].select_rows(idx),
                self.channels[2].select_rows(idx),
            ],
        }
    }

    pub fn concatenated(&self) -> Matrix {
        Matrix::hstack(&[&self.channels[0], &self.channels[1], &self.channels[2]])
    }

    pub fn from_concatenated(m: &Matrix, dims: [usize; 3]) -> IndicatorSeries {
        let parts = m.hsplit(&dims);
        let mut it = parts.into_iter();
        IndicatorSeries {
            channels: [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()],
        }
    }

    /// Mean squared error to `other`, per indicator.
    pub fn mse_to(&self, other: &IndicatorSeries) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (k, o) in out.iter_mut().enumerate() {
            let a = self.channels[k].as_slice();
            let b = other.channels[k].as_slice();
            *o = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len().max(1) as f64;
        }
        out
    }
}

/// Clean path indicators for every time step of a trajectory.
pub fn measure_paths(traj: &StateTrajectory, paths: &PathSet) -> Result<IndicatorSeries> {
    let t = traj.horizon();
    let p = paths.len();
    let mut channels = [Matrix::zeros(t, p), Matrix::zeros(t, p), Matrix::zeros(t, p)];
    for (ti, states) in traj.links.iter().enumerate() {
        for (pi, path) in paths.paths().iter().enumerate() {
            let m = aggregate_path(states, &path.links)?;
            channels[0][(ti, pi)] = m.delay_ms;
            channels[1][(ti, pi)] = m.loss_rate;
            channels[2][(ti, pi)] = m.bottleneck_bw_mbps;
        }
    }
    Ok(IndicatorSeries { channels })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Multiplicative: `x·(1 + σ·g)`.
    Channel,
    /// Additive, scaled by the per-column batch spread: `x + σ·std(x)·g`.
    Random,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 2] = [NoiseKind::Channel, NoiseKind::Random];

    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::Channel => "channel",
            NoiseKind::Random => "random",
        }
    }
}

impl std::str::FromStr for NoiseKind {
    type Err = PlatoError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "channel" => Ok(NoiseKind::Channel),
            "random" => Ok(NoiseKind::Random),
            other => Err(PlatoError::InvalidArgument(format!("unknown noise kind {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub level: f64,
    pub kind: NoiseKind,
}

pub const NOISE_GRID: [f64; 3] = [0.05, 0.1, 0.2];

/// Corrupts every entry; row `t` draws from its own stream so the result
/// does not depend on evaluation order.
pub fn inject_noise(clean: &IndicatorSeries, noise: NoiseConfig, seed: u64) -> Result<IndicatorSeries> {
    if !(noise.level >= 0.0 && noise.level.is_finite()) {
        return Err(PlatoError::InvalidArgument(format!(
            "noise level must be finite and ≥ 0, got {}",
            noise.level
        )));
    }
    let mut out = clean.clone();
    for ind in Indicator::ALL {
        let k = ind.index();
        let spread = match noise.kind {
            NoiseKind::Random => clean.channels[k].column_stds(),
            NoiseKind::Channel => Vec::new(),
        };
        let m = &mut out.channels[k];
        for t in 0..m.rows() {
            let mut rng = rng::stream(seed, "noise", ((t as u64) << 2) | k as u64);
            for (j, v) in m.row_mut(t).iter_mut().enumerate() {
                let g: f64 = StandardNormal.sample(&mut rng);
                let noisy = match noise.kind {
                    NoiseKind::Channel => *v * (1.0 + noise.level * g),
                    NoiseKind::Random => *v + noise.level * spread[j] * g,
                };
                *v = ind.clamp(noisy);
            }
        }
    }
    Ok(out)
}

/// Gravity-model origin–destination traffic over the probing pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdScenario {
    pub masses: Vec<f64>,
    pub pairs: Vec<(usize, usize)>,
    pub flows_mbps: Vec<f64>,
    pub link_loads_mbps: Vec<f64>,
}

impl OdScenario {
    /// Gravity prior `m_s·m_d`, scaled so the flows sum to `total`.
    pub fn gravity_prior(&self, total: f64) -> Vec<f64> {
        let raw: Vec<f64> = self
            .pairs
            .iter()
            .map(|&(s, d)| self.masses[s] * self.masses[d])
            .collect();
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v * total / sum).collect()
    }
}

/// Link loads `y = R_odᵀ x` for per-pair flows, where `routing` rows are the OD pairs.
pub fn link_loads(routing: &RoutingMatrix, flows: &[f64]) -> Vec<f64> {
    routing.entries().t_matvec(flows)
}

pub fn generate_od_scenario(net: &Network, routing: &RoutingMatrix, seed: u64) -> Result<OdScenario> {
    let mut rng = rng::stream(seed, "od-masses", 0);
    let lognormal = LogNormal::new(0.0, 0.5).map_err(|e| PlatoError::numeric("od", e.to_string()))?;
    let masses: Vec<f64> = (0..net.node_count()).map(|_| lognormal.sample(&mut rng)).collect();
    let pairs = routing.path_index().to_vec();
    let budget = 0.25 * net.capacities().iter().sum::<f64>();
    let raw: Vec<f64> = pairs.iter().map(|&(s, d)| masses[s] * masses[d]).collect();
    let sum: f64 = raw.iter().sum();
    let flows_mbps: Vec<f64> = raw.iter().map(|v| v * budget / sum).collect();
    let link_loads_mbps = link_loads(routing, &flows_mbps);
    Ok(OdScenario {
        masses,
        pairs,
        flows_mbps,
        link_loads_mbps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkTruth {
    pub delay_ms: Vec<f64>,
    pub loss_rate: Vec<f64>,
    pub avail_bw_mbps: Vec<f64>,
    pub utilization: Vec<f64>,
    pub congested: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorRow {
    pub delay: Vec<f64>,
    pub loss: Vec<f64>,
    pub bandwidth: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: usize,
    pub noisy: IndicatorRow,
    /// Noise-free indicators. Always stored for evaluation; only rows with
    /// `clean_labeled` may be used as training targets.
    pub clean: IndicatorRow,
    pub clean_labeled: bool,
    pub link_truth: LinkTruth,
    pub od_flows_mbps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub schema_version: u32,
    pub topology_hash: String,
    pub noise: NoiseConfig,
    pub indicator_dims: [usize; 3],
    pub clean_fraction: f64,
    pub horizon: usize,
    pub seed: u64,
    pub sim: SimConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TomographyDataset {
    pub header: DatasetHeader,
    pub topology: TopologyFile,
    pub paths: PathSet,
    pub routing: RoutingMatrix,
    /// Node adjacency of the ground-truth topology (static over time).
    pub adjacency: Matrix,
    pub link_params: LinkParams,
    pub od: OdScenario,
    pub samples: Vec<Sample>,
}

impl TomographyDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn network(&self) -> Result<Network> {
        Network::from_file(self.topology.clone())
    }

    fn series(&self, pick: impl Fn(&Sample) -> &IndicatorRow) -> IndicatorSeries {
        let t = self.samples.len();
        let dims = self.header.indicator_dims;
        let mut channels = [
            Matrix::zeros(t, dims[0]),
            Matrix::zeros(t, dims[1]),
            Matrix::zeros(t, dims[2]),
        ];
        for (i, s) in self.samples.iter().enumerate() {
            let row = pick(s);
            channels[0].row_mut(i).copy_from_slice(&row.delay);
            channels[1].row_mut(i).copy_from_slice(&row.loss);
            channels[2].row_mut(i).copy_from_slice(&row.bandwidth);
        }
        IndicatorSeries { channels }
    }

    pub fn noisy_series(&self) -> IndicatorSeries {
        self.series(|s| &s.noisy)
    }

    pub fn clean_series(&self) -> IndicatorSeries {
        self.series(|s| &s.clean)
    }

    pub fn labeled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.samples[i].clean_labeled).collect()
    }

    pub fn unlabeled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.samples[i].clean_labeled).collect()
    }

    /// Per-link variance of the true link delay over all samples.
    pub fn link_delay_variances(&self) -> Vec<f64> {
        let l = self.routing.link_count();
        let m = Matrix::from_fn(self.len(), l, |t, j| self.samples[t].link_truth.delay_ms[j]);
        m.column_stds().into_iter().map(|s| s * s).collect()
    }

    pub fn save(&self, path: impl AsRef<FsPath>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<FsPath>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let ds: Self = serde_json::from_slice(&bytes).map_err(|e| PlatoError::Format(e.to_string()))?;
        if ds.header.schema_version != SCHEMA_VERSION {
            return Err(PlatoError::Format(format!(
                "unsupported dataset schema version {}",
                ds.header.schema_version
            )));
        }
        Ok(ds)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub horizon: usize,
    pub clean_fraction: f64,
    pub noise: NoiseConfig,
    pub sim: SimConfig,
}

impl DatasetSpec {
    pub fn new(horizon: usize, noise: NoiseConfig) -> Self {
        Self {
            horizon,
            clean_fraction: DEFAULT_CLEAN_FRACTION,
            noise,
            sim: SimConfig::default(),
        }
    }
}

/// Number of clean-labeled samples: `⌈fraction · horizon⌉`.
pub fn clean_count(fraction: f64, horizon: usize) -> usize {
    // guard against 0.2·100 = 20.000000000000004
    let raw = fraction * horizon as f64;
    let rounded = raw.round();
    if (raw - rounded).abs() < 1e-9 {
        rounded as usize
    } else {
        raw.ceil() as usize
    }
}

pub fn build_dataset(net: &Network, paths: &PathSet, spec: &DatasetSpec, seed: u64) -> Result<TomographyDataset> {
    if spec.horizon < 2 {
        return Err(PlatoError::InvalidArgument("horizon must be ≥ 2".into()));
    }
    if !(0.0..=1.0).contains(&spec.clean_fraction) {
        return Err(PlatoError::InvalidArgument("clean fraction must lie in [0, 1]".into()));
    }
    let routing = build_routing_matrix(net, paths)?;
    let traj = simulate_states(net, &spec.sim, spec.horizon, seed)?;
    let clean = measure_paths(&traj, paths)?;
    let noisy = inject_noise(&clean, spec.noise, rng::derive_seed(seed, "dataset-noise", 0))?;
    let od = generate_od_scenario(net, &routing, seed)?;
    let base_total: f64 = od.link_loads_mbps.iter().sum();

    let mut order: Vec<usize> = (0..spec.horizon).collect();
    order.shuffle(&mut rng::stream(seed, "clean-subset", 0));
    let mut labeled = vec![false; spec.horizon];
    for &i in order.iter().take(clean_count(spec.clean_fraction, spec.horizon)) {
        labeled[i] = true;
    }

    let row = |s: &IndicatorSeries, t: usize| IndicatorRow {
        delay: s.channels[0].row(t).to_vec(),
        loss: s.channels[1].row(t).to_vec(),
        bandwidth: s.channels[2].row(t).to_vec(),
    };
    let samples = (0..spec.horizon)
        .map(|t| {
            let states = &traj.links[t];
            let load_total: f64 = states
                .iter()
                .zip(&traj.params.capacity_mbps)
                .map(|(s, c)| s.utilization * c)
                .sum();
            let scale = load_total / base_total;
            Sample {
                t,
                noisy: row(&noisy, t),
                clean: row(&clean, t),
                clean_labeled: labeled[t],
                link_truth: LinkTruth {
                    delay_ms: states.iter().map(|s| s.delay_ms).collect(),
                    loss_rate: states.iter().map(|s| s.loss_rate).collect(),
                    avail_bw_mbps: states.iter().map(|s| s.avail_bw_mbps).collect(),
                    utilization: states.iter().map(|s| s.utilization).collect(),
                    congested: states.iter().map(|s| s.congested).collect(),
                },
                od_flows_mbps: od.flows_mbps.iter().map(|f| f * scale).collect(),
            }
        })
        .collect();

    Ok(TomographyDataset {
        header: DatasetHeader {
            schema_version: SCHEMA_VERSION,
            topology_hash: net.topology_hash(),
            noise: spec.noise,
            indicator_dims: [paths.len(); 3],
            clean_fraction: spec.clean_fraction,
            horizon: spec.horizon,
            seed,
            sim: spec.sim,
        },
        topology: net.to_file(),
        paths: paths.clone(),
        routing,
        adjacency: net.adjacency_matrix(),
        link_params: traj.params,
        od,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{default_probe_pairs, enumerate_paths, generate_random_tree};

    fn state(delay: f64, loss: f64, bw: f64) -> LinkState {
        LinkState {
            delay_ms: delay,
            loss_rate: loss,
            avail_bw_mbps: bw,
            utilization: 0.5,
            congested: false,
        }
    }

    #[test]
    fn aggregation_examples() {
        let links = [state(2.0, 0.1, 10.0), state(3.0, 0.2, 5.0)];
        let m = aggregate_path(&links, &[0, 1]).unwrap();
        assert!((m.delay_ms - 5.0).abs() < 1e-15);
        assert!((m.loss_rate - 0.28).abs() < 1e-15);
        assert_eq!(m.bottleneck_bw_mbps, 5.0);
        assert!(aggregate_path(&links, &[]).is_err());
        assert!(aggregate_path(&links, &[2]).is_err());
    }

    #[test]
    fn zero_loading_gives_half_utilization() {
        let params = LinkParams {
            loading: Matrix::zeros(3, 1),
            bias: vec![0.0; 3],
            base_delay_ms: vec![1.0; 3],
            capacity_mbps: vec![100.0; 3],
        };
        let s = link_states_at(&params, &[0.3], 0.7);
        for l in s {
            assert_eq!(l.utilization, 0.5);
            assert!(!l.congested);
            assert!((l.delay_ms - 2.0).abs() < 1e-15);
            assert!((l.avail_bw_mbps - 50.0).abs() < 1e-12);
            assert!((l.loss_rate - 0.001).abs() < 1e-15);
        }
    }

    #[test]
    fn trajectories_are_deterministic() {
        let net = generate_random_tree(10, 1).unwrap();
        let a = simulate_states(&net, &SimConfig::default(), 20, 5).unwrap();
        let b = simulate_states(&net, &SimConfig::default(), 20, 5).unwrap();
        assert_eq!(a, b);
        assert!(simulate_states(&net, &SimConfig::default(), 0, 5).is_err());
    }

    #[test]
    fn clean_delay_is_routing_times_link_delay() {
        let net = generate_random_tree(15, 2).unwrap();
        let paths = enumerate_paths(&net, &default_probe_pairs(&net, 0)).unwrap();
        let spec = DatasetSpec::new(30, NoiseConfig { level: 0.1, kind: NoiseKind::Channel });
        let ds = build_dataset(&net, &paths, &spec, 9).unwrap();
        for s in &ds.samples {
            let expect = ds.routing.entries().matvec(&s.link_truth.delay_ms);
            for (a, b) in expect.iter().zip(&s.clean.delay) {
                assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn channel_noise_preserves_zero_and_bounds() {
        let clean = IndicatorSeries {
            channels: [
                Matrix::from_rows(&[vec![0.0, 3.0], vec![1.0, 2.0]]),
                Matrix::from_rows(&[vec![0.0, 0.99], vec![0.5, 0.01]]),
                Matrix::from_rows(&[vec![0.0, 10.0], vec![20.0, 5.0]]),
            ],
        };
        for kind in NoiseKind::ALL {
            let noisy = inject_noise(&clean, NoiseConfig { level: 0.2, kind }, 4).unwrap();
            for k in 0..3 {
                for v in noisy.channels[k].as_slice() {
                    assert!(*v >= 0.0);
                    if k == 1 {
                        assert!(*v <= 1.0);
                    }
                }
            }
            if kind == NoiseKind::Channel {
                for k in 0..3 {
                    assert_eq!(noisy.channels[k][(0, 0)], 0.0);
                }
            }
        }
        let zero = inject_noise(&clean, NoiseConfig { level: 0.0, kind: NoiseKind::Random }, 4).unwrap();
        assert_eq!(zero, clean);
        assert!(inject_noise(&clean, NoiseConfig { level: -1.0, kind: NoiseKind::Random }, 4).is_err());
    }

    #[test]
    fn clean_count_ceiling() {
        assert_eq!(clean_count(0.2, 100), 20);
        assert_eq!(clean_count(0.2, 512), 103);
        assert_eq!(clean_count(1.0, 7), 7);
        assert_eq!(clean_count(0.0, 7), 0);
    }

    #[test]
    fn dataset_clean_fraction_and_roundtrip() {
        let net = generate_random_tree(12, 3).unwrap();
        let paths = enumerate_paths(&net, &default_probe_pairs(&net, 0)).unwrap();
        let mut spec = DatasetSpec::new(100, NoiseConfig { level: 0.05, kind: NoiseKind::Random });
        let ds = build_dataset(&net, &paths, &spec, 1).unwrap();
        assert_eq!(ds.labeled_indices().len(), 20);
        spec.clean_fraction = 1.0;
        let all = build_dataset(&net, &paths, &spec, 1).unwrap();
        assert!(all.samples.iter().all(|s| s.clean_labeled));

        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("ds.json");
        ds.save(&f).unwrap();
        assert_eq!(TomographyDataset::load(&f).unwrap(), ds);

        spec.horizon = 1;
        assert!(build_dataset(&net, &paths, &spec, 1).is_err());
    }

    #[test]
    fn single_od_pair_single_link() {
        let net = Network::new(
            2,
            vec![crate::netmodel::Link { id: 0, a: 0, b: 1, capacity_mbps: 100.0 }],
        )
        .unwrap();
        let paths = enumerate_paths(&net, &[(0, 1)]).unwrap();
        let r = build_routing_matrix(&net, &paths).unwrap();
        assert_eq!(link_loads(&r, &[7.5]), vec![7.5]);
        let od = generate_od_scenario(&net, &r, 0).unwrap();
        assert_eq!(od.link_loads_mbps, od.flows_mbps);
        assert!(od.flows_mbps.iter().all(|&f| f >= 0.0));
    }
}
