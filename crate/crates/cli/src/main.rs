use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use platont_core::neural::{load_checkpoint, save_checkpoint};
use platont_core::netmodel::{generate_random_tree, load_topology, save_topology};
use platont_core::objectives::write_log;
use platont_core::pipeline::{
    denoise, link_table_csv, od_series_csv, probe_paths, report, run_experiment_matrix, topology_table_csv,
    EvalConfig, EvalContext, EvalRecord, Pipeline, ResultsBundle, RunConfig, Task,
};
use platont_core::simkit::{build_dataset, DatasetSpec, NoiseConfig, NoiseKind, TomographyDataset, DEFAULT_CLEAN_FRACTION};
use platont_core::theorylab::{proposition1_sweep, theorem1_sweep, Prop1Sweep, Theorem1Sweep};
use platont_core::trainer::{train, TrainConfig, TrainData};

const SEED_VAR: &str = "PLATONT_SEED";

#[derive(Parser)]
#[command(name = "platont", version, about = "Multi-indicator network tomography toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random tree topology.
    GenTopo {
        #[arg(long)]
        nodes: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate a multi-indicator dataset on a topology.
    Simulate {
        #[arg(long)]
        topo: PathBuf,
        #[arg(long, default_value_t = 512)]
        horizon: usize,
        #[arg(long, default_value_t = 0.1)]
        noise_level: f64,
        #[arg(long, default_value = "channel")]
        noise_kind: NoiseKind,
        #[arg(long, default_value_t = DEFAULT_CLEAN_FRACTION)]
        clean_frac: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a denoising model and write a checkpoint and a CSV log.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// JSON training config; defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Run tomography tasks on one dataset through one pipeline.
    Eval {
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint, required for the platont pipeline.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long, default_value = "all")]
        task: Task,
        #[arg(long, default_value = "platont")]
        pipeline: Pipeline,
        /// JSON evaluation config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Numerical checks of the kernel shift bound and the gradient bound.
    Theory {
        #[arg(long, value_enum, default_value_t = Check::All)]
        check: Check,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        report: PathBuf,
    },
    /// Run the full seeds x noise grid x pipelines experiment matrix.
    Matrix {
        /// JSON run config; defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated seeds overriding the config.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a markdown report from a results bundle.
    Report {
        #[arg(long)]
        results: PathBuf,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Check {
    Thm1,
    Prop1,
    All,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    version: &'a str,
    config_hash: String,
    seeds: Vec<u64>,
    inputs: Vec<(String, String)>,
    config: &'a Value,
}

fn sha_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_VAR) {
        Ok(v) => Ok(Some(v.trim().parse().with_context(|| format!("{SEED_VAR}={v} is not an integer"))?)),
        Err(_) => Ok(None),
    }
}

/// Flag first, then the environment, then the config value.
fn resolve_seed(flag: Option<u64>, config: u64) -> Result<u64> {
    Ok(flag.or(env_seed()?).unwrap_or(config))
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn write_manifest(path: &Path, command: &str, seeds: Vec<u64>, inputs: &[&Path], config: &Value) -> Result<()> {
    let inputs = inputs
        .iter()
        .map(|p| Ok((p.display().to_string(), sha_hex(&fs::read(p).with_context(|| format!("reading {}", p.display()))?))))
        .collect::<Result<Vec<_>>>()?;
    let m = RunManifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config_hash: sha_hex(&serde_json::to_vec(config)?),
        seeds,
        inputs,
        config,
    };
    write_json(path, &m)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
        None => Ok(T::default()),
    }
}

fn gen_topo(nodes: usize, seed: Option<u64>, out: &Path) -> Result<bool> {
    let seed = resolve_seed(seed, 0)?;
    let net = generate_random_tree(nodes, seed)?;
    save_topology(&net, out)?;
    log::info!("wrote {} ({} nodes, hash {})", out.display(), nodes, net.topology_hash());
    write_manifest(&manifest_path(out), "gen-topo", vec![seed], &[], &json!({ "nodes": nodes, "seed": seed }))?;
    Ok(true)
}

struct SimulateArgs<'a> {
    topo: &'a Path,
    horizon: usize,
    noise_level: f64,
    noise_kind: NoiseKind,
    clean_frac: f64,
    seed: Option<u64>,
    out: &'a Path,
}

fn simulate(a: SimulateArgs<'_>) -> Result<bool> {
    let seed = resolve_seed(a.seed, 0)?;
    let net = load_topology(a.topo)?;
    let paths = probe_paths(&net, seed)?;
    let mut spec = DatasetSpec::new(a.horizon, NoiseConfig { level: a.noise_level, kind: a.noise_kind });
    spec.clean_fraction = a.clean_frac;
    let ds = build_dataset(&net, &paths, &spec, seed)?;
    ds.save(a.out)?;
    log::info!("wrote {} ({} samples, {} paths)", a.out.display(), ds.len(), ds.paths.len());
    write_manifest(&manifest_path(a.out), "simulate", vec![seed], &[a.topo], &json!({ "spec": spec, "seed": seed }))?;
    Ok(true)
}

fn train_cmd(data: &Path, config: Option<&Path>, out: &Path, log_path: Option<&Path>) -> Result<bool> {
    let mut cfg: TrainConfig = read_json(config)?;
    cfg.seed = resolve_seed(None, cfg.seed)?;
    let ds = TomographyDataset::load(data)?;
    let mut td = TrainData::from_dataset(&ds);
    if let Some(task) = cfg.task {
        td = td.with_task(&ds, task, EvalConfig::default().link_ridge)?;
    }
    let outcome = train(&td, &cfg)?;
    if let Some(reason) = &outcome.diverged {
        log::warn!("training diverged: {reason}");
    }
    log::info!("best epoch {:?}, loss {:.6}", outcome.best_epoch, outcome.best_loss);
    let cfg_value = serde_json::to_value(&cfg)?;
    save_checkpoint(&outcome.model, cfg_value.clone(), out)?;
    if let Some(p) = log_path {
        write_log(&outcome.log, fs::File::create(p).with_context(|| format!("creating {}", p.display()))?)?;
    }
    let mut inputs = vec![data];
    inputs.extend(config);
    write_manifest(&manifest_path(out), "train", vec![cfg.seed], &inputs, &cfg_value)?;
    Ok(outcome.diverged.is_none())
}

#[derive(Serialize)]
struct EvalOutput {
    topology_hash: String,
    dataset_seed: u64,
    noise: NoiseConfig,
    pipeline: Pipeline,
    task: Task,
    record: EvalRecord,
}

fn eval_cmd(data: &Path, ckpt: Option<&Path>, task: Task, pipeline: Pipeline, config: Option<&Path>, out: &Path) -> Result<bool> {
    let cfg: EvalConfig = read_json(config)?;
    let ds = TomographyDataset::load(data)?;
    let model = match ckpt {
        Some(p) => Some(load_checkpoint(p)?.0),
        None if pipeline == Pipeline::Platont => bail!("--ckpt is required for the platont pipeline"),
        None => None,
    };
    let ctx = EvalContext::new(&ds, cfg)?;
    let series = denoise(&ds, pipeline, model.as_ref(), &cfg)?;
    let record = ctx.evaluate(&series, task)?;
    let result = EvalOutput {
        topology_hash: ds.header.topology_hash.clone(),
        dataset_seed: ds.header.seed,
        noise: ds.header.noise,
        pipeline,
        task,
        record,
    };
    write_json(out, &result)?;
    let mut inputs = vec![data];
    inputs.extend(ckpt);
    inputs.extend(config);
    let cfg_value = json!({ "eval": cfg, "task": task, "pipeline": pipeline });
    write_manifest(&manifest_path(out), "eval", vec![ds.header.seed], &inputs, &cfg_value)?;
    Ok(true)
}

#[derive(Serialize)]
struct TheoryReport {
    seed: u64,
    trials: usize,
    theorem1: Option<Theorem1Sweep>,
    proposition1: Option<Prop1Sweep>,
    all_hold: bool,
}

fn theory(check: Check, trials: usize, seed: Option<u64>, out: &Path) -> Result<bool> {
    let seed = resolve_seed(seed, 0)?;
    let theorem1 = match check {
        Check::Thm1 | Check::All => Some(theorem1_sweep(trials, seed)?),
        Check::Prop1 => None,
    };
    let proposition1 = match check {
        Check::Prop1 | Check::All => Some(proposition1_sweep(trials, seed)?),
        Check::Thm1 => None,
    };
    if let Some(s) = &theorem1 {
        log::info!("theorem 1: {}/{} shifts certified, part II {}/{}", s.certified, s.trials.len(), s.part2_psd, s.part2_trials);
    }
    if let Some(s) = &proposition1 {
        log::info!("proposition 1: {}/{} bounds hold", s.holds, s.trials.len());
    }
    let all_hold = theorem1.as_ref().is_none_or(|s| s.all_hold()) && proposition1.as_ref().is_none_or(|s| s.all_hold());
    write_json(out, &TheoryReport { seed, trials, theorem1, proposition1, all_hold })?;
    write_manifest(&manifest_path(out), "theory", vec![seed], &[], &json!({ "check": check, "trials": trials, "seed": seed }))?;
    Ok(all_hold)
}

fn matrix(config: Option<&Path>, seeds: Option<Vec<u64>>, epochs: Option<usize>, out: &Path) -> Result<bool> {
    let mut cfg: RunConfig = read_json(config)?;
    if let Some(s) = env_seed()? {
        cfg.seeds = vec![s];
    }
    if let Some(s) = seeds {
        cfg.seeds = s;
    }
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let bundle = run_experiment_matrix(&cfg, |cell| match &cell.error {
        None => log::info!("seed {} {} {} {}: ok", cell.seed, cell.noise_kind.name(), cell.noise_level, cell.pipeline.name()),
        Some(e) => log::error!("seed {} {} {} {}: {e}", cell.seed, cell.noise_kind.name(), cell.noise_level, cell.pipeline.name()),
    })?;
    write_json(&out.join("results.json"), &bundle)?;
    fs::write(out.join("link_table.csv"), link_table_csv(&bundle))?;
    fs::write(out.join("topology_table.csv"), topology_table_csv(&bundle))?;
    fs::write(out.join("od_series.csv"), od_series_csv(&bundle))?;
    fs::write(out.join("report.md"), report(&bundle))?;
    let inputs: Vec<&Path> = config.into_iter().collect();
    write_manifest(&out.join("manifest.json"), "matrix", cfg.seeds.clone(), &inputs, &serde_json::to_value(&cfg)?)?;
    Ok(bundle.all_ok())
}

fn report_cmd(results: &Path, out: Option<&Path>) -> Result<bool> {
    let text = fs::read_to_string(results).with_context(|| format!("reading {}", results.display()))?;
    let bundle: ResultsBundle = serde_json::from_str(&text).with_context(|| format!("parsing {}", results.display()))?;
    let md = report(&bundle);
    match out {
        Some(p) => {
            fs::write(p, &md).with_context(|| format!("writing {}", p.display()))?;
            write_manifest(&manifest_path(p), "report", bundle.manifest.seeds.clone(), &[results], &json!({}))?;
        }
        None => print!("{md}"),
    }
    Ok(bundle.all_ok())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenTopo { nodes, seed, out } => gen_topo(nodes, seed, &out),
        Command::Simulate { topo, horizon, noise_level, noise_kind, clean_frac, seed, out } => simulate(SimulateArgs {
            topo: &topo,
            horizon,
            noise_level,
            noise_kind,
            clean_frac,
            seed,
            out: &out,
        }),
        Command::Train { data, config, out, log } => train_cmd(&data, config.as_deref(), &out, log.as_deref()),
        Command::Eval { data, ckpt, task, pipeline, config, out } => {
            eval_cmd(&data, ckpt.as_deref(), task, pipeline, config.as_deref(), &out)
        }
        Command::Theory { check, trials, seed, report } => theory(check, trials, seed, &report),
        Command::Matrix { config, seeds, epochs, out } => matrix(config.as_deref(), seeds, epochs, &out),
        Command::Report { results, out } => report_cmd(&results, out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
