//! Acceptance suite. Prints one PASS/FAIL line per criterion, then asserts
//! the outcome. Criteria listed in `KNOWN_FAILURES` are reported as FAIL and
//! must keep failing; if one starts passing the list is stale.

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::Rng as _;

use platont_core::gradcheck::{check, standard_cases, MAX_PARAMS};
use platont_core::linalg::Matrix;
use platont_core::objectives::alignment_loss;
use platont_core::pipeline::{
    build_scenario, mean_slot_gaps, quantile, run_experiment_matrix, summarize, EvalConfig, EvalContext, Pipeline,
    ResultsBundle, RunConfig,
};
use platont_core::rng;
use platont_core::simkit::{aggregate_path, LinkState, NoiseConfig, NoiseKind};
use platont_core::theorylab::{proposition1_check, proposition1_sweep, theorem1_sweep};
use platont_core::trainer::{encoder_gradient_bundle, init_model, train_from, TrainConfig, TrainData};

const KNOWN_FAILURES: &[u8] = &[6, 7];

const GRAD_TOL: f64 = 1e-4;
const GRAD_CONFIGS: usize = 24;
const THM1_TRIALS: usize = 12_000;
const PART2_MIN: usize = 1_000;
const PROP1_TRIALS: usize = 1_000;
const PACKETS: usize = 100_000;
const MC_PATHS: usize = 100;
const MC_SIGMAS: f64 = 3.0;
const ANCHOR_ZERO_TOL: f64 = 1e-10;
const ANCHOR_PAIR: f64 = -0.75977;
const ANCHOR_PAIR_TOL: f64 = 1e-4;
const SEEDS_REQUIRED: usize = 2;
const OD_QUANTILES: [f64; 2] = [0.5, 0.8];
const RNJ_MAX_NODES: usize = 25;
const TOPO_NOISE: f64 = 0.1;

struct Outcome {
    id: u8,
    pass: bool,
    detail: String,
}

fn report(out: &Outcome) {
    let status = match (out.pass, KNOWN_FAILURES.contains(&out.id)) {
        (true, _) => "PASS",
        (false, false) => "FAIL",
        (false, true) => "FAIL (known)",
    };
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "criterion {:>2}: {status:<12} {}", out.id, out.detail);
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let mut worst = 0.0f64;
    let mut largest = 0;
    for case in standard_cases(GRAD_CONFIGS, 2024) {
        let r = check(&case).expect("gradient check runs");
        worst = worst.max(r.max());
        largest = largest.max(r.params);
    }
    let secs = t.elapsed().as_secs_f64();
    Outcome {
        id: 1,
        pass: worst < GRAD_TOL && largest <= MAX_PARAMS && secs < 60.0,
        detail: format!("{GRAD_CONFIGS} configs, max rel err {worst:.2e}, largest net {largest} params, {secs:.1}s"),
    }
}

fn theorem1() -> Outcome {
    let t = Instant::now();
    let sweep = theorem1_sweep(THM1_TRIALS, 1).expect("sweep runs");
    let secs = t.elapsed().as_secs_f64();
    Outcome {
        id: 2,
        pass: sweep.all_hold() && sweep.trials.len() >= 10_000 && sweep.part2_trials >= PART2_MIN && secs < 120.0,
        detail: format!(
            "shift certified {}/{}, part II PSD {}/{}, {secs:.1}s",
            sweep.certified,
            sweep.trials.len(),
            sweep.part2_psd,
            sweep.part2_trials
        ),
    }
}

fn proposition1() -> Outcome {
    let t = Instant::now();
    let sweep = proposition1_sweep(PROP1_TRIALS, 1).expect("sweep runs");
    let (_, ds) = build_scenario(11, 22, 512, NoiseConfig { level: 0.1, kind: NoiseKind::Channel }).expect("scenario");
    let data = TrainData::from_dataset(&ds);
    let cfg = TrainConfig { epochs: 5, seed: 11, ..TrainConfig::default() };
    let mut model = init_model(&data, &cfg);
    let (mut snap_ok, mut snaps) = (0, 0);
    for _ in 0..4 {
        for start in [0usize, 128, 256] {
            let idx: Vec<usize> = (start..start + 64).collect();
            let r = proposition1_check(&encoder_gradient_bundle(&model, &data, &idx, &cfg).expect("bundle")).expect("check");
            snaps += 1;
            snap_ok += r.holds as usize;
        }
        model = train_from(model, &data, &cfg).expect("training").model;
    }
    let secs = t.elapsed().as_secs_f64();
    Outcome {
        id: 3,
        pass: sweep.all_hold() && snap_ok == snaps && secs < 60.0,
        detail: format!("planted bundles {}/{}, training snapshots {snap_ok}/{snaps}, {secs:.1}s", sweep.holds, sweep.trials.len()),
    }
}

fn aggregation_oracle() -> Outcome {
    let mut r = rng::stream(4, "acceptance-mc", 0);
    let mut worst_z = 0.0f64;
    for _ in 0..MC_PATHS {
        let hops = r.random_range(1..=8);
        let links: Vec<LinkState> = (0..hops)
            .map(|_| LinkState { delay_ms: 1.0, loss_rate: r.random_range(0.0..0.1), avail_bw_mbps: 1.0, utilization: 0.0, congested: false })
            .collect();
        let path: Vec<usize> = (0..hops).collect();
        let p = aggregate_path(&links, &path).expect("aggregate").loss_rate;
        let lost = (0..PACKETS).filter(|_| links.iter().any(|l| r.random_bool(l.loss_rate))).count();
        let sd = (p * (1.0 - p) / PACKETS as f64).sqrt();
        worst_z = worst_z.max((lost as f64 / PACKETS as f64 - p).abs() / sd.max(1e-300));
    }
    Outcome {
        id: 4,
        pass: worst_z <= MC_SIGMAS,
        detail: format!("{MC_PATHS} paths x {PACKETS} packets, worst deviation {worst_z:.2} binomial sd"),
    }
}

fn alignment_anchors() -> Outcome {
    let same = Matrix::from_rows(&vec![vec![0.3, -1.2, 2.0, 0.5]; 6]);
    let zero = alignment_loss(&[&same, &same, &same], 0.7).expect("loss").0;
    let eye = Matrix::identity(2);
    let pair = alignment_loss(&[&eye, &eye], 1.0).expect("loss").0;
    // two channels, two rows: 2 ordered pairs x 2 rows x (1 - log((e + 1)/2)), over N = 2
    let hand = -(1.0 - ((1f64.exp() + 1.0) / 2.0).ln()) * 2.0;
    Outcome {
        id: 5,
        pass: zero.abs() <= ANCHOR_ZERO_TOL && (pair - ANCHOR_PAIR).abs() <= ANCHOR_PAIR_TOL && (pair - hand).abs() < 1e-12,
        detail: format!("identical {zero:.1e}, orthonormal pair {pair:.6} (hand {hand:.6})"),
    }
}

fn denoising(bundle: &ResultsBundle, minutes_per_seed: f64) -> Outcome {
    let names = ["delay", "loss", "bw"];
    let mut wins = [0usize; 3];
    let mut parts = Vec::new();
    for &seed in &bundle.config.seeds {
        let s = |p| summarize(bundle, seed, p, None).expect("complete cells");
        let (pl, raw, pca) = (s(Pipeline::Platont), s(Pipeline::Raw), s(Pipeline::Pca));
        for k in 0..3 {
            if pl.mse[k] < raw.mse[k] && pl.mse[k] < pca.mse[k] {
                wins[k] += 1;
            }
        }
        parts.push(format!(
            "seed {seed}: {}",
            (0..3).map(|k| format!("{} {:.3e}/{:.3e}/{:.3e}", names[k], pl.mse[k], raw.mse[k], pca.mse[k])).collect::<Vec<_>>().join(" ")
        ));
    }
    let pass = wins.iter().all(|&w| w >= SEEDS_REQUIRED) && minutes_per_seed < 10.0;
    Outcome {
        id: 6,
        pass,
        detail: format!(
            "seeds won (delay, loss, bw) = {wins:?} of {}; mse platont/raw/pca [{}]; {minutes_per_seed:.1} min/seed",
            bundle.config.seeds.len(),
            parts.join("; ")
        ),
    }
}

fn link_diagnosis(bundle: &ResultsBundle) -> Outcome {
    let mut ordered = 0;
    let mut fpr_ok = 0;
    let mut parts = Vec::new();
    for &seed in &bundle.config.seeds {
        let s = |p| summarize(bundle, seed, p, None).expect("complete cells");
        let (pl, cca, pca) = (s(Pipeline::Platont), s(Pipeline::Cca), s(Pipeline::Pca));
        ordered += (pl.f1_degradation <= cca.f1_degradation && cca.f1_degradation <= pca.f1_degradation) as usize;
        fpr_ok += (pl.fpr_increase < pca.fpr_increase) as usize;
        parts.push(format!(
            "seed {seed}: F1 drop {:.1}/{:.1}/{:.1}%, FPR rise {:.1}/{:.1}%",
            pl.f1_degradation, cca.f1_degradation, pca.f1_degradation, pl.fpr_increase, pca.fpr_increase
        ));
    }
    let n = bundle.config.seeds.len();
    Outcome {
        id: 7,
        pass: ordered >= SEEDS_REQUIRED && fpr_ok == n,
        detail: format!("ordering held in {ordered}/{n}, FPR ok in {fpr_ok}/{n} (platont/cca/pca) [{}]", parts.join("; ")),
    }
}

fn mean_over_seeds(bundle: &ResultsBundle, p: Pipeline) -> Vec<f64> {
    let series: Vec<Vec<f64>> = bundle.config.seeds.iter().map(|&s| mean_slot_gaps(bundle, s, p).expect("od cells")).collect();
    (0..series[0].len()).map(|t| series.iter().map(|v| v[t]).sum::<f64>() / series.len() as f64).collect()
}

fn od_trend(bundle: &ResultsBundle) -> Outcome {
    let (pl, raw, pca) = (mean_over_seeds(bundle, Pipeline::Platont), mean_over_seeds(bundle, Pipeline::Raw), mean_over_seeds(bundle, Pipeline::Pca));
    let below = pl.iter().zip(&raw).filter(|(a, b)| a < b).count();
    let q_pl = OD_QUANTILES.map(|q| quantile(&pl, q));
    let q_pca = OD_QUANTILES.map(|q| quantile(&pca, q));
    let dominates = q_pl.iter().zip(&q_pca).all(|(a, b)| a <= b);
    Outcome {
        id: 8,
        pass: pl.len() == bundle.config.eval.od_slots && below == pl.len() && dominates,
        detail: format!(
            "slots below raw {below}/{}, quantiles 0.5/0.8 platont {:.3}/{:.3} vs pca {:.3}/{:.3}",
            pl.len(),
            q_pl[0],
            q_pl[1],
            q_pca[0],
            q_pca[1]
        ),
    }
}

fn topology(bundle: &ResultsBundle) -> Outcome {
    let mut trees = 0;
    let mut exact = 0;
    for nodes in 4..=RNJ_MAX_NODES {
        for seed in 1..=5u64 {
            let (net, ds) = build_scenario(seed * 1000 + nodes as u64, nodes, 128, NoiseConfig { level: 0.1, kind: NoiseKind::Channel })
                .expect("scenario");
            if net.leaves().len() < 3 {
                continue;
            }
            let cfg = EvalConfig { od_slots: 1, ..EvalConfig::default() };
            let score = EvalContext::new(&ds, cfg).expect("context").noise_free_topology().expect("rnj");
            trees += 1;
            exact += (score.hamming == 0.0) as usize;
        }
    }
    let mean_hamming = |p: Pipeline| {
        let v: Vec<f64> = bundle
            .cells
            .iter()
            .filter(|c| c.pipeline == p && c.noise_level == TOPO_NOISE)
            .map(|c| c.record.as_ref().and_then(|r| r.topo.as_ref()).expect("topology cell").hamming)
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (pl, raw) = (mean_hamming(Pipeline::Platont), mean_hamming(Pipeline::Raw));
    Outcome {
        id: 9,
        pass: exact == trees && pl <= raw,
        detail: format!("noise-free exact {exact}/{trees} trees of 4..={RNJ_MAX_NODES} nodes; noise {TOPO_NOISE} mean Hamming platont {pl:.4} vs raw {raw:.4}"),
    }
}

fn run_cli(dir: &Path, args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_platont"))
        .args(args)
        .current_dir(dir)
        .env_remove("PLATONT_SEED")
        .env("RUST_LOG", "error")
        .status()
        .map(|s| s.success())
        .unwrap_or(false)
}

fn all_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).expect("readable dir") {
            let path = entry.expect("entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).expect("prefix").display().to_string();
                out.push((rel, fs::read(&path).expect("readable file")));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let steps: [&[&str]; 8] = [
        &["gen-topo", "--nodes", "14", "--seed", "3", "--out", "topo.json"],
        &["simulate", "--topo", "topo.json", "--horizon", "192", "--noise-level", "0.1", "--noise-kind", "random", "--seed", "3", "--out", "data.json"],
        &["train", "--data", "data.json", "--config", "train.json", "--out", "model.ckpt", "--log", "train.csv"],
        &["eval", "--data", "data.json", "--ckpt", "model.ckpt", "--task", "all", "--pipeline", "platont", "--out", "eval.json"],
        &["eval", "--data", "data.json", "--task", "all", "--pipeline", "cca", "--out", "eval_cca.json"],
        &["theory", "--check", "all", "--trials", "60", "--seed", "3", "--report", "theory.json"],
        &["matrix", "--config", "run.json", "--out", "matrix"],
        &["report", "--results", "matrix/results.json", "--out", "report.md"],
    ];
    let run = || {
        let dir = tempfile::tempdir().expect("tempdir");
        fs::write(dir.path().join("train.json"), r#"{"epochs": 3, "seed": 5}"#).expect("write");
        fs::write(
            dir.path().join("run.json"),
            r#"{"seeds": [4], "node_range": [14, 16], "horizon": 192, "noise_levels": [0.1], "train": {"epochs": 2}, "eval": {"od_slots": 50}}"#,
        )
        .expect("write");
        let ok = steps.iter().all(|args| run_cli(dir.path(), args));
        (ok, all_files(dir.path()))
    };
    let (ok_a, a) = run();
    let (ok_b, b) = run();
    let identical = a == b;
    Outcome {
        id: 10,
        pass: ok_a && ok_b && identical && a.len() > 10,
        detail: format!("{} subcommand runs, {} artifacts, byte-identical: {identical}", steps.len(), a.len()),
    }
}

#[test]
fn acceptance() {
    let mut outcomes = vec![gradients(), theorem1(), proposition1(), aggregation_oracle(), alignment_anchors()];
    outcomes.iter().for_each(report);

    let t = Instant::now();
    let config = RunConfig::default();
    let bundle = run_experiment_matrix(&config, |_| {}).expect("experiment matrix");
    let minutes_per_seed = t.elapsed().as_secs_f64() / 60.0 / config.seeds.len() as f64;
    assert!(bundle.all_ok(), "matrix cells failed");
    let later = vec![denoising(&bundle, minutes_per_seed), link_diagnosis(&bundle), od_trend(&bundle), topology(&bundle), determinism()];
    later.iter().for_each(report);
    outcomes.extend(later);

    for o in &outcomes {
        if KNOWN_FAILURES.contains(&o.id) {
            assert!(!o.pass, "criterion {} now passes; remove it from KNOWN_FAILURES", o.id);
        } else {
            assert!(o.pass, "criterion {} failed: {}", o.id, o.detail);
        }
    }
}
