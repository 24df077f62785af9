use platont_core::neural::{read_checkpoint, write_checkpoint};
use platont_core::objectives::{LossWeights, TaskKind};
use platont_core::pipeline::build_scenario;
use platont_core::simkit::{NoiseConfig, NoiseKind, TomographyDataset};
use platont_core::theorylab::proposition1_check;
use platont_core::trainer::{encoder_gradient_bundle, evaluate_batch, init_model, train, train_from, TrainConfig, TrainData};

fn scenario() -> TomographyDataset {
    build_scenario(5, 14, 192, NoiseConfig { level: 0.1, kind: NoiseKind::Channel }).unwrap().1
}

fn small(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, hidden: vec![24, 16], latent: 8, seed: 3, ..TrainConfig::default() }
}

fn checkpoint_bytes(cfg: &TrainConfig, data: &TrainData) -> Vec<u8> {
    let out = train(data, cfg).unwrap();
    let mut buf = Vec::new();
    write_checkpoint(&out.model, serde_json::to_value(cfg).unwrap(), &mut buf).unwrap();
    buf
}

#[test]
fn training_is_deterministic() {
    let ds = scenario();
    let data = TrainData::from_dataset(&ds);
    let a = checkpoint_bytes(&small(3), &data);
    assert_eq!(a, checkpoint_bytes(&small(3), &data));
    let other = TrainConfig { seed: 4, ..small(3) };
    assert_ne!(a, checkpoint_bytes(&other, &data));
    let (model, header) = read_checkpoint(a.as_slice()).unwrap();
    assert_eq!(header.param_count, model.param_count());
}

#[test]
fn best_checkpoint_tracks_minimum_epoch_loss() {
    let ds = scenario();
    let data = TrainData::from_dataset(&ds);
    let out = train(&data, &small(6)).unwrap();
    let min = out.epoch_losses.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(out.best_loss, min);
    assert_eq!(out.epoch_losses[out.best_epoch.unwrap()], min);
    let mut running = f64::INFINITY;
    for &l in &out.epoch_losses {
        running = running.min(l);
        assert!(running <= l);
    }
    assert!(out.log.iter().all(|r| r.total.is_finite()));
}

#[test]
fn zero_weights_return_initial_model() {
    let ds = scenario();
    let data = TrainData::from_dataset(&ds);
    let cfg = TrainConfig {
        loss: LossWeights { lambda_align: 0.0, lambda_rec: 0.0, lambda_task: 0.0, ..LossWeights::default() },
        ..small(2)
    };
    let init = init_model(&data, &cfg);
    let out = train_from(init.clone(), &data, &cfg).unwrap();
    assert_eq!(out.model.flat_params(), init.flat_params());
    assert!(out.log.is_empty());
}

#[test]
fn topology_task_weight_is_gated_off() {
    let ds = scenario();
    let data = TrainData::from_dataset(&ds).with_task(&ds, TaskKind::Topo, 1e-3).unwrap();
    let cfg = TrainConfig {
        task: Some(TaskKind::Topo),
        loss: LossWeights { lambda_task: 1.0, ..LossWeights::default() },
        ..small(1)
    };
    let model = init_model(&data, &cfg);
    let idx: Vec<usize> = (0..32).collect();
    let r = evaluate_batch(&model, &data, &idx, &cfg).unwrap().report;
    assert_eq!(r.task, 0.0);
    assert!((r.total - (r.align + 2.0 * r.rec)).abs() < 1e-12);
}

#[test]
fn task_surrogates_contribute() {
    let ds = scenario();
    for task in [TaskKind::Link, TaskKind::Od] {
        let data = TrainData::from_dataset(&ds).with_task(&ds, task, 1e-3).unwrap();
        let cfg = TrainConfig { task: Some(task), loss: LossWeights { lambda_task: 0.5, ..LossWeights::default() }, ..small(2) };
        let idx: Vec<usize> = (0..32).collect();
        let r = evaluate_batch(&init_model(&data, &cfg), &data, &idx, &cfg).unwrap().report;
        assert!(r.task > 0.0, "{task:?}");
        assert!(train(&data, &cfg).unwrap().diverged.is_none());
    }
}

#[test]
fn gradient_bound_holds_on_training_snapshots() {
    let ds = scenario();
    let data = TrainData::from_dataset(&ds);
    let cfg = small(2);
    let mut model = init_model(&data, &cfg);
    let idx: Vec<usize> = (0..64).collect();
    for _ in 0..3 {
        let report = proposition1_check(&encoder_gradient_bundle(&model, &data, &idx, &cfg).unwrap()).unwrap();
        assert!(report.holds, "{report:?}");
        model = train_from(model, &data, &cfg).unwrap().model;
    }
}
