use platont_core::theorylab::*;

#[test]
fn theorem1_sweep_small() {
    let sweep = theorem1_sweep(300, 5).unwrap();
    assert!(sweep.all_hold());
    assert_eq!(sweep.part2_trials, 100);
    assert!(sweep.trials.iter().all(|t| t.report.n <= SWEEP_MAX_N));
}

#[test]
fn prop1_sweep_small() {
    let sweep = proposition1_sweep(200, 5).unwrap();
    assert!(sweep.all_hold());
    assert!(sweep.trials.iter().all(|t| t.report.epsilon <= DEFAULT_EPSILON_TARGET + 1e-12));
}
