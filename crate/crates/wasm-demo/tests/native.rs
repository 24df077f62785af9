use platont_wasm_demo::{infer_tree_json, kernel_shift_json, noisy_paths_json};
use serde_json::Value;

fn parse(s: String) -> Value {
    serde_json::from_str(&s).unwrap()
}

#[test]
fn kernel_shift_certifies() {
    let v = parse(kernel_shift_json(12, 0.5, 12.0 * 2f64.ln(), 3).unwrap());
    assert_eq!(v["certified"], true);
    assert_eq!(v["precondition"], true);
    assert_eq!(v["psd_without_shift"], true);
    assert_eq!(v["eigenvalues"].as_array().unwrap().len(), 12);
    let smooth_off = parse(kernel_shift_json(5, (-1f64).exp(), 0.0, 3).unwrap());
    assert_eq!(smooth_off["precondition"], false);
    assert_eq!(smooth_off["certified"], true);
}

#[test]
fn kernel_shift_rejects_bad_size() {
    assert!(kernel_shift_json(1, 0.5, 1.0, 0).is_err());
    assert!(kernel_shift_json(65, 0.5, 1.0, 0).is_err());
}

#[test]
fn noisy_paths_shapes() {
    let v = parse(noisy_paths_json(14, 2, 0.1, "channel", 128).unwrap());
    let series = v["series"].as_array().unwrap();
    assert_eq!(series.len(), 3);
    assert_eq!(series[0]["noisy"].as_array().unwrap().len(), 128);
    assert_eq!(v["links"].as_array().unwrap().len(), 13);
    assert!(noisy_paths_json(14, 2, 0.1, "bogus", 128).is_err());
}

#[test]
fn infer_tree_is_deterministic() {
    let a = infer_tree_json(16, 5, 0.1, "random").unwrap();
    assert_eq!(a, infer_tree_json(16, 5, 0.1, "random").unwrap());
    let v = parse(a);
    assert_eq!(v["noise_free_hamming"], 0.0);
    let h = v["hamming"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&h));
}
