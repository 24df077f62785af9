use proptest::prelude::*;
use rand::Rng as _;

use platont_core::baselines::{cca_fit, pca_fit_denoise};
use platont_core::linalg::Matrix;
use platont_core::netmodel::{build_routing_matrix, default_probe_pairs, enumerate_paths, generate_random_tree};
use platont_core::neural::{ModelDims, Mode, PlatoModel};
use platont_core::objectives::{alignment_loss, total_loss, LossParts, LossWeights};
use platont_core::pipeline::probe_paths;
use platont_core::rng;
use platont_core::simkit::{build_dataset, DatasetSpec, NoiseConfig, NoiseKind, DEFAULT_THETA_C};
use platont_core::theorylab::symmetric_eigen;
use platont_core::tomo::{cover_flagged, solve_linear_inverse, Confusion};

fn random_matrix(seed: u64, rows: usize, cols: usize) -> Matrix {
    let mut r = rng::stream(seed, "prop-matrix", 0);
    Matrix::from_fn(rows, cols, |_, _| r.random_range(-1.0..1.0))
}

fn nalgebra_rank(m: &Matrix) -> usize {
    let n = nalgebra::DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice());
    n.rank(1e-9)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn trees_are_connected_with_n_minus_one_links(nodes in 2usize..60, seed in any::<u64>()) {
        let net = generate_random_tree(nodes, seed).unwrap();
        prop_assert_eq!(net.link_count(), nodes - 1);
        prop_assert!(net.is_tree());
    }

    #[test]
    fn routing_rows_follow_pair_order(nodes in 4usize..20, seed in any::<u64>(), shift in 1usize..50) {
        let net = generate_random_tree(nodes, seed).unwrap();
        let pairs = default_probe_pairs(&net, seed);
        let mut rotated = pairs.clone();
        let s = shift % pairs.len();
        rotated.rotate_left(s);
        let a = build_routing_matrix(&net, &enumerate_paths(&net, &pairs).unwrap()).unwrap();
        let b = build_routing_matrix(&net, &enumerate_paths(&net, &rotated).unwrap()).unwrap();
        prop_assert_eq!(a.link_index(), b.link_index());
        for i in 0..pairs.len() {
            prop_assert_eq!(a.entries().row((i + s) % pairs.len()), b.entries().row(i));
        }
    }

    #[test]
    fn routing_rank_matches_oracle(nodes in 3usize..21, seed in any::<u64>()) {
        let net = generate_random_tree(nodes, seed).unwrap();
        let paths = enumerate_paths(&net, &default_probe_pairs(&net, seed)).unwrap();
        let r = build_routing_matrix(&net, &paths).unwrap();
        prop_assert!(r.rank() <= r.link_count());
        prop_assert_eq!(r.rank(), nalgebra_rank(r.entries()));
    }

    #[test]
    fn alignment_invariant_to_row_scaling(seed in any::<u64>(), n in 2usize..8, d in 2usize..6, row in 0usize..8, c in 0.01f64..100.0) {
        let z: Vec<Matrix> = (0..3).map(|k| random_matrix(seed ^ k, n, d)).collect();
        let base = alignment_loss(&[&z[0], &z[1], &z[2]], 0.7).unwrap().0;
        let mut scaled = z.clone();
        let i = row % n;
        scaled[1].row_mut(i).iter_mut().for_each(|v| *v *= c);
        let after = alignment_loss(&[&scaled[0], &scaled[1], &scaled[2]], 0.7).unwrap().0;
        prop_assert!((base - after).abs() < 1e-10);
    }

    #[test]
    fn alignment_invariant_to_common_rotation(seed in any::<u64>(), n in 2usize..8, d in 2usize..6) {
        let z: Vec<Matrix> = (0..3).map(|k| random_matrix(seed ^ k, n, d)).collect();
        let q = symmetric_eigen(&{ let a = random_matrix(seed ^ 99, d, d); a.add(&a.transpose()) }).unwrap().vectors;
        let rotated: Vec<Matrix> = z.iter().map(|m| m.matmul(&q)).collect();
        let a = alignment_loss(&[&z[0], &z[1], &z[2]], 0.7).unwrap().0;
        let b = alignment_loss(&[&rotated[0], &rotated[1], &rotated[2]], 0.7).unwrap().0;
        prop_assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn total_is_weighted_sum(align in -5.0f64..5.0, rec in 0.0f64..5.0, task in 0.0f64..5.0, l1 in 0.0f64..3.0, l2 in 0.0f64..3.0, l3 in 0.0f64..3.0) {
        let w = LossWeights { lambda_align: l1, lambda_rec: l2, lambda_task: l3, ..LossWeights::default() };
        let r = total_loss(LossParts { align, rec, task }, &w, vec![1.0; 3]).unwrap();
        prop_assert!((r.total - (l1 * align + l2 * rec + l3 * task)).abs() < 1e-12);
    }

    #[test]
    fn eval_forward_is_deterministic_and_rows_equivariant(seed in any::<u64>(), n in 2usize..10) {
        let model = PlatoModel::new(ModelDims { input: [4, 3, 5], hidden: vec![8, 6], latent: 4 }, seed);
        let x = [4, 3, 5].map(|d| random_matrix(seed ^ d as u64, n, d));
        let a = model.forward(&x, Mode::Eval).unwrap();
        let b = model.forward(&x, Mode::Eval).unwrap();
        for k in 0..3 {
            prop_assert_eq!(a.recon[k].as_slice(), b.recon[k].as_slice());
        }
        for w in &a.weights {
            for i in 0..n {
                let s: f64 = w.row(i).iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-12 && w.row(i).iter().all(|&v| v >= 0.0));
            }
        }
        let perm: Vec<usize> = (0..n).rev().collect();
        let xp = [0, 1, 2].map(|k| x[k].select_rows(&perm));
        let c = model.forward(&xp, Mode::Eval).unwrap();
        for k in 0..3 {
            prop_assert!(c.recon[k].max_abs_diff(&a.recon[k].select_rows(&perm)) < 1e-12);
        }
    }

    #[test]
    fn confusion_scores_are_bounded(pred in prop::collection::vec(any::<bool>(), 1..40), seed in any::<u64>()) {
        let mut r = rng::stream(seed, "truth", 0);
        let truth: Vec<bool> = pred.iter().map(|_| r.random_bool(0.3)).collect();
        let s = Confusion::from_sets(&pred, &truth).unwrap().scores();
        for v in [s.precision, s.recall, s.f1, s.fpr] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        if s.precision + s.recall > 0.0 {
            prop_assert!((s.f1 - 2.0 * s.precision * s.recall / (s.precision + s.recall)).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_inverse_is_optimal(seed in any::<u64>(), rows in 3usize..10, cols in 2usize..8, nonneg in any::<bool>()) {
        let r = random_matrix(seed, rows, cols);
        let y: Vec<f64> = random_matrix(seed ^ 1, 1, rows).into_vec();
        let prior: Vec<f64> = random_matrix(seed ^ 2, 1, cols).into_vec().iter().map(|v| v.abs()).collect();
        let ridge = 0.05;
        let x = solve_linear_inverse(&y, &r, ridge, nonneg, Some(&prior)).unwrap();
        let objective = |x: &[f64]| {
            let res: f64 = r.matvec(x).iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum();
            res + ridge * x.iter().zip(&prior).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        };
        let best = objective(&x);
        let mut g = rng::stream(seed, "directions", 0);
        for _ in 0..100 {
            let step: Vec<f64> = x.iter().map(|&v| v + 1e-3 * g.random_range(-1.0..1.0)).collect();
            if nonneg && step.iter().any(|&v| v < 0.0) {
                continue;
            }
            prop_assert!(objective(&step) >= best - 1e-12);
        }
    }

    #[test]
    fn pca_error_non_increasing_in_k(seed in any::<u64>()) {
        let x = random_matrix(seed, 30, 8);
        let mut last = f64::INFINITY;
        for k in 1..=8 {
            let (_, rec) = pca_fit_denoise(&x, k).unwrap();
            let err = rec.sub(&x).frobenius_norm();
            prop_assert!(err <= last + 1e-9);
            last = err;
        }
        prop_assert!(last < 1e-8);
    }

    #[test]
    fn cca_correlations_sorted_in_unit_interval(seed in any::<u64>(), p in 2usize..6, q in 2usize..6) {
        let c = random_matrix(seed, 60, p);
        let mix = random_matrix(seed ^ 5, p, q);
        let d = c.matmul(&mix).add(&random_matrix(seed ^ 6, 60, q).scale(0.5));
        let m = cca_fit(&c, &d, p.min(q)).unwrap();
        let again = cca_fit(&c, &d, p.min(q)).unwrap();
        prop_assert_eq!(&m.correlations, &again.correlations);
        for w in m.correlations.windows(2) {
            prop_assert!(w[0] >= w[1]);
        }
        prop_assert!(m.correlations.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn eigensolver_reconstructs(seed in any::<u64>(), n in 1usize..30) {
        let a = random_matrix(seed, n, n);
        let m = a.add(&a.transpose());
        let e = symmetric_eigen(&m).unwrap();
        let v = &e.vectors;
        let rec = v.matmul(&Matrix::diag(&e.values)).matmul_t(v);
        let scale = m.frobenius_norm().max(1e-300);
        prop_assert!(rec.sub(&m).frobenius_norm() < 1e-9 * scale);
        prop_assert!(v.t_matmul(v).max_abs_diff(&Matrix::identity(n)) < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn simulated_indicators_respect_model(nodes in 5usize..16, seed in any::<u64>(), level in 0.05f64..0.3, random_kind in any::<bool>()) {
        let net = generate_random_tree(nodes, seed).unwrap();
        let paths = probe_paths(&net, seed).unwrap();
        let kind = if random_kind { NoiseKind::Random } else { NoiseKind::Channel };
        let ds = build_dataset(&net, &paths, &DatasetSpec::new(40, NoiseConfig { level, kind }), seed).unwrap();
        for s in &ds.samples {
            let expect: Vec<f64> = ds.paths.paths().iter().map(|p| p.links.iter().map(|&l| s.link_truth.delay_ms[l]).sum()).collect();
            prop_assert_eq!(&expect, &s.clean.delay);
            prop_assert!(s.noisy.delay.iter().all(|&v| v >= 0.0));
            prop_assert!(s.noisy.loss.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!(s.noisy.bandwidth.iter().all(|&v| v >= 0.0));
            for (u, c) in s.link_truth.utilization.iter().zip(&s.link_truth.congested) {
                prop_assert_eq!(*c, *u > DEFAULT_THETA_C);
            }
        }
    }
}

/// Smallest link sets consistent with the flags: every flagged path is hit
/// and no normal path is touched.
fn minimum_explanations(flagged: &[bool], r: &Matrix) -> Vec<Vec<usize>> {
    let (p, l) = r.shape();
    let candidates: Vec<usize> = (0..l).filter(|&k| (0..p).all(|q| flagged[q] || r[(q, k)] < 0.5)).collect();
    for size in 0..=candidates.len() {
        let mut found = Vec::new();
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            let set: Vec<usize> = idx.iter().map(|&i| candidates[i]).collect();
            if (0..p).all(|q| !flagged[q] || set.iter().any(|&k| r[(q, k)] > 0.5)) {
                found.push(set);
            }
            // next combination
            let mut i = size;
            while i > 0 && idx[i - 1] == candidates.len() - size + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            idx[i - 1] += 1;
            for j in i..size {
                idx[j] = idx[j - 1] + 1;
            }
        }
        if !found.is_empty() {
            return found;
        }
    }
    Vec::new()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, max_global_rejects: 100_000, ..ProptestConfig::default() })]

    #[test]
    fn greedy_matches_unique_minimum_explanation(nodes in 4usize..22, seed in any::<u64>(), k in 1usize..4) {
        let net = generate_random_tree(nodes, seed).unwrap();
        let paths = probe_paths(&net, seed).unwrap();
        let routing = build_routing_matrix(&net, &paths).unwrap();
        let r = routing.entries();
        prop_assume!(r.cols() <= 20);
        let mut g = rng::stream(seed, "congested", 0);
        let bad: Vec<usize> = (0..k).map(|_| g.random_range(0..r.cols())).collect();
        let flagged: Vec<bool> = (0..r.rows()).map(|q| bad.iter().any(|&b| r[(q, b)] > 0.5)).collect();
        let minima = minimum_explanations(&flagged, r);
        prop_assume!(minima.len() == 1);
        prop_assert_eq!(&cover_flagged(&flagged, r).predicted, &minima[0]);
    }
}
