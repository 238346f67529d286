//! Randomized invariants of the accumulation and compression kernels.

use hessforge_core::compress::{sparsegpt_prune, QuantSpec, SparsitySpec};
use hessforge_core::compress::gptq_quantize;
use hessforge_core::hessian::{dampen, dead_columns, invert_cholesky, HessianState};
use hessforge_core::linalg::cholesky_lower;
use hessforge_core::oracle::exhaustive_mask_oracle;
use hessforge_core::Matrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn example_set() -> impl Strategy<Value = (usize, Vec<(Matrix, f64)>)> {
    (2usize..6).prop_flat_map(|dim| {
        let ex = (1usize..5).prop_flat_map(move |rows| {
            (prop::collection::vec(-3.0f64..3.0, rows * dim), 0.0f64..4.0)
                .prop_map(move |(data, w)| (Matrix::from_vec(rows, dim, data).unwrap(), w))
        });
        (Just(dim), prop::collection::vec(ex, 1..6))
    })
}

fn layer_case() -> impl Strategy<Value = (Matrix, Matrix)> {
    (2usize..8).prop_flat_map(|cols| {
        let samples = cols + 4;
        (
            prop::collection::vec(-2.0f64..2.0, 2 * cols),
            prop::collection::vec(-2.0f64..2.0, samples * cols),
        )
            .prop_map(move |(wd, xd)| {
                (
                    Matrix::from_vec(2, cols, wd).unwrap(),
                    Matrix::from_vec(samples, cols, xd).unwrap(),
                )
            })
    })
}

fn closed_form(dim: usize, examples: &[(Matrix, f64)]) -> Option<Matrix> {
    let total: f64 = examples.iter().map(|(_, w)| *w).sum();
    if total <= 0.0 {
        return None;
    }
    let mut h = Matrix::zeros(dim, dim);
    for (x, w) in examples {
        let mut g = x.gram();
        g.scale(2.0 * w / total);
        h.add_scaled(&g, 1.0).unwrap();
    }
    Some(h)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn streaming_equals_closed_form_mixture((dim, examples) in example_set()) {
        let mut state = HessianState::new(dim);
        for (x, w) in &examples {
            state.accumulate(x, *w).unwrap();
        }
        prop_assume!(state.weight_sum() > 0.0);
        let streamed = state.finalize().unwrap();
        let direct = closed_form(dim, &examples).unwrap();
        let scale = direct.max_abs().max(1.0);
        prop_assert!(streamed.max_abs_diff(&direct) <= 1e-6 * scale);
    }

    #[test]
    fn accumulation_order_shifts_nothing_material(
        (dim, examples) in example_set(),
        seed in any::<u64>(),
    ) {
        let mut state = HessianState::new(dim);
        for (x, w) in &examples {
            state.accumulate(x, *w).unwrap();
        }
        prop_assume!(state.weight_sum() > 0.0);
        let forward = state.finalize().unwrap();

        let mut shuffled = examples.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut state2 = HessianState::new(dim);
        for (x, w) in &shuffled {
            state2.accumulate(x, *w).unwrap();
        }
        let permuted = state2.finalize().unwrap();
        let scale = forward.max_abs().max(1.0);
        prop_assert!(forward.max_abs_diff(&permuted) <= 1e-5 * scale);
    }

    #[test]
    fn dampened_accumulation_stays_factorizable((dim, examples) in example_set()) {
        let mut state = HessianState::new(dim);
        for (x, w) in &examples {
            state.accumulate(x, *w).unwrap();
        }
        prop_assume!(state.weight_sum() > 0.0);
        let h = state.finalize().unwrap();
        let (hd, _) = dampen(&h, 1e-8).unwrap();
        let mut fixed = hd;
        for &c in &dead_columns(&h) {
            fixed.set(c, c, 1.0);
        }
        prop_assert!(cholesky_lower(&fixed).is_ok());
    }

    #[test]
    fn unstructured_masks_hit_their_quota(
        cols in 2usize..24,
        fraction in 0.0f64..1.0,
        wseed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(wseed);
        let data: Vec<f64> = (0..3 * cols)
            .map(|_| rand::Rng::random_range(&mut rng, -2.0..2.0))
            .collect();
        let w = Matrix::from_vec(3, cols, data).unwrap();
        let factor = invert_cholesky(&Matrix::identity(cols), &[], 0.0).unwrap();
        let spec = SparsitySpec::Unstructured { fraction };
        let out = sparsegpt_prune(&w, &factor, &spec, 128).unwrap();
        let expected = {
            let t = fraction * cols as f64;
            (libm::ceil(t - 1e-9).max(0.0) as usize).min(cols)
        };
        for r in 0..3 {
            let zeros = out.mask.row(r).iter().filter(|&&v| v == 0.0).count();
            prop_assert_eq!(zeros, expected);
            for c in 0..cols {
                if out.mask.get(r, c) == 0.0 {
                    prop_assert_eq!(out.w_hat.get(r, c), 0.0);
                }
            }
        }
    }

    #[test]
    fn structured_masks_keep_n_per_group(
        groups in 1usize..6,
        pattern in (1usize..5).prop_flat_map(|m| (0..=m, Just(m))),
        wseed in any::<u64>(),
    ) {
        let (n, m) = pattern;
        let cols = groups * m;
        let mut rng = ChaCha8Rng::seed_from_u64(wseed);
        let data: Vec<f64> = (0..2 * cols)
            .map(|_| rand::Rng::random_range(&mut rng, -2.0..2.0))
            .collect();
        let w = Matrix::from_vec(2, cols, data).unwrap();
        let factor = invert_cholesky(&Matrix::identity(cols), &[], 0.0).unwrap();
        let out = sparsegpt_prune(&w, &factor, &SparsitySpec::NOfM { n, m }, 128).unwrap();
        for r in 0..2 {
            for g in (0..cols).step_by(m) {
                let kept: f64 = (g..g + m).map(|c| out.mask.get(r, c)).sum();
                prop_assert_eq!(kept as usize, n);
            }
        }
    }

    #[test]
    fn elimination_tally_is_true_error_at_zero_damp((w, x) in layer_case()) {
        let mut h = x.gram();
        h.scale(2.0);
        let factor = match invert_cholesky(&h, &[], 0.0) {
            Ok(f) => f,
            Err(_) => {
                prop_assume!(false);
                unreachable!()
            }
        };
        let spec = SparsitySpec::Unstructured { fraction: 0.5 };
        let pruned = sparsegpt_prune(&w, &factor, &spec, 128).unwrap();
        let delta = w.sub(&pruned.w_hat).unwrap();
        let recon = x.matmul_transpose(&delta).unwrap().frob_sq();
        prop_assert!(
            (pruned.layer_error - recon).abs() <= 1e-6 * recon.max(1e-9),
            "tally {} vs recon {}", pruned.layer_error, recon
        );

        let quant = QuantSpec { group_size: w.cols(), clip_search: false, ..QuantSpec::default() };
        let q = gptq_quantize(&w, &factor, &quant, 128).unwrap();
        let qdelta = w.sub(&q.w_hat).unwrap();
        let qrecon = x.matmul_transpose(&qdelta).unwrap().frob_sq();
        prop_assert!(
            (q.layer_error - qrecon).abs() <= 1e-6 * qrecon.max(1e-9),
            "quant tally {} vs recon {}", q.layer_error, qrecon
        );
    }

    #[test]
    fn best_single_prune_matches_exhaustive_oracle((w, x) in layer_case()) {
        prop_assume!(w.cols() <= 8);
        let mut h = x.gram();
        h.scale(2.0);
        let factor = match invert_cholesky(&h, &[], 0.0) {
            Ok(f) => f,
            Err(_) => {
                prop_assume!(false);
                unreachable!()
            }
        };
        let one = Matrix::from_vec(1, w.cols(), w.row(0).to_vec()).unwrap();
        let spec = SparsitySpec::Unstructured { fraction: 1.0 / w.cols() as f64 };
        let ours = sparsegpt_prune(&one, &factor, &spec, 128).unwrap();
        let oracle = exhaustive_mask_oracle(&one, &h, 1).unwrap();
        prop_assert!(
            ours.layer_error <= oracle.loss + 1e-7 * oracle.loss.max(1.0),
            "engine {} vs exhaustive {}", ours.layer_error, oracle.loss
        );
    }

    #[test]
    fn pruning_is_deterministic((w, x) in layer_case()) {
        let mut h = x.gram();
        h.scale(2.0);
        let (hd, lambda) = dampen(&h, 0.01).unwrap();
        let factor = invert_cholesky(&hd, &dead_columns(&h), lambda).unwrap();
        let spec = SparsitySpec::Unstructured { fraction: 0.5 };
        let a = sparsegpt_prune(&w, &factor, &spec, 2).unwrap();
        let b = sparsegpt_prune(&w, &factor, &spec, 2).unwrap();
        prop_assert_eq!(a.w_hat.max_abs_diff(&b.w_hat), 0.0);
        prop_assert_eq!(a.layer_error, b.layer_error);
    }
}
