use asyncrl_core::fusion::{dropout_prune, erase_minority, merge, task_vector, EraseMode, FusionConfig, TaskVector};
use asyncrl_core::{ParamTable, SplitRng};
use proptest::prelude::*;

#[test]
fn dropout_is_unbiased_per_element() {
    let values = [0.7, -1.3, 0.05, 2.0];
    let tau = TaskVector::from_delta(ParamTable::from_vec([1, 1, 4], values.to_vec()).unwrap(), "x");
    let root = SplitRng::new(9).split("dropout-bias");
    let draws = 10_000;
    for p in [0.1, 0.5, 0.9] {
        let mut sum = [0.0; 4];
        let mut sq = [0.0; 4];
        for d in 0..draws {
            let out = dropout_prune(&tau, p, &mut root.split_u64(d)).unwrap();
            for (i, x) in out.delta.as_slice().iter().enumerate() {
                sum[i] += x;
                sq[i] += x * x;
            }
        }
        for i in 0..4 {
            let n = draws as f64;
            let mean = sum[i] / n;
            let se = ((sq[i] / n - mean * mean) / n).sqrt();
            assert!((mean - values[i]).abs() <= 3.0 * se, "p={p} i={i} mean={mean} se={se}");
        }
    }
}

proptest! {
    #[test]
    fn single_expert_identity_is_bit_exact(
        base in prop::collection::vec(-1e3f64..1e3, 6),
        expert in prop::collection::vec(-1e3f64..1e3, 6),
    ) {
        let sft = ParamTable::from_vec([1, 2, 3], base).unwrap();
        let rl = ParamTable::from_vec([1, 2, 3], expert).unwrap();
        let tau = task_vector(&rl, &sft, "e").unwrap();
        let (fused, _) = merge(&sft, &[tau], &FusionConfig::default()).unwrap();
        prop_assert_eq!(fused.as_slice(), rl.as_slice());
    }

    #[test]
    fn erasure_only_zeroes_and_leaves_agreement(
        vectors in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 8), 2..5),
        weighted in any::<bool>(),
    ) {
        let taus: Vec<TaskVector> = vectors
            .iter()
            .enumerate()
            .map(|(i, v)| TaskVector::from_delta(ParamTable::from_vec([1, 1, 8], v.clone()).unwrap(), format!("t{i}")))
            .collect();
        let w = vec![1.0 / taus.len() as f64; taus.len()];
        let mode = if weighted { EraseMode::WeightedSumSign } else { EraseMode::SumSign };
        let out = erase_minority(&taus, mode, &w).unwrap();
        for e in 0..8 {
            let after: Vec<f64> = out.iter().map(|t| t.delta.as_slice()[e]).collect();
            for (x, y) in vectors.iter().map(|v| v[e]).zip(&after) {
                prop_assert!(*y == x || *y == 0.0);
            }
            let direction: f64 = vectors.iter().map(|v| v[e]).sum();
            if direction == 0.0 {
                continue;
            }
            // survivors all share one sign
            prop_assert!(after.iter().all(|&y| y >= 0.0) || after.iter().all(|&y| y <= 0.0));
        }
    }
}
