//! Property tests for tape invariants that must hold on arbitrary inputs.

use layerflow_tensor::{RotationTable, Tape, Tensor};
use proptest::prelude::*;

proptest! {
    #[test]
    fn softmax_lanes_sum_to_one(
        values in prop::collection::vec(-50.0f64..50.0, 1..24),
    ) {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_vec(values)).unwrap();
        let y = tape.softmax(x, 0).unwrap();
        let total: f64 = tape.value(y).data().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12, "sum = {total}");
        prop_assert!(tape.value(y).data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn rope_preserves_pair_norms(
        seed in 0u64..1000,
        tokens in 1usize..5,
        heads in 1usize..3,
        pairs in 1usize..4,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let dh = pairs * 2;
        let n = tokens * heads * dh;
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let angles: Vec<f64> = (0..tokens * pairs).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let table = RotationTable::from_angles(tokens, pairs, &angles);

        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(vec![tokens, heads, dh], data.clone()).unwrap()).unwrap();
        let y = tape.rope(x, &table).unwrap();
        let out = tape.value(y).data();
        for t in 0..tokens {
            for h in 0..heads {
                let base = (t * heads + h) * dh;
                for p in 0..pairs {
                    let before = data[base + 2 * p].hypot(data[base + 2 * p + 1]);
                    let after = out[base + 2 * p].hypot(out[base + 2 * p + 1]);
                    prop_assert!((before - after).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn backward_is_linear_in_the_loss(
        seed in 0u64..1000,
        alpha in -3.0f64..3.0,
        beta in -3.0f64..3.0,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let w0: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();

        // two scalar losses over the same leaf
        let losses = |tape: &mut Tape<f64>, w| {
            let sq = tape.mul(w, w).unwrap();
            let l1 = tape.sum_all(sq).unwrap();
            let g = tape.gelu(w).unwrap();
            let l2 = tape.sum_all(g).unwrap();
            (l1, l2)
        };

        let grad_of = |build: &dyn Fn(&mut Tape<f64>, layerflow_tensor::Var) -> layerflow_tensor::Var| {
            let mut tape = Tape::<f64>::new();
            let w = tape.leaf(Tensor::from_vec(w0.clone()), true).unwrap();
            let loss = build(&mut tape, w);
            let grads = tape.backward(loss).unwrap();
            grads.get(w).unwrap().data().to_vec()
        };

        let g1 = grad_of(&|tape, w| losses(tape, w).0);
        let g2 = grad_of(&|tape, w| losses(tape, w).1);
        let g_combined = grad_of(&|tape, w| {
            let (l1, l2) = losses(tape, w);
            let a = tape.scale(l1, alpha).unwrap();
            let b = tape.scale(l2, beta).unwrap();
            tape.add(a, b).unwrap()
        });

        for i in 0..g1.len() {
            let expect = alpha * g1[i] + beta * g2[i];
            prop_assert!((g_combined[i] - expect).abs() < 1e-12,
                "coord {i}: {} vs {}", g_combined[i], expect);
        }
    }

    #[test]
    fn adam_update_is_deterministic(
        seed in 0u64..1000,
        steps in 1usize..20,
    ) {
        use layerflow_tensor::{adam_step, AdamConfig, AdamState};
        use rand::{Rng, SeedableRng};
        let run = || {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut w = Tensor::from_vec((0..5).map(|_| rng.gen_range(-1.0f32..1.0)).collect());
            let mut state = AdamState::new(&[vec![5]]);
            for _ in 0..steps {
                let g: Vec<f32> = (0..5).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
                let grads = vec![Some(Tensor::from_vec(g))];
                adam_step(&AdamConfig::default(), &mut state, &mut [&mut w], &grads).unwrap();
            }
            w.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        prop_assert_eq!(run(), run());
    }
}
