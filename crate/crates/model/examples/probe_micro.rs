//! Minimal trainability probe: one tiny stack, small model, loss reported
//! per time bucket against closed-form baselines.
//!
//! Baselines for a single memorized stack (x0 fixed, x1 ~ N(0,1)):
//!   predict 0:          E|x1 - x0|^2 = 1 + mean(x0^2)
//!   predict -x0:        1.0
//!   predict x_t - x0:   E[(t-1)^2] = 1/3 of |x1 - x0|^2 variance
//!   exact (x_t-x0)/t:   0

use layerflow_imaging::{synth_stack, SynthConfig};
use layerflow_model::{
    init_params, prepare_sample, register_params, sample_loss, ModelConfig, RopeConfig,
    TrainConfig, Trainer,
};
use layerflow_tensor::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let d_model: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(32);
    let n_blocks: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2);
    let steps: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let every_block: bool = args.get(4).map(|s| s == "1").unwrap_or(false);

    let config = ModelConfig {
        d_model,
        n_heads: 2,
        n_blocks,
        patch_size: 8,
        frame_size: 32,
        max_layers: 2,
        max_text_tokens: 8,
        vocab: layerflow_imaging::vocabulary(),
        rope: RopeConfig::with_default_split(d_model / 2).unwrap(),
        mlca_every_block: every_block,
    };
    let stack = synth_stack(
        7,
        &SynthConfig {
            frame_size: 32,
            n_layers: 2,
            ..SynthConfig::default()
        },
    )
    .unwrap();
    let prepared = vec![prepare_sample::<f64>(&stack, &config).unwrap()];

    // Closed-form baselines on this stack's token content.
    let x0 = &prepared[0].seq.tokens;
    let mean_sq: f64 = x0.data().iter().map(|v| v * v).sum::<f64>() / x0.numel() as f64;
    println!(
        "d={d_model} blocks={n_blocks} every_block={every_block} tokens={:?}",
        x0.shape()
    );
    println!(
        "baselines: zero={:.4} minus_x0=1.0000 xt_minus_x0={:.4} exact=0",
        1.0 + mean_sq,
        (1.0 + 0.0) / 3.0
    );

    let params = init_params::<f64>(&config, 0).unwrap();
    let train = TrainConfig {
        steps,
        batch_size: 4,
        lr: 1e-3,
        seed: 42,
        text_drop: 0.0,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(params, train.clone()).unwrap();
    let mut window = Vec::new();
    for step in 1..=steps {
        let loss = trainer.step(&prepared).unwrap();
        window.push(loss);
        if step % 250 == 0 {
            let avg: f64 = window.iter().sum::<f64>() / window.len() as f64;
            window.clear();
            println!("step {step:5}: loss {avg:.4}");
        }
    }

    // Loss by fixed time, averaged over noise draws.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let shape = x0.shape().to_vec();
    for t in [0.05, 0.25, 0.5, 0.75, 0.95] {
        let mut acc = 0.0;
        let reps = 8;
        for _ in 0..reps {
            let noise: Vec<f64> = (0..x0.numel()).map(|_| rng.sample(StandardNormal)).collect();
            let noise = Tensor::new(shape.clone(), noise).unwrap();
            let mut tape = Tape::new();
            let vars = register_params(&trainer.params, &mut tape).unwrap();
            let loss = sample_loss(
                &mut tape,
                &vars,
                &trainer.params.config,
                &train,
                &prepared[0],
                t,
                &noise,
                false,
                1.0,
            )
            .unwrap();
            acc += tape.value(loss).data()[0];
        }
        println!("t={t:.2}: loss {:.4}", acc / reps as f64);
    }
}
