//! Times training steps and a sampling pass at a chosen scale.
//!
//! Run with, for example:
//! `cargo run -p layerflow-model --example bench_step -- 128 4 4 64 3`
//! (d_model, heads, blocks, frame, steps).

use std::time::Instant;

use layerflow_imaging::{synth_stack, vocabulary, SynthConfig};
use layerflow_model::{
    init_params, prepare_sample, sample, ModelConfig, PreparedSample, RopeConfig, SampleConfig,
    TrainConfig, Trainer,
};

fn main() {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("numeric argument"))
        .collect();
    let [d_model, n_heads, n_blocks, frame, steps] = match args.as_slice() {
        [a, b, c, d, e] => [*a, *b, *c, *d, *e],
        _ => [128, 4, 4, 64, 3],
    };
    let config = ModelConfig {
        d_model,
        n_heads,
        n_blocks,
        patch_size: 8,
        frame_size: frame,
        max_layers: 6,
        max_text_tokens: 24,
        vocab: vocabulary(),
        rope: RopeConfig::with_default_split(d_model / n_heads).unwrap(),
        mlca_every_block: false,
    };
    let data: Vec<PreparedSample<f32>> = (0..8)
        .map(|i| {
            let stack = synth_stack(
                100 + i,
                &SynthConfig {
                    frame_size: frame,
                    n_layers: 3,
                    ..SynthConfig::default()
                },
            )
            .unwrap();
            prepare_sample(&stack, &config).unwrap()
        })
        .collect();
    println!(
        "sequence length {} tokens, d_model {d_model}, {n_blocks} blocks",
        data[0].seq.len()
    );

    let params = init_params::<f32>(&config, 0).unwrap();
    println!("parameters: {}", params.n_params());
    let mut trainer = Trainer::new(
        params,
        TrainConfig {
            batch_size: 4,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    for k in 0..steps {
        let t0 = Instant::now();
        let loss = trainer.step(&data).unwrap();
        println!("step {k}: loss {loss:.4}, {} ms", t0.elapsed().as_millis());
    }

    let stack = synth_stack(
        100,
        &SynthConfig {
            frame_size: frame,
            n_layers: 3,
            ..SynthConfig::default()
        },
    )
    .unwrap();
    let boxes: Vec<_> = stack.foregrounds.iter().map(|f| f.bbox).collect();
    let t0 = Instant::now();
    let (_, stats) = sample(
        &trainer.params,
        &stack.composite,
        &boxes,
        &stack.global_prompt,
        &SampleConfig {
            n_steps: 10,
            cfg_scale: 2.0,
            seed: 0,
            image_cond_in_uncond: true,
        },
    )
    .unwrap();
    println!(
        "10-step sampling: {} ms ({} cond / {} uncond evals)",
        t0.elapsed().as_millis(),
        stats.cond_evals,
        stats.uncond_evals
    );
}
