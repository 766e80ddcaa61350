//! Trains on a small fixed dataset and periodically reports how well the
//! sampler reconstructs it: mean foreground mask IoU and the PSNR of the
//! recomposited layers against the true composite.
//!
//! `cargo run -p layerflow-model --example overfit_probe -- 64 4 4 3000 500`
//! (d_model, heads, blocks, steps, probe interval; optional lr and batch).

use std::time::Instant;

use layerflow_imaging::{over_composite, synth_stack, vocabulary, LayerStack, SynthConfig};
use layerflow_model::{
    init_params, prepare_sample, sample, ModelConfig, PreparedSample, RopeConfig, SampleConfig,
    TrainConfig, Trainer,
};

fn mask_iou(pred: &layerflow_imaging::RgbaImage, truth: &layerflow_imaging::RgbaImage) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in pred.alpha().iter().zip(truth.alpha()) {
        let (pa, pb) = (a > 0.5, b > 0.5);
        inter += (pa && pb) as usize;
        union += (pa || pb) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

fn psnr(a: &layerflow_imaging::RgbImage, b: &layerflow_imaging::RgbImage) -> f64 {
    let mse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = (x - y) as f64;
            d * d
        })
        .sum::<f64>()
        / a.data().len() as f64;
    if mse == 0.0 {
        99.0
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

fn probe(trainer: &Trainer<f32>, stacks: &[LayerStack], cfg_scale: f64) -> (f64, f64) {
    let sampling = SampleConfig {
        n_steps: 20,
        cfg_scale,
        seed: 1234,
        image_cond_in_uncond: true,
    };
    let (mut ious, mut psnrs) = (Vec::new(), Vec::new());
    for stack in stacks {
        let boxes: Vec<_> = stack.foregrounds.iter().map(|f| f.bbox).collect();
        let (pred, _) = sample(
            &trainer.params,
            &stack.composite,
            &boxes,
            &stack.global_prompt,
            &sampling,
        )
        .unwrap();
        for (p, t) in pred.foregrounds.iter().zip(&stack.foregrounds) {
            ious.push(mask_iou(&p.image, &t.image));
        }
        let recomposited = over_composite(&pred).unwrap();
        psnrs.push(psnr(&recomposited, &stack.composite));
    }
    (
        ious.iter().sum::<f64>() / ious.len().max(1) as f64,
        psnrs.iter().sum::<f64>() / psnrs.len() as f64,
    )
}

fn main() {
    let args: Vec<f64> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("numeric argument"))
        .collect();
    let get = |i: usize, default: f64| args.get(i).copied().unwrap_or(default);
    let (d_model, n_heads, n_blocks) = (get(0, 64.0) as usize, get(1, 4.0) as usize, get(2, 4.0) as usize);
    let (steps, every) = (get(3, 3000.0) as u64, get(4, 500.0) as u64);
    let lr = get(5, 1e-3);
    let batch = get(6, 4.0) as usize;
    let every_block = get(7, 0.0) != 0.0;
    let n_stacks = get(8, 8.0) as u64;
    let cfg_scale = get(9, 2.0);

    let config = ModelConfig {
        d_model,
        n_heads,
        n_blocks,
        patch_size: 8,
        frame_size: 64,
        max_layers: 6,
        max_text_tokens: 24,
        vocab: vocabulary(),
        rope: RopeConfig::with_default_split(d_model / n_heads).unwrap(),
        mlca_every_block: every_block,
    };
    let stacks: Vec<LayerStack> = (0..n_stacks)
        .map(|i| {
            synth_stack(
                200 + i,
                &SynthConfig {
                    frame_size: 64,
                    n_layers: 3,
                    ..SynthConfig::default()
                },
            )
            .unwrap()
        })
        .collect();
    let data: Vec<PreparedSample<f32>> = stacks
        .iter()
        .map(|s| prepare_sample(s, &config).unwrap())
        .collect();
    let mut trainer = Trainer::new(
        init_params::<f32>(&config, 0).unwrap(),
        TrainConfig {
            steps,
            batch_size: batch,
            lr,
            seed: 42,
            ..TrainConfig::default()
        },
    )
    .unwrap();

    println!("d={d_model} heads={n_heads} blocks={n_blocks} lr={lr} batch={batch} every_block={every_block} stacks={n_stacks} cfg={cfg_scale}");
    let t0 = Instant::now();
    let mut window = Vec::new();
    for step in 0..steps {
        window.push(trainer.step(&data).unwrap());
        if (step + 1) % every == 0 {
            let avg = window.iter().sum::<f64>() / window.len() as f64;
            window.clear();
            let (iou, db) = probe(&trainer, &stacks, cfg_scale);
            println!(
                "step {:4}: loss {avg:.4}, mask IoU {iou:.3}, recomposite PSNR {db:.2} dB, {:.0}s",
                step + 1,
                t0.elapsed().as_secs_f64()
            );
        }
    }
}
