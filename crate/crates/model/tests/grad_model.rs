//! End-to-end gradient verification: backpropagation through the full
//! model and loss must match central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use layerflow_imaging::{synth_stack, vocabulary, SynthConfig};
use layerflow_model::{
    gradient_check, init_params, prepare_sample, ModelConfig, RopeConfig, TrainConfig,
};
use layerflow_tensor::Tensor;

fn config(d_model: usize, every_block: bool) -> ModelConfig {
    ModelConfig {
        d_model,
        n_heads: 2,
        n_blocks: 2,
        patch_size: 8,
        frame_size: 32,
        max_layers: 3,
        max_text_tokens: 8,
        vocab: vocabulary(),
        rope: RopeConfig::with_default_split(d_model / 2).unwrap(),
        mlca_every_block: every_block,
    }
}

fn noise_like(seed: u64, shape: &[usize]) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

#[test]
fn backpropagation_matches_finite_differences() {
    let config = config(32, false);
    let params = init_params::<f64>(&config, 12).unwrap();
    let stack = synth_stack(
        3,
        &SynthConfig {
            frame_size: 32,
            n_layers: 2,
            ..SynthConfig::default()
        },
    )
    .unwrap();
    let sample = prepare_sample::<f64>(&stack, &config).unwrap();
    let noise = noise_like(70, sample.seq.tokens.shape());
    let report = gradient_check(
        &params,
        &TrainConfig::default(),
        &sample,
        0.37,
        &noise,
        6,
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(report.checked > 300, "only {} entries checked", report.checked);
    assert!(
        report.max_rel_err < 1e-4,
        "gradient mismatch {} at {}[{}]: analytic {} vs numeric {}",
        report.max_rel_err,
        report.worst_param,
        report.worst_index,
        report.worst_analytic,
        report.worst_numeric
    );
}

#[test]
fn gradients_remain_correct_with_guidance_in_every_block() {
    let config = config(16, true);
    let params = init_params::<f64>(&config, 21).unwrap();
    let stack = synth_stack(
        9,
        &SynthConfig {
            frame_size: 32,
            n_layers: 3,
            ..SynthConfig::default()
        },
    )
    .unwrap();
    let sample = prepare_sample::<f64>(&stack, &config).unwrap();
    let noise = noise_like(71, sample.seq.tokens.shape());
    let report = gradient_check(
        &params,
        &TrainConfig::default(),
        &sample,
        0.81,
        &noise,
        4,
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(
        report.max_rel_err < 1e-4,
        "gradient mismatch {} at {}[{}]: analytic {} vs numeric {}",
        report.max_rel_err,
        report.worst_param,
        report.worst_index,
        report.worst_analytic,
        report.worst_numeric
    );
}
