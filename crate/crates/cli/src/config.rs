//! Layered run configuration: built-in defaults, then an optional TOML file,
//! then command-line flags. Every command echoes the merged result and, when
//! it owns an output directory, writes it there as `effective_config.toml`.
//! The echoed file never contains filesystem paths so that two runs with the
//! same parameters produce byte-identical output trees.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use layerflow_model::{ModelConfig, RopeConfig, SampleConfig, TrainConfig};

use crate::error::{CliError, Result};

pub const EFFECTIVE_CONFIG_NAME: &str = "effective_config.toml";

/// Optional overrides read from `--config FILE`. Unknown keys are rejected
/// so typos fail loudly instead of silently using defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub model: ModelSection,
    pub train: TrainSection,
    pub sample: SampleSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub d_model: Option<usize>,
    pub n_heads: Option<usize>,
    pub n_blocks: Option<usize>,
    pub patch_size: Option<usize>,
    pub frame_size: Option<usize>,
    pub max_layers: Option<usize>,
    pub max_text_tokens: Option<usize>,
    pub mlca_every_block: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub steps: Option<u64>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub seed: Option<u64>,
    pub text_drop: Option<f64>,
    pub weight_layers: Option<f64>,
    pub weight_composite: Option<f64>,
    pub threads: Option<usize>,
}

impl TrainSection {
    /// Fields set in `flags` win over this section's values.
    pub fn overlay(&mut self, flags: TrainSection) {
        let TrainSection {
            steps,
            batch_size,
            lr,
            seed,
            text_drop,
            weight_layers,
            weight_composite,
            threads,
        } = flags;
        self.steps = steps.or(self.steps);
        self.batch_size = batch_size.or(self.batch_size);
        self.lr = lr.or(self.lr);
        self.seed = seed.or(self.seed);
        self.text_drop = text_drop.or(self.text_drop);
        self.weight_layers = weight_layers.or(self.weight_layers);
        self.weight_composite = weight_composite.or(self.weight_composite);
        self.threads = threads.or(self.threads);
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSection {
    pub n_steps: Option<usize>,
    pub cfg_scale: Option<f64>,
    pub seed: Option<u64>,
    pub image_cond_in_uncond: Option<bool>,
}

impl SampleSection {
    /// Fields set in `flags` win over this section's values.
    pub fn overlay(&mut self, flags: SampleSection) {
        let SampleSection {
            n_steps,
            cfg_scale,
            seed,
            image_cond_in_uncond,
        } = flags;
        self.n_steps = n_steps.or(self.n_steps);
        self.cfg_scale = cfg_scale.or(self.cfg_scale);
        self.seed = seed.or(self.seed);
        self.image_cond_in_uncond = image_cond_in_uncond.or(self.image_cond_in_uncond);
    }
}

pub fn load_file_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("config {}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))
}

fn apply<T: Copy>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Model hyperparameters from defaults + file. The vocabulary is always the
/// built-in synthetic one and the rotary split is derived from the head size,
/// so neither appears in the file schema.
pub fn build_model_config(file: &ModelSection) -> Result<ModelConfig> {
    let mut config = ModelConfig::desk_default();
    apply(&mut config.d_model, file.d_model);
    apply(&mut config.n_heads, file.n_heads);
    apply(&mut config.n_blocks, file.n_blocks);
    apply(&mut config.patch_size, file.patch_size);
    apply(&mut config.frame_size, file.frame_size);
    apply(&mut config.max_layers, file.max_layers);
    apply(&mut config.max_text_tokens, file.max_text_tokens);
    apply(&mut config.mlca_every_block, file.mlca_every_block);
    if config.n_heads == 0 || config.d_model % config.n_heads != 0 {
        return Err(CliError::Validation(format!(
            "d_model {} is not divisible by n_heads {}",
            config.d_model, config.n_heads
        )));
    }
    config.rope =
        RopeConfig::with_default_split(config.d_model / config.n_heads).map_err(CliError::from)?;
    config.validate()?;
    Ok(config)
}

pub fn build_train_config(file: &TrainSection) -> TrainConfig {
    let mut config = TrainConfig::default();
    apply(&mut config.steps, file.steps);
    apply(&mut config.batch_size, file.batch_size);
    apply(&mut config.lr, file.lr);
    apply(&mut config.seed, file.seed);
    apply(&mut config.text_drop, file.text_drop);
    apply(&mut config.weight_layers, file.weight_layers);
    apply(&mut config.weight_composite, file.weight_composite);
    apply(&mut config.threads, file.threads);
    config
}

pub fn build_sample_config(file: &SampleSection) -> SampleConfig {
    let mut config = SampleConfig::default();
    apply(&mut config.n_steps, file.n_steps);
    apply(&mut config.cfg_scale, file.cfg_scale);
    apply(&mut config.seed, file.seed);
    apply(&mut config.image_cond_in_uncond, file.image_cond_in_uncond);
    config
}

/// Prints the merged configuration to stdout and, when given a directory,
/// writes the identical text as `effective_config.toml`.
pub fn echo_effective<T: Serialize>(effective: &T, out_dir: Option<&Path>) -> Result<()> {
    let text = toml::to_string_pretty(effective)
        .map_err(|e| CliError::Validation(format!("config echo failed: {e}")))?;
    print!("{text}");
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(EFFECTIVE_CONFIG_NAME), &text)?;
    }
    Ok(())
}
