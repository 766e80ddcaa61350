//! `layerflow decompose`: split a raster image into RGBA layers plus
//! background with a trained checkpoint.
//!
//! Output directory contents:
//!   manifest.json       result manifest (same schema as dataset stacks)
//!   background.png      predicted background (RGBA)
//!   layer_NN.png        one RGBA image per requested box
//!   composite.png       decoded composite tokens (also composite_pred.png)
//!   recomposite.png     predicted layers alpha-composited back together

use std::fs;
use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use layerflow_imaging::{
    load_rgb_png, over_composite, save_rgb_png, save_stack, BBox, RgbImage,
};
use layerflow_model::{load_params, sample, CfgStats, ModelConfig, SampleConfig};
use layerflow_tensor::{read_checkpoint_info, DType, Element};

use crate::config::{build_sample_config, echo_effective, load_file_config, SampleSection};
use crate::error::{CliError, Result};

#[derive(Args)]
pub struct DecomposeArgs {
    /// Trained checkpoint
    #[arg(long)]
    pub ckpt: PathBuf,

    /// Input PNG; dimensions must match the model's frame size
    #[arg(long)]
    pub image: PathBuf,

    /// JSON file with the layer boxes: an array of [x_l, y_l, x_r, y_r]
    /// pixel rectangles, 0 <= x_l < x_r <= width and 0 <= y_l < y_r <=
    /// height, one predicted layer per box, e.g. [[8,8,24,24],[0,32,64,64]].
    /// An empty array requests a background-only decomposition.
    #[arg(long)]
    pub boxes: PathBuf,

    /// Space-separated prompt words; empty means unconditioned text
    #[arg(long, default_value = "")]
    pub prompt: String,

    /// TOML config file with a [sample] section
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Euler integration steps
    #[arg(long)]
    pub steps: Option<usize>,

    /// Guidance scale s: v = uncond + s * (cond - uncond)
    #[arg(long)]
    pub cfg: Option<f64>,

    /// Noise seed
    #[arg(long)]
    pub seed: Option<u64>,

    /// Keep the image condition in the unconditional guidance branch
    #[arg(long = "image-cond-in-uncond")]
    pub image_cond_in_uncond: Option<bool>,

    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct EffectiveDecompose<'a> {
    precision: &'a str,
    sample: &'a SampleConfig,
    model: &'a ModelConfig,
}

pub fn run(args: &DecomposeArgs) -> Result<()> {
    let file = load_file_config(args.config.as_deref())?;
    let mut section = file.sample;
    section.overlay(SampleSection {
        n_steps: args.steps,
        cfg_scale: args.cfg,
        seed: args.seed,
        image_cond_in_uncond: args.image_cond_in_uncond,
    });
    let sampling = build_sample_config(&section);
    sampling.validate()?;

    let (dtype, _) = read_checkpoint_info(&args.ckpt)?;
    match dtype {
        DType::F32 => run_typed::<f32>(args, sampling),
        DType::F64 => run_typed::<f64>(args, sampling),
    }
}

fn parse_boxes(path: &PathBuf, frame: usize) -> Result<Vec<BBox>> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("boxes {}: {e}", path.display())))?;
    let raw: Vec<[i64; 4]> = serde_json::from_str(&text).map_err(|e| {
        CliError::Validation(format!(
            "boxes {}: expected a JSON array of [x_l, y_l, x_r, y_r]: {e}",
            path.display()
        ))
    })?;
    let mut boxes = Vec::with_capacity(raw.len());
    for (i, corners) in raw.iter().enumerate() {
        let [x_l, y_l, x_r, y_r] = *corners;
        if x_l < 0 || y_l < 0 {
            return Err(CliError::Validation(format!(
                "box {i} {corners:?}: negative corner"
            )));
        }
        let bbox = BBox::new(x_l as usize, y_l as usize, x_r.max(0) as usize, y_r.max(0) as usize);
        bbox.validate(frame, frame).map_err(|e| {
            CliError::Validation(format!("box {i} {corners:?}: {e}"))
        })?;
        boxes.push(bbox);
    }
    Ok(boxes)
}

fn run_typed<E: Element>(args: &DecomposeArgs, sampling: SampleConfig) -> Result<()> {
    let params = load_params::<E>(&args.ckpt)?;
    let frame = params.config.frame_size;

    let composite: RgbImage = load_rgb_png(&args.image)?;
    if composite.width() != frame || composite.height() != frame {
        return Err(CliError::Validation(format!(
            "image is {}x{} but the model expects {frame}x{frame}",
            composite.width(),
            composite.height()
        )));
    }
    let boxes = parse_boxes(&args.boxes, frame)?;
    let prompt: Vec<String> = args.prompt.split_whitespace().map(str::to_string).collect();

    echo_effective(
        &EffectiveDecompose {
            precision: E::DTYPE.name(),
            sample: &sampling,
            model: &params.config,
        },
        Some(&args.out),
    )?;

    let (stack, stats) = sample(&params, &composite, &boxes, &prompt, &sampling)?;
    save_stack(&stack, &args.out)?;
    save_rgb_png(&args.out.join("composite_pred.png"), &stack.composite)?;
    let recomposite = over_composite(&stack)?;
    save_rgb_png(&args.out.join("recomposite.png"), &recomposite)?;

    report_stats(&stats);
    println!(
        "decomposed into {} foreground layer(s) under {}",
        stack.foregrounds.len(),
        args.out.display()
    );
    Ok(())
}

fn report_stats(stats: &CfgStats) {
    println!(
        "velocity evaluations: {} conditional, {} unconditional",
        stats.cond_evals, stats.uncond_evals
    );
}
