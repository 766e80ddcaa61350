//! `layerflow gen-data`: synthesize a dataset of layered stacks.

use std::path::PathBuf;

use clap::Args;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use layerflow_imaging::{save_stack, synth_stack, write_index, SynthConfig};

use crate::config::echo_effective;
use crate::error::{CliError, Result};

#[derive(Args)]
pub struct GenDataArgs {
    /// Output dataset directory (stack subdirectories plus index.json)
    #[arg(long)]
    pub out: PathBuf,

    /// Number of stacks to generate
    #[arg(long)]
    pub count: usize,

    /// Base RNG seed; stack i derives its randomness from (seed, i)
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Square frame edge in pixels
    #[arg(long, default_value_t = 64)]
    pub frame: usize,

    /// Maximum foreground layers; each stack draws uniformly from 1..=max
    #[arg(long = "max-layers", default_value_t = 2)]
    pub max_layers: usize,
}

/// Parameters echoed to stdout and into the dataset directory. Contains no
/// paths so runs with equal parameters give byte-identical trees.
#[derive(Serialize)]
struct EffectiveGen {
    gen: GenSection,
}

#[derive(Serialize)]
struct GenSection {
    count: usize,
    seed: u64,
    frame: usize,
    max_layers: usize,
}

pub fn run(args: &GenDataArgs) -> Result<()> {
    if args.count == 0 {
        return Err(CliError::Validation("--count must be at least 1".into()));
    }
    if args.max_layers == 0 {
        return Err(CliError::Validation("--max-layers must be at least 1".into()));
    }
    echo_effective(
        &EffectiveGen {
            gen: GenSection {
                count: args.count,
                seed: args.seed,
                frame: args.frame,
                max_layers: args.max_layers,
            },
        },
        Some(&args.out),
    )?;

    let mut manifests = Vec::with_capacity(args.count);
    for i in 0..args.count {
        // One independent RNG stream per stack: layer count, then the
        // generator seed.
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
        rng.set_stream(i as u64);
        let foregrounds = rng.gen_range(1..=args.max_layers);
        let stack_seed: u64 = rng.gen();
        let config = SynthConfig {
            frame_size: args.frame,
            n_layers: foregrounds + 1,
            ..SynthConfig::default()
        };
        let stack = synth_stack(stack_seed, &config)?;
        let dir = args.out.join(format!("stack_{i:05}"));
        manifests.push(save_stack(&stack, &dir)?);
    }
    write_index(&args.out, &manifests)?;
    println!("wrote {} stacks under {}", args.count, args.out.display());
    Ok(())
}
