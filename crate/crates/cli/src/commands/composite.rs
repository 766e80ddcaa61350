//! `layerflow composite`: flatten a stored stack with the over operator.

use std::path::PathBuf;

use clap::Args;

use layerflow_imaging::{load_stack, over_composite, save_rgb_png, MANIFEST_NAME};

use crate::error::Result;

#[derive(Args)]
pub struct CompositeArgs {
    /// Stack directory containing manifest.json
    #[arg(long)]
    pub stack: PathBuf,

    /// Output PNG path
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &CompositeArgs) -> Result<()> {
    let stack = load_stack(&args.stack.join(MANIFEST_NAME))?;
    let flat = over_composite(&stack)?;
    save_rgb_png(&args.out, &flat)?;
    println!(
        "composited {} foreground layer(s) over background into {}",
        stack.foregrounds.len(),
        args.out.display()
    );
    Ok(())
}
