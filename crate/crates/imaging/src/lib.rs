//! Layered RGBA images: value types, straight-alpha compositing, the
//! gray-background RGBA→RGB flattening metrics consume, a deterministic
//! synthetic scene generator, and PNG+manifest persistence.

pub mod bbox;
pub mod error;
pub mod image;
pub mod io;
pub mod stack;
pub mod synth;

pub use bbox::BBox;
pub use error::{ImagingError, Result};
pub use image::{dequantize_unit, quantize_unit, RgbImage, RgbaImage};
pub use io::{
    load_dataset, load_rgb_png, load_stack, read_index, save_rgb_png, save_rgba_png, save_stack,
    write_index, INDEX_NAME, MANIFEST_NAME,
};
pub use stack::{over_composite, rgba_to_rgb, ForegroundLayer, LayerStack, ALPHA_EMPTY};
pub use synth::{synth_stack, vocabulary, AlphaMode, ShapeKind, SynthConfig, PALETTE};
