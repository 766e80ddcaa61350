//! Deterministic synthetic layered scenes: a solid or gradient
//! background under anti-aliased colored shapes, with tight alpha
//! bounding boxes and color+shape prompt words.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bbox::BBox;
use crate::error::{ImagingError, Result};
use crate::image::{RgbImage, RgbaImage};
use crate::stack::{over_composite, ForegroundLayer, LayerStack, ALPHA_EMPTY};

pub const PALETTE: [(&str, [f64; 3]); 10] = [
    ("red", [1.0, 0.0, 0.0]),
    ("orange", [1.0, 0.5, 0.0]),
    ("yellow", [1.0, 1.0, 0.0]),
    ("green", [0.0, 0.8, 0.0]),
    ("cyan", [0.0, 1.0, 1.0]),
    ("blue", [0.0, 0.0, 1.0]),
    ("purple", [0.5, 0.0, 1.0]),
    ("magenta", [1.0, 0.0, 1.0]),
    ("white", [1.0, 1.0, 1.0]),
    ("black", [0.0, 0.0, 0.0]),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Circle,
    Rectangle,
    Triangle,
    Ring,
}

impl ShapeKind {
    pub fn word(self) -> &'static str {
        match self {
            ShapeKind::Circle => "circle",
            ShapeKind::Rectangle => "rectangle",
            ShapeKind::Triangle => "triangle",
            ShapeKind::Ring => "ring",
        }
    }

    pub fn all() -> Vec<ShapeKind> {
        vec![
            ShapeKind::Circle,
            ShapeKind::Rectangle,
            ShapeKind::Triangle,
            ShapeKind::Ring,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlphaMode {
    Opaque,
    /// Uniform layer alpha drawn from [0.5, 1.0).
    Translucent,
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    /// Square frame side in pixels, at least 32.
    pub frame_size: usize,
    /// Total layer count including the background, at least 1.
    pub n_layers: usize,
    pub shape_palette: Vec<ShapeKind>,
    pub alpha_modes: Vec<AlphaMode>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            frame_size: 64,
            n_layers: 3,
            shape_palette: ShapeKind::all(),
            alpha_modes: vec![AlphaMode::Opaque, AlphaMode::Translucent],
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Err(ImagingError::InvalidConfig { reason });
        if self.frame_size < 32 {
            return fail(format!("frame_size {} below minimum 32", self.frame_size));
        }
        if self.n_layers < 1 {
            return fail("n_layers must be at least 1 (background only)".into());
        }
        if self.shape_palette.is_empty() {
            return fail("shape palette is empty".into());
        }
        if self.alpha_modes.is_empty() {
            return fail("alpha mode list is empty".into());
        }
        Ok(())
    }
}

/// Every prompt word the generator can emit; defines the text vocabulary.
pub fn vocabulary() -> Vec<String> {
    let mut words: Vec<String> = PALETTE.iter().map(|(name, _)| (*name).to_string()).collect();
    words.extend(ShapeKind::all().into_iter().map(|s| s.word().to_string()));
    words.push("background".to_string());
    words.push("gradient".to_string());
    words
}

enum Shape {
    Circle { cx: f64, cy: f64, r: f64 },
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Triangle { v: [(f64, f64); 3] },
    Ring { cx: f64, cy: f64, r_out: f64, r_in: f64 },
}

impl Shape {
    /// Inside-positive distance to the boundary, in pixels.
    fn signed_distance(&self, px: f64, py: f64) -> f64 {
        match self {
            Shape::Circle { cx, cy, r } => r - (px - cx).hypot(py - cy),
            Shape::Rect { x0, y0, x1, y1 } => {
                (px - x0).min(x1 - px).min(py - y0).min(y1 - py)
            }
            Shape::Triangle { v } => {
                let mut d = f64::INFINITY;
                for i in 0..3 {
                    let (ax, ay) = v[i];
                    let (bx, by) = v[(i + 1) % 3];
                    let len = (bx - ax).hypot(by - ay);
                    let cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax);
                    d = d.min(cross / len);
                }
                d
            }
            Shape::Ring { cx, cy, r_out, r_in } => {
                let rho = (px - cx).hypot(py - cy);
                (r_out - rho).min(rho - r_in)
            }
        }
    }
}

/// Anti-aliased coverage from a 1-pixel linear band around the boundary.
fn coverage(d: f64) -> f64 {
    (d + 0.5).clamp(0.0, 1.0)
}

fn pick_color(rng: &mut ChaCha8Rng) -> (&'static str, [f64; 3]) {
    PALETTE[rng.gen_range(0..PALETTE.len())]
}

fn sample_shape(rng: &mut ChaCha8Rng, kind: ShapeKind, f: f64) -> Shape {
    match kind {
        ShapeKind::Circle => {
            let r = rng.gen_range(f / 8.0..f / 5.0);
            let cx = rng.gen_range(r + 1.0..f - r - 1.0);
            let cy = rng.gen_range(r + 1.0..f - r - 1.0);
            Shape::Circle { cx, cy, r }
        }
        ShapeKind::Rectangle => {
            let hx = rng.gen_range(f / 10.0..f / 4.0);
            let hy = rng.gen_range(f / 10.0..f / 4.0);
            let cx = rng.gen_range(hx + 1.0..f - hx - 1.0);
            let cy = rng.gen_range(hy + 1.0..f - hy - 1.0);
            Shape::Rect {
                x0: cx - hx,
                y0: cy - hy,
                x1: cx + hx,
                y1: cy + hy,
            }
        }
        ShapeKind::Triangle => {
            let r = rng.gen_range(f / 7.0..f / 4.0);
            let cx = rng.gen_range(r + 1.0..f - r - 1.0);
            let cy = rng.gen_range(r + 1.0..f - r - 1.0);
            let base = rng.gen_range(0.0..std::f64::consts::TAU);
            let mut v = [(0.0, 0.0); 3];
            for (i, vert) in v.iter_mut().enumerate() {
                let angle = base + i as f64 * std::f64::consts::TAU / 3.0 + rng.gen_range(-0.4..0.4);
                let vr = r * rng.gen_range(0.7..1.0);
                *vert = (cx + vr * angle.cos(), cy + vr * angle.sin());
            }
            // signed_distance assumes positive shoelace orientation
            let area2 = (0..3)
                .map(|i| {
                    let (ax, ay) = v[i];
                    let (bx, by) = v[(i + 1) % 3];
                    ax * by - bx * ay
                })
                .sum::<f64>();
            if area2 < 0.0 {
                v.swap(0, 2);
            }
            Shape::Triangle { v }
        }
        ShapeKind::Ring => {
            let r_out = rng.gen_range(f / 7.0..f / 4.0);
            let r_in = r_out * rng.gen_range(0.4..0.65);
            let cx = rng.gen_range(r_out + 1.0..f - r_out - 1.0);
            let cy = rng.gen_range(r_out + 1.0..f - r_out - 1.0);
            Shape::Ring { cx, cy, r_out, r_in }
        }
    }
}

fn render_background(rng: &mut ChaCha8Rng, size: usize) -> (RgbaImage, Vec<String>) {
    let n = size * size;
    let mut data = vec![0.0; 4 * n];
    let (words, fill): (Vec<String>, Box<dyn Fn(f64, f64) -> [f64; 3]>) = if rng.gen_bool(0.5) {
        let (name, rgb) = pick_color(rng);
        (
            vec![name.to_string(), "background".to_string()],
            Box::new(move |_, _| rgb),
        )
    } else {
        let (name_a, a) = pick_color(rng);
        let (name_b, b) = {
            // distinct second stop so the gradient is visible
            loop {
                let candidate = pick_color(rng);
                if candidate.0 != name_a {
                    break candidate;
                }
            }
        };
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let (dx, dy) = (angle.cos(), angle.sin());
        let f = size as f64;
        let corners = [(0.0, 0.0), (f, 0.0), (0.0, f), (f, f)];
        let projections = corners.map(|(x, y)| x * dx + y * dy);
        let lo = projections.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = projections.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = (hi - lo).max(1e-9);
        (
            vec![name_a.to_string(), name_b.to_string(), "gradient".to_string()],
            Box::new(move |px, py| {
                let t = ((px * dx + py * dy) - lo) / span;
                [
                    a[0] + (b[0] - a[0]) * t,
                    a[1] + (b[1] - a[1]) * t,
                    a[2] + (b[2] - a[2]) * t,
                ]
            }),
        )
    };
    for y in 0..size {
        for x in 0..size {
            let rgb = fill(x as f64 + 0.5, y as f64 + 0.5);
            let i = y * size + x;
            data[i] = rgb[0].clamp(0.0, 1.0);
            data[n + i] = rgb[1].clamp(0.0, 1.0);
            data[2 * n + i] = rgb[2].clamp(0.0, 1.0);
            data[3 * n + i] = 1.0;
        }
    }
    let img = RgbaImage::from_planes(size, size, data).expect("background in range");
    (img, words)
}

fn render_foreground(rng: &mut ChaCha8Rng, config: &SynthConfig) -> Result<ForegroundLayer> {
    let size = config.frame_size;
    let f = size as f64;
    let kind = config.shape_palette[rng.gen_range(0..config.shape_palette.len())];
    let (color_name, rgb) = pick_color(rng);
    let layer_alpha = match config.alpha_modes[rng.gen_range(0..config.alpha_modes.len())] {
        AlphaMode::Opaque => 1.0,
        AlphaMode::Translucent => rng.gen_range(0.5..1.0),
    };
    let shape = sample_shape(rng, kind, f);

    let n = size * size;
    let mut data = vec![0.0; 4 * n];
    let mut min_x = usize::MAX;
    let mut min_y = usize::MAX;
    let mut max_x = 0usize;
    let mut max_y = 0usize;
    for y in 0..size {
        for x in 0..size {
            let d = shape.signed_distance(x as f64 + 0.5, y as f64 + 0.5);
            let mut a = coverage(d) * layer_alpha;
            // snap faint AA fringe to exactly zero so "nonzero alpha"
            // and "inside the tight bbox" coincide after quantization
            if a <= ALPHA_EMPTY {
                a = 0.0;
            }
            let i = y * size + x;
            data[i] = rgb[0];
            data[n + i] = rgb[1];
            data[2 * n + i] = rgb[2];
            data[3 * n + i] = a;
            if a > 0.0 {
                min_x = min_x.min(x);
                min_y = min_y.min(y);
                max_x = max_x.max(x);
                max_y = max_y.max(y);
            }
        }
    }
    if min_x == usize::MAX {
        return Err(ImagingError::InvalidConfig {
            reason: "sampled shape produced no visible pixels".into(),
        });
    }
    Ok(ForegroundLayer {
        image: RgbaImage::from_planes(size, size, data).expect("foreground in range"),
        bbox: BBox::new(min_x, min_y, max_x + 1, max_y + 1),
        prompt: vec![color_name.to_string(), kind.word().to_string()],
    })
}

/// Deterministic layered scene for a seed: background plus
/// `n_layers - 1` shapes, composited and validated before returning.
pub fn synth_stack(seed: u64, config: &SynthConfig) -> Result<LayerStack> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (background, mut global_prompt) = render_background(&mut rng, config.frame_size);
    let mut foregrounds = Vec::with_capacity(config.n_layers - 1);
    for _ in 0..config.n_layers - 1 {
        let fg = render_foreground(&mut rng, config)?;
        global_prompt.extend(fg.prompt.iter().cloned());
        foregrounds.push(fg);
    }
    let mut stack = LayerStack {
        composite: RgbImage::new(config.frame_size, config.frame_size),
        background,
        foregrounds,
        global_prompt,
    };
    stack.composite = over_composite(&stack)?;
    stack.validate()?;
    Ok(stack)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_reproduces_identical_stacks() {
        let config = SynthConfig::default();
        let a = synth_stack(42, &config).unwrap();
        let b = synth_stack(42, &config).unwrap();
        assert_eq!(a, b);
        let c = synth_stack(43, &config).unwrap();
        assert_ne!(a.composite, c.composite);
    }

    #[test]
    fn background_only_stack_composites_to_background() {
        let config = SynthConfig {
            n_layers: 1,
            ..Default::default()
        };
        let stack = synth_stack(7, &config).unwrap();
        assert!(stack.foregrounds.is_empty());
        assert_eq!(stack.composite, stack.background.rgb_planes());
    }

    #[test]
    fn composite_matches_over_composite_exactly() {
        for seed in 0..20 {
            let stack = synth_stack(seed, &SynthConfig::default()).unwrap();
            let recomposed = over_composite(&stack).unwrap();
            for (a, b) in stack.composite.data().iter().zip(recomposed.data()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn bboxes_are_tight() {
        for seed in 100..120 {
            let stack = synth_stack(seed, &SynthConfig::default()).unwrap();
            for fg in &stack.foregrounds {
                let b = fg.bbox;
                let covered = |x: usize, y: usize| fg.image.get(3, y, x) > 0.0;
                assert!((b.y_l..b.y_r).any(|y| covered(b.x_l, y)), "left edge slack");
                assert!((b.y_l..b.y_r).any(|y| covered(b.x_r - 1, y)), "right edge slack");
                assert!((b.x_l..b.x_r).any(|x| covered(x, b.y_l)), "top edge slack");
                assert!((b.x_l..b.x_r).any(|x| covered(x, b.y_r - 1)), "bottom edge slack");
            }
        }
    }

    #[test]
    fn empty_palette_is_rejected() {
        let config = SynthConfig {
            shape_palette: vec![],
            ..Default::default()
        };
        assert!(matches!(
            synth_stack(0, &config),
            Err(ImagingError::InvalidConfig { .. })
        ));
    }

    #[test]
    fn vocabulary_covers_all_emitted_words() {
        let vocab = vocabulary();
        for seed in 0..50 {
            let stack = synth_stack(seed, &SynthConfig::default()).unwrap();
            for word in &stack.global_prompt {
                assert!(vocab.contains(word), "word {word} missing from vocabulary");
            }
        }
    }
}
