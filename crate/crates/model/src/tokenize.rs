//! Raster stacks to token sequences and back.
//!
//! A stack becomes one flat sequence of patch tokens: the composite frame
//! first, then the background, then every foreground restricted to its
//! patch-snapped bounding box. Each token carries an explicit (layer, row,
//! column) position; spatial coordinates are absolute patch-grid indices so
//! foreground tokens line up with the composite cells they overlap.

use layerflow_imaging::{BBox, ForegroundLayer, LayerStack, RgbImage, RgbaImage};
use layerflow_tensor::{Element, Tensor};

use crate::error::{ModelError, Result};

/// Layer id of the composite (full-frame) segment.
pub const COMPOSITE_LAYER: usize = 0;
/// Layer id of the background segment.
pub const BACKGROUND_LAYER: usize = 1;
/// Layer id of the first foreground segment.
pub const FOREGROUND_BASE: usize = 2;

/// Channels carried by every token: RGBA (composite alpha is a constant one).
pub const LAYER_CHANNELS: usize = 4;

/// Token position along the layer and spatial axes.
///
/// Image tokens use non-negative grid coordinates. Text tokens sit on a
/// sentinel layer `l = -1` with `h = 0` and `w` equal to their sequence index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Position {
    pub l: i64,
    pub h: i64,
    pub w: i64,
}

impl Position {
    pub fn text(index: usize) -> Self {
        Position {
            l: -1,
            h: 0,
            w: index as i64,
        }
    }
}

/// Contiguous run of tokens belonging to one layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub layer_id: usize,
    /// Index of the first token of this segment in the sequence.
    pub start: usize,
    pub len: usize,
    /// Pixel-space region the tokens cover (patch-snapped, full frame for
    /// composite and background).
    pub bbox: BBox,
}

/// Patch tiling of a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGrid {
    pub patch_size: usize,
    pub grid_h: usize,
    pub grid_w: usize,
}

impl PatchGrid {
    pub fn new(frame_h: usize, frame_w: usize, patch_size: usize) -> Result<Self> {
        if patch_size == 0 {
            return Err(ModelError::Config {
                reason: "patch size must be positive".into(),
            });
        }
        if frame_h % patch_size != 0 || frame_w % patch_size != 0 {
            return Err(ModelError::Config {
                reason: format!(
                    "frame {frame_h}x{frame_w} is not divisible by patch size {patch_size}"
                ),
            });
        }
        Ok(PatchGrid {
            patch_size,
            grid_h: frame_h / patch_size,
            grid_w: frame_w / patch_size,
        })
    }

    pub fn frame_h(&self) -> usize {
        self.grid_h * self.patch_size
    }

    pub fn frame_w(&self) -> usize {
        self.grid_w * self.patch_size
    }

    pub fn n_cells(&self) -> usize {
        self.grid_h * self.grid_w
    }

    /// Flattened dimension of one token holding `channels` image planes.
    pub fn token_dim(&self, channels: usize) -> usize {
        channels * self.patch_size * self.patch_size
    }
}

/// Positions, segments and grid of a token sequence, without the tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceLayout {
    pub positions: Vec<Position>,
    pub segments: Vec<Segment>,
    pub grid: PatchGrid,
}

impl SequenceLayout {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Number of foreground segments.
    pub fn n_foregrounds(&self) -> usize {
        self.segments
            .iter()
            .filter(|s| s.layer_id >= FOREGROUND_BASE)
            .count()
    }
}

/// Token sequence for one stack: per-token channels plus layout.
#[derive(Debug, Clone)]
pub struct TokenSequence<E: Element> {
    /// `[len, token_dim]` patch contents.
    pub tokens: Tensor<E>,
    pub layout: SequenceLayout,
}

impl<E: Element> TokenSequence<E> {
    pub fn len(&self) -> usize {
        self.layout.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layout.is_empty()
    }

    pub fn token_dim(&self) -> usize {
        self.tokens.shape()[1]
    }

    pub fn positions(&self) -> &[Position] {
        &self.layout.positions
    }

    pub fn segments(&self) -> &[Segment] {
        &self.layout.segments
    }
}

/// Snaps a box outward to patch boundaries: floor the top-left corner, ceil
/// the bottom-right.
pub fn snap_bbox(bbox: &BBox, patch_size: usize) -> BBox {
    let p = patch_size;
    BBox::new(
        (bbox.x_l / p) * p,
        (bbox.y_l / p) * p,
        bbox.x_r.div_ceil(p) * p,
        bbox.y_r.div_ceil(p) * p,
    )
}

/// Grid cells covered by a patch-aligned box, row-major.
fn cell_span(bbox: &BBox, grid: &PatchGrid) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    let p = grid.patch_size;
    debug_assert!(bbox.x_l % p == 0 && bbox.y_l % p == 0 && bbox.x_r % p == 0 && bbox.y_r % p == 0);
    (bbox.y_l / p..bbox.y_r / p, bbox.x_l / p..bbox.x_r / p)
}

/// Appends the token for grid cell (`gy`, `gx`) of a plane-major image
/// buffer. Token layout is channel-major: all pixels of channel 0 first.
fn push_patch(
    planes: &[f64],
    channels: usize,
    height: usize,
    width: usize,
    patch: usize,
    gy: usize,
    gx: usize,
    out: &mut Vec<f64>,
) {
    for c in 0..channels {
        let plane = &planes[c * height * width..(c + 1) * height * width];
        for py in 0..patch {
            let row = (gy * patch + py) * width + gx * patch;
            out.extend_from_slice(&plane[row..row + patch]);
        }
    }
}

/// Writes one token back into a plane-major image buffer.
fn pop_patch(
    token: &[f64],
    planes: &mut [f64],
    channels: usize,
    height: usize,
    width: usize,
    patch: usize,
    gy: usize,
    gx: usize,
) {
    let mut src = 0;
    for c in 0..channels {
        let plane = &mut planes[c * height * width..(c + 1) * height * width];
        for py in 0..patch {
            let row = (gy * patch + py) * width + gx * patch;
            plane[row..row + patch].copy_from_slice(&token[src..src + patch]);
            src += patch;
        }
    }
}

/// Splits a plane-major image buffer into row-major patch tokens.
pub fn patchify(
    planes: &[f64],
    channels: usize,
    height: usize,
    width: usize,
    patch_size: usize,
) -> Result<Vec<f64>> {
    let grid = PatchGrid::new(height, width, patch_size)?;
    expect_len(planes.len(), channels * height * width, "patchify input")?;
    let mut out = Vec::with_capacity(grid.n_cells() * grid.token_dim(channels));
    for gy in 0..grid.grid_h {
        for gx in 0..grid.grid_w {
            push_patch(planes, channels, height, width, patch_size, gy, gx, &mut out);
        }
    }
    Ok(out)
}

/// Reassembles a plane-major image buffer from row-major patch tokens.
pub fn unpatchify(
    tokens: &[f64],
    channels: usize,
    height: usize,
    width: usize,
    patch_size: usize,
) -> Result<Vec<f64>> {
    let grid = PatchGrid::new(height, width, patch_size)?;
    expect_len(tokens.len(), grid.n_cells() * grid.token_dim(channels), "unpatchify input")?;
    let dim = grid.token_dim(channels);
    let mut planes = vec![0.0; channels * height * width];
    let mut next = 0;
    for gy in 0..grid.grid_h {
        for gx in 0..grid.grid_w {
            let token = &tokens[next..next + dim];
            pop_patch(token, &mut planes, channels, height, width, patch_size, gy, gx);
            next += dim;
        }
    }
    Ok(planes)
}

fn expect_len(got: usize, want: usize, what: &str) -> Result<()> {
    if got != want {
        return Err(ModelError::Sequence {
            reason: format!("{what} holds {got} values, expected {want}"),
        });
    }
    Ok(())
}

/// Builds the layout for a frame and a list of foreground boxes, without
/// token contents. Segment order is composite, background, then foregrounds
/// in the given bottom-to-top order.
pub fn assemble_layout(
    frame_h: usize,
    frame_w: usize,
    boxes: &[BBox],
    patch_size: usize,
    max_layers: usize,
) -> Result<SequenceLayout> {
    if boxes.len() > max_layers {
        return Err(ModelError::Capacity {
            what: "foreground count",
            got: boxes.len(),
            max: max_layers,
        });
    }
    let grid = PatchGrid::new(frame_h, frame_w, patch_size)?;
    let full = BBox::full_frame(frame_w, frame_h);
    let mut positions = Vec::new();
    let mut segments = Vec::new();

    let mut push_segment = |layer_id: usize, bbox: BBox, positions: &mut Vec<Position>| {
        let (rows, cols) = cell_span(&bbox, &grid);
        let start = positions.len();
        for gy in rows.clone() {
            for gx in cols.clone() {
                positions.push(Position {
                    l: layer_id as i64,
                    h: gy as i64,
                    w: gx as i64,
                });
            }
        }
        segments.push(Segment {
            layer_id,
            start,
            len: positions.len() - start,
            bbox,
        });
    };

    push_segment(COMPOSITE_LAYER, full, &mut positions);
    push_segment(BACKGROUND_LAYER, full, &mut positions);
    for (i, bbox) in boxes.iter().enumerate() {
        bbox.validate(frame_w, frame_h)?;
        push_segment(FOREGROUND_BASE + i, snap_bbox(bbox, patch_size), &mut positions);
    }
    Ok(SequenceLayout {
        positions,
        segments,
        grid,
    })
}

/// Tokenizes a full stack: composite, background, then each foreground
/// cropped to its patch-snapped box.
pub fn assemble_sequence<E: Element>(
    stack: &LayerStack,
    patch_size: usize,
    max_layers: usize,
) -> Result<TokenSequence<E>> {
    let boxes: Vec<BBox> = stack.foregrounds.iter().map(|f| f.bbox).collect();
    let layout = assemble_layout(stack.height(), stack.width(), &boxes, patch_size, max_layers)?;
    let grid = layout.grid;
    let (h, w, p) = (stack.height(), stack.width(), patch_size);
    let dim = grid.token_dim(LAYER_CHANNELS);

    let mut flat = Vec::with_capacity(layout.len() * dim);
    // Composite tokens carry RGB plus a constant opaque alpha plane.
    let mut comp_planes = stack.composite.data().to_vec();
    comp_planes.extend(std::iter::repeat(1.0).take(h * w));
    for seg in &layout.segments {
        let planes: &[f64] = match seg.layer_id {
            COMPOSITE_LAYER => &comp_planes,
            BACKGROUND_LAYER => stack.background.data(),
            id => stack.foregrounds[id - FOREGROUND_BASE].image.data(),
        };
        let (rows, cols) = cell_span(&seg.bbox, &grid);
        for gy in rows.clone() {
            for gx in cols.clone() {
                push_patch(planes, LAYER_CHANNELS, h, w, p, gy, gx, &mut flat);
            }
        }
    }
    let tokens = Tensor::from_f64_slice(vec![layout.len(), dim], &flat)?;
    Ok(TokenSequence { tokens, layout })
}

/// Decodes a token sequence back into a stack.
///
/// Values are clamped to the unit range here, at decode time only. The
/// composite segment's alpha plane is discarded. Foreground pixels outside
/// each snapped box stay fully transparent, and the decoded stack's boxes
/// are the snapped ones. Prompts are not represented in token space, so the
/// decoded stack carries empty prompt lists.
pub fn scatter_to_layers<E: Element>(seq: &TokenSequence<E>) -> Result<LayerStack> {
    let grid = seq.layout.grid;
    let (h, w, p) = (grid.frame_h(), grid.frame_w(), grid.patch_size);
    let dim = grid.token_dim(LAYER_CHANNELS);
    if seq.tokens.shape() != [seq.layout.len(), dim] {
        return Err(ModelError::Sequence {
            reason: format!(
                "token tensor shape {:?} does not match layout of {} tokens by {} channels",
                seq.tokens.shape(),
                seq.layout.len(),
                dim
            ),
        });
    }
    let full = BBox::full_frame(w, h);
    let expect_layer = |seg_index: usize, seg: &Segment, id: usize, bbox: &BBox| -> Result<()> {
        if seg.layer_id != id || seg.bbox != *bbox {
            return Err(ModelError::Sequence {
                reason: format!("segment {seg_index} is not the expected layer {id} run"),
            });
        }
        Ok(())
    };
    if seq.layout.segments.len() < 2 {
        return Err(ModelError::Sequence {
            reason: "sequence lacks composite and background segments".into(),
        });
    }
    expect_layer(0, &seq.layout.segments[0], COMPOSITE_LAYER, &full)?;
    expect_layer(1, &seq.layout.segments[1], BACKGROUND_LAYER, &full)?;

    let values = seq.tokens.to_f64_vec();
    let decode_planes = |seg: &Segment| -> Vec<f64> {
        let mut planes = vec![0.0; LAYER_CHANNELS * h * w];
        let (rows, cols) = cell_span(&seg.bbox, &grid);
        let mut index = seg.start;
        for gy in rows.clone() {
            for gx in cols.clone() {
                let token = &values[index * dim..(index + 1) * dim];
                pop_patch(token, &mut planes, LAYER_CHANNELS, h, w, p, gy, gx);
                index += 1;
            }
        }
        for v in &mut planes {
            *v = v.clamp(0.0, 1.0);
        }
        planes
    };

    let comp_planes = decode_planes(&seq.layout.segments[0]);
    let composite = RgbImage::from_planes(w, h, comp_planes[..3 * h * w].to_vec())?;
    let background = RgbaImage::from_planes(w, h, decode_planes(&seq.layout.segments[1]))?;

    let mut foregrounds = Vec::new();
    for (i, seg) in seq.layout.segments[2..].iter().enumerate() {
        if seg.layer_id != FOREGROUND_BASE + i {
            return Err(ModelError::Sequence {
                reason: format!("segment {} is not foreground {i}", i + 2),
            });
        }
        foregrounds.push(ForegroundLayer {
            image: RgbaImage::from_planes(w, h, decode_planes(seg))?,
            bbox: seg.bbox,
            prompt: Vec::new(),
        });
    }
    Ok(LayerStack {
        composite,
        background,
        foregrounds,
        global_prompt: Vec::new(),
    })
}
