//! Float image planes in [0, 1], plane-major storage: all of channel 0,
//! then channel 1, and so on, each plane row-major. Alpha is straight
//! (never premultiplied in storage).

use crate::error::{ImagingError, Result};

/// Nearest 8-bit code for a unit-range value.
pub fn quantize_unit(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Unit-range value for an 8-bit code.
pub fn dequantize_unit(b: u8) -> f64 {
    f64::from(b) / 255.0
}

macro_rules! plane_image {
    ($name:ident, $channels:expr, $doc:expr) => {
        #[doc = $doc]
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name {
            width: usize,
            height: usize,
            data: Vec<f64>,
        }

        impl $name {
            pub const CHANNELS: usize = $channels;

            /// All-zero image (black, and transparent when alpha exists).
            pub fn new(width: usize, height: usize) -> Self {
                Self {
                    width,
                    height,
                    data: vec![0.0; $channels * width * height],
                }
            }

            pub fn from_planes(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
                if data.len() != $channels * width * height {
                    return Err(ImagingError::DimensionMismatch {
                        context: concat!(stringify!($name), "::from_planes"),
                        expected_w: width,
                        expected_h: height,
                        got_w: data.len() / ($channels * height.max(1)).max(1),
                        got_h: height,
                    });
                }
                for &v in &data {
                    if !(0.0..=1.0).contains(&v) {
                        return Err(ImagingError::ValueOutOfRange {
                            context: concat!(stringify!($name), "::from_planes"),
                            value: v,
                        });
                    }
                }
                Ok(Self {
                    width,
                    height,
                    data,
                })
            }

            pub fn width(&self) -> usize {
                self.width
            }

            pub fn height(&self) -> usize {
                self.height
            }

            pub fn n_pixels(&self) -> usize {
                self.width * self.height
            }

            #[inline]
            fn idx(&self, c: usize, y: usize, x: usize) -> usize {
                debug_assert!(c < $channels && y < self.height && x < self.width);
                (c * self.height + y) * self.width + x
            }

            #[inline]
            pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
                self.data[self.idx(c, y, x)]
            }

            #[inline]
            pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
                let i = self.idx(c, y, x);
                self.data[i] = v;
            }

            /// One full channel plane, row-major.
            pub fn plane(&self, c: usize) -> &[f64] {
                &self.data[c * self.n_pixels()..(c + 1) * self.n_pixels()]
            }

            pub fn data(&self) -> &[f64] {
                &self.data
            }

            pub fn data_mut(&mut self) -> &mut [f64] {
                &mut self.data
            }

            /// Clamp every channel into [0, 1] in place.
            pub fn clamp_unit(&mut self) {
                for v in &mut self.data {
                    *v = v.clamp(0.0, 1.0);
                }
            }

            /// Snap every channel to its nearest 8-bit representable value.
            pub fn quantized(&self) -> Self {
                Self {
                    width: self.width,
                    height: self.height,
                    data: self
                        .data
                        .iter()
                        .map(|&v| dequantize_unit(quantize_unit(v)))
                        .collect(),
                }
            }
        }
    };
}

plane_image!(RgbImage, 3, "Opaque RGB image, unit-range float planes.");
plane_image!(
    RgbaImage,
    4,
    "RGBA image with straight (non-premultiplied) alpha, unit-range float planes."
);

impl RgbaImage {
    pub fn alpha(&self) -> &[f64] {
        self.plane(3)
    }

    /// Fully opaque image with the given RGB content.
    pub fn opaque(rgb: &RgbImage) -> Self {
        let n = rgb.n_pixels();
        let mut data = Vec::with_capacity(4 * n);
        data.extend_from_slice(rgb.data());
        data.resize(4 * n, 1.0);
        RgbaImage {
            width: rgb.width(),
            height: rgb.height(),
            data,
        }
    }

    /// Drop the alpha plane, keeping raw RGB content.
    pub fn rgb_planes(&self) -> RgbImage {
        RgbImage {
            width: self.width,
            height: self.height,
            data: self.data[..3 * self.n_pixels()].to_vec(),
        }
    }
}
