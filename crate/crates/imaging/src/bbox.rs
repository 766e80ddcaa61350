use serde::{Deserialize, Serialize};

use crate::error::{ImagingError, Result};

/// Half-open pixel rectangle: x in [x_l, x_r), y in [y_l, y_r).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x_l: usize,
    pub y_l: usize,
    pub x_r: usize,
    pub y_r: usize,
}

impl BBox {
    pub fn new(x_l: usize, y_l: usize, x_r: usize, y_r: usize) -> Self {
        BBox { x_l, y_l, x_r, y_r }
    }

    pub fn full_frame(width: usize, height: usize) -> Self {
        BBox {
            x_l: 0,
            y_l: 0,
            x_r: width,
            y_r: height,
        }
    }

    pub fn width(&self) -> usize {
        self.x_r - self.x_l
    }

    pub fn height(&self) -> usize {
        self.y_r - self.y_l
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains_point(&self, x: usize, y: usize) -> bool {
        x >= self.x_l && x < self.x_r && y >= self.y_l && y < self.y_r
    }

    pub fn contains_box(&self, other: &BBox) -> bool {
        other.x_l >= self.x_l && other.y_l >= self.y_l && other.x_r <= self.x_r && other.y_r <= self.y_r
    }

    /// Enforce 0 <= x_l < x_r <= W and 0 <= y_l < y_r <= H.
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        let fail = |reason| {
            Err(ImagingError::InvalidBBox {
                x_l: self.x_l as i64,
                y_l: self.y_l as i64,
                x_r: self.x_r as i64,
                y_r: self.y_r as i64,
                width,
                height,
                reason,
            })
        };
        if self.x_l >= self.x_r {
            return fail("x_r must exceed x_l");
        }
        if self.y_l >= self.y_r {
            return fail("y_r must exceed y_l");
        }
        if self.x_r > width || self.y_r > height {
            return fail("box extends past the frame");
        }
        Ok(())
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.x_l, self.y_l, self.x_r, self.y_r]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validates_ordering_and_frame() {
        assert!(BBox::new(0, 0, 4, 4).validate(8, 8).is_ok());
        assert!(BBox::new(4, 0, 4, 4).validate(8, 8).is_err());
        assert!(BBox::new(0, 5, 4, 4).validate(8, 8).is_err());
        assert!(BBox::new(0, 0, 9, 4).validate(8, 8).is_err());
    }

    #[test]
    fn geometry_helpers() {
        let b = BBox::new(1, 2, 4, 7);
        assert_eq!((b.width(), b.height(), b.area()), (3, 5, 15));
        assert!(b.contains_point(1, 2));
        assert!(!b.contains_point(4, 2));
        assert!(BBox::full_frame(8, 8).contains_box(&b));
        assert!(!b.contains_box(&BBox::full_frame(8, 8)));
    }
}
