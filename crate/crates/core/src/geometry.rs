use crate::error::{Error, Result};

/// Half-extent of the normalized image plane.
pub const HALF_EXTENT: f64 = 0.5;

/// Normalized image coordinates in `[-0.5, 0.5]²`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        libm::hypot(self.x - other.x, self.y - other.y)
    }

    pub fn in_bounds(&self) -> bool {
        self.x.abs() <= HALF_EXTENT && self.y.abs() <= HALF_EXTENT
    }

    pub fn clamped(self) -> Self {
        Self {
            x: self.x.clamp(-HALF_EXTENT, HALF_EXTENT),
            y: self.y.clamp(-HALF_EXTENT, HALF_EXTENT),
        }
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// Box extent in the same units as the positions it accompanies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxSize {
    pub width: f64,
    pub height: f64,
}

/// Axis-aligned box given by its top-left corner and extent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub left: f64,
    pub top: f64,
    pub width: f64,
    pub height: f64,
}

impl BBox {
    pub fn centered(center: Position, size: BoxSize) -> Self {
        Self {
            left: center.x - size.width / 2.0,
            top: center.y - size.height / 2.0,
            width: size.width,
            height: size.height,
        }
    }

    pub fn center(&self) -> Position {
        Position::new(self.left + self.width / 2.0, self.top + self.height / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width > 0.0 && self.height > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidBox {
                width: self.width,
                height: self.height,
            })
        }
    }
}

/// Intersection over union of two boxes with positive extent.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    let iw = (a.left + a.width).min(b.left + b.width) - a.left.max(b.left);
    let ih = (a.top + a.height).min(b.top + b.height) - a.top.max(b.top);
    if iw <= 0.0 || ih <= 0.0 {
        return Ok(0.0);
    }
    let inter = iw * ih;
    let union = a.width * a.height + b.width * b.height - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(left: f64, top: f64) -> BBox {
        BBox {
            left,
            top,
            width: 1.0,
            height: 1.0,
        }
    }

    #[test]
    fn identical_boxes_overlap_fully() {
        assert_eq!(iou(&unit(2.0, 3.0), &unit(2.0, 3.0)).unwrap(), 1.0);
    }

    #[test]
    fn disjoint_boxes_do_not_overlap() {
        assert_eq!(iou(&unit(0.0, 0.0), &unit(5.0, 0.0)).unwrap(), 0.0);
        // Touching edges share no area.
        assert_eq!(iou(&unit(0.0, 0.0), &unit(1.0, 0.0)).unwrap(), 0.0);
    }

    #[test]
    fn half_offset_unit_squares() {
        let v = iou(&unit(0.0, 0.0), &unit(0.5, 0.0)).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_box_is_rejected() {
        let bad = BBox {
            left: 0.0,
            top: 0.0,
            width: 0.0,
            height: 1.0,
        };
        assert!(matches!(
            iou(&bad, &unit(0.0, 0.0)),
            Err(Error::InvalidBox { .. })
        ));
    }
}
