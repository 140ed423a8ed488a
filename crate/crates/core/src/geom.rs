//! Bounding boxes, IoU, center-distance gating and normalized geometric
//! features.
//!
//! Boxes are stored as center + size. MOTChallenge files use left-top + size
//! and are converted at the I/O boundary.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum GeomError {
    #[error("box extents must be positive and finite")]
    InvalidExtent,
    #[error("box center must be finite")]
    NonFiniteCenter,
    #[error("frame dimensions must be positive")]
    InvalidFrame,
}

/// Axis-aligned box in pixels: center `(cx, cy)` and size `(w, h)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
}

impl BoundingBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, GeomError> {
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(GeomError::NonFiniteCenter);
        }
        if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite()) {
            return Err(GeomError::InvalidExtent);
        }
        Ok(Self { cx, cy, w, h })
    }

    /// From left/top/right/bottom corners.
    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeomError> {
        Self::new((x1 + x2) * 0.5, (y1 + y2) * 0.5, x2 - x1, y2 - y1)
    }

    /// From the MOTChallenge `bb_left, bb_top, bb_width, bb_height` layout.
    pub fn from_ltwh(left: f64, top: f64, w: f64, h: f64) -> Result<Self, GeomError> {
        Self::new(left + w * 0.5, top + h * 0.5, w, h)
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }

    pub fn cy(&self) -> f64 {
        self.cy
    }

    pub fn width(&self) -> f64 {
        self.w
    }

    pub fn height(&self) -> f64 {
        self.h
    }

    /// `(x1, y1, x2, y2)`.
    pub fn to_corners(&self) -> (f64, f64, f64, f64) {
        let hw = self.w * 0.5;
        let hh = self.h * 0.5;
        (self.cx - hw, self.cy - hh, self.cx + hw, self.cy + hh)
    }

    /// `(left, top, width, height)`.
    pub fn to_ltwh(&self) -> (f64, f64, f64, f64) {
        (self.cx - self.w * 0.5, self.cy - self.h * 0.5, self.w, self.h)
    }

    /// Same box shifted by `(dx, dy)` pixels.
    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self { cx: self.cx + dx, cy: self.cy + dy, ..*self }
    }

    fn corner_area(&self) -> f64 {
        let (x1, y1, x2, y2) = self.to_corners();
        (x2 - x1) * (y2 - y1)
    }
}

/// Intersection over union. Areas are computed from the same corner
/// coordinates as the intersection so that `iou(a, a)` is exactly 1.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (ax1, ay1, ax2, ay2) = a.to_corners();
    let (bx1, by1, bx2, by2) = b.to_corners();
    let iw = f64::max(0.0, f64::min(ax2, bx2) - f64::max(ax1, bx1));
    let ih = f64::max(0.0, f64::min(ay2, by2) - f64::max(ay1, by1));
    let inter = iw * ih;
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.corner_area() + b.corner_area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Euclidean distance between box centers, in pixels.
pub fn center_distance(a: &BoundingBox, b: &BoundingBox) -> f64 {
    libm::hypot(a.cx - b.cx, a.cy - b.cy)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameSize {
    width: f64,
    height: f64,
}

impl FrameSize {
    pub fn new(width: f64, height: f64) -> Result<Self, GeomError> {
        if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
            return Err(GeomError::InvalidFrame);
        }
        Ok(Self { width, height })
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn height(&self) -> f64 {
        self.height
    }
}

/// `(cx / W, cy / H, w / W, h / H)`: scale-free geometry fed to the edge
/// metric learner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeomFeatures(pub [f64; 4]);

impl GeomFeatures {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn geom_features(b: &BoundingBox, frame: FrameSize) -> GeomFeatures {
    GeomFeatures([b.cx / frame.width, b.cy / frame.height, b.w / frame.width, b.h / frame.height])
}

/// Validating variant taking raw frame dimensions.
pub fn geom_features_wh(b: &BoundingBox, frame_w: f64, frame_h: f64) -> Result<GeomFeatures, GeomError> {
    Ok(geom_features(b, FrameSize::new(frame_w, frame_h)?))
}
