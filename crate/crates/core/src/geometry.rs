use serde::{Deserialize, Serialize};

/// Axis-aligned box in corner form, input-image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    /// Builds a box from two corners, ordering them so that `x1 <= x2`, `y1 <= y2`.
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        BoundingBox {
            x1: x1.min(x2),
            y1: y1.min(y2),
            x2: x1.max(x2),
            y2: y1.max(y2),
        }
    }

    pub fn from_center_size(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        let (w, h) = (w.max(0.0), h.max(0.0));
        BoundingBox {
            x1: cx - w / 2.0,
            y1: cy - h / 2.0,
            x2: cx + w / 2.0,
            y2: cy + h / 2.0,
        }
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x1 && x <= self.x2 && y >= self.y1 && y <= self.y2
    }

    /// Grows the box about its center by `factor` in both dimensions.
    pub fn expanded(&self, factor: f64) -> Self {
        let (cx, cy) = self.center();
        Self::from_center_size(cx, cy, self.width() * factor, self.height() * factor)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        BoundingBox {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        BoundingBox {
            x1: self.x1 * factor,
            y1: self.y1 * factor,
            x2: self.x2 * factor,
            y2: self.y2 * factor,
        }
    }

    /// Mirror image across the vertical axis of an image `image_width` wide.
    pub fn mirrored(&self, image_width: f64) -> Self {
        BoundingBox {
            x1: image_width - self.x2,
            y1: self.y1,
            x2: image_width - self.x1,
            y2: self.y2,
        }
    }

    /// Clamps to `[0,width]x[0,height]`; returns whether anything moved.
    pub fn clamp_to(&mut self, width: f64, height: f64) -> bool {
        let before = *self;
        self.x1 = self.x1.clamp(0.0, width);
        self.x2 = self.x2.clamp(0.0, width);
        self.y1 = self.y1.clamp(0.0, height);
        self.y2 = self.y2.clamp(0.0, height);
        before != *self
    }

    pub fn is_finite(&self) -> bool {
        [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite())
    }
}

/// Ground-truth landmark state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Visibility {
    Unlabeled = 0,
    Occluded = 1,
    Visible = 2,
}

impl Visibility {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Visibility::Unlabeled),
            1 => Some(Visibility::Occluded),
            2 => Some(Visibility::Visible),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn is_labeled(self) -> bool {
        self != Visibility::Unlabeled
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub x: f64,
    pub y: f64,
    pub visibility: Visibility,
}

impl Landmark {
    pub fn new(x: f64, y: f64, visibility: Visibility) -> Self {
        Landmark { x, y, visibility }
    }

    pub fn unlabeled() -> Self {
        Landmark::new(0.0, 0.0, Visibility::Unlabeled)
    }
}

/// Predicted landmark with a confidence in `[0,1]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KeypointPrediction {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}
