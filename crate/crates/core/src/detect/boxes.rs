//! Axis-aligned boxes, IoU and center-size offset coding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Corner-form box. Coordinates are normalized to [0, 1] inside the
/// detector and in pixels at the file boundary; IoU is scale-invariant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl BBox {
    pub const fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Self {
        Self { xmin, ymin, xmax, ymax }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.xmin + self.xmax) / 2.0, (self.ymin + self.ymax) / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn clipped(&self) -> Self {
        Self::new(
            self.xmin.clamp(0.0, 1.0),
            self.ymin.clamp(0.0, 1.0),
            self.xmax.clamp(0.0, 1.0),
            self.ymax.clamp(0.0, 1.0),
        )
    }

    pub fn scaled(&self, sx: f64, sy: f64) -> Self {
        Self::new(self.xmin * sx, self.ymin * sy, self.xmax * sx, self.ymax * sy)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.xmin, self.ymin, self.xmax, self.ymax]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }
}

pub fn intersection(a: &BBox, b: &BBox) -> f64 {
    let w = (a.xmax.min(b.xmax) - a.xmin.max(b.xmin)).max(0.0);
    let h = (a.ymax.min(b.ymax) - a.ymin.max(b.ymin)).max(0.0);
    w * h
}

/// Intersection over union; 0 when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Center and size variances of the offset coding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Variances {
    pub center: f64,
    pub size: f64,
}

impl Default for Variances {
    fn default() -> Self {
        Self { center: 0.1, size: 0.2 }
    }
}

/// Offsets `(t_x, t_y, t_w, t_h)` of `gt` relative to `prior`.
pub fn encode_box(gt: &BBox, prior: &BBox, v: Variances) -> Result<[f64; 4]> {
    if !(gt.width() > 0.0 && gt.height() > 0.0) {
        return Err(Error::Input(format!(
            "cannot encode a box of size {}x{}",
            gt.width(),
            gt.height()
        )));
    }
    if !(prior.width() > 0.0 && prior.height() > 0.0) {
        return Err(Error::Input("prior must have positive width and height".into()));
    }
    let (gx, gy) = gt.center();
    let (px, py) = prior.center();
    let (pw, ph) = (prior.width(), prior.height());
    Ok([
        (gx - px) / (pw * v.center),
        (gy - py) / (ph * v.center),
        (gt.width() / pw).ln() / v.size,
        (gt.height() / ph).ln() / v.size,
    ])
}

pub fn decode_box(t: [f64; 4], prior: &BBox, v: Variances) -> BBox {
    let (px, py) = prior.center();
    let (pw, ph) = (prior.width(), prior.height());
    BBox::from_center(
        px + t[0] * v.center * pw,
        py + t[1] * v.center * ph,
        pw * (t[2] * v.size).exp(),
        ph * (t[3] * v.size).exp(),
    )
}
