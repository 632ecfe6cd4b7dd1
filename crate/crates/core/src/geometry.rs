//! Axis-aligned box arithmetic: IoU, GIoU, the distance (l,t,r,b) encoding
//! and the center-ness target.
//!
//! Everything here is a pure function on plain values; all box coordinates
//! are continuous pixel coordinates with `x1 <= x2` and `y1 <= y2`.

use serde::{Deserialize, Serialize};

/// Axis-aligned rectangle in pixel coordinates, `(x1, y1)` top-left
/// inclusive, `(x2, y2)` bottom-right.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    /// Builds a box. Panics if the corner ordering invariant is violated.
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        assert!(
            x1 <= x2 && y1 <= y2,
            "invalid box: ({x1}, {y1}, {x2}, {y2})"
        );
        Self { x1, y1, x2, y2 }
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn center(&self) -> Point {
        Point {
            x: 0.5 * (self.x1 + self.x2),
            y: 0.5 * (self.y1 + self.y2),
        }
    }

    /// True when `p` lies strictly inside the box (all four distances
    /// positive). Boundary points do not count.
    pub fn contains(&self, p: Point) -> bool {
        p.x > self.x1 && p.x < self.x2 && p.y > self.y1 && p.y < self.y2
    }
}

/// A 2D location, e.g. a grid point of a fully convolutional head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Distances from a point to the four sides of a box. Components may be
/// negative when the point lies outside the box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ltrb {
    pub left: f64,
    pub top: f64,
    pub right: f64,
    pub bottom: f64,
}

impl Ltrb {
    pub fn new(left: f64, top: f64, right: f64, bottom: f64) -> Self {
        Self {
            left,
            top,
            right,
            bottom,
        }
    }

    pub fn max(&self) -> f64 {
        self.left.max(self.top).max(self.right).max(self.bottom)
    }

    pub fn min(&self) -> f64 {
        self.left.min(self.top).min(self.right).min(self.bottom)
    }
}

pub fn area(b: &BBox) -> f64 {
    (b.x2 - b.x1) * (b.y2 - b.y1)
}

fn intersection_area(a: &BBox, b: &BBox) -> f64 {
    let w = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let h = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    w * h
}

/// Intersection over union. Returns 0 when the union has zero area, so a
/// degenerate box has IoU 0 against anything, including itself.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection_area(a, b);
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Generalized IoU: `iou - |C \ (a ∪ b)| / |C|` with `C` the smallest
/// enclosing box. Ranges over `[-1, 1]`; two coincident degenerate boxes
/// give 0 (both terms vanish).
pub fn giou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection_area(a, b);
    let union = area(a) + area(b) - inter;
    let hull_w = a.x2.max(b.x2) - a.x1.min(b.x1);
    let hull_h = a.y2.max(b.y2) - a.y1.min(b.y1);
    let hull = hull_w * hull_h;
    let iou = if union <= 0.0 { 0.0 } else { inter / union };
    if hull <= 0.0 {
        return 0.0;
    }
    iou - (hull - union) / hull
}

/// Distances from `p` to the sides of `b`. Any component may be negative
/// when `p` lies outside `b`.
pub fn ltrb_encode(p: Point, b: &BBox) -> Ltrb {
    Ltrb {
        left: p.x - b.x1,
        top: p.y - b.y1,
        right: b.x2 - p.x,
        bottom: b.y2 - p.y,
    }
}

/// Inverse of [`ltrb_encode`] for points inside the box. Negative distances
/// are clamped to 0 first so the result always satisfies the box invariants.
pub fn ltrb_decode(p: Point, d: &Ltrb) -> BBox {
    let l = d.left.max(0.0);
    let t = d.top.max(0.0);
    let r = d.right.max(0.0);
    let b = d.bottom.max(0.0);
    BBox {
        x1: p.x - l,
        y1: p.y - t,
        x2: p.x + r,
        y2: p.y + b,
    }
}

/// FCOS center-ness target:
/// `sqrt((min(l,r)/max(l,r)) * (min(t,b)/max(t,b)))`.
///
/// Defined only for points strictly inside the box; returns `None` otherwise.
pub fn centerness_target(p: Point, b: &BBox) -> Option<f64> {
    let d = ltrb_encode(p, b);
    if d.min() <= 0.0 {
        return None;
    }
    let lr = d.left.min(d.right) / d.left.max(d.right);
    let tb = d.top.min(d.bottom) / d.top.max(d.bottom);
    Some((lr * tb).sqrt())
}
