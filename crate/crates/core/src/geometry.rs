//! Oriented boxes, separating-axis overlap and polygon-clipping IoU.

use serde::{Deserialize, Serialize};

use crate::grid::Pose;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectClass {
    Vehicle,
    Cyclist,
    Pedestrian,
    Static,
}

impl ObjectClass {
    /// Detection classes in codebook order.
    pub const DETECTABLE: [ObjectClass; 3] =
        [ObjectClass::Vehicle, ObjectClass::Cyclist, ObjectClass::Pedestrian];

    pub fn index(self) -> Option<usize> {
        match self {
            ObjectClass::Vehicle => Some(0),
            ObjectClass::Cyclist => Some(1),
            ObjectClass::Pedestrian => Some(2),
            ObjectClass::Static => None,
        }
    }

    pub fn from_index(k: usize) -> ObjectClass {
        Self::DETECTABLE.get(k).copied().unwrap_or(ObjectClass::Static)
    }

    /// Default `(width, length)` footprint in meters.
    pub fn default_size(self) -> (f64, f64) {
        match self {
            ObjectClass::Vehicle => (2.0, 4.5),
            ObjectClass::Cyclist => (0.6, 1.8),
            ObjectClass::Pedestrian => (0.5, 0.5),
            ObjectClass::Static => (1.0, 1.0),
        }
    }
}

/// 2D footprint. `l` runs along the heading, `w` across it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub l: f64,
    pub yaw: f64,
    pub class: ObjectClass,
}

impl OrientedBox {
    pub fn new(cx: f64, cy: f64, w: f64, l: f64, yaw: f64, class: ObjectClass) -> Self {
        OrientedBox {
            cx,
            cy,
            w,
            l,
            yaw,
            class,
        }
    }

    pub fn at_pose(pose: &Pose, w: f64, l: f64, class: ObjectClass) -> Self {
        OrientedBox::new(pose.x, pose.y, w, l, pose.yaw, class)
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.cx, self.cy, self.yaw)
    }

    pub fn area(&self) -> f64 {
        self.w * self.l
    }

    pub fn radius(&self) -> f64 {
        0.5 * self.w.hypot(self.l)
    }

    /// Corners counter-clockwise starting at front-right.
    pub fn corners(&self) -> [(f64, f64); 4] {
        let (s, c) = self.yaw.sin_cos();
        let hl = 0.5 * self.l;
        let hw = 0.5 * self.w;
        let local = [(hl, -hw), (hl, hw), (-hl, hw), (-hl, -hw)];
        local.map(|(x, y)| (self.cx + c * x - s * y, self.cy + s * x + c * y))
    }

    pub fn contains(&self, p: (f64, f64)) -> bool {
        let (s, c) = self.yaw.sin_cos();
        let dx = p.0 - self.cx;
        let dy = p.1 - self.cy;
        let lx = c * dx + s * dy;
        let ly = -s * dx + c * dy;
        lx.abs() <= 0.5 * self.l && ly.abs() <= 0.5 * self.w
    }

    /// Same box re-expressed in the local frame of `frame`.
    pub fn to_frame(&self, frame: &Pose) -> OrientedBox {
        let (x, y) = frame.to_local((self.cx, self.cy));
        OrientedBox {
            cx: x,
            cy: y,
            yaw: crate::grid::normalize_angle(self.yaw - frame.yaw),
            ..*self
        }
    }

    /// Same box, given in `frame`, re-expressed in the parent frame.
    pub fn from_frame(&self, frame: &Pose) -> OrientedBox {
        let (x, y) = frame.to_world((self.cx, self.cy));
        OrientedBox {
            cx: x,
            cy: y,
            yaw: crate::grid::normalize_angle(self.yaw + frame.yaw),
            ..*self
        }
    }

    /// Separating-axis overlap test; touching edges count as overlap.
    pub fn overlaps(&self, other: &OrientedBox) -> bool {
        let dx = self.cx - other.cx;
        let dy = self.cy - other.cy;
        let r = self.radius() + other.radius();
        if dx * dx + dy * dy > r * r {
            return false;
        }
        let a = self.corners();
        let b = other.corners();
        for poly in [&a, &b] {
            for i in 0..2 {
                let (x0, y0) = poly[i];
                let (x1, y1) = poly[i + 1];
                let axis = (-(y1 - y0), x1 - x0);
                let (amin, amax) = project(&a, axis);
                let (bmin, bmax) = project(&b, axis);
                if amax < bmin || bmax < amin {
                    return false;
                }
            }
        }
        true
    }
}

fn project(poly: &[(f64, f64); 4], axis: (f64, f64)) -> (f64, f64) {
    poly.iter()
        .map(|p| p.0 * axis.0 + p.1 * axis.1)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Shoelace area of a simple polygon (positive for counter-clockwise).
pub fn polygon_area(poly: &[(f64, f64)]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let (x0, y0) = poly[i];
        let (x1, y1) = poly[(i + 1) % n];
        acc += x0 * y1 - x1 * y0;
    }
    0.5 * acc
}

/// Sutherland–Hodgman: clip `subject` against the convex counter-clockwise
/// polygon `clip`.
pub fn clip_polygon(subject: &[(f64, f64)], clip: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut output: Vec<(f64, f64)> = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % n];
        let side = |p: (f64, f64)| (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
        let input = std::mem::take(&mut output);
        let m = input.len();
        for j in 0..m {
            let cur = input[j];
            let prev = input[(j + m - 1) % m];
            let sc = side(cur);
            let sp = side(prev);
            if sc >= 0.0 {
                if sp < 0.0 {
                    output.push(intersect(prev, cur, sp, sc));
                }
                output.push(cur);
            } else if sp >= 0.0 {
                output.push(intersect(prev, cur, sp, sc));
            }
        }
    }
    output
}

fn intersect(p: (f64, f64), q: (f64, f64), sp: f64, sq: f64) -> (f64, f64) {
    let t = sp / (sp - sq);
    (p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1))
}

/// Bird's-eye-view IoU of two oriented boxes.
pub fn bev_iou(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let dx = a.cx - b.cx;
    let dy = a.cy - b.cy;
    let r = a.radius() + b.radius();
    if dx * dx + dy * dy >= r * r {
        return 0.0;
    }
    let inter = polygon_area(&clip_polygon(&a.corners(), &b.corners())).max(0.0);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}
