//! Box geometry and per-frame detection types.
//!
//! Image coordinates throughout the crate have their origin at the top-left
//! corner with `y` increasing downward. The anchor point of a box is therefore
//! its *bottom* edge midpoint, `(cx, cy + h / 2)`: the point where the hull
//! meets the water.

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("box extent must be positive and finite (w={w}, h={h})")]
    InvalidExtent { w: f64, h: f64 },
    #[error("box center must be finite ({x}, {y})")]
    NonFiniteCenter { x: f64, y: f64 },
    #[error("confidence {0} outside [0, 1]")]
    InvalidConfidence(f64),
}

/// A 2D point or displacement in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Unsigned angle between two vectors in degrees, in `[0, 180]`.
    /// Zero-length vectors have no direction and yield 0.
    pub fn angle_deg(self, other: Vec2) -> f64 {
        let cross = self.x * other.y - self.y * other.x;
        let dot = self.dot(other);
        if cross == 0.0 && dot == 0.0 {
            return 0.0;
        }
        cross.abs().atan2(dot).to_degrees()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

/// Axis-aligned box stored as center plus extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundingBox {
    center: Vec2,
    width: f64,
    height: f64,
}

impl BoundingBox {
    pub fn new(center: Vec2, width: f64, height: f64) -> Result<Self, GeometryError> {
        if !center.is_finite() {
            return Err(GeometryError::NonFiniteCenter {
                x: center.x,
                y: center.y,
            });
        }
        if !(width.is_finite() && height.is_finite() && width > 0.0 && height > 0.0) {
            return Err(GeometryError::InvalidExtent {
                w: width,
                h: height,
            });
        }
        Ok(Self {
            center,
            width,
            height,
        })
    }

    /// Builds a box from its top-left corner and extent (MOT convention).
    pub fn from_corner(left: f64, top: f64, width: f64, height: f64) -> Result<Self, GeometryError> {
        Self::new(Vec2::new(left + width / 2.0, top + height / 2.0), width, height)
    }

    pub fn center(&self) -> Vec2 {
        self.center
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn left(&self) -> f64 {
        self.center.x - self.width / 2.0
    }

    pub fn top(&self) -> f64 {
        self.center.y - self.height / 2.0
    }

    pub fn right(&self) -> f64 {
        self.center.x + self.width / 2.0
    }

    pub fn bottom(&self) -> f64 {
        self.center.y + self.height / 2.0
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    pub fn translate(&self, offset: Vec2) -> Self {
        Self {
            center: self.center + offset,
            ..*self
        }
    }

    /// The box whose anchor point is `anchor`, keeping this box's extent.
    pub fn with_anchor(&self, anchor: Vec2) -> Self {
        Self {
            center: Vec2::new(anchor.x, anchor.y - self.height / 2.0),
            ..*self
        }
    }
}

impl<'de> Deserialize<'de> for BoundingBox {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            center: Vec2,
            width: f64,
            height: f64,
        }
        let raw = Raw::deserialize(deserializer)?;
        BoundingBox::new(raw.center, raw.width, raw.height).map_err(serde::de::Error::custom)
    }
}

/// Opaque class label; `-1` marks an unlabeled detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Category(pub i64);

impl Category {
    pub const UNLABELED: Category = Category(-1);
}

impl Default for Category {
    fn default() -> Self {
        Self::UNLABELED
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub category: Category,
    confidence: f64,
    pub frame: u64,
}

impl Detection {
    pub fn new(
        bbox: BoundingBox,
        category: Category,
        confidence: f64,
        frame: u64,
    ) -> Result<Self, GeometryError> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(GeometryError::InvalidConfidence(confidence));
        }
        Ok(Self {
            bbox,
            category,
            confidence,
            frame,
        })
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorPoint {
    pub position: Vec2,
    pub frame: u64,
}

impl AnchorPoint {
    pub fn new(x: f64, y: f64, frame: u64) -> Self {
        Self {
            position: Vec2::new(x, y),
            frame,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameDetections {
    pub frame: u64,
    pub detections: Vec<Detection>,
}

impl FrameDetections {
    pub fn empty(frame: u64) -> Self {
        Self {
            frame,
            detections: Vec::new(),
        }
    }
}

/// Bottom-center of the box under the y-down image convention.
pub fn anchor_point(bbox: &BoundingBox) -> Vec2 {
    Vec2::new(bbox.center.x, bbox.center.y + bbox.height / 2.0)
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = a.right().min(b.right()) - a.left().max(b.left());
    let ih = a.bottom().min(b.bottom()) - a.top().max(b.top());
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    // areas from the same edge arithmetic so identical boxes give exactly 1
    let area = |r: &BoundingBox| (r.right() - r.left()) * (r.bottom() - r.top());
    let union = area(a) + area(b) - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Collapses groups of overlapping detections into their mean.
///
/// Two detections are linked when their IoU reaches `iou_threshold`; each
/// connected component of that graph becomes a single detection with the
/// arithmetic mean of centers, extents and confidences. The category of the
/// lowest-indexed member is kept. Components are emitted in order of their
/// lowest member index.
///
/// Averaging can bring two merged boxes over the threshold again, so the
/// procedure repeats until no linked pair remains.
pub fn merge_detections(detections: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut current = detections.to_vec();
    loop {
        let (merged, changed) = merge_pass(&current, iou_threshold);
        if !changed {
            return merged;
        }
        current = merged;
    }
}

fn merge_pass(detections: &[Detection], iou_threshold: f64) -> (Vec<Detection>, bool) {
    let n = detections.len();
    let mut parent: Vec<usize> = (0..n).collect();

    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }

    let mut changed = false;
    for i in 0..n {
        for j in (i + 1)..n {
            if iou(&detections[i].bbox, &detections[j].bbox) >= iou_threshold {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    // keep the lower index as root so output order is stable
                    parent[ri.max(rj)] = ri.min(rj);
                    changed = true;
                }
            }
        }
    }
    if !changed {
        return (detections.to_vec(), false);
    }

    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        match groups.iter_mut().find(|(r, _)| *r == root) {
            Some((_, members)) => members.push(i),
            None => groups.push((root, vec![i])),
        }
    }

    let merged = groups
        .into_iter()
        .map(|(_, members)| {
            if members.len() == 1 {
                return detections[members[0]];
            }
            let count = members.len() as f64;
            let (mut cx, mut cy, mut w, mut h, mut e) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for &m in &members {
                let d = &detections[m];
                cx += d.bbox.center.x;
                cy += d.bbox.center.y;
                w += d.bbox.width;
                h += d.bbox.height;
                e += d.confidence;
            }
            let first = &detections[members[0]];
            Detection {
                bbox: BoundingBox {
                    center: Vec2::new(cx / count, cy / count),
                    width: w / count,
                    height: h / count,
                },
                category: first.category,
                confidence: (e / count).clamp(0.0, 1.0),
                frame: first.frame,
            }
        })
        .collect();
    (merged, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(cx: f64, cy: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(Vec2::new(cx, cy), w, h).unwrap()
    }

    fn det(b: BoundingBox, e: f64) -> Detection {
        Detection::new(b, Category::UNLABELED, e, 0).unwrap()
    }

    #[test]
    fn anchor_is_bottom_center() {
        assert_eq!(anchor_point(&bx(100.0, 200.0, 40.0, 50.0)), Vec2::new(100.0, 225.0));
        assert_eq!(anchor_point(&bx(640.0, 360.0, 80.0, 100.0)), Vec2::new(640.0, 410.0));
    }

    #[test]
    fn degenerate_boxes_rejected() {
        assert!(BoundingBox::new(Vec2::ZERO, 10.0, 0.0).is_err());
        assert!(BoundingBox::new(Vec2::ZERO, -1.0, 3.0).is_err());
        assert!(BoundingBox::new(Vec2::new(f64::NAN, 0.0), 1.0, 1.0).is_err());
        assert!(Detection::new(bx(0.0, 0.0, 1.0, 1.0), Category::UNLABELED, 1.2, 0).is_err());
    }

    #[test]
    fn iou_examples() {
        let a = bx(5.0, 5.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bx(100.0, 100.0, 10.0, 10.0)), 0.0);
        // intersection 5x10 = 50, union 150
        let b = bx(10.0, 5.0, 10.0, 10.0);
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn touching_boxes_do_not_overlap() {
        assert_eq!(iou(&bx(0.0, 0.0, 2.0, 2.0), &bx(2.0, 0.0, 2.0, 2.0)), 0.0);
    }

    #[test]
    fn merge_identical_pair() {
        let b = bx(50.0, 50.0, 20.0, 10.0);
        let out = merge_detections(&[det(b, 0.8), det(b, 0.8)], 0.7);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].bbox, b);
        assert_eq!(out[0].confidence(), 0.8);
    }

    #[test]
    fn merge_leaves_disjoint_boxes() {
        let ds = [det(bx(0.0, 0.0, 10.0, 10.0), 0.9), det(bx(50.0, 0.0, 10.0, 10.0), 0.6)];
        assert_eq!(merge_detections(&ds, 0.7), ds.to_vec());
    }

    #[test]
    fn merge_chain_is_transitive() {
        // A and C are the two halves of B: IoU(A,B) = IoU(B,C) = 0.5, A and C only touch
        let a = bx(2.5, 5.0, 5.0, 10.0);
        let b = bx(5.0, 5.0, 10.0, 10.0);
        let c = bx(7.5, 5.0, 5.0, 10.0);
        let ds = [det(a, 0.9), det(b, 0.6), det(c, 0.3)];

        // connected-component oracle over the pairwise IoU graph
        let linked = |i: usize, j: usize| iou(&ds[i].bbox, &ds[j].bbox) >= 0.5;
        let mut seen = vec![0usize];
        let mut frontier = vec![0usize];
        while let Some(i) = frontier.pop() {
            for j in 0..ds.len() {
                if !seen.contains(&j) && linked(i, j) {
                    seen.push(j);
                    frontier.push(j);
                }
            }
        }
        assert_eq!(seen.len(), 3);
        assert!(!linked(0, 2));

        let out = merge_detections(&ds, 0.5);
        assert_eq!(out.len(), 1);
        let m = out[0];
        assert!((m.bbox.center() - Vec2::new(5.0, 5.0)).norm() < 1e-12);
        assert!((m.bbox.width() - 20.0 / 3.0).abs() < 1e-12);
        assert!((m.bbox.height() - 10.0).abs() < 1e-12);
        assert!((m.confidence() - 0.6).abs() < 1e-12);
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (-500.0..500.0f64, -500.0..500.0f64, 1.0..200.0f64, 1.0..200.0f64)
            .prop_map(|(x, y, w, h)| bx(x, y, w, h))
    }

    proptest! {
        #[test]
        fn anchor_translation_equivariant(b in arb_box(), dx in -100.0..100.0f64, dy in -100.0..100.0f64) {
            let v = Vec2::new(dx, dy);
            let moved = anchor_point(&b.translate(v));
            let expected = anchor_point(&b) + v;
            prop_assert!((moved - expected).norm() < 1e-9);
        }

        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(iou(&a, &a), 1.0);
            if ab == 1.0 {
                prop_assert!((a.left() - b.left()).abs() < 1e-9 && (a.bottom() - b.bottom()).abs() < 1e-9);
            }
        }

        #[test]
        fn merge_idempotent(boxes in prop::collection::vec(arb_box(), 0..8), t in 0.1..0.9f64) {
            let ds: Vec<_> = boxes.into_iter().map(|b| det(b, 0.5)).collect();
            let once = merge_detections(&ds, t);
            for i in 0..once.len() {
                for j in (i + 1)..once.len() {
                    prop_assert!(iou(&once[i].bbox, &once[j].bbox) < t);
                }
            }
            prop_assert_eq!(merge_detections(&once, t), once);
        }
    }
}
