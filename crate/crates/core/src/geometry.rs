//! Pixel-space primitives: boxes, keypoints, overlap and distance measures.
//!
//! Coordinates are continuous reals in the image frame (y grows downward).
//! Areas are plain `(max - min)` products; rasterization only happens in
//! the anonymizer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    /// Builds a box from corners. Corners must already be ordered.
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        debug_assert!(x_min <= x_max && y_min <= y_max, "unordered box corners");
        BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    /// Validating constructor for untrusted input.
    pub fn try_new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let invalid = |reason| Error::InvalidBox {
            x_min,
            y_min,
            x_max,
            y_max,
            reason,
        };
        if ![x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite()) {
            return Err(invalid("non-finite coordinate"));
        }
        if x_min > x_max || y_min > y_max {
            return Err(invalid("min corner exceeds max corner"));
        }
        Ok(BBox::new(x_min, y_min, x_max, y_max))
    }

    pub fn from_center(cx: f64, cy: f64, width: f64, height: f64) -> Self {
        BBox::new(cx - width / 2.0, cy - height / 2.0, cx + width / 2.0, cy + height / 2.0)
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn max_dim(&self) -> f64 {
        self.width().max(self.height())
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        BBox::new(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)
    }

    /// Grows each side by `ratio` of the box's own width/height.
    pub fn inflate(&self, ratio: f64) -> Self {
        let dx = self.width() * ratio;
        let dy = self.height() * ratio;
        BBox::new(self.x_min - dx, self.y_min - dy, self.x_max + dx, self.y_max + dy)
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

/// Area of `a ∩ b`; zero when the boxes are disjoint or only touch.
pub fn intersect_area(a: &BBox, b: &BBox) -> f64 {
    let w = a.x_max.min(b.x_max) - a.x_min.max(b.x_min);
    let h = a.y_max.min(b.y_max) - a.y_min.max(b.y_min);
    if w <= 0.0 || h <= 0.0 {
        0.0
    } else {
        w * h
    }
}

/// Intersection over union. Two zero-area boxes have IoU 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersect_area(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Fraction of `inner` covered by `outer`.
pub fn containment_ratio(inner: &BBox, outer: &BBox) -> Result<f64> {
    let area = inner.area();
    if area <= 0.0 {
        return Err(Error::DegenerateBox(*inner));
    }
    Ok((intersect_area(inner, outer) / area).clamp(0.0, 1.0))
}

/// Euclidean distance between box centers.
pub fn center_distance(a: &BBox, b: &BBox) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    (ax - bx).hypot(ay - by)
}

pub const NUM_KEYPOINTS: usize = 17;

/// COCO keypoint indices used by head inference.
pub mod kp {
    pub const NOSE: usize = 0;
    pub const LEFT_EYE: usize = 1;
    pub const RIGHT_EYE: usize = 2;
    pub const LEFT_EAR: usize = 3;
    pub const RIGHT_EAR: usize = 4;
    pub const LEFT_SHOULDER: usize = 5;
    pub const RIGHT_SHOULDER: usize = 6;
    pub const LEFT_ELBOW: usize = 7;
    pub const RIGHT_ELBOW: usize = 8;
    pub const LEFT_WRIST: usize = 9;
    pub const RIGHT_WRIST: usize = 10;
    pub const LEFT_HIP: usize = 11;
    pub const RIGHT_HIP: usize = 12;
    pub const LEFT_KNEE: usize = 13;
    pub const RIGHT_KNEE: usize = 14;
    pub const LEFT_ANKLE: usize = 15;
    pub const RIGHT_ANKLE: usize = 16;

    pub const FACIAL: [usize; 5] = [NOSE, LEFT_EYE, RIGHT_EYE, LEFT_EAR, RIGHT_EAR];
    pub const SHOULDERS: [usize; 2] = [LEFT_SHOULDER, RIGHT_SHOULDER];
    pub const HIPS: [usize; 2] = [LEFT_HIP, RIGHT_HIP];
}

/// A single skeleton joint. Confidence 0 marks an absent keypoint.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

impl Keypoint {
    pub fn new(x: f64, y: f64, confidence: f64) -> Self {
        Keypoint { x, y, confidence }
    }

    pub fn is_present(&self) -> bool {
        self.confidence > 0.0
    }
}

/// 17 COCO-ordered keypoint slots; slot `i` holds keypoint id `i`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub keypoints: [Keypoint; NUM_KEYPOINTS],
}

impl Pose {
    pub fn new(keypoints: [Keypoint; NUM_KEYPOINTS]) -> Self {
        Pose { keypoints }
    }

    pub fn get(&self, index: usize) -> &Keypoint {
        &self.keypoints[index]
    }

    pub fn set(&mut self, index: usize, keypoint: Keypoint) {
        self.keypoints[index] = keypoint;
    }

    /// Scales every keypoint position about the origin.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = *self;
        for k in out.keypoints.iter_mut() {
            k.x *= factor;
            k.y *= factor;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1)
    }

    #[test]
    fn intersect_area_examples() {
        assert_eq!(intersect_area(&b(0., 0., 10., 10.), &b(0., 0., 10., 10.)), 100.0);
        assert_eq!(intersect_area(&b(0., 0., 10., 10.), &b(20., 20., 30., 30.)), 0.0);
        assert_eq!(intersect_area(&b(0., 0., 10., 10.), &b(5., 5., 15., 15.)), 25.0);
    }

    #[test]
    fn iou_examples() {
        let a = b(0., 0., 10., 10.);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &b(0., 0., 10., 20.)), 0.5);
        assert_eq!(iou(&a, &b(20., 20., 30., 30.)), 0.0);
        // both degenerate
        assert_eq!(iou(&b(1., 1., 1., 1.), &b(1., 1., 1., 1.)), 0.0);
    }

    #[test]
    fn containment_examples() {
        let outer = b(0., 0., 100., 100.);
        assert_eq!(containment_ratio(&b(10., 10., 20., 20.), &outer).unwrap(), 1.0);
        assert_eq!(
            containment_ratio(&b(0., 0., 10., 10.), &b(5., 0., 20., 10.)).unwrap(),
            0.5
        );
        assert_eq!(
            containment_ratio(&b(0., 0., 10., 10.), &b(50., 50., 60., 60.)).unwrap(),
            0.0
        );
        assert!(matches!(
            containment_ratio(&b(3., 3., 3., 9.), &outer),
            Err(Error::DegenerateBox(_))
        ));
    }

    #[test]
    fn center_distance_examples() {
        assert_eq!(center_distance(&b(-1., -1., 1., 1.), &b(-5., -5., 5., 5.)), 0.0);
        assert_eq!(center_distance(&b(-1., -1., 1., 1.), &b(2., 3., 4., 5.)), 5.0);
        assert_eq!(center_distance(&b(-1., -1., 1., 1.), &b(-1., 9., 1., 11.)), 10.0);
    }

    #[test]
    fn try_new_rejects_bad_boxes() {
        assert!(BBox::try_new(5., 0., 4., 1.).is_err());
        assert!(BBox::try_new(0., 0., f64::NAN, 1.).is_err());
        assert!(BBox::try_new(0., 0., 0., 0.).is_ok());
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (-100.0..100.0f64, -100.0..100.0f64, 0.0..50.0f64, 0.0..50.0f64)
            .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h))
    }

    proptest! {
        #[test]
        fn overlap_measures_are_bounded_and_symmetric(a in arb_box(), c in arb_box()) {
            let v = iou(&a, &c);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v, iou(&c, &a));
            prop_assert_eq!(intersect_area(&a, &c), intersect_area(&c, &a));
            prop_assert!(intersect_area(&a, &c) <= a.area().min(c.area()) + 1e-9);
            prop_assert_eq!(center_distance(&a, &c), center_distance(&c, &a));
        }

        #[test]
        fn self_containment_is_one(a in arb_box()) {
            prop_assume!(a.area() > 0.0);
            prop_assert_eq!(containment_ratio(&a, &a).unwrap(), 1.0);
        }

        #[test]
        fn translation_invariance(a in arb_box(), c in arb_box(),
                                  dx in -1000.0..1000.0f64, dy in -1000.0..1000.0f64) {
            let (ta, tc) = (a.translate(dx, dy), c.translate(dx, dy));
            let tol = 1e-6;
            prop_assert!((intersect_area(&a, &c) - intersect_area(&ta, &tc)).abs() < tol);
            prop_assert!((iou(&a, &c) - iou(&ta, &tc)).abs() < tol);
            prop_assert!((center_distance(&a, &c) - center_distance(&ta, &tc)).abs() < tol);
            if a.area() > 1e-3 {
                let r0 = containment_ratio(&a, &c).unwrap();
                let r1 = containment_ratio(&ta, &tc).unwrap();
                prop_assert!((r0 - r1).abs() < tol);
            }
        }
    }
}
