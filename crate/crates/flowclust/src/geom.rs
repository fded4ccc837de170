//! Rotated rectangles in image space (y grows downward) and the convex
//! polygon machinery behind rotated-box IoU.

use serde::{Deserialize, Serialize};

/// Slack for boundary-inclusive containment tests, in pixels.
const CONTAIN_EPS: f64 = 1e-6;

/// Oriented rectangle: center, size and angle.
///
/// Normalized so the width runs along the major axis (`w >= h`) and the angle
/// lies in `(-pi/2, pi/2]`, measured counter-clockwise from the +x axis. For
/// exact squares the representative axis closest to horizontal is kept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotatedBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub theta: f64,
}

impl RotatedBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64, theta: f64) -> Self {
        assert!(w > 0.0 && h > 0.0, "box sides must be positive");
        let (mut w, mut h, mut theta) = (w, h, theta);
        if h > w {
            std::mem::swap(&mut w, &mut h);
            theta += std::f64::consts::FRAC_PI_2;
        }
        theta = wrap_half_pi(theta);
        if w == h {
            // Square: pick the axis closest to horizontal.
            if theta > std::f64::consts::FRAC_PI_4 {
                theta -= std::f64::consts::FRAC_PI_2;
            } else if theta <= -std::f64::consts::FRAC_PI_4 {
                theta += std::f64::consts::FRAC_PI_2;
            }
        }
        RotatedBox { cx, cy, w, h, theta }
    }

    /// Unit vectors of the major and minor axes.
    #[inline]
    pub fn axes(&self) -> ([f64; 2], [f64; 2]) {
        let (s, c) = self.theta.sin_cos();
        ([c, s], [-s, c])
    }

    /// Corner coordinates in cyclic order.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        let (u, v) = self.axes();
        let hw = self.w / 2.0;
        let hh = self.h / 2.0;
        let corner = |su: f64, sv: f64| {
            [
                self.cx + su * hw * u[0] + sv * hh * v[0],
                self.cy + su * hw * u[1] + sv * hh * v[1],
            ]
        };
        [
            corner(1.0, 1.0),
            corner(-1.0, 1.0),
            corner(-1.0, -1.0),
            corner(1.0, -1.0),
        ]
    }

    /// Rebuilds a box from four corners in cyclic order.
    pub fn from_corners(corners: &[[f64; 2]; 4]) -> Self {
        let cx = corners.iter().map(|c| c[0]).sum::<f64>() / 4.0;
        let cy = corners.iter().map(|c| c[1]).sum::<f64>() / 4.0;
        let e1 = [corners[0][0] - corners[1][0], corners[0][1] - corners[1][1]];
        let e2 = [corners[1][0] - corners[2][0], corners[1][1] - corners[2][1]];
        let w = (e1[0] * e1[0] + e1[1] * e1[1]).sqrt();
        let h = (e2[0] * e2[0] + e2[1] * e2[1]).sqrt();
        let theta = e1[1].atan2(e1[0]);
        RotatedBox::new(cx, cy, w, h, theta)
    }

    /// Point coordinates in the box frame (major/minor axis components).
    #[inline]
    pub fn to_frame(&self, p: [f64; 2]) -> [f64; 2] {
        let (u, v) = self.axes();
        let d = [p[0] - self.cx, p[1] - self.cy];
        [d[0] * u[0] + d[1] * u[1], d[0] * v[0] + d[1] * v[1]]
    }

    /// Boundary-inclusive containment.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let [dx, dy] = self.to_frame(p);
        dx.abs() <= self.w / 2.0 + CONTAIN_EPS && dy.abs() <= self.h / 2.0 + CONTAIN_EPS
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Minimal per-axis expansion about the center so that `p` is contained.
    pub fn expanded_to_include(&self, p: [f64; 2]) -> RotatedBox {
        let [dx, dy] = self.to_frame(p);
        // Tiny relative slack keeps the point inside after re-projection.
        let grow = 1.0 + 1e-9;
        let w = self.w.max(2.0 * dx.abs() * grow);
        let h = self.h.max(2.0 * dy.abs() * grow);
        RotatedBox::new(self.cx, self.cy, w, h, self.theta)
    }
}

fn wrap_half_pi(mut theta: f64) -> f64 {
    use std::f64::consts::{FRAC_PI_2, PI};
    while theta > FRAC_PI_2 {
        theta -= PI;
    }
    while theta <= -FRAC_PI_2 {
        theta += PI;
    }
    theta
}

/// Signed area via the shoelace formula (positive for the winding used by
/// [`RotatedBox::corners`]).
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        acc += a[0] * b[1] - b[0] * a[1];
    }
    acc.abs() / 2.0
}

/// Clips a convex polygon by another convex polygon (Sutherland-Hodgman).
pub fn convex_intersection(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let side = |a: [f64; 2], b: [f64; 2], p: [f64; 2]| -> f64 {
        (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
    };
    let intersect = |p: [f64; 2], q: [f64; 2], a: [f64; 2], b: [f64; 2]| -> [f64; 2] {
        let d1 = side(a, b, p);
        let d2 = side(a, b, q);
        let t = d1 / (d1 - d2);
        [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
    };
    let mut output = subject.to_vec();
    for i in 0..clip.len() {
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        if input.is_empty() {
            break;
        }
        for (j, &cur) in input.iter().enumerate() {
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = side(a, b, cur) >= 0.0;
            let prev_in = side(a, b, prev) >= 0.0;
            if cur_in {
                if !prev_in {
                    output.push(intersect(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(intersect(prev, cur, a, b));
            }
        }
    }
    output
}

/// Intersection-over-union of two rotated rectangles.
pub fn rotated_iou(a: &RotatedBox, b: &RotatedBox) -> f64 {
    let inter = polygon_area(&convex_intersection(&a.corners(), &b.corners()));
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn corners_round_trip() {
        let b = RotatedBox::new(40.0, 28.0, 60.0, 20.0, 0.4);
        let r = RotatedBox::from_corners(&b.corners());
        assert_abs_diff_eq!(r.cx, b.cx, epsilon = 1e-6);
        assert_abs_diff_eq!(r.cy, b.cy, epsilon = 1e-6);
        assert_abs_diff_eq!(r.w, b.w, epsilon = 1e-6);
        assert_abs_diff_eq!(r.h, b.h, epsilon = 1e-6);
        assert_abs_diff_eq!(r.theta, b.theta, epsilon = 1e-6);
    }

    #[test]
    fn normalization_swaps_minor_major() {
        let b = RotatedBox::new(0.0, 0.0, 10.0, 30.0, 0.0);
        assert!(b.w >= b.h);
        assert_abs_diff_eq!(b.w, 30.0);
        assert_abs_diff_eq!(b.theta, std::f64::consts::FRAC_PI_2);
    }

    #[test]
    fn iou_of_identical_boxes_is_one() {
        let b = RotatedBox::new(10.0, 12.0, 30.0, 14.0, -0.7);
        assert_abs_diff_eq!(rotated_iou(&b, &b), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn iou_axis_aligned_half_overlap() {
        let a = RotatedBox::new(0.0, 0.0, 20.0, 10.0, 0.0);
        let b = RotatedBox::new(10.0, 0.0, 20.0, 10.0, 0.0);
        // Intersection 10x10, union 300.
        assert_abs_diff_eq!(rotated_iou(&a, &b), 100.0 / 300.0, epsilon = 1e-9);
    }

    #[test]
    fn iou_symmetric_and_bounded() {
        let a = RotatedBox::new(5.0, 5.0, 18.0, 9.0, 0.3);
        let b = RotatedBox::new(9.0, 2.0, 25.0, 11.0, -0.9);
        let ab = rotated_iou(&a, &b);
        let ba = rotated_iou(&b, &a);
        assert_abs_diff_eq!(ab, ba, epsilon = 1e-12);
        assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn iou_disjoint_is_zero() {
        let a = RotatedBox::new(0.0, 0.0, 10.0, 5.0, 0.2);
        let b = RotatedBox::new(100.0, 100.0, 10.0, 5.0, 0.2);
        assert_eq!(rotated_iou(&a, &b), 0.0);
    }

    #[test]
    fn rotated_square_overlap_known_area() {
        // Unit squares, one rotated 45 degrees about the shared center.
        let a = RotatedBox::new(0.0, 0.0, 2.0, 2.0, 0.0);
        let b = RotatedBox::new(0.0, 0.0, 2.0, 2.0, std::f64::consts::FRAC_PI_4);
        let inter = polygon_area(&convex_intersection(&a.corners(), &b.corners()));
        // Regular octagon: area = 8 * (sqrt(2) - 1) for half-width 1.
        assert_abs_diff_eq!(inter, 8.0 * (2f64.sqrt() - 1.0), epsilon = 1e-9);
    }

    #[test]
    fn containment_is_boundary_inclusive() {
        let b = RotatedBox::new(16.0, 16.0, 16.0, 16.0, 0.0);
        assert!(b.contains([8.0, 8.0]));
        assert!(b.contains([24.0, 24.0]));
        assert!(!b.contains([24.1, 24.0]));
    }

    #[test]
    fn expansion_is_minimal_and_noop_when_inside() {
        let b = RotatedBox::new(0.0, 0.0, 20.0, 10.0, 0.0);
        let same = b.expanded_to_include([3.0, 2.0]);
        assert_eq!(b, same);
        let grown = b.expanded_to_include([14.0, 0.0]);
        assert!(grown.contains([14.0, 0.0]));
        assert_abs_diff_eq!(grown.w, 28.0, epsilon = 1e-6);
        assert_abs_diff_eq!(grown.h, 10.0);
    }
}
