//! Oriented-box geometry in the bird's-eye view.
//!
//! Boxes are 7-DoF (center, dimensions, heading) but every overlap measure
//! here is planar: the rotated length x width rectangle is clipped against the
//! other with Sutherland-Hodgman and the height axis is ignored.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

/// Vertices closer than this are merged before the shoelace area.
const VERTEX_MERGE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64, intensity: f64) -> Self {
        Self { x, y, z, intensity }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectClass {
    Vehicle,
    Pedestrian,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 2] = [ObjectClass::Vehicle, ObjectClass::Pedestrian];

    pub fn as_byte(self) -> u8 {
        match self {
            ObjectClass::Vehicle => 0,
            ObjectClass::Pedestrian => 1,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(ObjectClass::Vehicle),
            1 => Some(ObjectClass::Pedestrian),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectClass::Vehicle => "vehicle",
            ObjectClass::Pedestrian => "pedestrian",
        }
    }
}

impl std::fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ObjectClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "vehicle" => Ok(ObjectClass::Vehicle),
            "pedestrian" => Ok(ObjectClass::Pedestrian),
            other => Err(format!("unknown class '{other}'")),
        }
    }
}

/// Oriented 3D box. `score` is `Some` for detections and pseudo-labels and
/// `None` for ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box7 {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub heading: f64,
    pub class: ObjectClass,
    pub score: Option<f64>,
}

impl Box7 {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        cx: f64,
        cy: f64,
        cz: f64,
        length: f64,
        width: f64,
        height: f64,
        heading: f64,
        class: ObjectClass,
    ) -> Self {
        Self {
            cx,
            cy,
            cz,
            length,
            width,
            height,
            heading: normalize_heading(heading),
            class,
            score: None,
        }
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = Some(score);
        self
    }

    pub fn score_or_zero(&self) -> f64 {
        self.score.unwrap_or(0.0)
    }

    pub fn is_valid(&self) -> bool {
        let finite = [
            self.cx,
            self.cy,
            self.cz,
            self.length,
            self.width,
            self.height,
            self.heading,
        ]
        .iter()
        .all(|v| v.is_finite());
        finite
            && self.length > 0.0
            && self.width > 0.0
            && self.height > 0.0
            && self.heading > -PI
            && self.heading <= PI
            && self.score.is_none_or(|s| (0.0..=1.0).contains(&s))
    }

    pub fn bev_area(&self) -> f64 {
        self.length * self.width
    }

    /// Half of the footprint diagonal; no point of the footprint is farther
    /// from the center.
    pub fn bev_radius(&self) -> f64 {
        0.5 * self.length.hypot(self.width)
    }

    /// Whether `p` lies inside the box (closed on all faces).
    pub fn contains(&self, p: &Point3) -> bool {
        let (s, c) = self.heading.sin_cos();
        let dx = p.x - self.cx;
        let dy = p.y - self.cy;
        let lx = c * dx + s * dy;
        let ly = -s * dx + c * dy;
        lx.abs() <= 0.5 * self.length
            && ly.abs() <= 0.5 * self.width
            && (p.z - self.cz).abs() <= 0.5 * self.height
    }

    pub fn count_points_inside(&self, points: &[Point3]) -> usize {
        points.iter().filter(|p| self.contains(p)).count()
    }
}

/// Wrap an angle into the half-open interval (-pi, pi].
pub fn normalize_heading(theta: f64) -> f64 {
    let mut t = theta % TAU;
    if t <= -PI {
        t += TAU;
    } else if t > PI {
        t -= TAU;
    }
    t
}

/// Wrapped absolute angular difference, in [0, pi].
pub fn heading_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

/// Rigid planar transform taking a frame's ego coordinates into the segment
/// reference coordinates: `p_ref = R(yaw) p_ego + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub tx: f64,
    pub ty: f64,
    pub yaw: f64,
}

impl Default for Pose2 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose2 {
    pub fn new(tx: f64, ty: f64, yaw: f64) -> Self {
        Self { tx, ty, yaw }
    }

    pub fn identity() -> Self {
        Self {
            tx: 0.0,
            ty: 0.0,
            yaw: 0.0,
        }
    }

    pub fn apply_xy(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.yaw.sin_cos();
        (c * x - s * y + self.tx, s * x + c * y + self.ty)
    }

    pub fn apply_point(&self, p: &Point3) -> Point3 {
        let (x, y) = self.apply_xy(p.x, p.y);
        Point3 { x, y, ..*p }
    }

    pub fn apply_box(&self, b: &Box7) -> Box7 {
        let (cx, cy) = self.apply_xy(b.cx, b.cy);
        Box7 {
            cx,
            cy,
            heading: normalize_heading(b.heading + self.yaw),
            ..*b
        }
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.yaw.sin_cos();
        Pose2 {
            tx: -(c * self.tx + s * self.ty),
            ty: -(-s * self.tx + c * self.ty),
            yaw: -self.yaw,
        }
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let (tx, ty) = self.apply_xy(other.tx, other.ty);
        Pose2 {
            tx,
            ty,
            yaw: normalize_heading(self.yaw + other.yaw),
        }
    }
}

/// Rotate a scene about the origin's Z axis.
pub fn rotate_about_z(points: &[Point3], boxes: &[Box7], angle: f64) -> (Vec<Point3>, Vec<Box7>) {
    if angle == 0.0 {
        return (points.to_vec(), boxes.to_vec());
    }
    let pose = Pose2::new(0.0, 0.0, angle);
    (
        points.iter().map(|p| pose.apply_point(p)).collect(),
        boxes.iter().map(|b| pose.apply_box(b)).collect(),
    )
}

/// Mirror a scene over the X axis (y -> -y).
pub fn flip_y(points: &[Point3], boxes: &[Box7]) -> (Vec<Point3>, Vec<Box7>) {
    (
        points.iter().map(|p| Point3 { y: -p.y, ..*p }).collect(),
        boxes
            .iter()
            .map(|b| Box7 {
                cy: -b.cy,
                heading: normalize_heading(-b.heading),
                ..*b
            })
            .collect(),
    )
}

/// Footprint corners in counter-clockwise order, starting at the
/// front-left corner (+l/2, +w/2) in box coordinates.
pub fn bev_corners(b: &Box7) -> [[f64; 2]; 4] {
    let (s, c) = b.heading.sin_cos();
    let hl = 0.5 * b.length;
    let hw = 0.5 * b.width;
    let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
    local.map(|[lx, ly]| [b.cx + c * lx - s * ly, b.cy + s * lx + c * ly])
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Clip `subject` to the left half-plane of the directed edge a -> b.
fn clip_halfplane(subject: &[[f64; 2]], a: [f64; 2], b: [f64; 2], out: &mut Vec<[f64; 2]>) {
    out.clear();
    let n = subject.len();
    for i in 0..n {
        let cur = subject[i];
        let next = subject[(i + 1) % n];
        let dc = cross(a, b, cur);
        let dn = cross(a, b, next);
        let cur_in = dc >= 0.0;
        let next_in = dn >= 0.0;
        if cur_in {
            out.push(cur);
        }
        if cur_in != next_in {
            let t = dc / (dc - dn);
            out.push([cur[0] + t * (next[0] - cur[0]), cur[1] + t * (next[1] - cur[1])]);
        }
    }
}

/// Intersection polygon of two convex CCW polygons.
pub fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut poly = subject.to_vec();
    let mut scratch = Vec::with_capacity(subject.len() + clip.len());
    for i in 0..clip.len() {
        if poly.len() < 3 {
            return Vec::new();
        }
        clip_halfplane(&poly, clip[i], clip[(i + 1) % clip.len()], &mut scratch);
        std::mem::swap(&mut poly, &mut scratch);
    }
    dedup_vertices(&mut poly);
    if poly.len() < 3 {
        poly.clear();
    }
    poly
}

fn dedup_vertices(poly: &mut Vec<[f64; 2]>) {
    let close = |a: [f64; 2], b: [f64; 2]| {
        (a[0] - b[0]).abs() < VERTEX_MERGE_EPS && (a[1] - b[1]).abs() < VERTEX_MERGE_EPS
    };
    poly.dedup_by(|a, b| close(*a, *b));
    while poly.len() > 1 && close(poly[0], poly[poly.len() - 1]) {
        poly.pop();
    }
}

/// Shoelace area (positive for CCW).
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        acc += a[0] * b[1] - a[1] * b[0];
    }
    0.5 * acc
}

/// Footprint intersection area of two boxes.
pub fn bev_intersection_area(a: &Box7, b: &Box7) -> f64 {
    let dx = a.cx - b.cx;
    let dy = a.cy - b.cy;
    let reach = a.bev_radius() + b.bev_radius();
    if dx * dx + dy * dy >= reach * reach {
        return 0.0;
    }
    polygon_area(&clip_convex(&bev_corners(a), &bev_corners(b))).max(0.0)
}

/// Bird's-eye-view IoU of two oriented boxes, in [0, 1].
///
/// The argument order is canonicalized before clipping so the result is
/// exactly symmetric.
pub fn bev_iou(a: &Box7, b: &Box7) -> f64 {
    let key = |x: &Box7| [x.cx, x.cy, x.length, x.width, x.heading];
    let (first, second) = match key(a).partial_cmp(&key(b)) {
        Some(std::cmp::Ordering::Greater) => (b, a),
        _ => (a, b),
    };
    let inter = bev_intersection_area(first, second);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = first.bev_area() + second.bev_area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Greedy per-class non-maximum suppression.
///
/// Boxes are visited in descending score (stable for ties); a box survives
/// when its IoU with every kept box of the same class is below
/// `iou_threshold`. Output is in visiting order.
pub fn nms(boxes: &[Box7], iou_threshold: f64) -> Vec<Box7> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&i, &j| {
        boxes[j]
            .score_or_zero()
            .partial_cmp(&boxes[i].score_or_zero())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut kept: Vec<Box7> = Vec::new();
    for i in order {
        let cand = &boxes[i];
        let suppressed = kept
            .iter()
            .any(|k| k.class == cand.class && bev_iou(k, cand) >= iou_threshold);
        if !suppressed {
            kept.push(*cand);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    fn bx(cx: f64, cy: f64, l: f64, w: f64, heading: f64) -> Box7 {
        Box7::new(cx, cy, 0.0, l, w, 1.0, heading, ObjectClass::Vehicle)
    }

    #[test]
    fn quarter_turn_of_point() {
        let (p, _) = rotate_about_z(&[Point3::new(1.0, 0.0, 0.0, 0.5)], &[], FRAC_PI_2);
        assert!(p[0].x.abs() < 1e-15);
        assert_relative_eq!(p[0].y, 1.0);
        assert_eq!(p[0].z, 0.0);
        assert_eq!(p[0].intensity, 0.5);
    }

    #[test]
    fn rotation_wraps_heading() {
        let (_, b) = rotate_about_z(&[], &[bx(0.0, 0.0, 1.0, 1.0, 3.0)], 1.0);
        assert_relative_eq!(b[0].heading, 4.0 - TAU, epsilon = 1e-12);
        assert_relative_eq!(b[0].heading, -2.2832, epsilon = 1e-4);
    }

    #[test]
    fn zero_rotation_is_identity() {
        let pts = vec![Point3::new(0.1, -2.3, 0.7, 0.9)];
        let boxes = vec![bx(1.0, 2.0, 3.0, 1.0, 0.3)];
        let (p, b) = rotate_about_z(&pts, &boxes, 0.0);
        assert_eq!(p, pts);
        assert_eq!(b, boxes);
    }

    #[test]
    fn flip_mirrors_position_and_heading() {
        let (p, b) = flip_y(&[Point3::new(1.0, 2.0, 0.0, 0.0)], &[bx(1.0, 2.0, 2.0, 1.0, 0.5)]);
        assert_eq!((p[0].x, p[0].y), (1.0, -2.0));
        assert_eq!((b[0].cx, b[0].cy, b[0].heading), (1.0, -2.0, -0.5));
        let (p2, b2) = flip_y(&p, &b);
        assert_eq!(p2[0].y, 2.0);
        assert_eq!(b2[0].heading, 0.5);
    }

    #[test]
    fn flip_of_pi_heading_stays_in_range() {
        let (_, b) = flip_y(&[], &[bx(0.0, 0.0, 2.0, 1.0, PI)]);
        assert_eq!(b[0].heading, PI);
    }

    #[test]
    fn square_corners_ccw() {
        let c = bev_corners(&bx(0.0, 0.0, 2.0, 2.0, 0.0));
        assert_eq!(c, [[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]]);
        assert!(polygon_area(&c) > 0.0);
    }

    #[test]
    fn quarter_heading_swaps_axes() {
        let c = bev_corners(&bx(0.0, 0.0, 4.0, 2.0, FRAC_PI_2));
        let xs: Vec<f64> = c.iter().map(|p| p[0]).collect();
        let ys: Vec<f64> = c.iter().map(|p| p[1]).collect();
        let span = |v: &[f64]| {
            v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min)
        };
        assert_relative_eq!(span(&xs), 2.0, epsilon = 1e-12);
        assert_relative_eq!(span(&ys), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn anchor_sized_corners_match_hand_rotation() {
        let (l, w, h) = (4.725, 2.079, 0.3_f64);
        let c = bev_corners(&bx(0.0, 0.0, l, w, h));
        let (s, co) = h.sin_cos();
        // front-left corner (l/2, w/2) rotated by hand
        let fx = co * l / 2.0 - s * w / 2.0;
        let fy = s * l / 2.0 + co * w / 2.0;
        assert_relative_eq!(c[0][0], fx, epsilon = 1e-12);
        assert_relative_eq!(c[0][1], fy, epsilon = 1e-12);
        let r = 0.5 * (l * l + w * w).sqrt();
        for p in c {
            assert_relative_eq!(p[0].hypot(p[1]), r, epsilon = 1e-12);
        }
    }

    #[test]
    fn iou_identical_is_one() {
        let b = bx(1.0, -3.0, 4.0, 2.0, 0.7);
        assert_relative_eq!(bev_iou(&b, &b), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn iou_axis_aligned_shift() {
        let a = bx(0.0, 0.0, 2.0, 2.0, 0.0);
        let b = bx(1.0, 0.0, 2.0, 2.0, 0.0);
        assert_relative_eq!(bev_iou(&a, &b), 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn iou_rotated_square_octagon() {
        let a = bx(0.0, 0.0, 2.0, 2.0, 0.0);
        let b = bx(0.0, 0.0, 2.0, 2.0, PI / 4.0);
        let inter = 8.0 * (2f64.sqrt() - 1.0);
        let expected = inter / (8.0 - inter);
        assert_relative_eq!(bev_iou(&a, &b), expected, epsilon = 1e-12);
        assert_relative_eq!(expected, std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-4);
    }

    #[test]
    fn iou_disjoint_is_zero() {
        assert_eq!(bev_iou(&bx(0.0, 0.0, 1.0, 1.0, 0.0), &bx(5.0, 0.0, 1.0, 1.0, 0.3)), 0.0);
    }

    #[test]
    fn iou_touching_edges_is_zero() {
        assert_eq!(bev_iou(&bx(0.0, 0.0, 2.0, 2.0, 0.0), &bx(2.0, 0.0, 2.0, 2.0, 0.0)), 0.0);
    }

    #[test]
    fn nms_keeps_higher_duplicate() {
        let a = bx(0.0, 0.0, 2.0, 2.0, 0.0).with_score(0.9);
        let b = bx(0.0, 0.0, 2.0, 2.0, 0.0).with_score(0.8);
        let kept = nms(&[b, a], 0.5);
        assert_eq!(kept, vec![a]);
    }

    #[test]
    fn nms_keeps_disjoint() {
        let a = bx(0.0, 0.0, 2.0, 2.0, 0.0).with_score(0.9);
        let b = bx(10.0, 0.0, 2.0, 2.0, 0.0).with_score(0.8);
        assert_eq!(nms(&[a, b], 0.5).len(), 2);
    }

    #[test]
    fn nms_chain_keeps_ends() {
        // Equal 4x1 boxes shifted by d along x have IoU (4-d)/(4+d):
        // A-B and B-C at d=1 give 0.6, A-C at d=2 gives 1/3.
        // Greedy: A kept, B suppressed by A, C checked only against A -> kept.
        let shift = |d: f64| bx(d, 0.0, 4.0, 1.0, 0.0);
        let a = shift(0.0).with_score(0.9);
        let b = shift(1.0).with_score(0.8);
        let c = shift(2.0).with_score(0.7);
        assert!(bev_iou(&a, &b) >= 0.5);
        assert!(bev_iou(&b, &c) >= 0.5);
        assert!(bev_iou(&a, &c) < 0.5);
        assert_eq!(nms(&[c, b, a], 0.5), vec![a, c]);
    }

    #[test]
    fn nms_is_per_class() {
        let a = bx(0.0, 0.0, 2.0, 2.0, 0.0).with_score(0.9);
        let mut b = a.with_score(0.8);
        b.class = ObjectClass::Pedestrian;
        assert_eq!(nms(&[a, b], 0.5).len(), 2);
    }

    #[test]
    fn nms_tie_keeps_input_order() {
        let a = bx(0.0, 0.0, 2.0, 2.0, 0.0).with_score(0.5);
        let b = bx(0.1, 0.0, 2.0, 2.0, 0.0).with_score(0.5);
        assert_eq!(nms(&[a, b], 0.5), vec![a]);
        assert_eq!(nms(&[b, a], 0.5), vec![b]);
    }

    #[test]
    fn pose_inverse_composes_to_identity() {
        let p = Pose2::new(3.0, -1.5, 2.2);
        let id = p.compose(&p.inverse());
        assert!(id.tx.abs() < 1e-9 && id.ty.abs() < 1e-9 && id.yaw.abs() < 1e-9);
        let id2 = p.inverse().compose(&p);
        assert!(id2.tx.abs() < 1e-9 && id2.ty.abs() < 1e-9 && id2.yaw.abs() < 1e-9);
    }

    #[test]
    fn heading_helpers() {
        assert_eq!(normalize_heading(-PI), PI);
        assert_eq!(normalize_heading(PI), PI);
        assert_relative_eq!(heading_distance(3.0, -3.0), TAU - 6.0, epsilon = 1e-12);
        assert_relative_eq!(heading_distance(0.0, PI), PI, epsilon = 1e-12);
    }

    #[test]
    fn contains_rotated() {
        let b = bx(0.0, 0.0, 4.0, 1.0, FRAC_PI_2);
        assert!(b.contains(&Point3::new(0.0, 1.9, 0.0, 0.0)));
        assert!(!b.contains(&Point3::new(1.9, 0.0, 0.0, 0.0)));
    }
}
