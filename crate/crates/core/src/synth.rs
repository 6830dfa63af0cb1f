//! Deterministic synthetic LiDAR world.
//!
//! A segment is a short drive: the ego vehicle moves at constant speed with a
//! constant yaw rate while static objects (vehicles, pedestrians, unlabeled
//! distractors such as walls and poles) are observed in every frame. Points
//! are sampled on the sensor-facing faces of each object with a density that
//! falls off with range, then jittered and dropped according to the domain
//! profile. Everything is a pure function of `(seed, profile, config)`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{bev_intersection_area, Box7, ObjectClass, Point3, Pose2};
use crate::seed;

/// Area of the desk scene relative to the full 153.6 m square.
pub const DESK_AREA_RATIO: f64 = (32.0 * 32.0) / (153.6 * 153.6);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainProfile {
    pub name: String,
    pub vehicle_mean_length: f64,
    pub vehicle_mean_width: f64,
    /// Poisson mean of vehicles per segment.
    pub vehicles_per_scene: f64,
    pub pedestrian_scene_fraction: f64,
    /// Poisson mean of additional pedestrians in a segment that has any
    /// (the count is `1 + Poisson(mean)`).
    pub pedestrians_per_scene_given_present: f64,
    pub point_dropout: f64,
    pub point_jitter_std: f64,
    pub clutter_points_per_frame: usize,
}

impl DomainProfile {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("profile '{}': {m}", self.name)));
        if !(0.0..1.0).contains(&self.pedestrian_scene_fraction) {
            return bad("pedestrian_scene_fraction must be in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.point_dropout) {
            return bad("point_dropout must be in [0, 1)");
        }
        if !(self.vehicle_mean_length > 0.0 && self.vehicle_mean_width > 0.0) {
            return bad("vehicle mean dimensions must be positive");
        }
        if !(self.vehicles_per_scene > 0.0) || self.pedestrians_per_scene_given_present < 0.0 {
            return bad("object count means must be positive");
        }
        if !(self.point_jitter_std >= 0.0) {
            return bad("point_jitter_std must be >= 0");
        }
        Ok(())
    }
}

/// Source (clean, pedestrian-rich) and target (rainy, sparse) profiles.
pub fn make_domain_defaults() -> (DomainProfile, DomainProfile) {
    // Given-present pedestrian means: 12.4 / 0.70 and 0.57 / 0.22 per full
    // scene, scaled by area to the desk scene.
    let source = DomainProfile {
        name: "source".into(),
        vehicle_mean_length: 4.8,
        vehicle_mean_width: 2.1,
        vehicles_per_scene: 4.0,
        pedestrian_scene_fraction: 0.70,
        pedestrians_per_scene_given_present: (12.4 / 0.70) * DESK_AREA_RATIO,
        point_dropout: 0.05,
        point_jitter_std: 0.02,
        clutter_points_per_frame: 150,
    };
    let target = DomainProfile {
        name: "target".into(),
        vehicle_mean_length: 4.6,
        vehicle_mean_width: 2.1,
        vehicles_per_scene: 4.0,
        pedestrian_scene_fraction: 0.22,
        pedestrians_per_scene_given_present: (0.57 / 0.22) * DESK_AREA_RATIO,
        point_dropout: 0.35,
        point_jitter_std: 0.08,
        clutter_points_per_frame: 300,
    };
    (source, target)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    /// Scene covers [-half_extent, half_extent]^2 in every ego frame.
    pub half_extent: f64,
    pub ground_z: f64,
    pub frames_per_segment: usize,
    /// Points per object face area before range falloff.
    pub points_per_m2: f64,
    /// Range falloff scale: density / (1 + range / falloff_range).
    pub falloff_range: f64,
    pub ego_speed_max: f64,
    pub yaw_rate_std: f64,
    /// Poisson mean of unlabeled distractor objects.
    pub distractors_per_scene: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            half_extent: 16.0,
            ground_z: -1.7,
            frames_per_segment: 8,
            points_per_m2: 20.0,
            falloff_range: 8.0,
            ego_speed_max: 0.5,
            yaw_rate_std: 0.01,
            distractors_per_scene: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub points: Vec<Point3>,
    pub gt_boxes: Vec<Box7>,
    pub pose: Pose2,
    pub timestamp_index: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSegment {
    pub segment_id: String,
    pub domain: String,
    pub frames: Vec<Frame>,
}

impl RunSegment {
    /// Drop all ground truth, leaving points and poses.
    pub fn strip_labels(&self) -> RunSegment {
        RunSegment {
            segment_id: self.segment_id.clone(),
            domain: self.domain.clone(),
            frames: self
                .frames
                .iter()
                .map(|f| Frame {
                    gt_boxes: Vec::new(),
                    ..f.clone()
                })
                .collect(),
        }
    }

    pub fn has_labels(&self) -> bool {
        self.frames.iter().any(|f| !f.gt_boxes.is_empty())
    }
}

struct Object {
    world: Box7,
    labeled: bool,
}

fn truncated_normal(rng: &mut ChaCha8Rng, mean: f64, std: f64, lo: f64, hi: f64) -> f64 {
    let n = Normal::new(mean, std).expect("valid normal");
    for _ in 0..64 {
        let v = n.sample(rng);
        if (lo..=hi).contains(&v) {
            return v;
        }
    }
    mean.clamp(lo, hi)
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive mean").sample(rng) as usize
}

fn ego_poses(rng: &mut ChaCha8Rng, config: &SceneConfig) -> Vec<Pose2> {
    let speed = rng.gen_range(0.0..=config.ego_speed_max);
    let yaw_rate = Normal::new(0.0, config.yaw_rate_std.max(0.0))
        .map(|n| n.sample(rng))
        .unwrap_or(0.0);
    let mut poses = Vec::with_capacity(config.frames_per_segment);
    let mut pose = Pose2::identity();
    for _ in 0..config.frames_per_segment {
        poses.push(pose);
        let (s, c) = pose.yaw.sin_cos();
        pose = Pose2::new(pose.tx + speed * c, pose.ty + speed * s, pose.yaw + yaw_rate);
    }
    poses
}

fn sample_dims(rng: &mut ChaCha8Rng, class: ObjectClass, profile: &DomainProfile) -> (f64, f64, f64) {
    match class {
        ObjectClass::Vehicle => (
            truncated_normal(rng, profile.vehicle_mean_length, 0.3, 3.4, 6.4),
            truncated_normal(rng, profile.vehicle_mean_width, 0.12, 1.6, 2.6),
            truncated_normal(rng, 1.6, 0.15, 1.2, 2.2),
        ),
        ObjectClass::Pedestrian => (
            truncated_normal(rng, 0.9, 0.1, 0.5, 1.3),
            truncated_normal(rng, 0.86, 0.1, 0.5, 1.3),
            truncated_normal(rng, 1.71, 0.1, 1.3, 2.1),
        ),
    }
}

/// Rejection-sample a world placement that stays inside the scene in every
/// frame and does not overlap earlier objects.
#[allow(clippy::too_many_arguments)]
fn place(
    rng: &mut ChaCha8Rng,
    dims: (f64, f64, f64),
    class: ObjectClass,
    poses: &[Pose2],
    existing: &[Object],
    config: &SceneConfig,
) -> Option<Box7> {
    let inner = config.half_extent - 0.5;
    let (l, w, h) = dims;
    for _ in 0..64 {
        let x = rng.gen_range(-inner..inner);
        let y = rng.gen_range(-inner..inner);
        let heading = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        // Sensor is at the origin of frame 0; keep objects off the ego car.
        if x.abs() < 3.0 && y.abs() < 1.5 {
            continue;
        }
        let world = Box7::new(x, y, config.ground_z + 0.5 * h, l, w, h, heading, class);
        let inside = poses.iter().all(|pose| {
            let b = pose.inverse().apply_box(&world);
            b.cx.abs() < inner && b.cy.abs() < inner
        });
        if !inside {
            continue;
        }
        if existing
            .iter()
            .any(|o| bev_intersection_area(&o.world, &world) > 0.0)
        {
            continue;
        }
        return Some(world);
    }
    None
}

fn sample_surface_points(
    rng: &mut ChaCha8Rng,
    b: &Box7,
    config: &SceneConfig,
    profile: &DomainProfile,
    jitter: &Normal<f64>,
    out: &mut Vec<Point3>,
) {
    let (s, c) = b.heading.sin_cos();
    let hl = 0.5 * b.length;
    let hw = 0.5 * b.width;
    let hh = 0.5 * b.height;
    // (face center offset in box frame, outward normal in box frame, u-half, v-half-axis)
    // Vertical faces: +x, -x, +y, -y. Local tangent is along the other
    // planar axis; the second tangent is z.
    struct Face {
        center: [f64; 3],
        normal: [f64; 2],
        tangent: [f64; 2],
        half_u: f64,
        half_v: f64,
        vertical: bool,
    }
    let faces = [
        Face { center: [hl, 0.0, 0.0], normal: [1.0, 0.0], tangent: [0.0, 1.0], half_u: hw, half_v: hh, vertical: true },
        Face { center: [-hl, 0.0, 0.0], normal: [-1.0, 0.0], tangent: [0.0, 1.0], half_u: hw, half_v: hh, vertical: true },
        Face { center: [0.0, hw, 0.0], normal: [0.0, 1.0], tangent: [1.0, 0.0], half_u: hl, half_v: hh, vertical: true },
        Face { center: [0.0, -hw, 0.0], normal: [0.0, -1.0], tangent: [1.0, 0.0], half_u: hl, half_v: hh, vertical: true },
        Face { center: [0.0, 0.0, hh], normal: [0.0, 0.0], tangent: [1.0, 0.0], half_u: hl, half_v: hw, vertical: false },
    ];
    let to_world = |lx: f64, ly: f64| (b.cx + c * lx - s * ly, b.cy + s * lx + c * ly);
    let visible: Vec<(&Face, f64)> = faces
        .iter()
        .filter(|f| {
            if !f.vertical {
                return true;
            }
            let (fx, fy) = to_world(f.center[0], f.center[1]);
            let nx = c * f.normal[0] - s * f.normal[1];
            let ny = s * f.normal[0] + c * f.normal[1];
            nx * (0.0 - fx) + ny * (0.0 - fy) > 0.0
        })
        .map(|f| (f, 4.0 * f.half_u * f.half_v))
        .collect();
    let area: f64 = visible.iter().map(|(_, a)| a).sum();
    let range = b.cx.hypot(b.cy);
    let count = (config.points_per_m2 * area / (1.0 + range / config.falloff_range)).ceil() as usize;
    for _ in 0..count {
        let mut pick = rng.gen_range(0.0..area);
        let mut face = visible[visible.len() - 1].0;
        for (f, a) in &visible {
            if pick < *a {
                face = f;
                break;
            }
            pick -= a;
        }
        let u = rng.gen_range(-face.half_u..=face.half_u);
        let v = rng.gen_range(-face.half_v..=face.half_v);
        let (lx, ly, lz) = if face.vertical {
            (
                face.center[0] + face.tangent[0] * u,
                face.center[1] + face.tangent[1] * u,
                v,
            )
        } else {
            (u, v, face.center[2])
        };
        let (wx, wy) = to_world(lx, ly);
        let intensity = rng.gen_range(0.0..=1.0);
        let p = Point3::new(
            wx + jitter.sample(rng),
            wy + jitter.sample(rng),
            b.cz + lz + jitter.sample(rng),
            intensity,
        );
        // Dropout draw is consumed unconditionally so streams stay aligned.
        let drop = rng.gen_bool(profile.point_dropout);
        if !drop {
            out.push(p);
        }
    }
}

/// Generate one run segment.
pub fn generate_segment(seed: u64, profile: &DomainProfile, config: &SceneConfig) -> Result<RunSegment> {
    profile.validate()?;
    if config.frames_per_segment == 0 {
        return Err(Error::InvalidConfig("frames_per_segment must be >= 1".into()));
    }
    let span = 2.0 * (config.half_extent - 0.5);
    if !(config.half_extent > 0.0) || profile.vehicle_mean_length >= span || profile.vehicle_mean_width >= span {
        return Err(Error::InfeasibleScene(format!(
            "mean vehicle footprint {}x{} m does not fit a {:.1} m scene",
            profile.vehicle_mean_length, profile.vehicle_mean_width, 2.0 * config.half_extent
        )));
    }
    let mut rng = seed::rng(seed::derive(seed, &profile.name));
    let poses = ego_poses(&mut rng, config);

    let mut objects: Vec<Object> = Vec::new();
    let n_vehicles = poisson(&mut rng, profile.vehicles_per_scene);
    let n_peds = if rng.gen_bool(profile.pedestrian_scene_fraction) {
        1 + poisson(&mut rng, profile.pedestrians_per_scene_given_present)
    } else {
        0
    };
    let n_distractors = poisson(&mut rng, config.distractors_per_scene);

    for class in std::iter::repeat_n(ObjectClass::Vehicle, n_vehicles).chain(std::iter::repeat_n(ObjectClass::Pedestrian, n_peds)) {
        let dims = sample_dims(&mut rng, class, profile);
        if let Some(world) = place(&mut rng, dims, class, &poses, &objects, config) {
            objects.push(Object { world, labeled: true });
        }
    }
    for _ in 0..n_distractors {
        // Walls, hedges and poles: thin, unlabeled.
        let dims = if rng.gen_bool(0.5) {
            (rng.gen_range(2.5..6.0), rng.gen_range(0.2..0.6), rng.gen_range(0.8..2.0))
        } else {
            (rng.gen_range(0.2..0.5), rng.gen_range(0.2..0.5), rng.gen_range(1.5..3.0))
        };
        if let Some(world) = place(&mut rng, dims, ObjectClass::Vehicle, &poses, &objects, config) {
            objects.push(Object { world, labeled: false });
        }
    }

    let jitter = Normal::new(0.0, profile.point_jitter_std).expect("validated jitter");
    let h = config.half_extent;
    let mut frames = Vec::with_capacity(config.frames_per_segment);
    for (t, pose) in poses.iter().enumerate() {
        let to_ego = pose.inverse();
        let mut points = Vec::new();
        let mut gt_boxes = Vec::new();
        for obj in &objects {
            let b = to_ego.apply_box(&obj.world);
            sample_surface_points(&mut rng, &b, config, profile, &jitter, &mut points);
            if obj.labeled {
                gt_boxes.push(b);
            }
        }
        for _ in 0..profile.clutter_points_per_frame {
            let x = rng.gen_range(-h..h);
            let y = rng.gen_range(-h..h);
            let z = config.ground_z + 0.03 * jitter_unit(&mut rng);
            let intensity = rng.gen_range(0.0..=1.0);
            points.push(Point3::new(x, y, z, intensity));
        }
        points.retain(|p| p.x >= -h && p.x < h && p.y >= -h && p.y < h);
        frames.push(Frame {
            points,
            gt_boxes,
            pose: *pose,
            timestamp_index: t as u32,
        });
    }

    Ok(RunSegment {
        segment_id: format!("{}-{:016x}", profile.name, seed),
        domain: profile.name.clone(),
        frames,
    })
}

fn jitter_unit(rng: &mut ChaCha8Rng) -> f64 {
    rand_distr::StandardNormal.sample(rng)
}

/// Generate `count` segments with seeds derived from `base_seed`.
pub fn generate_segments(
    base_seed: u64,
    count: usize,
    profile: &DomainProfile,
    config: &SceneConfig,
) -> Result<Vec<RunSegment>> {
    (0..count)
        .map(|i| generate_segment(seed::derive_index(base_seed, i as u64), profile, config))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SceneConfig {
        SceneConfig::default()
    }

    #[test]
    fn deterministic() {
        let (src, _) = make_domain_defaults();
        let a = generate_segment(42, &src, &small()).unwrap();
        let b = generate_segment(42, &src, &small()).unwrap();
        assert_eq!(a, b);
        let c = generate_segment(43, &src, &small()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn no_pedestrians_when_fraction_zero() {
        let (mut src, _) = make_domain_defaults();
        src.pedestrian_scene_fraction = 0.0;
        for s in 0..20 {
            let seg = generate_segment(s, &src, &small()).unwrap();
            assert!(seg
                .frames
                .iter()
                .flat_map(|f| &f.gt_boxes)
                .all(|b| b.class == ObjectClass::Vehicle));
        }
    }

    #[test]
    fn defaults_follow_domain_statistics() {
        let (src, tgt) = make_domain_defaults();
        assert_eq!(src.vehicle_mean_length, 4.8);
        assert_eq!(tgt.vehicle_mean_length, 4.6);
        assert_eq!(src.pedestrian_scene_fraction, 0.70);
        assert_eq!(tgt.pedestrian_scene_fraction, 0.22);
        assert!(tgt.point_dropout > src.point_dropout);
        assert!(tgt.point_jitter_std > src.point_jitter_std);
    }

    #[test]
    fn infeasible_scene_rejected() {
        let (mut src, _) = make_domain_defaults();
        src.vehicle_mean_length = 40.0;
        assert!(matches!(
            generate_segment(1, &src, &small()),
            Err(Error::InfeasibleScene(_))
        ));
    }

    #[test]
    fn boxes_and_points_inside_range() {
        let (src, tgt) = make_domain_defaults();
        let cfg = small();
        for s in 0..10 {
            for p in [&src, &tgt] {
                let seg = generate_segment(s, p, &cfg).unwrap();
                assert_eq!(seg.frames.len(), cfg.frames_per_segment);
                for f in &seg.frames {
                    for b in &f.gt_boxes {
                        assert!(b.is_valid());
                        assert!(b.cx.abs() < cfg.half_extent && b.cy.abs() < cfg.half_extent);
                    }
                    for p in &f.points {
                        assert!(p.x >= -cfg.half_extent && p.x < cfg.half_extent);
                        assert!(p.y >= -cfg.half_extent && p.y < cfg.half_extent);
                        assert!((0.0..=1.0).contains(&p.intensity));
                    }
                }
            }
        }
    }

    #[test]
    fn objects_persist_across_frames() {
        let (src, _) = make_domain_defaults();
        for s in 0..10 {
            let seg = generate_segment(s, &src, &small()).unwrap();
            let n = seg.frames[0].gt_boxes.len();
            assert!(seg.frames.iter().all(|f| f.gt_boxes.len() == n));
        }
    }

    #[test]
    fn pedestrian_scene_fraction_matches_profile() {
        let (src, _) = make_domain_defaults();
        let cfg = SceneConfig {
            frames_per_segment: 1,
            ..small()
        };
        let with_peds = (0..200)
            .filter(|&s| {
                generate_segment(s, &src, &cfg).unwrap().frames[0]
                    .gt_boxes
                    .iter()
                    .any(|b| b.class == ObjectClass::Pedestrian)
            })
            .count();
        let frac = with_peds as f64 / 200.0;
        assert!((frac - 0.70).abs() <= 0.1, "fraction {frac}");
    }

    #[test]
    fn vehicle_mean_length_matches_profile() {
        let (src, tgt) = make_domain_defaults();
        let cfg = SceneConfig {
            frames_per_segment: 1,
            ..small()
        };
        for p in [src, tgt] {
            let lens: Vec<f64> = (0..150)
                .flat_map(|s| generate_segment(s, &p, &cfg).unwrap().frames.remove(0).gt_boxes)
                .filter(|b| b.class == ObjectClass::Vehicle)
                .map(|b| b.length)
                .collect();
            let mean = lens.iter().sum::<f64>() / lens.len() as f64;
            assert!((mean - p.vehicle_mean_length).abs() < 0.1, "{}: {mean}", p.name);
        }
    }

    #[test]
    fn near_objects_get_more_points() {
        let (mut src, _) = make_domain_defaults();
        src.point_dropout = 0.0;
        let cfg = small();
        let mut near = Vec::new();
        let mut far = Vec::new();
        for s in 0..30 {
            let seg = generate_segment(s, &src, &cfg).unwrap();
            let f = &seg.frames[0];
            for b in f.gt_boxes.iter().filter(|b| b.class == ObjectClass::Vehicle) {
                let n = b.count_points_inside(&f.points) as f64;
                if b.cx.hypot(b.cy) < 8.0 {
                    near.push(n);
                } else if b.cx.hypot(b.cy) > 14.0 {
                    far.push(n);
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&near) > mean(&far));
    }
}
