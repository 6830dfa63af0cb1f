use std::f64::consts::PI;

use proptest::prelude::*;

use pillarlab::geom::{bev_intersection_area, bev_iou, flip_y, nms, rotate_about_z, Box7, ObjectClass, Point3, Pose2};
use pillarlab::pillars::{pillar_features, voxelize, GridSpec};

fn arb_box() -> impl Strategy<Value = Box7> {
    (-10.0..10.0f64, -10.0..10.0f64, 0.3..6.0f64, 0.3..3.0f64, -PI..PI)
        .prop_map(|(x, y, l, w, h)| Box7::new(x, y, 0.0, l, w, 1.5, h, ObjectClass::Vehicle))
}

fn arb_pose() -> impl Strategy<Value = Pose2> {
    (-100.0..100.0f64, -100.0..100.0f64, -PI..PI).prop_map(|(x, y, t)| Pose2::new(x, y, t))
}

proptest! {
    #[test]
    fn iou_is_bounded_and_symmetric(a in arb_box(), b in arb_box()) {
        let ab = bev_iou(&a, &b);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
        prop_assert!((ab - bev_iou(&b, &a)).abs() < 1e-9);
    }

    #[test]
    fn iou_is_rigid_invariant(a in arb_box(), b in arb_box(), pose in arb_pose()) {
        let moved = bev_iou(&pose.apply_box(&a), &pose.apply_box(&b));
        prop_assert!((bev_iou(&a, &b) - moved).abs() < 1e-9);
    }

    #[test]
    fn self_iou_is_one_and_heading_flip_is_free(a in arb_box()) {
        prop_assert!((bev_iou(&a, &a) - 1.0).abs() < 1e-9);
        let turned = Box7 { heading: a.heading + PI, ..a };
        prop_assert!((bev_iou(&a, &turned) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn intersection_never_exceeds_smaller_area(a in arb_box(), b in arb_box()) {
        let inter = bev_intersection_area(&a, &b);
        prop_assert!(inter <= a.bev_area().min(b.bev_area()) + 1e-9);
    }

    #[test]
    fn pose_inverse_roundtrips(a in arb_box(), pose in arb_pose()) {
        let back = pose.inverse().apply_box(&pose.apply_box(&a));
        prop_assert!((back.cx - a.cx).abs() < 1e-9 && (back.cy - a.cy).abs() < 1e-9);
        prop_assert!(pillarlab::geom::heading_distance(back.heading, a.heading) < 1e-9);
    }

    #[test]
    fn augmentations_keep_points_inside_their_boxes(a in arb_box(), angle in -PI..PI) {
        let pts = vec![Point3::new(a.cx, a.cy, 0.0, 0.5)];
        let (rp, rb) = rotate_about_z(&pts, &[a], angle);
        prop_assert!(rb[0].contains(&rp[0]));
        let (fp, fb) = flip_y(&pts, &[a]);
        prop_assert!(fb[0].contains(&fp[0]));
    }

    #[test]
    fn voxelization_drops_only_out_of_range_points(
        pts in prop::collection::vec((-20.0..20.0f64, -20.0..20.0f64, -4.0..4.0f64), 0..400)
    ) {
        let spec = GridSpec::desk();
        let cloud: Vec<Point3> = pts.iter().map(|&(x, y, z)| Point3::new(x, y, z, 0.1)).collect();
        let grid = voxelize(&cloud, &spec);
        let inside = cloud.iter().filter(|p| spec.cell_of(p).is_some()).count();
        prop_assert_eq!(grid.num_points(), inside);
        let feats = pillar_features(&cloud, &grid);
        // Centroid offsets cancel within each pillar.
        for k in 0..feats.num_pillars() {
            let rows = feats.pillar_rows(k);
            for c in 4..7 {
                prop_assert!(rows.iter().map(|r| r[c]).sum::<f64>().abs() < 1e-9);
            }
        }
    }
}

#[test]
fn disjoint_and_touching_boxes_have_zero_iou() {
    let a = Box7::new(0.0, 0.0, 0.0, 2.0, 2.0, 1.0, 0.0, ObjectClass::Vehicle);
    let far = Box7 { cx: 10.0, ..a };
    let touching = Box7 { cx: 2.0, ..a };
    assert_eq!(bev_iou(&a, &far), 0.0);
    assert!(bev_iou(&a, &touching).abs() < 1e-12);
}

#[test]
fn half_overlap_has_iou_one_third() {
    let a = Box7::new(0.0, 0.0, 0.0, 2.0, 2.0, 1.0, 0.0, ObjectClass::Vehicle);
    let b = Box7 { cx: 1.0, ..a };
    assert!((bev_iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn nms_keeps_highest_scoring_of_a_cluster() {
    let a = Box7::new(0.0, 0.0, 0.0, 4.0, 2.0, 1.5, 0.0, ObjectClass::Vehicle);
    let boxes = vec![
        a.with_score(0.6),
        Box7 { cx: 0.2, ..a }.with_score(0.9),
        Box7 { cx: 8.0, ..a }.with_score(0.3),
    ];
    let kept = nms(&boxes, 0.5);
    assert_eq!(kept.len(), 2);
    assert_eq!(kept[0].score, Some(0.9));
    assert_eq!(kept[1].score, Some(0.3));
}
