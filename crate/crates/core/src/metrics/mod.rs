//! Detection evaluation, dataset statistics and the cross-domain analysis.

pub mod ancova;
pub mod ap;
pub mod stats;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Box7, ObjectClass};
use crate::net::{detect, DetectorParams, InferenceConfig};
use crate::synth::RunSegment;

pub use ancova::{ancova_group_test, AncovaPoint, AncovaReport, LineFit};
pub use ap::{
    average_precision, average_precision_heading, match_detections, DetOutcome, FrameMatch,
    MatchedDet,
};
pub use stats::{sign_test_greater, spearman, teacher_student_pairs, TeacherStudent};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub vehicle_iou: f64,
    pub pedestrian_iou: f64,
    /// Ground truths with fewer interior points are outside Level 1.
    pub level1_min_points: usize,
    /// Evaluate every `frame_stride`-th frame of each segment.
    pub frame_stride: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            vehicle_iou: 0.7,
            pedestrian_iou: 0.5,
            level1_min_points: 5,
            frame_stride: 1,
        }
    }
}

impl EvalConfig {
    pub fn iou_for(&self, class: ObjectClass) -> f64 {
        match class {
            ObjectClass::Vehicle => self.vehicle_iou,
            ObjectClass::Pedestrian => self.pedestrian_iou,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub ap: f64,
    pub aph: f64,
    pub num_gt: usize,
    pub num_det: usize,
}

/// Match one frame's detections against its ground truth of `class`.
pub fn match_frame(
    dets: &[Box7],
    gts: &[Box7],
    points: &[crate::geom::Point3],
    class: ObjectClass,
    config: &EvalConfig,
) -> FrameMatch {
    let gts: Vec<Box7> = gts.iter().filter(|b| b.class == class).copied().collect();
    let dets: Vec<Box7> = dets.iter().filter(|b| b.class == class).copied().collect();
    let counts: Vec<usize> = gts.iter().map(|b| b.count_points_inside(points)).collect();
    match_detections(&dets, &gts, &counts, config.iou_for(class), config.level1_min_points)
}

/// Summarize pre-computed frame matches. A set without Level-1 ground
/// truth scores zero.
pub fn summarize(matches: &[FrameMatch]) -> EvalSummary {
    let num_gt = matches.iter().map(|m| m.num_gt).sum();
    let num_det = matches.iter().map(|m| m.dets.len()).sum();
    EvalSummary {
        ap: average_precision(matches).unwrap_or(0.0),
        aph: average_precision_heading(matches).unwrap_or(0.0),
        num_gt,
        num_det,
    }
}

/// Run a detector over labeled segments and score it.
pub fn evaluate_model(
    params: &DetectorParams,
    segments: &[RunSegment],
    config: &EvalConfig,
    inference: &InferenceConfig,
) -> Result<EvalSummary> {
    let anchors = params.config.anchor_boxes();
    let stride = config.frame_stride.max(1);
    let mut matches = Vec::new();
    for seg in segments {
        for t in (0..seg.frames.len()).step_by(stride) {
            let frame = &seg.frames[t];
            let dets = detect(params, &anchors, seg, t, inference)?;
            matches.push(match_frame(&dets, &frame.gt_boxes, &frame.points, params.config.class, config));
        }
    }
    Ok(summarize(&matches))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainStats {
    pub domain: String,
    pub frames: usize,
    pub vehicles: usize,
    pub mean_vehicle_length: f64,
    pub mean_vehicle_width: f64,
    pub pedestrian_scene_fraction: f64,
    pub mean_pedestrians_per_scene: f64,
}

/// Per-domain ground-truth statistics over every frame.
pub fn dataset_stats(segments: &[RunSegment]) -> Result<Vec<DomainStats>> {
    let frames: usize = segments.iter().map(|s| s.frames.len()).sum();
    if frames == 0 {
        return Err(Error::EmptyDataset);
    }
    #[derive(Default)]
    struct Acc {
        frames: usize,
        vehicles: usize,
        len_sum: f64,
        width_sum: f64,
        ped_frames: usize,
        peds: usize,
    }
    let mut by_domain: BTreeMap<&str, Acc> = BTreeMap::new();
    for seg in segments {
        let acc = by_domain.entry(&seg.domain).or_default();
        for f in &seg.frames {
            acc.frames += 1;
            let mut peds = 0;
            for b in &f.gt_boxes {
                match b.class {
                    ObjectClass::Vehicle => {
                        acc.vehicles += 1;
                        acc.len_sum += b.length;
                        acc.width_sum += b.width;
                    }
                    ObjectClass::Pedestrian => peds += 1,
                }
            }
            acc.peds += peds;
            acc.ped_frames += (peds > 0) as usize;
        }
    }
    Ok(by_domain
        .into_iter()
        .filter(|(_, a)| a.frames > 0)
        .map(|(domain, a)| {
            let nv = a.vehicles.max(1) as f64;
            DomainStats {
                domain: domain.to_string(),
                frames: a.frames,
                vehicles: a.vehicles,
                mean_vehicle_length: if a.vehicles > 0 { a.len_sum / nv } else { f64::NAN },
                mean_vehicle_width: if a.vehicles > 0 { a.width_sum / nv } else { f64::NAN },
                pedestrian_scene_fraction: a.ped_frames as f64 / a.frames as f64,
                mean_pedestrians_per_scene: a.peds as f64 / a.frames as f64,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Teacher,
    Student,
    Baseline,
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Role::Teacher => "teacher",
            Role::Student => "student",
            Role::Baseline => "baseline",
        })
    }
}

/// One trained model's results; the row type of every experiment table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub run_id: String,
    pub plan: String,
    pub role: Role,
    /// Run id of the teacher that produced this student's pseudo-labels.
    pub teacher_ref: String,
    pub class: ObjectClass,
    pub teacher_config: String,
    pub student_config: String,
    pub labeled_fraction: f64,
    pub ratio: String,
    pub unlabeled_domain: String,
    pub variant: String,
    pub seed: u64,
    pub source_ap: f64,
    pub target_ap: f64,
    pub source_aph: f64,
    pub target_aph: f64,
    pub pseudo_boxes: usize,
    /// Score threshold the pseudo-labels were filtered with (students only).
    pub pseudo_threshold: Option<f64>,
    pub status: String,
}

impl ExperimentRecord {
    pub fn validate(&self) -> Result<()> {
        for v in [self.source_ap, self.target_ap, self.source_aph, self.target_aph] {
            if !(0.0..=100.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{}: AP {v} outside [0, 100]", self.run_id)));
            }
        }
        if self.role == Role::Student && self.teacher_ref.is_empty() {
            return Err(Error::InvalidConfig(format!("{}: student without teacher", self.run_id)));
        }
        Ok(())
    }
}

/// Read experiment records from CSV.
pub fn read_records(path: &std::path::Path) -> Result<Vec<ExperimentRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Teacher/student points `(source AP, target AP)` for the ANCOVA test.
pub fn ancova_points(records: &[ExperimentRecord]) -> Vec<AncovaPoint> {
    records
        .iter()
        .filter(|r| r.status == "ok")
        .filter_map(|r| {
            let group = match r.role {
                Role::Teacher => 0,
                Role::Student => 1,
                Role::Baseline => return None,
            };
            Some(AncovaPoint {
                x: r.source_ap,
                y: r.target_ap,
                group,
            })
        })
        .collect()
}
