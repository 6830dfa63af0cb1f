//! Teacher -> pseudo-label -> student pipeline and its variants (soft
//! labels, ignore band, repeated rounds).

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Box7, ObjectClass};
use crate::net::anchors::logit;
use crate::net::{detect, DetectorParams, InferenceConfig};
use crate::store::{Lineage, PseudoLabelSet, TrainPool};
use crate::synth::RunSegment;
use crate::trainer::{self, hard_targets, AnchorLabel, ClsTarget, FrameTargets, TrainConfig, TrainOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SoftLabelMode {
    #[default]
    Hard,
    ScoreTarget,
    LogitTarget,
}

impl SoftLabelMode {
    pub fn name(self) -> &'static str {
        match self {
            SoftLabelMode::Hard => "hard",
            SoftLabelMode::ScoreTarget => "score",
            SoftLabelMode::LogitTarget => "logit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterPolicy {
    pub score_threshold: f64,
    /// Replaces `score_threshold` for pedestrians when set.
    pub pedestrian_threshold: Option<f64>,
    pub soft_label_mode: SoftLabelMode,
    pub ignore_band: (f64, f64),
}

impl Default for FilterPolicy {
    fn default() -> Self {
        Self {
            score_threshold: 0.5,
            pedestrian_threshold: None,
            soft_label_mode: SoftLabelMode::Hard,
            ignore_band: (0.5, 0.5),
        }
    }
}

impl FilterPolicy {
    pub fn threshold(&self, class: ObjectClass) -> f64 {
        match class {
            ObjectClass::Pedestrian => self.pedestrian_threshold.unwrap_or(self.score_threshold),
            ObjectClass::Vehicle => self.score_threshold,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        let (lo, hi) = self.ignore_band;
        if !unit(self.score_threshold) || !self.pedestrian_threshold.is_none_or(unit) || !unit(lo) || !unit(hi) || lo > hi {
            return Err(Error::InvalidConfig(format!("bad filter policy {self:?}")));
        }
        Ok(())
    }
}

/// Keep boxes scoring at least the class threshold.
pub fn filter_boxes(boxes: &[Box7], policy: &FilterPolicy) -> Vec<Box7> {
    boxes
        .iter()
        .filter(|b| b.score.is_some_and(|s| s >= policy.threshold(b.class)))
        .copied()
        .collect()
}

/// Run the teacher over every frame of `unlabeled`: decode, NMS, then
/// score filtering.
pub fn pseudo_label(
    teacher: &DetectorParams,
    teacher_id: &str,
    unlabeled: &[RunSegment],
    policy: &FilterPolicy,
    nms_iou: f64,
) -> Result<PseudoLabelSet> {
    policy.validate()?;
    let threshold = policy.threshold(teacher.config.class);
    let inference = InferenceConfig {
        score_floor: InferenceConfig::default().score_floor.min(threshold),
        nms_iou,
    };
    let anchors = teacher.config.anchor_boxes();
    let mut set = PseudoLabelSet::new(teacher_id, threshold);
    for seg in unlabeled {
        for (t, frame) in seg.frames.iter().enumerate() {
            let dets = detect(teacher, &anchors, seg, t, &inference)?;
            set.frames
                .insert((seg.segment_id.clone(), frame.timestamp_index), filter_boxes(&dets, policy));
        }
    }
    Ok(set)
}

/// Pick the pseudo-label score threshold with the best detection F1 on
/// labeled validation frames: detections are greedily matched to ground
/// truth of the teacher's class (descending score, IoU ≥ `match_iou`).
/// Ties go to the higher threshold.
pub fn select_score_threshold(
    teacher: &DetectorParams,
    validation: &[RunSegment],
    candidates: &[f64],
    match_iou: f64,
    nms_iou: f64,
) -> Result<f64> {
    let lowest = candidates.iter().copied().fold(f64::INFINITY, f64::min);
    if candidates.is_empty() || !candidates.iter().all(|c| (0.0..=1.0).contains(c)) {
        return Err(Error::InvalidConfig("threshold candidates must be non-empty and within [0, 1]".into()));
    }
    let class = teacher.config.class;
    let inference = InferenceConfig {
        score_floor: lowest,
        nms_iou,
    };
    let anchors = teacher.config.anchor_boxes();
    // (score, is true positive) for every detection; total ground truth.
    let mut scored: Vec<(f64, bool)> = Vec::new();
    let mut num_gt = 0usize;
    for seg in validation {
        for (t, frame) in seg.frames.iter().enumerate() {
            let gts: Vec<&Box7> = frame.gt_boxes.iter().filter(|b| b.class == class).collect();
            num_gt += gts.len();
            let dets = detect(teacher, &anchors, seg, t, &inference)?;
            let mut taken = vec![false; gts.len()];
            for d in dets.iter().filter(|d| d.class == class) {
                let best = gts
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !taken[*i])
                    .map(|(i, g)| (i, crate::geom::bev_iou(d, g)))
                    .filter(|&(_, iou)| iou >= match_iou)
                    .max_by(|a, b| a.1.total_cmp(&b.1));
                if let Some((i, _)) = best {
                    taken[i] = true;
                }
                scored.push((d.score.unwrap_or(0.0), best.is_some()));
            }
        }
    }
    let mut best = (f64::NEG_INFINITY, candidates[0]);
    for &th in candidates {
        let kept = scored.iter().filter(|(s, _)| *s >= th);
        let (n, tp) = kept.fold((0usize, 0usize), |(n, tp), (_, hit)| (n + 1, tp + *hit as usize));
        let f1 = if n + num_gt == 0 { 0.0 } else { 2.0 * tp as f64 / (n + num_gt) as f64 };
        if f1 > best.0 || (f1 == best.0 && th > best.1) {
            best = (f1, th);
        }
    }
    Ok(best.1)
}

/// Classification targets for a pseudo-labeled frame. FG anchors take the
/// teacher's score (or logit); every background anchor is assigned 1, the
/// construction this variant is defined by.
pub fn soft_targets(labels: &[AnchorLabel], boxes: &[Box7], anchors: &[Box7], mode: SoftLabelMode) -> FrameTargets {
    let mut t = hard_targets(labels, boxes, anchors);
    if mode == SoftLabelMode::Hard {
        return t;
    }
    for (a, l) in labels.iter().enumerate() {
        t.cls[a] = match (*l, mode) {
            (AnchorLabel::Ignore, _) => ClsTarget::Ignore,
            (AnchorLabel::Foreground(g), SoftLabelMode::ScoreTarget) => ClsTarget::Focal(boxes[g].score.unwrap_or(1.0)),
            (AnchorLabel::Foreground(g), _) => ClsTarget::Logit(logit(boxes[g].score.unwrap_or(1.0))),
            (AnchorLabel::Background, SoftLabelMode::ScoreTarget) => ClsTarget::Focal(1.0),
            (AnchorLabel::Background, _) => ClsTarget::Logit(1.0),
        };
    }
    t
}

/// Anchors matched to a pseudo box whose score lies in the closed band
/// become IGNORE. A zero-width band is disabled.
pub fn apply_ignore_band(labels: &[AnchorLabel], boxes: &[Box7], band: (f64, f64)) -> Vec<AnchorLabel> {
    let (lo, hi) = band;
    if lo >= hi {
        return labels.to_vec();
    }
    labels
        .iter()
        .map(|&l| match l {
            AnchorLabel::Foreground(g) if boxes[g].score.is_some_and(|s| s >= lo && s <= hi) => AnchorLabel::Ignore,
            other => other,
        })
        .collect()
}

/// Assemble the student's training pool and check its lineage: labeled
/// frames come only from `labeled`, pseudo frames carry no ground truth.
pub fn student_pool(labeled: &[RunSegment], unlabeled: &[RunSegment], pseudo: &PseudoLabelSet) -> Result<TrainPool> {
    let labeled_ids: BTreeSet<&str> = labeled.iter().map(|s| s.segment_id.as_str()).collect();
    if let Some(s) = unlabeled.iter().find(|s| labeled_ids.contains(s.segment_id.as_str())) {
        return Err(Error::InvalidConfig(format!("segment '{}' is both labeled and unlabeled", s.segment_id)));
    }
    let mut pool = TrainPool::labeled_only(labeled);
    pool.add_pseudo(unlabeled, pseudo);
    for f in &pool.labeled {
        assert!(f.lineage == Lineage::Labeled && labeled_ids.contains(pool.segment_of(f).segment_id.as_str()));
    }
    for f in &pool.pseudo {
        assert!(matches!(&f.lineage, Lineage::Pseudo { teacher_id } if *teacher_id == pseudo.teacher_id));
        assert!(!pool.segment_of(f).has_labels(), "pseudo frame exposes ground truth");
    }
    Ok(pool)
}

#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub teacher_id: String,
    pub student_id: String,
    pub pseudo: PseudoLabelSet,
    pub student: TrainOutcome,
}

/// Stages 2 and 3: pseudo-label `unlabeled` with the teacher, then train a
/// fresh student on the labeled split mixed with the pseudo-labels.
#[allow(clippy::too_many_arguments)]
pub fn distill_round(
    teacher: &DetectorParams,
    teacher_id: &str,
    student_id: &str,
    labeled: &[RunSegment],
    unlabeled: &[RunSegment],
    student_cfg: &TrainConfig,
    policy: &FilterPolicy,
    validation: &[RunSegment],
    seed_value: u64,
) -> Result<RoundOutcome> {
    let unlabeled: Vec<RunSegment> = unlabeled.iter().map(RunSegment::strip_labels).collect();
    let pseudo = pseudo_label(teacher, teacher_id, &unlabeled, policy, student_cfg.inference.nms_iou)?;
    let pool = student_pool(labeled, &unlabeled, &pseudo)?;
    let mut cfg = student_cfg.clone();
    cfg.pseudo.mode = policy.soft_label_mode;
    cfg.pseudo.ignore_band = policy.ignore_band;
    let student = trainer::train(&cfg, &pool, validation, seed_value)?;
    Ok(RoundOutcome {
        teacher_id: teacher_id.to_string(),
        student_id: student_id.to_string(),
        pseudo,
        student,
    })
}

/// `rounds` successive distillations; each round's best student becomes
/// the next round's teacher. Student ids are `{base_id}-r{i}`.
#[allow(clippy::too_many_arguments)]
pub fn iterate(
    rounds: usize,
    teacher: &DetectorParams,
    teacher_id: &str,
    base_id: &str,
    labeled: &[RunSegment],
    unlabeled: &[RunSegment],
    student_cfg: &TrainConfig,
    policy: &FilterPolicy,
    validation: &[RunSegment],
    seed_value: u64,
) -> Result<Vec<RoundOutcome>> {
    if rounds == 0 {
        return Err(Error::InvalidConfig("at least one distillation round required".into()));
    }
    let mut out: Vec<RoundOutcome> = Vec::with_capacity(rounds);
    for i in 1..=rounds {
        let (t, tid) = match out.last() {
            Some(prev) => (&prev.student.best_params, prev.student_id.clone()),
            None => (teacher, teacher_id.to_string()),
        };
        let sid = if rounds == 1 { base_id.to_string() } else { format!("{base_id}-r{i}") };
        let r = distill_round(t, &tid, &sid, labeled, unlabeled, student_cfg, policy, validation, seed_value)?;
        out.push(r);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scored(score: f64, class: ObjectClass) -> Box7 {
        Box7::new(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, class).with_score(score)
    }

    #[test]
    fn threshold_filtering() {
        let p = FilterPolicy::default();
        let kept = filter_boxes(&[scored(0.7, ObjectClass::Vehicle), scored(0.4, ObjectClass::Vehicle)], &p);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].score, Some(0.7));
        let p = FilterPolicy {
            pedestrian_threshold: Some(0.3),
            ..p
        };
        let kept = filter_boxes(&[scored(0.35, ObjectClass::Pedestrian), scored(0.2, ObjectClass::Pedestrian)], &p);
        assert_eq!(kept.len(), 1);
        let strict = FilterPolicy {
            score_threshold: 1.0,
            ..FilterPolicy::default()
        };
        assert!(filter_boxes(&[scored(0.999999, ObjectClass::Vehicle)], &strict).is_empty());
    }

    #[test]
    fn ignore_band_cases() {
        let boxes = [scored(0.6, ObjectClass::Vehicle), scored(0.8, ObjectClass::Vehicle)];
        let labels = vec![
            AnchorLabel::Foreground(0),
            AnchorLabel::Foreground(1),
            AnchorLabel::Background,
        ];
        assert_eq!(apply_ignore_band(&labels, &boxes, (0.5, 0.5)), labels);
        assert_eq!(
            apply_ignore_band(&labels, &boxes, (0.5, 0.7)),
            vec![AnchorLabel::Ignore, AnchorLabel::Foreground(1), AnchorLabel::Background]
        );
        assert_eq!(
            apply_ignore_band(&labels, &boxes, (0.0, 1.0)),
            vec![AnchorLabel::Ignore, AnchorLabel::Ignore, AnchorLabel::Background]
        );
    }

    #[test]
    fn soft_target_values() {
        let b = Box7::new(0.0, 0.0, 0.0, 4.725, 2.079, 1.768, 0.0, ObjectClass::Vehicle).with_score(0.8);
        let anchors = [b, b];
        let labels = [AnchorLabel::Foreground(0), AnchorLabel::Background];
        let hard = soft_targets(&labels, &[b], &anchors, SoftLabelMode::Hard);
        assert_eq!(hard.cls, vec![ClsTarget::Focal(1.0), ClsTarget::Focal(0.0)]);
        let score = soft_targets(&labels, &[b], &anchors, SoftLabelMode::ScoreTarget);
        assert_eq!(score.cls, vec![ClsTarget::Focal(0.8), ClsTarget::Focal(1.0)]);
        let lg = soft_targets(&labels, &[b], &anchors, SoftLabelMode::LogitTarget);
        assert_eq!(lg.cls[1], ClsTarget::Logit(1.0));
        assert!(matches!(lg.cls[0], ClsTarget::Logit(v) if (v - (0.8f64 / 0.2).ln()).abs() < 1e-12));
    }
}
