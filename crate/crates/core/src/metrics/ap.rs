//! Detection matching and precision/recall envelope integration.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geom::{bev_iou, heading_distance, Box7};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DetOutcome {
    TruePositive { gt: usize, heading_error: f64 },
    FalsePositive,
    /// Matched a ground truth below the Level-1 point floor.
    Ignored,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchedDet {
    pub score: f64,
    pub outcome: DetOutcome,
}

impl MatchedDet {
    /// Heading-accuracy weight in [0, 1]; zero for non-TPs.
    pub fn heading_weight(&self) -> f64 {
        match self.outcome {
            DetOutcome::TruePositive { heading_error, .. } => (1.0 - heading_error / PI).clamp(0.0, 1.0),
            _ => 0.0,
        }
    }

    pub fn is_tp(&self) -> bool {
        matches!(self.outcome, DetOutcome::TruePositive { .. })
    }
}

/// Match results for one frame and one class.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameMatch {
    pub dets: Vec<MatchedDet>,
    /// Level-1 ground truths in the frame.
    pub num_gt: usize,
    /// Indices of Level-1 ground truths no detection matched.
    pub unmatched_gt: Vec<usize>,
}

/// Greedy matching in descending score order.
///
/// `gt_points[i]` is the number of points inside `gts[i]`; ground truths
/// with fewer than `min_points` are dropped from the gt set and detections
/// that would match them are ignored.
pub fn match_detections(
    dets: &[Box7],
    gts: &[Box7],
    gt_points: &[usize],
    iou_threshold: f64,
    min_points: usize,
) -> FrameMatch {
    let level1: Vec<bool> = gts
        .iter()
        .enumerate()
        .map(|(i, _)| gt_points.get(i).copied().unwrap_or(usize::MAX) >= min_points)
        .collect();
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score_or_zero()
            .partial_cmp(&dets[a].score_or_zero())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut taken = vec![false; gts.len()];
    let mut out = Vec::with_capacity(dets.len());
    for i in order {
        let det = &dets[i];
        let mut best: Option<(usize, f64)> = None;
        let mut hits_hard = false;
        for (g, gt) in gts.iter().enumerate() {
            let iou = bev_iou(det, gt);
            if iou < iou_threshold {
                continue;
            }
            if !level1[g] {
                hits_hard = true;
                continue;
            }
            if taken[g] {
                continue;
            }
            if best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        let outcome = match best {
            Some((g, _)) => {
                taken[g] = true;
                DetOutcome::TruePositive {
                    gt: g,
                    heading_error: heading_distance(det.heading, gts[g].heading),
                }
            }
            None if hits_hard => DetOutcome::Ignored,
            None => DetOutcome::FalsePositive,
        };
        out.push(MatchedDet {
            score: det.score_or_zero(),
            outcome,
        });
    }
    FrameMatch {
        dets: out,
        num_gt: level1.iter().filter(|&&l| l).count(),
        unmatched_gt: (0..gts.len()).filter(|&g| level1[g] && !taken[g]).collect(),
    }
}

/// Precision/recall points of the score sweep, one per distinct score,
/// in descending score order. Recall counts true positives; precision
/// uses `weight` as each detection's true-positive mass.
pub fn pr_curve(frames: &[FrameMatch], weight: impl Fn(&MatchedDet) -> f64) -> Result<Vec<(f64, f64)>> {
    let num_gt: usize = frames.iter().map(|f| f.num_gt).sum();
    if num_gt == 0 {
        return Err(Error::NoGroundTruth);
    }
    let mut dets: Vec<&MatchedDet> = frames
        .iter()
        .flat_map(|f| &f.dets)
        .filter(|d| d.outcome != DetOutcome::Ignored)
        .collect();
    dets.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(std::cmp::Ordering::Equal));
    let mut points = Vec::new();
    let mut mass = 0.0;
    let mut tps = 0usize;
    let mut count = 0usize;
    let mut i = 0;
    while i < dets.len() {
        let s = dets[i].score;
        while i < dets.len() && dets[i].score == s {
            mass += weight(dets[i]);
            tps += dets[i].is_tp() as usize;
            count += 1;
            i += 1;
        }
        points.push((tps as f64 / num_gt as f64, mass / count as f64));
    }
    Ok(points)
}

/// Area under the monotone precision envelope, as a percentage.
pub fn envelope_area(points: &[(f64, f64)]) -> f64 {
    let mut env = vec![0.0; points.len()];
    let mut running: f64 = 0.0;
    for (k, &(_, p)) in points.iter().enumerate().rev() {
        running = running.max(p);
        env[k] = running;
    }
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for (k, &(r, _)) in points.iter().enumerate() {
        if r > prev_recall {
            area += (r - prev_recall) * env[k];
            prev_recall = r;
        }
    }
    100.0 * area
}

/// Level-1 average precision in [0, 100].
pub fn average_precision(frames: &[FrameMatch]) -> Result<f64> {
    Ok(envelope_area(&pr_curve(frames, |d| if d.is_tp() { 1.0 } else { 0.0 })?))
}

/// Heading-weighted average precision in [0, 100]; never exceeds AP.
pub fn average_precision_heading(frames: &[FrameMatch]) -> Result<f64> {
    Ok(envelope_area(&pr_curve(frames, MatchedDet::heading_weight)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::ObjectClass;

    fn gt(cx: f64, heading: f64) -> Box7 {
        Box7::new(cx, 0.0, 0.0, 4.0, 2.0, 1.5, heading, ObjectClass::Vehicle)
    }

    fn tp(score: f64, err: f64) -> MatchedDet {
        MatchedDet {
            score,
            outcome: DetOutcome::TruePositive { gt: 0, heading_error: err },
        }
    }

    fn fp(score: f64) -> MatchedDet {
        MatchedDet {
            score,
            outcome: DetOutcome::FalsePositive,
        }
    }

    fn frame(dets: Vec<MatchedDet>, num_gt: usize) -> FrameMatch {
        FrameMatch {
            dets,
            num_gt,
            unmatched_gt: vec![],
        }
    }

    #[test]
    fn single_tp() {
        let g = gt(0.0, 0.0);
        let d = gt(0.1, 0.0).with_score(0.9);
        let m = match_detections(&[d], &[g], &[100], 0.7, 5);
        assert!(m.dets[0].is_tp());
        assert!(m.unmatched_gt.is_empty());
    }

    #[test]
    fn duplicate_detection_is_fp() {
        let g = gt(0.0, 0.0);
        let m = match_detections(
            &[gt(0.0, 0.0).with_score(0.8), gt(0.05, 0.0).with_score(0.9)],
            &[g],
            &[100],
            0.7,
            5,
        );
        // Output is in visiting (descending score) order.
        assert_eq!(m.dets[0].score, 0.9);
        assert!(m.dets[0].is_tp());
        assert_eq!(m.dets[1].outcome, DetOutcome::FalsePositive);
    }

    #[test]
    fn sparse_gt_is_ignored() {
        let g = gt(0.0, 0.0);
        let m = match_detections(&[g.with_score(0.9)], &[g], &[3], 0.7, 5);
        assert_eq!(m.dets[0].outcome, DetOutcome::Ignored);
        assert_eq!(m.num_gt, 0);
    }

    #[test]
    fn perfect_detector() {
        let f = frame(vec![tp(0.9, 0.0), tp(0.8, 0.0)], 2);
        assert_eq!(average_precision(&[f]).unwrap(), 100.0);
    }

    #[test]
    fn fp_before_tp_halves() {
        let f = frame(vec![fp(0.9), tp(0.8, 0.0)], 1);
        assert_eq!(average_precision(&[f]).unwrap(), 50.0);
    }

    #[test]
    fn tp_before_fp_is_full() {
        let f = frame(vec![tp(0.9, 0.0), fp(0.8)], 1);
        assert_eq!(average_precision(&[f]).unwrap(), 100.0);
    }

    #[test]
    fn heading_weights() {
        let exact = frame(vec![tp(0.9, 0.0), fp(0.5)], 1);
        assert_eq!(
            average_precision_heading(std::slice::from_ref(&exact)).unwrap(),
            average_precision(&[exact]).unwrap()
        );
        assert_eq!(average_precision_heading(&[frame(vec![tp(0.9, PI)], 1)]).unwrap(), 0.0);
        assert_eq!(average_precision_heading(&[frame(vec![tp(0.9, PI / 2.0)], 1)]).unwrap(), 50.0);
    }

    #[test]
    fn no_gt_is_error() {
        assert!(matches!(
            average_precision(&[frame(vec![fp(0.3)], 0)]),
            Err(Error::NoGroundTruth)
        ));
    }

    #[test]
    fn missed_gt_caps_recall() {
        let f = frame(vec![tp(0.9, 0.0)], 2);
        assert_eq!(average_precision(&[f]).unwrap(), 50.0);
    }
}
