//! Multi-frame point cloud assembly in the newest frame's coordinates.

use crate::error::{Error, Result};
use crate::geom::Point3;
use crate::synth::{Frame, RunSegment};

/// A frame together with the segment it belongs to.
#[derive(Debug, Clone, Copy)]
pub struct FrameRef<'a> {
    pub segment_id: &'a str,
    pub frame: &'a Frame,
}

/// Points with a per-point frame-age tag (0 for the newest frame).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaggedCloud {
    pub points: Vec<Point3>,
    pub ages: Vec<f64>,
}

impl TaggedCloud {
    pub fn single(points: &[Point3]) -> Self {
        Self {
            points: points.to_vec(),
            ages: vec![0.0; points.len()],
        }
    }
}

/// Merge frames (oldest first, newest last) into the newest frame's ego
/// coordinates. Each point is tagged with the age of its source frame in
/// timestamps.
pub fn assemble_multiframe(frames: &[FrameRef<'_>]) -> Result<TaggedCloud> {
    let Some(newest) = frames.last() else {
        return Ok(TaggedCloud::default());
    };
    if let Some(other) = frames.iter().find(|f| f.segment_id != newest.segment_id) {
        return Err(Error::MixedSegments {
            first: newest.segment_id.to_string(),
            other: other.segment_id.to_string(),
        });
    }
    let to_newest = newest.frame.pose.inverse();
    let total: usize = frames.iter().map(|f| f.frame.points.len()).sum();
    let mut cloud = TaggedCloud {
        points: Vec::with_capacity(total),
        ages: Vec::with_capacity(total),
    };
    for f in frames {
        let age = newest.frame.timestamp_index.saturating_sub(f.frame.timestamp_index) as f64;
        if std::ptr::eq(f.frame, newest.frame) {
            cloud.points.extend_from_slice(&f.frame.points);
        } else {
            let transform = to_newest.compose(&f.frame.pose);
            cloud.points.extend(f.frame.points.iter().map(|p| transform.apply_point(p)));
        }
        cloud.ages.extend(std::iter::repeat_n(age, f.frame.points.len()));
    }
    Ok(cloud)
}

/// The `num_frames` frames ending at `newest` (oldest first). Near the
/// start of a segment the window is padded by repeating frame 0.
pub fn frame_window<'a>(segment: &'a RunSegment, newest: usize, num_frames: usize) -> Vec<FrameRef<'a>> {
    let n = num_frames.max(1);
    (0..n)
        .rev()
        .map(|back| {
            let idx = newest.saturating_sub(back);
            FrameRef {
                segment_id: &segment.segment_id,
                frame: &segment.frames[idx],
            }
        })
        .collect()
}

/// Convenience: assemble the window ending at `newest`.
pub fn segment_cloud(segment: &RunSegment, newest: usize, num_frames: usize) -> TaggedCloud {
    assemble_multiframe(&frame_window(segment, newest, num_frames))
        .expect("window frames share a segment")
}
