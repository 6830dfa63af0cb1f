//! Dataset persistence, segment-level splits, pseudo-label files and the
//! labeled:pseudo-labeled training stream.
//!
//! Directory layout:
//! ```text
//! <root>/<dataset>/manifest            JSON DatasetManifest
//! <root>/<dataset>/segments/<id>.seg   one binary record per segment
//! <root>/pseudo/<teacher_id>.plb       pseudo-label set
//! ```
//!
//! Segment record (little-endian):
//! ```text
//! magic "PLSEG\0\0\0", u32 version
//! str segment_id, str domain, u8 labeled, u32 frame count
//! per frame: u32 timestamp, f64 x3 pose, u32 n points, f64 x4 per point,
//!            u32 n boxes, per box f64 x7 + u8 class + u8 has_score [+ f64]
//! ```
//! Strings are a u16 length followed by UTF-8 bytes.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{Reader, Writer, BOX_BYTES};
use crate::error::{Error, Result};
use crate::geom::{Box7, Point3, Pose2};
use crate::seed;
use crate::synth::{Frame, RunSegment};

const SEG_MAGIC: &[u8; 8] = b"PLSEG\0\0\0";
const PLB_MAGIC: &[u8; 8] = b"PLPSL\0\0\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentEntry {
    pub segment_id: String,
    pub domain: String,
    pub labeled: bool,
    /// Relative to the dataset directory.
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub split: Split,
    pub segments: Vec<SegmentEntry>,
}

impl DatasetManifest {
    pub fn segment_ids(&self) -> Vec<String> {
        self.segments.iter().map(|s| s.segment_id.clone()).collect()
    }

    fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.segments {
            if !seen.insert(&s.segment_id) {
                return Err(Error::InvalidConfig(format!(
                    "dataset '{}': duplicate segment id '{}'",
                    self.name, s.segment_id
                )));
            }
        }
        Ok(())
    }
}

fn segment_file_name(id: &str) -> String {
    format!("segments/{id}.seg")
}

/// Encode a segment. Unlabeled segments are stored without boxes.
pub fn encode_segment(segment: &RunSegment, labeled: bool) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(SEG_MAGIC);
    w.u32(VERSION);
    w.str(&segment.segment_id);
    w.str(&segment.domain);
    w.u8(labeled as u8);
    w.u32(segment.frames.len() as u32);
    for f in &segment.frames {
        w.u32(f.timestamp_index);
        w.f64(f.pose.tx);
        w.f64(f.pose.ty);
        w.f64(f.pose.yaw);
        w.u32(f.points.len() as u32);
        for p in &f.points {
            for v in [p.x, p.y, p.z, p.intensity] {
                w.f64(v);
            }
        }
        let boxes: &[Box7] = if labeled { &f.gt_boxes } else { &[] };
        w.u32(boxes.len() as u32);
        for b in boxes {
            w.box7(b);
        }
    }
    w.buf
}

/// Decode a segment record; returns the segment and its labeled flag.
pub fn decode_segment(buf: &[u8], context: &str) -> Result<(RunSegment, bool)> {
    let mut r = Reader::new(buf, context);
    r.magic(SEG_MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.err(format!("unsupported version {version}")));
    }
    let segment_id = r.str()?;
    r.context = segment_id.clone();
    let domain = r.str()?;
    let labeled = match r.u8()? {
        0 => false,
        1 => true,
        t => return Err(r.err(format!("bad labeled flag {t}"))),
    };
    let nframes = r.count(36)?;
    let mut frames = Vec::with_capacity(nframes);
    for _ in 0..nframes {
        let timestamp_index = r.u32()?;
        let pose = Pose2 {
            tx: r.f64()?,
            ty: r.f64()?,
            yaw: r.f64()?,
        };
        let npts = r.count(32)?;
        let mut points = Vec::with_capacity(npts);
        for _ in 0..npts {
            points.push(Point3 {
                x: r.f64()?,
                y: r.f64()?,
                z: r.f64()?,
                intensity: r.f64()?,
            });
        }
        let nboxes = r.count(BOX_BYTES)?;
        if nboxes > 0 && !labeled {
            return Err(r.err("unlabeled segment carries boxes"));
        }
        let mut gt_boxes = Vec::with_capacity(nboxes);
        for _ in 0..nboxes {
            gt_boxes.push(r.box7()?);
        }
        frames.push(Frame {
            points,
            gt_boxes,
            pose,
            timestamp_index,
        });
    }
    r.finish()?;
    Ok((
        RunSegment {
            segment_id,
            domain,
            frames,
        },
        labeled,
    ))
}

/// Write via a temporary file and rename, creating parent directories.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn dataset_dir(root: &Path, name: &str) -> PathBuf {
    root.join(name)
}

/// Write segments under `<root>/<name>/`. `labeled[i]` says whether segment
/// `i` keeps its ground truth.
pub fn write_dataset(
    root: &Path,
    name: &str,
    split: Split,
    segments: &[RunSegment],
    labeled: &[bool],
) -> Result<DatasetManifest> {
    if labeled.len() != segments.len() {
        return Err(Error::InvalidConfig("one labeled flag per segment required".into()));
    }
    let dir = dataset_dir(root, name);
    let manifest = DatasetManifest {
        name: name.to_string(),
        split,
        segments: segments
            .iter()
            .zip(labeled)
            .map(|(s, &l)| SegmentEntry {
                segment_id: s.segment_id.clone(),
                domain: s.domain.clone(),
                labeled: l,
                file: segment_file_name(&s.segment_id),
            })
            .collect(),
    };
    manifest.validate()?;
    for (seg, entry) in segments.iter().zip(&manifest.segments) {
        write_atomic(&dir.join(&entry.file), &encode_segment(seg, entry.labeled))?;
    }
    write_atomic(&dir.join("manifest"), &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_manifest(root: &Path, name: &str) -> Result<DatasetManifest> {
    let path = dataset_dir(root, name).join("manifest");
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let m: DatasetManifest = serde_json::from_slice(&bytes)?;
    m.validate()?;
    Ok(m)
}

/// Read a dataset back. Any malformed segment fails the whole read.
pub fn read_dataset(root: &Path, name: &str) -> Result<(DatasetManifest, Vec<RunSegment>)> {
    let manifest = read_manifest(root, name)?;
    let dir = dataset_dir(root, name);
    let mut segments = Vec::with_capacity(manifest.segments.len());
    for entry in &manifest.segments {
        let path = dir.join(&entry.file);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let (seg, labeled) = decode_segment(&bytes, &entry.segment_id)?;
        if seg.segment_id != entry.segment_id || labeled != entry.labeled || seg.domain != entry.domain {
            return Err(Error::Parse {
                segment_id: entry.segment_id.clone(),
                offset: 0,
                message: "segment header disagrees with manifest".into(),
            });
        }
        segments.push(seg);
    }
    Ok((manifest, segments))
}

/// Line-per-frame JSON export for inspection.
pub fn export_jsonl(segments: &[RunSegment], out: &mut impl Write) -> Result<()> {
    #[derive(Serialize)]
    struct Line<'a> {
        segment_id: &'a str,
        domain: &'a str,
        frame: &'a Frame,
    }
    for s in segments {
        for f in &s.frames {
            let line = Line {
                segment_id: &s.segment_id,
                domain: &s.domain,
                frame: f,
            };
            serde_json::to_writer(&mut *out, &line)?;
            out.write_all(b"\n").map_err(|e| Error::io("<jsonl>", e))?;
        }
    }
    Ok(())
}

/// Seeded whole-segment split: `round(fraction * n)` ids are labeled.
/// Both returned lists keep the input order.
pub fn sample_labeled_split(ids: &[String], fraction: f64, seed_value: u64) -> Result<(Vec<String>, Vec<String>)> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!("labeled fraction {fraction} not in (0, 1]")));
    }
    let k = (fraction * ids.len() as f64).round() as usize;
    if k == 0 {
        return Err(Error::EmptyLabeledSplit {
            fraction,
            total: ids.len(),
        });
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.shuffle(&mut seed::rng(seed::derive(seed_value, "split")));
    let mut chosen = vec![false; ids.len()];
    for &i in &order[..k] {
        chosen[i] = true;
    }
    let (mut lab, mut unl) = (Vec::with_capacity(k), Vec::with_capacity(ids.len() - k));
    for (id, c) in ids.iter().zip(chosen) {
        if c { &mut lab } else { &mut unl }.push(id.clone());
    }
    Ok((lab, unl))
}

/// Teacher detections kept as training targets, keyed by
/// `(segment_id, timestamp_index)`. Every pseudo-labeled frame has an entry,
/// possibly empty.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelSet {
    pub teacher_id: String,
    pub score_threshold_used: f64,
    pub frames: BTreeMap<(String, u32), Vec<Box7>>,
}

impl PseudoLabelSet {
    pub fn new(teacher_id: impl Into<String>, score_threshold_used: f64) -> Self {
        Self {
            teacher_id: teacher_id.into(),
            score_threshold_used,
            frames: BTreeMap::new(),
        }
    }

    pub fn num_boxes(&self) -> usize {
        self.frames.values().map(Vec::len).sum()
    }

    pub fn get(&self, segment_id: &str, timestamp: u32) -> Option<&[Box7]> {
        self.frames.get(&(segment_id.to_string(), timestamp)).map(Vec::as_slice)
    }

    /// Every box must carry a score at or above the threshold.
    pub fn validate(&self) -> Result<()> {
        for ((seg, ts), boxes) in &self.frames {
            for b in boxes {
                match b.score {
                    Some(s) if s >= self.score_threshold_used => {}
                    _ => {
                        return Err(Error::InvalidConfig(format!(
                            "pseudo box in {seg}@{ts} has score {:?} below {}",
                            b.score, self.score_threshold_used
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(PLB_MAGIC);
        w.u32(VERSION);
        w.str(&self.teacher_id);
        w.f64(self.score_threshold_used);
        w.u32(self.frames.len() as u32);
        for ((seg, ts), boxes) in &self.frames {
            w.str(seg);
            w.u32(*ts);
            w.u32(boxes.len() as u32);
            for b in boxes {
                w.box7(b);
            }
        }
        w.buf
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::new(buf, "pseudo-labels");
        r.magic(PLB_MAGIC)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.err(format!("unsupported version {version}")));
        }
        let teacher_id = r.str()?;
        let score_threshold_used = r.f64()?;
        let n = r.count(10)?;
        let mut frames = BTreeMap::new();
        for _ in 0..n {
            let seg = r.str()?;
            let ts = r.u32()?;
            let nb = r.count(BOX_BYTES)?;
            let mut boxes = Vec::with_capacity(nb);
            for _ in 0..nb {
                let b = r.box7()?;
                if !b.score.is_some_and(|s| s >= score_threshold_used) {
                    return Err(r.err("pseudo box below the recorded threshold"));
                }
                boxes.push(b);
            }
            frames.insert((seg, ts), boxes);
        }
        r.finish()?;
        Ok(Self {
            teacher_id,
            score_threshold_used,
            frames,
        })
    }

    pub fn path(root: &Path, teacher_id: &str) -> PathBuf {
        root.join("pseudo").join(format!("{teacher_id}.plb"))
    }

    pub fn save(&self, root: &Path) -> Result<PathBuf> {
        let path = Self::path(root, &self.teacher_id);
        self.save_to(&path)?;
        Ok(path)
    }

    pub fn save_to(&self, path: &Path) -> Result<()> {
        self.validate()?;
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Labeled-to-pseudo-labeled frame ratio `a:b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MixRatio {
    pub labeled: u32,
    pub pseudo: u32,
}

impl MixRatio {
    pub fn new(labeled: u32, pseudo: u32) -> Result<Self> {
        if labeled == 0 || pseudo == 0 {
            return Err(Error::InvalidConfig(format!("mix ratio {labeled}:{pseudo} has a zero component")));
        }
        Ok(Self { labeled, pseudo })
    }

    pub fn period(&self) -> u64 {
        self.labeled as u64 + self.pseudo as u64
    }

    /// Whether slot `i` of the interleave period is labeled. Labeled slots
    /// are spread evenly (Bresenham), so 1:1 alternates.
    fn is_labeled_slot(&self, i: u64) -> bool {
        let (a, p) = (self.labeled as u64, self.period());
        (i + 1) * a / p > i * a / p
    }
}

impl Default for MixRatio {
    fn default() -> Self {
        Self { labeled: 1, pseudo: 1 }
    }
}

impl fmt::Display for MixRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.labeled, self.pseudo)
    }
}

impl FromStr for MixRatio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("ratio '{s}' is not of the form a:b"));
        let (a, b) = s.split_once(':').ok_or_else(bad)?;
        MixRatio::new(a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Lineage {
    Labeled,
    Pseudo { teacher_id: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Labeled,
    Pseudo,
}

/// One draw from a [`MixStream`]: an index into the named source's frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MixItem {
    pub source: Source,
    pub index: usize,
}

/// Epoch-shuffled draws from one source.
#[derive(Debug, Clone)]
struct Shuffler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
}

impl Shuffler {
    fn new(len: usize, seed_value: u64) -> Self {
        Self {
            rng: seed::rng(seed_value),
            order: (0..len).collect(),
            pos: len,
        }
    }

    fn next(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

/// Infinite deterministic interleaving of labeled and pseudo-labeled frames.
#[derive(Debug, Clone)]
pub struct MixStream {
    ratio: Option<MixRatio>,
    labeled: Shuffler,
    pseudo: Option<Shuffler>,
    step: u64,
}

impl MixStream {
    /// With `num_pseudo == 0` the stream is the labeled source alone.
    pub fn new(num_labeled: usize, num_pseudo: usize, ratio: MixRatio, seed_value: u64) -> Result<Self> {
        MixRatio::new(ratio.labeled, ratio.pseudo)?;
        if num_labeled == 0 {
            return Err(Error::EmptyDataset);
        }
        Ok(Self {
            ratio: (num_pseudo > 0).then_some(ratio),
            labeled: Shuffler::new(num_labeled, seed::derive(seed_value, "mix-labeled")),
            pseudo: (num_pseudo > 0).then(|| Shuffler::new(num_pseudo, seed::derive(seed_value, "mix-pseudo"))),
            step: 0,
        })
    }
}

impl Iterator for MixStream {
    type Item = MixItem;

    fn next(&mut self) -> Option<MixItem> {
        let slot = self.step;
        self.step += 1;
        let item = match (self.ratio, self.pseudo.as_mut()) {
            (Some(r), Some(p)) if !r.is_labeled_slot(slot % r.period()) => MixItem {
                source: Source::Pseudo,
                index: p.next(),
            },
            _ => MixItem {
                source: Source::Labeled,
                index: self.labeled.next(),
            },
        };
        Some(item)
    }
}

/// A training frame reference with the boxes used as its targets.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolFrame {
    pub segment: usize,
    pub frame: usize,
    pub boxes: Vec<Box7>,
    pub lineage: Lineage,
}

/// Segments and frame lists backing a [`MixStream`]. Pseudo-labeled
/// segments are held without their ground truth.
#[derive(Debug, Clone, Default)]
pub struct TrainPool {
    pub segments: Vec<RunSegment>,
    pub labeled: Vec<PoolFrame>,
    pub pseudo: Vec<PoolFrame>,
}

impl TrainPool {
    pub fn labeled_only(labeled: &[RunSegment]) -> Self {
        let mut pool = TrainPool::default();
        for seg in labeled {
            let si = pool.segments.len();
            pool.segments.push(seg.clone());
            for (fi, f) in seg.frames.iter().enumerate() {
                pool.labeled.push(PoolFrame {
                    segment: si,
                    frame: fi,
                    boxes: f.gt_boxes.clone(),
                    lineage: Lineage::Labeled,
                });
            }
        }
        pool
    }

    /// Add the frames of `unlabeled` that `set` covers, with pseudo boxes
    /// replacing any ground truth.
    pub fn add_pseudo(&mut self, unlabeled: &[RunSegment], set: &PseudoLabelSet) {
        for seg in unlabeled {
            let si = self.segments.len();
            let mut added = false;
            for (fi, f) in seg.frames.iter().enumerate() {
                if let Some(boxes) = set.get(&seg.segment_id, f.timestamp_index) {
                    self.pseudo.push(PoolFrame {
                        segment: si,
                        frame: fi,
                        boxes: boxes.to_vec(),
                        lineage: Lineage::Pseudo {
                            teacher_id: set.teacher_id.clone(),
                        },
                    });
                    added = true;
                }
            }
            if added {
                self.segments.push(seg.strip_labels());
            }
        }
    }

    pub fn stream(&self, ratio: MixRatio, seed_value: u64) -> Result<MixStream> {
        MixStream::new(self.labeled.len(), self.pseudo.len(), ratio, seed_value)
    }

    pub fn get(&self, item: MixItem) -> &PoolFrame {
        match item.source {
            Source::Labeled => &self.labeled[item.index],
            Source::Pseudo => &self.pseudo[item.index],
        }
    }

    pub fn segment_of(&self, f: &PoolFrame) -> &RunSegment {
        &self.segments[f.segment]
    }

    /// Frames in one pass over both sources.
    pub fn epoch_frames(&self) -> usize {
        self.labeled.len() + self.pseudo.len()
    }
}
