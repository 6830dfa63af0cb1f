//! Miniature pillar detector.
//!
//! Pipeline: per-point linear + ReLU encoder, max-pool per pillar, scatter
//! onto the BEV grid, three stride-1 3x3 conv stages with channels
//! `(C, 2C, 2C)`, and 1x1 heads emitting per anchor one class logit, seven
//! box residuals and one direction logit.
//!
//! Gradients are computed in reverse mode over the same stages; every
//! forward stage keeps the activations its backward needs in
//! [`ForwardCache`].

pub mod anchors;
pub mod checkpoint;
pub mod multiframe;
pub mod ops;

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Box7, ObjectClass};
use crate::pillars::{pillar_features, voxelize, GridSpec, POINT_FEATURES};
use crate::seed;

pub use anchors::{
    decode_residuals, fold_heading, sigmoid, AnchorSpec, ANCHORS_PER_CELL, ANCHOR_ROTATIONS,
    REG_DIM,
};
pub use multiframe::{assemble_multiframe, frame_window, segment_cloud, FrameRef, TaggedCloud};

/// Decorated point features plus the frame-age tag.
pub const INPUT_FEATURES: usize = POINT_FEATURES + 1;

/// Prior probability used to initialize the classification bias.
const CLS_PRIOR: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub width_multiplier: usize,
    pub num_frames: usize,
    pub base_channels: usize,
    pub grid: GridSpec,
    pub class: ObjectClass,
    #[serde(default)]
    pub anchors: AnchorSpec,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            width_multiplier: 1,
            num_frames: 1,
            base_channels: 16,
            grid: GridSpec::desk(),
            class: ObjectClass::Vehicle,
            anchors: AnchorSpec::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if ![1, 2, 4].contains(&self.width_multiplier) {
            return Err(Error::InvalidConfig(format!(
                "width_multiplier must be 1, 2 or 4 (got {})",
                self.width_multiplier
            )));
        }
        if ![1, 2, 4].contains(&self.num_frames) {
            return Err(Error::InvalidConfig(format!(
                "num_frames must be 1, 2 or 4 (got {})",
                self.num_frames
            )));
        }
        if self.base_channels == 0 {
            return Err(Error::InvalidConfig("base_channels must be >= 1".into()));
        }
        self.grid.validate()
    }

    pub fn channels(&self) -> usize {
        self.base_channels * self.width_multiplier
    }

    /// Short tag such as `w2f4`.
    pub fn tag(&self) -> String {
        format!("w{}f{}", self.width_multiplier, self.num_frames)
    }

    pub fn num_anchors(&self) -> usize {
        self.grid.num_cells() * ANCHORS_PER_CELL
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(self)
    }

    pub fn anchor_boxes(&self) -> Vec<Box7> {
        self.anchors.generate(&self.grid, self.class)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSlot {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSlot {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }

    pub fn fan_in(&self) -> usize {
        self.shape[1..].iter().product::<usize>().max(1)
    }
}

/// Named tensors packed into one flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub slots: Vec<TensorSlot>,
}

impl ParamLayout {
    fn new(config: &ModelConfig) -> Self {
        let c = config.channels();
        let a = ANCHORS_PER_CELL;
        let shapes: Vec<(&'static str, Vec<usize>)> = vec![
            ("encoder.weight", vec![c, INPUT_FEATURES]),
            ("encoder.bias", vec![c]),
            ("conv1.weight", vec![c, c, 3, 3]),
            ("conv1.bias", vec![c]),
            ("conv2.weight", vec![2 * c, c, 3, 3]),
            ("conv2.bias", vec![2 * c]),
            ("conv3.weight", vec![2 * c, 2 * c, 3, 3]),
            ("conv3.bias", vec![2 * c]),
            ("head_cls.weight", vec![a, 2 * c]),
            ("head_cls.bias", vec![a]),
            ("head_reg.weight", vec![a * REG_DIM, 2 * c]),
            ("head_reg.bias", vec![a * REG_DIM]),
            ("head_dir.weight", vec![a, 2 * c]),
            ("head_dir.bias", vec![a]),
        ];
        let mut offset = 0;
        let slots = shapes
            .into_iter()
            .map(|(name, shape)| {
                let slot = TensorSlot { name, shape, offset };
                offset += slot.len();
                slot
            })
            .collect();
        Self { slots }
    }

    pub fn total(&self) -> usize {
        self.slots.last().map_or(0, |s| s.offset + s.len())
    }

    pub fn slot(&self, name: &str) -> Option<&TensorSlot> {
        self.slots.iter().find(|s| s.name == name)
    }

    fn range(&self, name: &str) -> Range<usize> {
        self.slot(name).expect("known tensor").range()
    }
}

/// All trainable values of a detector, flat, in [`ParamLayout`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    pub config: ModelConfig,
    pub values: Vec<f64>,
}

impl DetectorParams {
    /// Centered-uniform init scaled by `1/sqrt(fan_in)`; zero biases except
    /// the class bias, set to the logit of a 1% prior.
    pub fn init(config: &ModelConfig, seed_value: u64) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        let mut rng = seed::rng(seed::derive(seed_value, "detector-init"));
        let mut values = vec![0.0; layout.total()];
        for slot in &layout.slots {
            let r = slot.range();
            if slot.name.ends_with(".weight") {
                let bound = 1.0 / (slot.fan_in() as f64).sqrt();
                for v in &mut values[r] {
                    *v = rng.gen_range(-bound..bound);
                }
            } else if slot.name == "head_cls.bias" {
                let b = -((1.0 - CLS_PRIOR) / CLS_PRIOR).ln();
                values[r].fill(b);
            }
        }
        Ok(Self {
            config: config.clone(),
            values,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            values: vec![0.0; self.values.len()],
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        let layout = self.config.layout();
        layout.slot(name).map(|s| &self.values[s.range()])
    }

    pub fn num_params(&self) -> usize {
        self.values.len()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn squared_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    fn check_shape(&self) -> Result<()> {
        let expected = self.config.layout().total();
        if self.values.len() != expected {
            return Err(Error::ShapeMismatch {
                tensor: "parameters".into(),
                expected: vec![expected],
                actual: vec![self.values.len()],
            });
        }
        Ok(())
    }
}

/// Closed-form parameter count for a config.
pub fn param_count(config: &ModelConfig) -> usize {
    let c = config.channels();
    let a = ANCHORS_PER_CELL;
    let enc = c * INPUT_FEATURES + c;
    let conv = |i: usize, o: usize| o * i * 9 + o;
    let head = |o: usize| o * 2 * c + o;
    enc + conv(c, c) + conv(c, 2 * c) + conv(2 * c, 2 * c) + head(a) + head(a * REG_DIM) + head(a)
}

/// Pillar-grouped network input.
#[derive(Debug, Clone, PartialEq)]
pub struct NetInput {
    /// Linear cell index (`iy * nx + ix`) per pillar.
    pub cells: Vec<usize>,
    pub offsets: Vec<usize>,
    pub rows: Vec<[f64; INPUT_FEATURES]>,
}

impl NetInput {
    pub fn empty() -> Self {
        Self {
            cells: Vec::new(),
            offsets: vec![0],
            rows: Vec::new(),
        }
    }

    pub fn num_pillars(&self) -> usize {
        self.cells.len()
    }
}

/// Voxelize a tagged cloud and build normalized per-point inputs.
///
/// Absolute coordinates are divided by the grid half-extent, planar pillar
/// offsets by the cell size; intensity, the height offset and the frame age
/// are passed through.
pub fn prepare_input(cloud: &TaggedCloud, grid: &GridSpec) -> NetInput {
    let pg = voxelize(&cloud.points, grid);
    let pf = pillar_features(&cloud.points, &pg);
    let sx = 0.5 * (grid.x_max - grid.x_min);
    let sy = 0.5 * (grid.y_max - grid.y_min);
    let sz = 0.5 * (grid.z_max - grid.z_min);
    let (cx, cy) = (grid.cell_size_x(), grid.cell_size_y());
    let rows = pf
        .rows
        .iter()
        .zip(&pf.point_indices)
        .map(|(r, &i)| {
            [
                r[0] / sx,
                r[1] / sy,
                r[2] / sz,
                r[3],
                r[4] / cx,
                r[5] / cy,
                r[6],
                r[7] / cx,
                r[8] / cy,
                cloud.ages[i],
            ]
        })
        .collect();
    NetInput {
        cells: pf.cells.iter().map(|&(ix, iy)| iy * grid.nx + ix).collect(),
        offsets: pf.offsets,
        rows,
    }
}

/// Per-anchor head output (also used for gradients w.r.t. the output).
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    pub cls: Vec<f64>,
    pub reg: Vec<[f64; REG_DIM]>,
    pub dir: Vec<f64>,
}

impl HeadOutput {
    pub fn zeros(num_anchors: usize) -> Self {
        Self {
            cls: vec![0.0; num_anchors],
            reg: vec![[0.0; REG_DIM]; num_anchors],
            dir: vec![0.0; num_anchors],
        }
    }

    pub fn num_anchors(&self) -> usize {
        self.cls.len()
    }
}

/// Activations retained for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    enc_act: Vec<f64>,
    argmax: Vec<usize>,
    x0: Vec<f64>,
    a1: Vec<f64>,
    a2: Vec<f64>,
    a3: Vec<f64>,
}

struct Dims {
    c: usize,
    h: usize,
    w: usize,
    plane: usize,
}

fn dims(config: &ModelConfig) -> Dims {
    Dims {
        c: config.channels(),
        h: config.grid.ny,
        w: config.grid.nx,
        plane: config.grid.num_cells(),
    }
}

fn check_input(input: &NetInput, config: &ModelConfig) -> Result<()> {
    let cells = config.grid.num_cells();
    if input.offsets.len() != input.cells.len() + 1
        || input.offsets.last().copied() != Some(input.rows.len())
    {
        return Err(Error::ShapeMismatch {
            tensor: "input.offsets".into(),
            expected: vec![input.cells.len() + 1],
            actual: vec![input.offsets.len()],
        });
    }
    if let Some(&bad) = input.cells.iter().find(|&&c| c >= cells) {
        return Err(Error::ShapeMismatch {
            tensor: "input.cells".into(),
            expected: vec![cells],
            actual: vec![bad],
        });
    }
    Ok(())
}

/// Run the detector.
pub fn forward(params: &DetectorParams, input: &NetInput) -> Result<(HeadOutput, ForwardCache)> {
    params.check_shape()?;
    check_input(input, &params.config)?;
    let config = &params.config;
    let layout = config.layout();
    let v = &params.values;
    let Dims { c, h, w, plane } = dims(config);

    // Point encoder + max-pool + scatter.
    let enc_w = &v[layout.range("encoder.weight")];
    let enc_b = &v[layout.range("encoder.bias")];
    let mut enc_act = vec![0.0; input.rows.len() * c];
    for (r, row) in input.rows.iter().enumerate() {
        let out = &mut enc_act[r * c..(r + 1) * c];
        for (ch, o) in out.iter_mut().enumerate() {
            let wrow = &enc_w[ch * INPUT_FEATURES..(ch + 1) * INPUT_FEATURES];
            let z = enc_b[ch] + wrow.iter().zip(row).map(|(a, b)| a * b).sum::<f64>();
            *o = z.max(0.0);
        }
    }
    let mut argmax = vec![0usize; input.num_pillars() * c];
    let mut x0 = vec![0.0; c * plane];
    for k in 0..input.num_pillars() {
        let (start, end) = (input.offsets[k], input.offsets[k + 1]);
        let cell = input.cells[k];
        for ch in 0..c {
            let mut best = start;
            let mut best_v = f64::NEG_INFINITY;
            for r in start..end {
                let val = enc_act[r * c + ch];
                if val > best_v {
                    best_v = val;
                    best = r;
                }
            }
            argmax[k * c + ch] = best;
            x0[ch * plane + cell] = if end > start { best_v } else { 0.0 };
        }
    }

    // Backbone.
    let mut a1 = vec![0.0; c * plane];
    ops::conv3x3_forward(&x0, &v[layout.range("conv1.weight")], &v[layout.range("conv1.bias")], c, c, h, w, &mut a1);
    ops::relu_inplace(&mut a1);
    let mut a2 = vec![0.0; 2 * c * plane];
    ops::conv3x3_forward(&a1, &v[layout.range("conv2.weight")], &v[layout.range("conv2.bias")], c, 2 * c, h, w, &mut a2);
    ops::relu_inplace(&mut a2);
    let mut a3 = vec![0.0; 2 * c * plane];
    ops::conv3x3_forward(&a2, &v[layout.range("conv3.weight")], &v[layout.range("conv3.bias")], 2 * c, 2 * c, h, w, &mut a3);
    ops::relu_inplace(&mut a3);

    // Heads.
    let a = ANCHORS_PER_CELL;
    let mut cls_p = vec![0.0; a * plane];
    let mut reg_p = vec![0.0; a * REG_DIM * plane];
    let mut dir_p = vec![0.0; a * plane];
    ops::conv1x1_forward(&a3, &v[layout.range("head_cls.weight")], &v[layout.range("head_cls.bias")], 2 * c, a, plane, &mut cls_p);
    ops::conv1x1_forward(&a3, &v[layout.range("head_reg.weight")], &v[layout.range("head_reg.bias")], 2 * c, a * REG_DIM, plane, &mut reg_p);
    ops::conv1x1_forward(&a3, &v[layout.range("head_dir.weight")], &v[layout.range("head_dir.bias")], 2 * c, a, plane, &mut dir_p);

    let mut out = HeadOutput::zeros(plane * a);
    for cell in 0..plane {
        for rot in 0..a {
            let idx = cell * a + rot;
            out.cls[idx] = cls_p[rot * plane + cell];
            out.dir[idx] = dir_p[rot * plane + cell];
            for j in 0..REG_DIM {
                out.reg[idx][j] = reg_p[(rot * REG_DIM + j) * plane + cell];
            }
        }
    }
    Ok((
        out,
        ForwardCache {
            enc_act,
            argmax,
            x0,
            a1,
            a2,
            a3,
        },
    ))
}

/// Forward without keeping the cache.
pub fn infer(params: &DetectorParams, input: &NetInput) -> Result<HeadOutput> {
    forward(params, input).map(|(out, _)| out)
}

/// Reverse-mode gradient of a scalar loss with respect to every parameter,
/// given the loss gradient w.r.t. the head output. Accumulates into `grads`.
pub fn backward_into(
    params: &DetectorParams,
    input: &NetInput,
    cache: &ForwardCache,
    d_out: &HeadOutput,
    grads: &mut [f64],
) -> Result<()> {
    params.check_shape()?;
    let config = &params.config;
    let layout = config.layout();
    if grads.len() != layout.total() {
        return Err(Error::ShapeMismatch {
            tensor: "gradients".into(),
            expected: vec![layout.total()],
            actual: vec![grads.len()],
        });
    }
    if d_out.num_anchors() != config.num_anchors() {
        return Err(Error::ShapeMismatch {
            tensor: "head_output".into(),
            expected: vec![config.num_anchors()],
            actual: vec![d_out.num_anchors()],
        });
    }
    let v = &params.values;
    let Dims { c, h, w, plane } = dims(config);
    let a = ANCHORS_PER_CELL;

    let mut d_cls = vec![0.0; a * plane];
    let mut d_reg = vec![0.0; a * REG_DIM * plane];
    let mut d_dir = vec![0.0; a * plane];
    for cell in 0..plane {
        for rot in 0..a {
            let idx = cell * a + rot;
            d_cls[rot * plane + cell] = d_out.cls[idx];
            d_dir[rot * plane + cell] = d_out.dir[idx];
            for j in 0..REG_DIM {
                d_reg[(rot * REG_DIM + j) * plane + cell] = d_out.reg[idx][j];
            }
        }
    }

    let mut d_a3 = vec![0.0; 2 * c * plane];
    for (name, d, co) in [
        ("head_cls", &d_cls, a),
        ("head_reg", &d_reg, a * REG_DIM),
        ("head_dir", &d_dir, a),
    ] {
        let wr = layout.range(&format!("{name}.weight"));
        let br = layout.range(&format!("{name}.bias"));
        let (dw, db) = split_two(grads, wr.clone(), br);
        ops::conv1x1_backward(&cache.a3, &v[wr], d, 2 * c, co, plane, dw, db, &mut d_a3);
    }
    ops::relu_backward_inplace(&cache.a3, &mut d_a3);

    let mut d_a2 = vec![0.0; 2 * c * plane];
    {
        let wr = layout.range("conv3.weight");
        let (dw, db) = split_two(grads, wr.clone(), layout.range("conv3.bias"));
        ops::conv3x3_backward(&cache.a2, &v[wr], &d_a3, 2 * c, 2 * c, h, w, dw, db, Some(&mut d_a2));
    }
    ops::relu_backward_inplace(&cache.a2, &mut d_a2);

    let mut d_a1 = vec![0.0; c * plane];
    {
        let wr = layout.range("conv2.weight");
        let (dw, db) = split_two(grads, wr.clone(), layout.range("conv2.bias"));
        ops::conv3x3_backward(&cache.a1, &v[wr], &d_a2, c, 2 * c, h, w, dw, db, Some(&mut d_a1));
    }
    ops::relu_backward_inplace(&cache.a1, &mut d_a1);

    let mut d_x0 = vec![0.0; c * plane];
    {
        let wr = layout.range("conv1.weight");
        let (dw, db) = split_two(grads, wr.clone(), layout.range("conv1.bias"));
        ops::conv3x3_backward(&cache.x0, &v[wr], &d_a1, c, c, h, w, dw, db, Some(&mut d_x0));
    }

    // Gather through scatter + max-pool + ReLU into the encoder.
    let wr = layout.range("encoder.weight");
    let br = layout.range("encoder.bias");
    let (dw, db) = split_two(grads, wr, br);
    for k in 0..input.num_pillars() {
        if input.offsets[k + 1] == input.offsets[k] {
            continue;
        }
        let cell = input.cells[k];
        for ch in 0..c {
            let g = d_x0[ch * plane + cell];
            if g == 0.0 {
                continue;
            }
            let r = cache.argmax[k * c + ch];
            if cache.enc_act[r * c + ch] <= 0.0 {
                continue;
            }
            db[ch] += g;
            let row = &input.rows[r];
            for (dwv, x) in dw[ch * INPUT_FEATURES..(ch + 1) * INPUT_FEATURES].iter_mut().zip(row) {
                *dwv += g * x;
            }
        }
    }
    Ok(())
}

/// Allocating wrapper around [`backward_into`].
pub fn backward(
    params: &DetectorParams,
    input: &NetInput,
    cache: &ForwardCache,
    d_out: &HeadOutput,
) -> Result<Vec<f64>> {
    let mut grads = vec![0.0; params.values.len()];
    backward_into(params, input, cache, d_out, &mut grads)?;
    Ok(grads)
}

/// Two disjoint mutable sub-slices; `first` must precede `second`.
fn split_two(buf: &mut [f64], first: Range<usize>, second: Range<usize>) -> (&mut [f64], &mut [f64]) {
    debug_assert!(first.end <= second.start);
    let (lo, hi) = buf.split_at_mut(second.start);
    (&mut lo[first], &mut hi[..second.end - second.start])
}

/// Decode every anchor with score at or above `score_floor` into a scored box.
pub fn decode_boxes(head: &HeadOutput, anchors: &[Box7], score_floor: f64) -> Vec<Box7> {
    head.cls
        .iter()
        .enumerate()
        .filter_map(|(i, &logit)| {
            let score = sigmoid(logit);
            if score < score_floor {
                return None;
            }
            let b = decode_residuals(&anchors[i], &head.reg[i], head.dir[i] > 0.0);
            Some(b.with_score(score))
        })
        .collect()
}

/// Post-processing applied to raw head output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    pub score_floor: f64,
    pub nms_iou: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            score_floor: 0.05,
            nms_iou: 0.5,
        }
    }
}

/// Detect objects in frame `newest` of a segment: assemble the frame
/// window, run the network, decode and suppress.
pub fn detect(
    params: &DetectorParams,
    anchors: &[Box7],
    segment: &crate::synth::RunSegment,
    newest: usize,
    inference: &InferenceConfig,
) -> Result<Vec<Box7>> {
    let cloud = segment_cloud(segment, newest, params.config.num_frames);
    let input = prepare_input(&cloud, &params.config.grid);
    let head = infer(params, &input)?;
    let boxes = decode_boxes(&head, anchors, inference.score_floor);
    Ok(crate::geom::nms(&boxes, inference.nms_iou))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Point3;
    use rand::Rng;

    fn random_cloud(seed_value: u64, n: usize) -> TaggedCloud {
        let mut rng = seed::rng(seed_value);
        let points = (0..n)
            .map(|_| {
                Point3::new(
                    rng.gen_range(-16.0..16.0),
                    rng.gen_range(-16.0..16.0),
                    rng.gen_range(-2.0..1.0),
                    rng.gen_range(0.0..1.0),
                )
            })
            .collect();
        TaggedCloud {
            points,
            ages: vec![0.0; n],
        }
    }

    fn small_config() -> ModelConfig {
        ModelConfig {
            base_channels: 4,
            grid: GridSpec {
                nx: 8,
                ny: 8,
                x_min: -16.0,
                x_max: 16.0,
                y_min: -16.0,
                y_max: 16.0,
                ..GridSpec::desk()
            },
            ..ModelConfig::default()
        }
    }

    #[test]
    fn empty_cloud_gives_constant_interior() {
        let cfg = ModelConfig::default();
        let mut params = DetectorParams::init(&cfg, 3).unwrap();
        // Nonzero biases so the constant field is nontrivial.
        for slot in cfg.layout().slots.iter().filter(|s| s.name.ends_with(".bias")) {
            for (i, v) in params.values[slot.range()].iter_mut().enumerate() {
                *v = 0.1 * (i as f64 + 1.0);
            }
        }
        let out = infer(&params, &NetInput::empty()).unwrap();
        let nx = cfg.grid.nx;
        let at = |ix: usize, iy: usize, rot: usize| (iy * nx + ix) * 2 + rot;
        // Three 3x3 stages: cells at least 3 away from the border see no padding.
        for iy in 3..cfg.grid.ny - 3 {
            for ix in 3..nx - 3 {
                for rot in 0..2 {
                    assert_eq!(out.cls[at(ix, iy, rot)], out.cls[at(3, 3, rot)]);
                    assert_eq!(out.reg[at(ix, iy, rot)], out.reg[at(3, 3, rot)]);
                }
            }
        }
    }

    #[test]
    fn permuting_points_in_pillar_is_invariant() {
        let cfg = small_config();
        let params = DetectorParams::init(&cfg, 5).unwrap();
        let cloud = random_cloud(9, 300);
        let mut shuffled = cloud.clone();
        shuffled.points.reverse();
        let a = infer(&params, &prepare_input(&cloud, &cfg.grid)).unwrap();
        let b = infer(&params, &prepare_input(&shuffled, &cfg.grid)).unwrap();
        for i in 0..a.cls.len() {
            assert!((a.cls[i] - b.cls[i]).abs() < 1e-6);
            for j in 0..REG_DIM {
                assert!((a.reg[i][j] - b.reg[i][j]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn width_doubles_channels_and_count_matches_formula() {
        for w in [1, 2, 4] {
            let cfg = ModelConfig {
                width_multiplier: w,
                ..ModelConfig::default()
            };
            let p = DetectorParams::init(&cfg, 0).unwrap();
            assert_eq!(p.num_params(), param_count(&cfg));
            let conv1 = cfg.layout().slot("conv1.weight").unwrap().shape.clone();
            assert_eq!(conv1[0], 16 * w);
        }
        let one = param_count(&ModelConfig::default()) as f64;
        let two = param_count(&ModelConfig {
            width_multiplier: 2,
            ..ModelConfig::default()
        }) as f64;
        assert!(two / one > 2.0 && two / one <= 4.0);
    }

    #[test]
    fn hand_count_for_base_16() {
        // C = 16: encoder 16*10+16, conv1 16*16*9+16, conv2 32*16*9+32,
        // conv3 32*32*9+32, heads (2 + 14 + 2) * 32 + 18.
        let expected = 176 + 2320 + 4640 + 9248 + 18 * 32 + 18;
        assert_eq!(param_count(&ModelConfig::default()), expected);
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let cfg = small_config();
        let params = DetectorParams::init(&cfg, 1).unwrap();
        let input = prepare_input(&random_cloud(2, 200), &cfg.grid);
        let (_, cache) = forward(&params, &input).unwrap();
        let g = backward(&params, &input, &cache, &HeadOutput::zeros(cfg.num_anchors())).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_matches_finite_difference_on_linear_probe() {
        let cfg = small_config();
        let params = DetectorParams::init(&cfg, 11).unwrap();
        let input = prepare_input(&random_cloud(12, 400), &cfg.grid);
        let mut probe = HeadOutput::zeros(cfg.num_anchors());
        let mut rng = seed::rng(13);
        for i in 0..probe.cls.len() {
            probe.cls[i] = rng.gen_range(-1.0..1.0);
            probe.dir[i] = rng.gen_range(-1.0..1.0);
            for j in 0..REG_DIM {
                probe.reg[i][j] = rng.gen_range(-1.0..1.0);
            }
        }
        let objective = |p: &DetectorParams| {
            let o = infer(p, &input).unwrap();
            let mut s = 0.0;
            for i in 0..o.cls.len() {
                s += o.cls[i] * probe.cls[i] + o.dir[i] * probe.dir[i];
                for j in 0..REG_DIM {
                    s += o.reg[i][j] * probe.reg[i][j];
                }
            }
            s
        };
        let (_, cache) = forward(&params, &input).unwrap();
        let g = backward(&params, &input, &cache, &probe).unwrap();
        let layout = cfg.layout();
        let mut checked = 0;
        for slot in &layout.slots {
            for k in [slot.offset, slot.offset + slot.len() / 2, slot.offset + slot.len() - 1] {
                let h = 1e-6;
                let mut plus = params.clone();
                plus.values[k] += h;
                let mut minus = params.clone();
                minus.values[k] -= h;
                let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
                let denom = fd.abs().max(g[k].abs()).max(1e-6);
                assert!((fd - g[k]).abs() / denom < 1e-4, "{} [{k}]: fd {fd} vs {}", slot.name, g[k]);
                checked += 1;
            }
        }
        assert_eq!(checked, 3 * layout.slots.len());
    }

    #[test]
    fn scatter_places_pillar_only_at_its_cell() {
        let cfg = small_config();
        let params = DetectorParams::init(&cfg, 4).unwrap();
        let cloud = TaggedCloud::single(&[Point3::new(1.0, 1.0, 0.0, 0.5)]);
        let input = prepare_input(&cloud, &cfg.grid);
        let (_, cache) = forward(&params, &input).unwrap();
        let plane = cfg.grid.num_cells();
        let cell = input.cells[0];
        for ch in 0..cfg.channels() {
            for i in 0..plane {
                if i != cell {
                    assert_eq!(cache.x0[ch * plane + i], 0.0);
                }
            }
        }
        assert!((0..cfg.channels()).any(|ch| cache.x0[ch * plane + cell] > 0.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = small_config();
        let params = DetectorParams::init(&cfg, 4).unwrap();
        let input = prepare_input(&random_cloud(8, 100), &cfg.grid);
        assert_eq!(infer(&params, &input).unwrap(), infer(&params, &input).unwrap());
    }

    #[test]
    fn bad_input_cell_is_reported() {
        let cfg = small_config();
        let params = DetectorParams::init(&cfg, 4).unwrap();
        let input = NetInput {
            cells: vec![10_000],
            offsets: vec![0, 1],
            rows: vec![[0.0; INPUT_FEATURES]],
        };
        match infer(&params, &input) {
            Err(Error::ShapeMismatch { tensor, .. }) => assert_eq!(tensor, "input.cells"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn decode_zero_residuals_is_anchor() {
        let cfg = ModelConfig::default();
        let anchors = cfg.anchor_boxes();
        let head = HeadOutput::zeros(cfg.num_anchors());
        let boxes = decode_boxes(&head, &anchors, 0.0);
        assert_eq!(boxes.len(), anchors.len());
        for (b, a) in boxes.iter().zip(&anchors) {
            assert_eq!(b.score, Some(0.5));
            assert_eq!((b.cx, b.cy, b.cz, b.length, b.width, b.height, b.heading), (a.cx, a.cy, a.cz, a.length, a.width, a.height, a.heading));
        }
    }

    #[test]
    fn score_floor_filters() {
        let cfg = ModelConfig::default();
        let anchors = cfg.anchor_boxes();
        let mut head = HeadOutput::zeros(cfg.num_anchors());
        head.cls.fill(-10.0);
        head.cls[5] = 2.0;
        let boxes = decode_boxes(&head, &anchors, 0.05);
        assert_eq!(boxes.len(), 1);
    }
}
