//! Supervised training: anchor assignment, residual targets, the focal +
//! smooth-L1 loss, Adam with exponential decay, EMA shadow weights and
//! world augmentation.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distill::{self, SoftLabelMode};
use crate::error::{Error, Result};
use crate::geom::{bev_iou, flip_y, heading_distance, normalize_heading, rotate_about_z, Box7, ObjectClass, Point3};
use crate::metrics::{evaluate_model, EvalConfig};
use crate::net::anchors::{anchor_diagonal, fold_heading, sigmoid, REG_DIM};
use crate::net::multiframe::{segment_cloud, TaggedCloud};
use crate::net::{backward_into, forward, prepare_input, DetectorParams, HeadOutput, InferenceConfig, ModelConfig, NetInput};
use crate::pillars::GridSpec;
use crate::seed;
use crate::store::{Lineage, MixRatio, TrainPool};
use crate::synth::{Frame, RunSegment};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssignmentThresholds {
    pub fg_iou: f64,
    pub bg_iou: f64,
}

impl AssignmentThresholds {
    pub fn for_class(class: ObjectClass) -> Self {
        match class {
            ObjectClass::Vehicle => Self { fg_iou: 0.6, bg_iou: 0.45 },
            ObjectClass::Pedestrian => Self { fg_iou: 0.5, bg_iou: 0.35 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if 0.0 < self.bg_iou && self.bg_iou < self.fg_iou && self.fg_iou < 1.0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "assignment thresholds need 0 < bg ({}) < fg ({}) < 1",
                self.bg_iou, self.fg_iou
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorLabel {
    Background,
    Ignore,
    Foreground(usize),
}

/// Label every anchor against the ground truth.
///
/// Threshold pass first (FG above `fg_iou`, BG below `bg_iou`, IGNORE in
/// between), then force matching: each gt without a FG anchor claims its
/// best anchor (ties to the lowest index). Gts are served in descending
/// order of their best IoU, so a contested anchor goes to the higher-IoU gt
/// and the other falls back to its next best anchor. A claim never takes
/// the only FG anchor of another gt.
pub fn assign_anchors(gts: &[Box7], anchors: &[Box7], th: &AssignmentThresholds) -> Vec<AnchorLabel> {
    let mut labels = vec![AnchorLabel::Background; anchors.len()];
    // (anchor, gt, iou) for every overlapping pair.
    let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
    let mut best_for_anchor = vec![(0.0f64, usize::MAX); anchors.len()];
    for (g, gt) in gts.iter().enumerate() {
        for (a, anchor) in anchors.iter().enumerate() {
            let iou = bev_iou(gt, anchor);
            if iou > 0.0 {
                pairs.push((a, g, iou));
                if iou > best_for_anchor[a].0 {
                    best_for_anchor[a] = (iou, g);
                }
            }
        }
    }
    let mut fg_count = vec![0usize; gts.len()];
    for (a, &(iou, g)) in best_for_anchor.iter().enumerate() {
        labels[a] = if iou > th.fg_iou {
            fg_count[g] += 1;
            AnchorLabel::Foreground(g)
        } else if iou < th.bg_iou {
            AnchorLabel::Background
        } else {
            AnchorLabel::Ignore
        };
    }

    let mut candidates: Vec<Vec<(usize, f64)>> = vec![Vec::new(); gts.len()];
    for &(a, g, iou) in &pairs {
        candidates[g].push((a, iou));
    }
    for c in &mut candidates {
        c.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
    }
    let mut pending: Vec<usize> = (0..gts.len()).filter(|&g| fg_count[g] == 0 && !candidates[g].is_empty()).collect();
    pending.sort_by(|&x, &y| candidates[y][0].1.partial_cmp(&candidates[x][0].1).unwrap().then(x.cmp(&y)));
    let mut forced = vec![false; anchors.len()];
    for g in pending {
        for &(a, _) in &candidates[g] {
            if forced[a] {
                continue;
            }
            match labels[a] {
                AnchorLabel::Foreground(other) if fg_count[other] <= 1 => continue,
                AnchorLabel::Foreground(other) => fg_count[other] -= 1,
                _ => {}
            }
            labels[a] = AnchorLabel::Foreground(g);
            fg_count[g] += 1;
            forced[a] = true;
            break;
        }
    }
    labels
}

/// Regression targets and the direction bit for `gt` against `anchor`.
pub fn encode_residuals(gt: &Box7, anchor: &Box7) -> ([f64; REG_DIM], bool) {
    let d = anchor_diagonal(anchor);
    let dtheta = fold_heading(gt.heading - anchor.heading);
    let flip = heading_distance(normalize_heading(anchor.heading + dtheta), gt.heading) > FRAC_PI_2;
    (
        [
            (gt.cx - anchor.cx) / d,
            (gt.cy - anchor.cy) / d,
            (gt.cz - anchor.cz) / anchor.height,
            (gt.length / anchor.length).ln(),
            (gt.width / anchor.width).ln(),
            (gt.height / anchor.height).ln(),
            dtheta,
        ],
        flip,
    )
}

/// Classification target of one anchor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClsTarget {
    Ignore,
    /// Focal loss towards this probability.
    Focal(f64),
    /// Squared error of the logit towards this value.
    Logit(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub smooth_l1_delta: f64,
    pub reg_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            smooth_l1_delta: 1.0,
            reg_weight: 2.0,
        }
    }
}

/// Per-anchor supervision for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTargets {
    pub cls: Vec<ClsTarget>,
    /// `(anchor, residuals, direction bit)` for every FG anchor.
    pub reg: Vec<(usize, [f64; REG_DIM], bool)>,
}

impl FrameTargets {
    pub fn num_fg(&self) -> usize {
        self.reg.len()
    }
}

/// Hard targets: FG -> 1, BG -> 0, IGNORE -> no loss.
pub fn hard_targets(labels: &[AnchorLabel], gts: &[Box7], anchors: &[Box7]) -> FrameTargets {
    let mut reg = Vec::new();
    let cls = labels
        .iter()
        .enumerate()
        .map(|(a, l)| match *l {
            AnchorLabel::Background => ClsTarget::Focal(0.0),
            AnchorLabel::Ignore => ClsTarget::Ignore,
            AnchorLabel::Foreground(g) => {
                let (r, flip) = encode_residuals(&gts[g], &anchors[a]);
                reg.push((a, r, flip));
                ClsTarget::Focal(1.0)
            }
        })
        .collect();
    FrameTargets { cls, reg }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Focal loss of logit `x` towards probability `t` (linear in `t`) and
/// its derivative in `x`.
pub fn focal(x: f64, t: f64, alpha: f64, gamma: f64) -> (f64, f64) {
    let p = sigmoid(x);
    let q = 1.0 - p;
    let ln_p = -softplus(-x);
    let ln_q = -softplus(x);
    let (mut l, mut d) = (0.0, 0.0);
    if t > 0.0 {
        let m = q.powf(gamma);
        l += t * -alpha * m * ln_p;
        d += t * alpha * m * (gamma * p * ln_p - q);
    }
    if t < 1.0 {
        let m = p.powf(gamma);
        l += (1.0 - t) * -(1.0 - alpha) * m * ln_q;
        d += (1.0 - t) * (1.0 - alpha) * m * (p - gamma * q * ln_q);
    }
    (l, d)
}

/// Smooth-L1 and its derivative.
pub fn smooth_l1(diff: f64, delta: f64) -> (f64, f64) {
    if diff.abs() < delta {
        (0.5 * diff * diff / delta, diff / delta)
    } else {
        (diff.abs() - 0.5 * delta, diff.signum())
    }
}

/// Binary cross-entropy on a logit and its derivative.
pub fn bce_logit(x: f64, target: bool) -> (f64, f64) {
    if target {
        (softplus(-x), sigmoid(x) - 1.0)
    } else {
        (softplus(x), sigmoid(x))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub cls: f64,
    /// Smooth-L1 plus direction term, before `reg_weight`.
    pub reg: f64,
    pub total: f64,
    pub num_fg: usize,
}

/// Data loss of one frame and its gradient w.r.t. the head output,
/// `cls + reg_weight * reg`, both normalized by `max(1, #FG)`.
pub fn frame_loss(head: &HeadOutput, targets: &FrameTargets, cfg: &LossConfig) -> (LossValue, HeadOutput) {
    let n = head.num_anchors();
    let norm = 1.0 / targets.num_fg().max(1) as f64;
    let mut grad = HeadOutput::zeros(n);
    let mut cls = 0.0;
    for (a, t) in targets.cls.iter().enumerate() {
        let (l, d) = match *t {
            ClsTarget::Ignore => continue,
            ClsTarget::Focal(t) => focal(head.cls[a], t, cfg.focal_alpha, cfg.focal_gamma),
            ClsTarget::Logit(t) => {
                let e = head.cls[a] - t;
                (e * e, 2.0 * e)
            }
        };
        cls += l;
        grad.cls[a] = d * norm;
    }
    let mut reg = 0.0;
    let w = cfg.reg_weight * norm;
    for (a, r, flip) in &targets.reg {
        for j in 0..REG_DIM {
            let (l, d) = smooth_l1(head.reg[*a][j] - r[j], cfg.smooth_l1_delta);
            reg += l;
            grad.reg[*a][j] = d * w;
        }
        let (l, d) = bce_logit(head.dir[*a], *flip);
        reg += l;
        grad.dir[*a] = d * w;
    }
    let (cls, reg) = (cls * norm, reg * norm);
    (
        LossValue {
            cls,
            reg,
            total: cls + cfg.reg_weight * reg,
            num_fg: targets.num_fg(),
        },
        grad,
    )
}

/// Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
}

/// Decay used at optimizer step `step` (0-based): the configured decay,
/// warmed up as `(1 + step) / (10 + step)` so early averages are not
/// dominated by the initialization.
pub fn ema_decay_at(step: usize, decay: f64) -> f64 {
    decay.min((1.0 + step as f64) / (10.0 + step as f64))
}

pub fn ema_update(shadow: &mut [f64], params: &[f64], decay: f64) {
    for (s, p) in shadow.iter_mut().zip(params) {
        *s = decay * *s + (1.0 - decay) * p;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSchedule {
    pub base_lr: f64,
    pub batch_size: usize,
    pub total_epochs: usize,
    pub decay_start_epoch: usize,
    /// `lr(total_epochs - 1) = final_lr_ratio * base_lr`.
    pub final_lr_ratio: f64,
    pub ema_decay: f64,
    pub l2_lambda: f64,
    /// Optimizer steps per epoch; `None` means one pass over the pool.
    pub steps_per_epoch: Option<usize>,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            base_lr: 3.2e-3,
            batch_size: 4,
            total_epochs: 20,
            decay_start_epoch: 2,
            final_lr_ratio: 0.01,
            ema_decay: 0.99,
            l2_lambda: 1e-4,
            steps_per_epoch: None,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.total_epochs == 0 || self.decay_start_epoch >= self.total_epochs {
            return bad(format!(
                "decay start {} must precede total epochs {}",
                self.decay_start_epoch, self.total_epochs
            ));
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return bad(format!("ema decay {} not in (0, 1)", self.ema_decay));
        }
        if self.batch_size == 0 || !(self.base_lr > 0.0) || !(self.final_lr_ratio > 0.0) || self.l2_lambda < 0.0 {
            return bad("batch size, learning rate and final ratio must be positive".into());
        }
        Ok(())
    }
}

/// Learning rate for `epoch`: constant through `decay_start_epoch`, then
/// exponential decay reaching `final_lr_ratio * base_lr` at the last epoch.
pub fn lr_at(epoch: usize, s: &TrainSchedule) -> f64 {
    if epoch <= s.decay_start_epoch {
        return s.base_lr;
    }
    let span = (s.total_epochs - 1 - s.decay_start_epoch) as f64;
    let gamma = s.final_lr_ratio.powf(1.0 / span);
    s.base_lr * gamma.powi((epoch - s.decay_start_epoch) as i32)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationPolicy {
    pub rotate: bool,
    pub max_angle: f64,
    pub flip: bool,
    pub flip_probability: f64,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self {
            rotate: true,
            max_angle: FRAC_PI_4,
            flip: true,
            flip_probability: 0.25,
        }
    }
}

impl AugmentationPolicy {
    pub fn none() -> Self {
        Self {
            rotate: false,
            flip: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.max_angle > 0.0 && self.max_angle <= PI) || !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::InvalidConfig(format!("bad augmentation policy {self:?}")));
        }
        Ok(())
    }

    pub fn label(&self) -> &'static str {
        match (self.rotate, self.flip) {
            (true, true) => "rot+flip",
            (true, false) => "rot",
            (false, true) => "flip",
            (false, false) => "none",
        }
    }
}

/// Seeded world rotation about z, then a Y flip with the policy's
/// probability. Points and boxes are transformed jointly.
pub fn augment(points: &[Point3], boxes: &[Box7], policy: &AugmentationPolicy, seed_value: u64) -> (Vec<Point3>, Vec<Box7>) {
    let mut rng = seed::rng(seed_value);
    let angle = if policy.rotate {
        rng.gen_range(-policy.max_angle..=policy.max_angle)
    } else {
        0.0
    };
    let flip = policy.flip && rng.gen::<f64>() < policy.flip_probability;
    let (p, b) = rotate_about_z(points, boxes, angle);
    if flip {
        flip_y(&p, &b)
    } else {
        (p, b)
    }
}

/// [`augment`] applied to a whole frame.
pub fn augment_frame(frame: &Frame, policy: &AugmentationPolicy, seed_value: u64) -> Frame {
    let (points, gt_boxes) = augment(&frame.points, &frame.gt_boxes, policy, seed_value);
    Frame {
        points,
        gt_boxes,
        ..frame.clone()
    }
}

/// Treatment of pseudo-labeled frames during student training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PseudoTargetPolicy {
    pub mode: SoftLabelMode,
    /// Anchors matched to pseudo boxes scoring inside this closed band get
    /// no loss; `(t, t)` with the filter threshold `t` is a no-op.
    pub ignore_band: (f64, f64),
}

impl Default for PseudoTargetPolicy {
    fn default() -> Self {
        Self {
            mode: SoftLabelMode::Hard,
            ignore_band: (0.5, 0.5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub schedule: TrainSchedule,
    pub augmentation: AugmentationPolicy,
    pub loss: LossConfig,
    pub pseudo: PseudoTargetPolicy,
    pub ratio: MixRatio,
    pub eval: EvalConfig,
    pub inference: InferenceConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            schedule: TrainSchedule::default(),
            augmentation: AugmentationPolicy::default(),
            loss: LossConfig::default(),
            pseudo: PseudoTargetPolicy::default(),
            ratio: MixRatio::default(),
            eval: EvalConfig {
                frame_stride: 2,
                ..EvalConfig::default()
            },
            inference: InferenceConfig::default(),
        }
    }
}

fn inside_grid(b: &Box7, grid: &GridSpec) -> bool {
    b.cx >= grid.x_min && b.cx < grid.x_max && b.cy >= grid.y_min && b.cy < grid.y_max
}

/// Build the network input and per-anchor targets for one training frame.
pub fn prepare_sample(
    segment: &RunSegment,
    frame_index: usize,
    boxes: &[Box7],
    lineage: &Lineage,
    anchors: &[Box7],
    cfg: &TrainConfig,
    seed_value: u64,
) -> (NetInput, FrameTargets) {
    let model = &cfg.model;
    let cloud = segment_cloud(segment, frame_index, model.num_frames);
    let boxes: Vec<Box7> = boxes.iter().filter(|b| b.class == model.class).copied().collect();
    let (points, boxes) = augment(&cloud.points, &boxes, &cfg.augmentation, seed_value);
    let boxes: Vec<Box7> = boxes.into_iter().filter(|b| inside_grid(b, &model.grid)).collect();
    let input = prepare_input(
        &TaggedCloud {
            points,
            ages: cloud.ages,
        },
        &model.grid,
    );
    let th = AssignmentThresholds::for_class(model.class);
    let mut labels = assign_anchors(&boxes, anchors, &th);
    let targets = match lineage {
        Lineage::Labeled => hard_targets(&labels, &boxes, anchors),
        Lineage::Pseudo { .. } => {
            labels = distill::apply_ignore_band(&labels, &boxes, cfg.pseudo.ignore_band);
            distill::soft_targets(&labels, &boxes, anchors, cfg.pseudo.mode)
        }
    };
    (input, targets)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub steps: usize,
    pub loss: f64,
    pub val_ap: f64,
    pub val_aph: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// EMA weights after the last step.
    pub final_params: DetectorParams,
    /// EMA weights of the epoch with the best validation AP (first on ties).
    pub best_params: DetectorParams,
    pub best_epoch: usize,
    pub best_val_ap: f64,
    pub history: Vec<EpochMetrics>,
    /// Mean training loss of the first and last optimizer steps.
    pub first_loss: f64,
    pub last_loss: f64,
}

impl TrainOutcome {
    pub fn history_csv(&self) -> String {
        let mut s = String::from("epoch,steps,loss,val_ap,val_aph,lr\n");
        for m in &self.history {
            let _ = writeln!(s, "{},{},{},{},{},{}", m.epoch, m.steps, m.loss, m.val_ap, m.val_aph, m.lr);
        }
        s
    }
}

/// One optimizer step's loss (data loss averaged over the batch, plus L2)
/// and gradient. Exposed for gradient checking.
pub fn batch_loss_and_grad(
    params: &DetectorParams,
    batch: &[(NetInput, FrameTargets)],
    loss_cfg: &LossConfig,
    l2_lambda: f64,
) -> Result<(f64, Vec<f64>)> {
    let mut grads = vec![0.0; params.values.len()];
    let scale = 1.0 / batch.len().max(1) as f64;
    let mut total = 0.0;
    for (input, targets) in batch {
        let (head, cache) = forward(params, input)?;
        let (lv, mut d) = frame_loss(&head, targets, loss_cfg);
        total += lv.total * scale;
        for v in d.cls.iter_mut().chain(d.dir.iter_mut()).chain(d.reg.iter_mut().flatten()) {
            *v *= scale;
        }
        backward_into(params, input, &cache, &d, &mut grads)?;
    }
    total += l2_lambda * params.squared_norm();
    for (g, p) in grads.iter_mut().zip(&params.values) {
        *g += 2.0 * l2_lambda * p;
    }
    Ok((total, grads))
}

/// Train a detector from scratch on `pool` (labeled frames, plus any
/// pseudo-labeled frames mixed at `cfg.ratio`), validating the EMA weights
/// on `validation` after every epoch.
pub fn train(cfg: &TrainConfig, pool: &TrainPool, validation: &[RunSegment], seed_value: u64) -> Result<TrainOutcome> {
    cfg.schedule.validate()?;
    cfg.augmentation.validate()?;
    cfg.model.validate()?;
    let sched = &cfg.schedule;
    let mut params = DetectorParams::init(&cfg.model, seed::derive(seed_value, "init"))?;
    let mut shadow = params.clone();
    let anchors = cfg.model.anchor_boxes();
    let mut stream = pool.stream(cfg.ratio, seed::derive(seed_value, "stream"))?;
    let steps_per_epoch = sched
        .steps_per_epoch
        .unwrap_or_else(|| pool.epoch_frames().div_ceil(sched.batch_size));
    let mut adam = AdamState::new(params.values.len());
    let mut history = Vec::with_capacity(sched.total_epochs);
    let mut best: Option<(f64, usize, DetectorParams)> = None;
    let (mut first_loss, mut last_loss) = (f64::NAN, f64::NAN);
    let mut step = 0usize;
    let mut sample_counter = 0u64;
    for epoch in 0..sched.total_epochs {
        let lr = lr_at(epoch, sched);
        let mut loss_sum = 0.0;
        for _ in 0..steps_per_epoch {
            let mut batch = Vec::with_capacity(sched.batch_size);
            for _ in 0..sched.batch_size {
                let item = stream.next().expect("mix stream is infinite");
                let pf = pool.get(item);
                let aug_seed = seed::derive_index(seed::derive(seed_value, "augment"), sample_counter);
                sample_counter += 1;
                batch.push(prepare_sample(pool.segment_of(pf), pf.frame, &pf.boxes, &pf.lineage, &anchors, cfg, aug_seed));
            }
            let (loss, grads) = batch_loss_and_grad(&params, &batch, &cfg.loss, sched.l2_lambda)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    step,
                    detail: format!("loss {loss} at epoch {epoch}"),
                    last_good: Some(Box::new(shadow)),
                });
            }
            if step == 0 {
                first_loss = loss;
            }
            last_loss = loss;
            adam_step(&mut params.values, &grads, &mut adam, lr);
            ema_update(&mut shadow.values, &params.values, ema_decay_at(step, sched.ema_decay));
            loss_sum += loss;
            step += 1;
        }
        let val = if validation.is_empty() {
            None
        } else {
            Some(evaluate_model(&shadow, validation, &cfg.eval, &cfg.inference)?)
        };
        let (val_ap, val_aph) = val.map_or((f64::NAN, f64::NAN), |v| (v.ap, v.aph));
        log::debug!("epoch {epoch}: loss {:.4} val AP {val_ap:.2} lr {lr:.2e}", loss_sum / steps_per_epoch.max(1) as f64);
        history.push(EpochMetrics {
            epoch,
            steps: steps_per_epoch,
            loss: if steps_per_epoch > 0 { loss_sum / steps_per_epoch as f64 } else { f64::NAN },
            val_ap,
            val_aph,
            lr,
        });
        let score = if val_ap.is_nan() { f64::NEG_INFINITY } else { val_ap };
        if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
            best = Some((score, epoch, shadow.clone()));
        }
    }
    let (best_val_ap, best_epoch, best_params) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        final_params: shadow,
        best_params,
        best_epoch,
        best_val_ap,
        history,
        first_loss,
        last_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::anchors::decode_residuals;

    fn veh(cx: f64, cy: f64, heading: f64) -> Box7 {
        Box7::new(cx, cy, 0.0, 4.725, 2.079, 1.768, heading, ObjectClass::Vehicle)
    }

    /// Offset along x giving IoU `iou` between two same-size axis-aligned boxes.
    fn shift(iou: f64) -> f64 {
        4.725 * (1.0 - iou) / (1.0 + iou)
    }

    #[test]
    fn forced_match_below_background() {
        let th = AssignmentThresholds::for_class(ObjectClass::Vehicle);
        let anchors = [veh(0.0, 0.0, 0.0), veh(100.0, 100.0, 0.0)];
        let labels = assign_anchors(&[veh(shift(0.3), 0.0, 0.0)], &anchors, &th);
        assert_eq!(labels, vec![AnchorLabel::Foreground(0), AnchorLabel::Background]);
        let labels = assign_anchors(&[veh(shift(0.7), 0.0, 0.0)], &anchors, &th);
        assert_eq!(labels[0], AnchorLabel::Foreground(0));
    }

    #[test]
    fn ignore_band_without_forcing() {
        let th = AssignmentThresholds::for_class(ObjectClass::Vehicle);
        // The gt also has a perfect anchor, so no forcing happens.
        let anchors = [veh(0.0, 0.0, 0.0), veh(shift(0.5), 0.0, 0.0), veh(shift(0.3), 0.0, 0.0)];
        let labels = assign_anchors(&[veh(0.0, 0.0, 0.0)], &anchors, &th);
        assert_eq!(labels, vec![AnchorLabel::Foreground(0), AnchorLabel::Ignore, AnchorLabel::Background]);
    }

    #[test]
    fn contested_anchor_goes_to_higher_iou() {
        let th = AssignmentThresholds::for_class(ObjectClass::Vehicle);
        let anchors = [veh(0.0, 0.0, 0.0), veh(4.0, 0.0, 0.0)];
        let g0 = veh(1.5, 0.0, 0.0); // IoU 0.52 with anchor 0, 0.31 with anchor 1
        let g1 = veh(-1.2, 0.0, 0.0); // IoU 0.59 with anchor 0 only
        let labels = assign_anchors(&[g0, g1], &anchors, &th);
        assert_eq!(labels[0], AnchorLabel::Foreground(1));
        assert_eq!(labels[1], AnchorLabel::Foreground(0));
    }

    #[test]
    fn encode_examples() {
        let a = veh(0.0, 0.0, 0.0);
        let (r, flip) = encode_residuals(&a, &a);
        assert_eq!(r, [0.0; 7]);
        assert!(!flip);
        let (r, _) = encode_residuals(&veh(1.0, 0.0, 0.0), &a);
        assert!((r[0] - 1.0 / 4.725f64.hypot(2.079)).abs() < 1e-12);
        assert!((r[0] - 0.1937).abs() < 1e-4);
        let mut g = a;
        g.length *= 2.0;
        assert!((encode_residuals(&g, &a).0[3] - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn encode_decode_with_flip() {
        let a = veh(0.0, 0.0, FRAC_PI_2);
        for h in [-3.0, -1.0, 0.0, 2.5, PI] {
            let g = Box7::new(0.3, -0.2, 0.1, 4.0, 1.9, 1.6, h, ObjectClass::Vehicle);
            let (r, flip) = encode_residuals(&g, &a);
            let d = decode_residuals(&a, &r, flip);
            assert!(heading_distance(d.heading, g.heading) < 1e-9, "{h}");
            assert!((d.cx - g.cx).abs() < 1e-12 && (d.length - g.length).abs() < 1e-12);
        }
    }

    #[test]
    fn focal_half_probability() {
        let (l, _) = focal(0.0, 1.0, 0.25, 2.0);
        assert!((l - 0.25 * 0.25 * std::f64::consts::LN_2).abs() < 1e-15);
        assert!((l - 0.04333).abs() < 1e-5);
    }

    #[test]
    fn loss_derivatives_match_fd() {
        let h = 1e-6;
        for x in [-3.0, -0.4, 0.0, 0.7, 4.0] {
            for t in [0.0, 0.3, 1.0] {
                let (_, d) = focal(x, t, 0.25, 2.0);
                let fd = (focal(x + h, t, 0.25, 2.0).0 - focal(x - h, t, 0.25, 2.0).0) / (2.0 * h);
                assert!((d - fd).abs() < 1e-7, "x={x} t={t}: {d} vs {fd}");
            }
            for t in [false, true] {
                let (_, d) = bce_logit(x, t);
                let fd = (bce_logit(x + h, t).0 - bce_logit(x - h, t).0) / (2.0 * h);
                assert!((d - fd).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn all_ignore_is_zero() {
        let head = HeadOutput::zeros(4);
        let t = FrameTargets {
            cls: vec![ClsTarget::Ignore; 4],
            reg: vec![],
        };
        let (lv, g) = frame_loss(&head, &t, &LossConfig::default());
        assert_eq!((lv.cls, lv.reg), (0.0, 0.0));
        assert!(g.cls.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adam_first_step_is_sign() {
        let mut p = vec![1.0, 1.0, 1.0];
        let mut s = AdamState::new(3);
        adam_step(&mut p, &[0.5, -2.0, 0.0], &mut s, 0.1);
        assert!((p[0] - 0.9).abs() < 1e-7 && (p[1] - 1.1).abs() < 1e-7);
        assert_eq!(p[2], 1.0);
    }

    #[test]
    fn lr_schedule() {
        let s = TrainSchedule {
            total_epochs: 20,
            decay_start_epoch: 5,
            ..TrainSchedule::default()
        };
        assert_eq!(lr_at(0, &s), 3.2e-3);
        assert_eq!(lr_at(5, &s), 3.2e-3);
        assert!((lr_at(19, &s) - 3.2e-5).abs() < 1e-15);
        assert!(lr_at(6, &s) < lr_at(5, &s));
    }

    #[test]
    fn ema_series() {
        let mut s = vec![0.0];
        ema_update(&mut s, &[1.0], 0.99);
        assert!((s[0] - 0.01).abs() < 1e-15);
        for _ in 1..50 {
            ema_update(&mut s, &[1.0], 0.99);
        }
        assert!((s[0] - (1.0 - 0.99f64.powi(50))).abs() < 1e-12);
        let mut fixed = vec![0.3];
        ema_update(&mut fixed, &[0.3], 0.99);
        assert!((fixed[0] - 0.3).abs() < 1e-16);
    }

    #[test]
    fn disabled_augmentation_is_identity() {
        let pts = vec![Point3::new(1.0, 2.0, 0.0, 0.1)];
        let bx = vec![veh(1.0, 2.0, 0.3)];
        let (p, b) = augment(&pts, &bx, &AugmentationPolicy::none(), 9);
        assert_eq!((p, b), (pts, bx));
    }

    #[test]
    fn zero_steps_returns_init() {
        let seg = crate::synth::generate_segment(
            1,
            &crate::synth::make_domain_defaults().0,
            &crate::synth::SceneConfig::default(),
        )
        .unwrap();
        let cfg = TrainConfig {
            schedule: TrainSchedule {
                steps_per_epoch: Some(0),
                total_epochs: 1,
                decay_start_epoch: 0,
                ..TrainSchedule::default()
            },
            ..TrainConfig::default()
        };
        let out = train(&cfg, &TrainPool::labeled_only(&[seg]), &[], 4).unwrap();
        let init = DetectorParams::init(&cfg.model, seed::derive(4, "init")).unwrap();
        assert_eq!(out.best_params, init);
        assert_eq!(out.final_params, init);
    }
}
