//! Experiment plans, named recipes and the resumable end-to-end runner:
//! train teacher → pseudo-label → train student → evaluate, one CSV row per
//! trained model.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::distill::{self, FilterPolicy, SoftLabelMode};
use crate::error::{Error, Result};
use crate::geom::ObjectClass;
use crate::metrics::{evaluate_model, EvalConfig, EvalSummary, ExperimentRecord, Role};
use crate::net::{checkpoint, DetectorParams, ModelConfig};
use crate::seed;
use crate::store::{self, MixRatio, Split, TrainPool};
use crate::synth::{generate_segments, make_domain_defaults, DomainProfile, RunSegment, SceneConfig};
use crate::trainer::{self, AugmentationPolicy, TrainConfig, TrainOutcome, TrainSchedule};

/// Names accepted by [`recipe`].
pub const RECIPES: [&str; 9] = [
    "fig3",
    "fig4",
    "table1-augs",
    "a3-aug-matrix",
    "fig-width",
    "fig5-ancova",
    "fig6-distill",
    "table2-scale",
    "a6-negative",
];

/// Synthetic dataset sizes and generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub seed: u64,
    pub source_train: usize,
    pub target_train: usize,
    pub source_val: usize,
    pub target_val: usize,
    pub scene: SceneConfig,
    pub source: DomainProfile,
    pub target: DomainProfile,
}

impl Default for DataConfig {
    fn default() -> Self {
        let (source, target) = make_domain_defaults();
        Self {
            seed: 2021,
            source_train: 80,
            target_train: 56,
            source_val: 16,
            target_val: 16,
            scene: SceneConfig::default(),
            source,
            target,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.source_train == 0 || self.source_val == 0 || self.target_val == 0 {
            return Err(Error::InvalidConfig("source train/val and target val sets must be non-empty".into()));
        }
        self.source.validate()?;
        self.target.validate()
    }

    fn profile(&self, domain: UnlabeledDomain) -> &DomainProfile {
        match domain {
            UnlabeledDomain::Target => &self.target,
            _ => &self.source,
        }
    }
}

/// The four datasets every plan draws from. Target training segments carry
/// no labels.
#[derive(Debug, Clone)]
pub struct Datasets {
    pub source_train: Vec<RunSegment>,
    pub target_train: Vec<RunSegment>,
    pub source_val: Vec<RunSegment>,
    pub target_val: Vec<RunSegment>,
}

const DATASET_NAMES: [&str; 4] = ["source-train", "target-train", "source-val", "target-val"];

fn generate_datasets(cfg: &DataConfig) -> Result<Datasets> {
    let gen = |tag: &str, n: usize, p: &DomainProfile| generate_segments(seed::derive(cfg.seed, tag), n, p, &cfg.scene);
    Ok(Datasets {
        source_train: gen("source-train", cfg.source_train, &cfg.source)?,
        target_train: gen("target-train", cfg.target_train, &cfg.target)?
            .iter()
            .map(RunSegment::strip_labels)
            .collect(),
        source_val: gen("source-val", cfg.source_val, &cfg.source)?,
        target_val: gen("target-val", cfg.target_val, &cfg.target)?,
    })
}

/// Generate the datasets under `root`, or read them back if an identical
/// configuration was generated there before.
pub fn prepare_data(cfg: &DataConfig, root: &Path) -> Result<Datasets> {
    cfg.validate()?;
    let cfg_path = root.join("data-config.json");
    if cfg_path.exists() {
        let bytes = std::fs::read(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
        let stored: DataConfig = serde_json::from_slice(&bytes)?;
        if &stored != cfg {
            return Err(Error::InvalidConfig(format!(
                "{} holds data generated from a different configuration",
                root.display()
            )));
        }
        let mut sets = DATASET_NAMES.iter().map(|n| store::read_dataset(root, n).map(|(_, s)| s));
        let mut next = || sets.next().expect("four datasets");
        return Ok(Datasets {
            source_train: next()?,
            target_train: next()?,
            source_val: next()?,
            target_val: next()?,
        });
    }
    let data = generate_datasets(cfg)?;
    let all = |s: &[RunSegment], l: bool| vec![l; s.len()];
    store::write_dataset(root, DATASET_NAMES[0], Split::Train, &data.source_train, &all(&data.source_train, true))?;
    store::write_dataset(root, DATASET_NAMES[1], Split::Train, &data.target_train, &all(&data.target_train, false))?;
    store::write_dataset(root, DATASET_NAMES[2], Split::Validation, &data.source_val, &all(&data.source_val, true))?;
    store::write_dataset(root, DATASET_NAMES[3], Split::Validation, &data.target_val, &all(&data.target_val, true))?;
    store::write_atomic(&cfg_path, &serde_json::to_vec_pretty(cfg)?)?;
    Ok(data)
}

/// Architecture and augmentation of one trained model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub width: usize,
    pub frames: usize,
    pub augmentation: AugmentationPolicy,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            width: 1,
            frames: 1,
            augmentation: AugmentationPolicy::default(),
        }
    }
}

impl ModelSpec {
    pub fn new(width: usize, frames: usize, augmentation: AugmentationPolicy) -> Self {
        Self {
            width,
            frames,
            augmentation,
        }
    }

    /// e.g. `w2f1-rot+flip`.
    pub fn tag(&self) -> String {
        format!("w{}f{}-{}", self.width, self.frames, self.augmentation.label())
    }

    pub fn model_config(&self, class: ObjectClass) -> ModelConfig {
        ModelConfig {
            width_multiplier: self.width,
            num_frames: self.frames,
            class,
            ..ModelConfig::default()
        }
    }
}

/// Labeled:pseudo frame ratio, either fixed or proportional to the amount
/// of data on each side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum RatioPolicy {
    Proportional,
    Fixed(MixRatio),
}

impl RatioPolicy {
    /// Proportional resolves to `1:round(pseudo/labeled)` (at least 1:1).
    pub fn resolve(&self, labeled_frames: usize, pseudo_frames: usize) -> MixRatio {
        match self {
            RatioPolicy::Fixed(r) => *r,
            RatioPolicy::Proportional => {
                let b = (pseudo_frames as f64 / labeled_frames.max(1) as f64).round().max(1.0);
                MixRatio::new(1, b as u32).expect("positive ratio")
            }
        }
    }

    fn id_tag(&self) -> String {
        match self {
            RatioPolicy::Proportional => "prop".into(),
            RatioPolicy::Fixed(r) => format!("{}-{}", r.labeled, r.pseudo),
        }
    }
}

impl fmt::Display for RatioPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RatioPolicy::Proportional => f.write_str("proportional"),
            RatioPolicy::Fixed(r) => write!(f, "{r}"),
        }
    }
}

impl FromStr for RatioPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "proportional" | "prop" => Ok(RatioPolicy::Proportional),
            other => other.parse().map(RatioPolicy::Fixed),
        }
    }
}

impl TryFrom<String> for RatioPolicy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<RatioPolicy> for String {
    fn from(r: RatioPolicy) -> String {
        r.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnlabeledDomain {
    /// Source training segments outside the labeled split.
    Source,
    /// Target-domain training segments (never labeled).
    Target,
    Both,
}

impl UnlabeledDomain {
    fn name(self) -> &'static str {
        match self {
            UnlabeledDomain::Source => "source",
            UnlabeledDomain::Target => "target",
            UnlabeledDomain::Both => "both",
        }
    }
}

/// Unlabeled pool: the base segments of `domain` plus `multiplier - 1`
/// extra copies of the base dataset size, freshly generated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnlabeledSpec {
    pub domain: UnlabeledDomain,
    pub multiplier: usize,
}

impl UnlabeledSpec {
    pub fn new(domain: UnlabeledDomain, multiplier: usize) -> Self {
        Self { domain, multiplier }
    }

    pub fn tag(&self) -> String {
        format!("{}x{}", self.domain.name(), self.multiplier)
    }
}

/// Pseudo-label training variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillVariant {
    pub soft_label_mode: SoftLabelMode,
    pub ignore_band: (f64, f64),
    /// Successive teacher → student rounds.
    pub rounds: usize,
}

impl Default for DistillVariant {
    fn default() -> Self {
        Self {
            soft_label_mode: SoftLabelMode::Hard,
            ignore_band: (0.5, 0.5),
            rounds: 1,
        }
    }
}

impl DistillVariant {
    pub fn tag(&self) -> String {
        let mut t = self.soft_label_mode.name().to_string();
        let (lo, hi) = self.ignore_band;
        if hi > lo {
            t.push_str(&format!("-band{lo}-{hi}"));
        }
        t
    }
}

/// A grid of runs. Every combination of fraction × teacher × student ×
/// ratio × unlabeled pool × variant × class is trained `seeds` times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentPlan {
    pub name: String,
    pub description: String,
    pub classes: Vec<ObjectClass>,
    pub fractions: Vec<f64>,
    pub teachers: Vec<ModelSpec>,
    pub students: Vec<ModelSpec>,
    pub ratios: Vec<RatioPolicy>,
    pub unlabeled: Vec<UnlabeledSpec>,
    pub variants: Vec<DistillVariant>,
    pub seeds: usize,
    /// Also train labeled-only models with each student configuration.
    pub baselines: bool,
    pub schedule: TrainSchedule,
    /// Labeled-only runs at or below this fraction train for twice the
    /// epochs (and start decaying twice as late).
    pub long_schedule_fraction: f64,
    /// Fixed pseudo-label score threshold; when absent the threshold is
    /// chosen per teacher on source validation from `threshold_candidates`.
    pub score_threshold: Option<f64>,
    pub threshold_candidates: Vec<f64>,
    pub data: DataConfig,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            name: "custom".into(),
            description: String::new(),
            classes: vec![ObjectClass::Vehicle],
            fractions: vec![0.1],
            teachers: vec![ModelSpec::default()],
            students: vec![ModelSpec::default()],
            ratios: vec![RatioPolicy::Proportional],
            unlabeled: vec![UnlabeledSpec::new(UnlabeledDomain::Both, 1)],
            variants: vec![DistillVariant::default()],
            seeds: 5,
            baselines: false,
            schedule: TrainSchedule::default(),
            long_schedule_fraction: 0.1,
            score_threshold: None,
            threshold_candidates: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7],
            data: DataConfig::default(),
        }
    }
}

/// One model to train, fully resolved from a plan.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedRun {
    pub run_id: String,
    pub role: Role,
    /// Run whose best checkpoint pseudo-labels this student's data.
    pub teacher_ref: Option<String>,
    pub class: ObjectClass,
    pub fraction: f64,
    pub replicate: usize,
    pub model: ModelSpec,
    pub teacher_model: Option<ModelSpec>,
    pub ratio: Option<RatioPolicy>,
    pub unlabeled: Option<UnlabeledSpec>,
    pub variant: Option<DistillVariant>,
    /// 1-based distillation round.
    pub round: usize,
    pub seed: u64,
    /// Shared by every run of the same (class, fraction, replicate) so
    /// teachers, students and baselines see the same labeled segments.
    pub split_seed: u64,
}

fn fraction_tag(f: f64) -> String {
    format!("{f}")
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(format!("plan '{}': {m}", self.name)));
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || "-_".contains(c)) {
            return bad("name must be non-empty [A-Za-z0-9_-]".into());
        }
        if let Some(f) = self.fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return bad(format!("labeled fraction {f} outside (0, 1]"));
        }
        for (what, empty) in [
            ("classes", self.classes.is_empty()),
            ("fractions", self.fractions.is_empty()),
            ("teachers", self.teachers.is_empty()),
            ("students", self.students.is_empty()),
            ("ratios", self.ratios.is_empty()),
            ("unlabeled", self.unlabeled.is_empty()),
            ("variants", self.variants.is_empty()),
        ] {
            if empty {
                return bad(format!("{what} must be non-empty"));
            }
        }
        if self.seeds == 0 {
            return bad("seeds must be >= 1".into());
        }
        for spec in self.teachers.iter().chain(&self.students) {
            spec.model_config(ObjectClass::Vehicle).validate()?;
            spec.augmentation.validate()?;
        }
        if self.unlabeled.iter().any(|u| u.multiplier == 0) {
            return bad("unlabeled multiplier must be >= 1".into());
        }
        for v in &self.variants {
            if v.rounds == 0 {
                return bad("variant rounds must be >= 1".into());
            }
            FilterPolicy {
                soft_label_mode: v.soft_label_mode,
                ignore_band: v.ignore_band,
                ..FilterPolicy::default()
            }
            .validate()?;
        }
        match self.score_threshold {
            Some(t) if !(0.0..=1.0).contains(&t) => return bad(format!("score threshold {t} outside [0, 1]")),
            None if self.threshold_candidates.is_empty()
                || self.threshold_candidates.iter().any(|t| !(0.0..=1.0).contains(t)) =>
            {
                return bad("threshold candidates must be non-empty and within [0, 1]".into())
            }
            _ => {}
        }
        self.schedule.validate()?;
        let mut ids = std::collections::HashSet::new();
        for r in self.expand() {
            if !ids.insert(r.run_id.clone()) {
                return bad(format!("duplicate run id {}", r.run_id));
            }
        }
        self.data.validate()
    }

    /// Expand into runs in execution order: every teacher precedes its
    /// students, and round k precedes round k+1.
    pub fn expand(&self) -> Vec<PlannedRun> {
        let mut runs = Vec::new();
        let seed_of = |id: &str| seed::fnv1a(id.as_bytes());
        for &class in &self.classes {
            for &fraction in &self.fractions {
                for rep in 0..self.seeds {
                    let point = format!("{}.{class}.f{}.s{rep}", self.name, fraction_tag(fraction));
                    let split_seed = seed::fnv1a(format!("{point}.split").as_bytes());
                    let base = PlannedRun {
                        run_id: String::new(),
                        role: Role::Teacher,
                        teacher_ref: None,
                        class,
                        fraction,
                        replicate: rep,
                        model: ModelSpec::default(),
                        teacher_model: None,
                        ratio: None,
                        unlabeled: None,
                        variant: None,
                        round: 1,
                        seed: 0,
                        split_seed,
                    };
                    for t in &self.teachers {
                        let tid = format!("{point}.t-{}", t.tag());
                        runs.push(PlannedRun {
                            run_id: tid.clone(),
                            seed: seed_of(&tid),
                            model: *t,
                            ..base.clone()
                        });
                        for s in &self.students {
                            for ratio in &self.ratios {
                                for u in &self.unlabeled {
                                    for v in &self.variants {
                                        let sid = format!(
                                            "{tid}.s-{}.{}.{}.{}",
                                            s.tag(),
                                            ratio.id_tag(),
                                            u.tag(),
                                            v.tag()
                                        );
                                        let mut prev = tid.clone();
                                        for round in 1..=v.rounds {
                                            let id = if v.rounds == 1 { sid.clone() } else { format!("{sid}.k{round}") };
                                            runs.push(PlannedRun {
                                                run_id: id.clone(),
                                                role: Role::Student,
                                                teacher_ref: Some(prev.clone()),
                                                model: *s,
                                                teacher_model: Some(*t),
                                                ratio: Some(*ratio),
                                                unlabeled: Some(*u),
                                                variant: Some(*v),
                                                round,
                                                seed: seed_of(&id),
                                                ..base.clone()
                                            });
                                            prev = id;
                                        }
                                    }
                                }
                            }
                        }
                    }
                    if self.baselines {
                        for s in &self.students {
                            let id = format!("{point}.b-{}", s.tag());
                            runs.push(PlannedRun {
                                run_id: id.clone(),
                                role: Role::Baseline,
                                seed: seed_of(&id),
                                model: *s,
                                ..base.clone()
                            });
                        }
                    }
                }
            }
        }
        runs
    }

    /// Training configuration of a run.
    pub fn train_config(&self, run: &PlannedRun) -> TrainConfig {
        let mut cfg = TrainConfig {
            model: run.model.model_config(run.class),
            schedule: self.schedule.clone(),
            augmentation: run.model.augmentation,
            ..TrainConfig::default()
        };
        if run.role != Role::Student && run.fraction <= self.long_schedule_fraction + 1e-12 {
            cfg.schedule.total_epochs *= 2;
            cfg.schedule.decay_start_epoch *= 2;
        }
        cfg
    }

    /// Shrink to a smoke-test size: tiny datasets, two-step epochs, at most
    /// two seeds. Grid structure is unchanged.
    pub fn minimal(mut self) -> Self {
        self.seeds = self.seeds.min(2);
        self.data.source_train = 10;
        self.data.target_train = 4;
        self.data.source_val = 2;
        self.data.target_val = 2;
        self.data.scene.frames_per_segment = 2;
        self.schedule.total_epochs = 2;
        self.schedule.decay_start_epoch = 1;
        self.schedule.steps_per_epoch = Some(2);
        self.schedule.batch_size = 2;
        self
    }
}

/// The plan reproducing a named figure or table at desk scale.
pub fn recipe(name: &str) -> Result<ExperimentPlan> {
    let rot_flip = AugmentationPolicy::default();
    let none = AugmentationPolicy::none();
    let w = |width: usize, frames: usize| ModelSpec::new(width, frames, rot_flip);
    let all_fractions = vec![0.1, 0.2, 0.3, 0.5, 1.0];
    let base = ExperimentPlan {
        name: name.to_string(),
        ..ExperimentPlan::default()
    };
    let plan = match name {
        // Better teachers lead to better students: identical teacher and
        // student, teacher quality varied through the labeled fraction.
        "fig3" => ExperimentPlan {
            description: "student vs teacher source AP across labeled fractions".into(),
            fractions: all_fractions,
            ..base
        },
        // Gains shrink as the labeled share grows; plotted against the
        // overall labeled percentage of source + target segments.
        "fig4" => ExperimentPlan {
            description: "teacher and student AP versus overall labeled percentage".into(),
            fractions: all_fractions,
            ..base
        },
        // Stronger teacher augmentation; student fixed to rotate + flip.
        "table1-augs" => {
            let flip_only = AugmentationPolicy {
                rotate: false,
                ..rot_flip
            };
            let rot_only = AugmentationPolicy { flip: false, ..rot_flip };
            ExperimentPlan {
                description: "teacher augmentation strength, full labels, target pseudo-labels".into(),
                fractions: vec![1.0],
                teachers: [none, flip_only, rot_only, rot_flip]
                    .into_iter()
                    .map(|a| ModelSpec::new(1, 1, a))
                    .collect(),
                unlabeled: vec![UnlabeledSpec::new(UnlabeledDomain::Target, 1)],
                ..base
            }
        }
        // Augmentation on/off for teacher and student independently.
        "a3-aug-matrix" => ExperimentPlan {
            description: "augmentation matrix: teacher aug x student aug, full labels".into(),
            fractions: vec![1.0],
            teachers: vec![ModelSpec::new(1, 1, none), ModelSpec::new(1, 1, rot_flip)],
            students: vec![ModelSpec::new(1, 1, none), ModelSpec::new(1, 1, rot_flip)],
            unlabeled: vec![UnlabeledSpec::new(UnlabeledDomain::Target, 1)],
            ..base
        },
        "fig-width" => ExperimentPlan {
            description: "teacher width 1x/2x/4x into a 1x student at 10% and 100% labels".into(),
            fractions: vec![0.1, 1.0],
            teachers: vec![w(1, 1), w(2, 1), w(4, 1)],
            ..base
        },
        // Source vs target AP of every teacher and student, tested with
        // ANCOVA by the analyze step.
        "fig5-ancova" => ExperimentPlan {
            description: "source vs target AP for teachers and students (ANCOVA input)".into(),
            fractions: all_fractions,
            teachers: vec![w(1, 1), w(2, 1)],
            ..base
        },
        "fig6-distill" => ExperimentPlan {
            description: "wider / multi-frame teachers distilled into a 1x 1-frame student at 10% labels".into(),
            classes: vec![ObjectClass::Vehicle, ObjectClass::Pedestrian],
            teachers: vec![w(1, 1), w(2, 1), w(4, 1), w(1, 4), w(2, 4), w(4, 4)],
            baselines: true,
            ..base
        },
        // In-domain unlabeled scale and mixing ratio.
        "table2-scale" => ExperimentPlan {
            description: "unlabeled source pool x1/x4/x16 with labeled:pseudo ratio sweep".into(),
            teachers: vec![w(2, 1)],
            ratios: vec![
                RatioPolicy::Fixed(MixRatio::new(1, 1)?),
                RatioPolicy::Fixed(MixRatio::new(1, 5)?),
                RatioPolicy::Proportional,
            ],
            unlabeled: [1, 4, 16]
                .into_iter()
                .map(|m| UnlabeledSpec::new(UnlabeledDomain::Source, m))
                .collect(),
            baselines: true,
            ..base
        },
        "a6-negative" => {
            let mut variants = Vec::new();
            for mode in [SoftLabelMode::Hard, SoftLabelMode::ScoreTarget, SoftLabelMode::LogitTarget] {
                for band in [(0.5, 0.5), (0.4, 0.6)] {
                    variants.push(DistillVariant {
                        soft_label_mode: mode,
                        ignore_band: band,
                        rounds: 2,
                    });
                }
            }
            ExperimentPlan {
                description: "soft labels x ignore bands, two distillation rounds each".into(),
                variants,
                // The band straddles 0.5, so the filter must keep scores below it.
                score_threshold: Some(0.3),
                ..base
            }
        }
        _ => {
            return Err(Error::UnknownRecipe {
                name: name.to_string(),
                available: RECIPES.join(", "),
            })
        }
    };
    Ok(plan)
}

/// Unlabeled segments for a run, labels stripped.
pub fn unlabeled_pool(
    spec: &UnlabeledSpec,
    data_cfg: &DataConfig,
    data: &Datasets,
    labeled_ids: &[String],
) -> Result<Vec<RunSegment>> {
    let mut pool = Vec::new();
    let wants = |d: UnlabeledDomain| spec.domain == d || spec.domain == UnlabeledDomain::Both;
    let extra = spec.multiplier.saturating_sub(1);
    for (domain, base, unit) in [
        (UnlabeledDomain::Source, &data.source_train, data_cfg.source_train),
        (UnlabeledDomain::Target, &data.target_train, data_cfg.target_train),
    ] {
        if !wants(domain) {
            continue;
        }
        pool.extend(
            base.iter()
                .filter(|s| !labeled_ids.contains(&s.segment_id))
                .map(RunSegment::strip_labels),
        );
        if extra > 0 {
            let tag = format!("{}-extra", domain.name());
            let more = generate_segments(
                seed::derive(data_cfg.seed, &tag),
                extra * unit,
                data_cfg.profile(domain),
                &data_cfg.scene,
            )?;
            pool.extend(more.iter().map(RunSegment::strip_labels));
        }
    }
    Ok(pool)
}

fn labeled_split(data: &Datasets, fraction: f64, split_seed: u64) -> Result<(Vec<String>, Vec<RunSegment>)> {
    let ids: Vec<String> = data.source_train.iter().map(|s| s.segment_id.clone()).collect();
    let (lab, _) = store::sample_labeled_split(&ids, fraction, split_seed)?;
    let segs = data
        .source_train
        .iter()
        .filter(|s| lab.contains(&s.segment_id))
        .cloned()
        .collect();
    Ok((lab, segs))
}

/// Path of the record CSV inside an output directory.
pub fn records_path(out_dir: &Path) -> PathBuf {
    out_dir.join("records.csv")
}

pub fn run_dir(out_dir: &Path, run_id: &str) -> PathBuf {
    out_dir.join("runs").join(run_id)
}

/// Read records, keeping the last row per run id (in first-seen order).
pub fn load_records(path: &Path) -> Result<Vec<ExperimentRecord>> {
    let rows = crate::metrics::read_records(path)?;
    let mut order: Vec<String> = Vec::new();
    let mut latest: HashMap<String, ExperimentRecord> = HashMap::new();
    for r in rows {
        if !latest.contains_key(&r.run_id) {
            order.push(r.run_id.clone());
        }
        latest.insert(r.run_id.clone(), r);
    }
    Ok(order.into_iter().map(|id| latest.remove(&id).expect("present")).collect())
}

/// Append one record as a single write so concurrent appenders never
/// interleave partial rows.
pub fn append_record(path: &Path, record: &ExperimentRecord) -> Result<()> {
    let mut buf = Vec::new();
    {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(&mut buf);
        w.serialize(record)?;
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    if file.metadata().map_err(|e| Error::io(path, e))?.len() == 0 {
        let mut header = Vec::new();
        {
            let mut w = csv::Writer::from_writer(&mut header);
            w.serialize(record)?;
            w.flush().map_err(|e| Error::io(path, e))?;
        }
        // The header writer emits header + row; keep only the header line.
        let end = header.iter().position(|&b| b == b'\n').map_or(header.len(), |i| i + 1);
        header.truncate(end);
        header.extend_from_slice(&buf);
        buf = header;
    }
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct RunManifest<'a> {
    run_id: &'a str,
    role: Role,
    teacher_ref: Option<&'a str>,
    labeled_segments: &'a [String],
    unlabeled_segments: usize,
    pseudo_threshold: Option<f64>,
    seed: u64,
    config: &'a TrainConfig,
}

struct Outcome {
    train: TrainOutcome,
    labeled_ids: Vec<String>,
    cfg: TrainConfig,
    ratio: Option<MixRatio>,
    pseudo_boxes: usize,
    threshold: Option<f64>,
    unlabeled_segments: usize,
}

/// Executes a plan against one output directory.
pub struct Runner<'a> {
    plan: &'a ExperimentPlan,
    out_dir: PathBuf,
    data: Datasets,
    models: HashMap<String, DetectorParams>,
}

impl<'a> Runner<'a> {
    pub fn new(plan: &'a ExperimentPlan, out_dir: &Path) -> Result<Self> {
        plan.validate()?;
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let data = prepare_data(&plan.data, &out_dir.join("data"))?;
        Ok(Self {
            plan,
            out_dir: out_dir.to_path_buf(),
            data,
            models: HashMap::new(),
        })
    }

    pub fn data(&self) -> &Datasets {
        &self.data
    }

    fn teacher_params(&mut self, id: &str, class: ObjectClass, spec: &ModelSpec) -> Result<DetectorParams> {
        if let Some(p) = self.models.get(id) {
            return Ok(p.clone());
        }
        let path = run_dir(&self.out_dir, id).join("best.ckpt");
        let p = checkpoint::load(&path, Some(&spec.model_config(class)))?;
        self.models.insert(id.to_string(), p.clone());
        Ok(p)
    }

    fn train_run(&mut self, run: &PlannedRun) -> Result<Outcome> {
        let (labeled_ids, labeled) = labeled_split(&self.data, run.fraction, run.split_seed)?;
        // Lineage: only labeled source-domain segments may carry labels.
        if let Some(bad) = labeled.iter().find(|s| s.domain != self.plan.data.source.name) {
            return Err(Error::InvalidConfig(format!("labeled split contains {} segment {}", bad.domain, bad.segment_id)));
        }
        let mut cfg = self.plan.train_config(run);
        if run.role != Role::Student {
            let train = trainer::train(&cfg, &TrainPool::labeled_only(&labeled), &self.data.source_val, run.seed)?;
            return Ok(Outcome {
                train,
                labeled_ids,
                cfg,
                ratio: None,
                pseudo_boxes: 0,
                threshold: None,
                unlabeled_segments: 0,
            });
        }
        let teacher_id = run.teacher_ref.as_deref().expect("student has a teacher");
        let teacher_spec = if run.round == 1 { run.teacher_model.expect("teacher spec") } else { run.model };
        let teacher = self.teacher_params(teacher_id, run.class, &teacher_spec)?;
        let unlabeled = unlabeled_pool(&run.unlabeled.expect("pool"), &self.plan.data, &self.data, &labeled_ids)?;
        if unlabeled.iter().any(RunSegment::has_labels) {
            return Err(Error::InvalidConfig("unlabeled pool carries labels".into()));
        }
        let eval = EvalConfig::default();
        let threshold = match self.plan.score_threshold {
            Some(t) => t,
            None => distill::select_score_threshold(
                &teacher,
                &self.data.source_val,
                &self.plan.threshold_candidates,
                eval.iou_for(run.class),
                cfg.inference.nms_iou,
            )?,
        };
        let variant = run.variant.expect("variant");
        let policy = FilterPolicy {
            score_threshold: threshold,
            pedestrian_threshold: None,
            soft_label_mode: variant.soft_label_mode,
            ignore_band: variant.ignore_band,
        };
        let frames = |s: &[RunSegment]| s.iter().map(|x| x.frames.len()).sum::<usize>();
        let ratio = run.ratio.expect("ratio").resolve(frames(&labeled), frames(&unlabeled));
        cfg.ratio = ratio;
        let r = distill::distill_round(
            &teacher,
            teacher_id,
            &run.run_id,
            &labeled,
            &unlabeled,
            &cfg,
            &policy,
            &self.data.source_val,
            run.seed,
        )?;
        let pseudo_path = self.out_dir.join("pseudo").join(format!("{}.plb", run.run_id));
        r.pseudo.save_to(&pseudo_path)?;
        Ok(Outcome {
            train: r.student,
            labeled_ids,
            cfg: TrainConfig {
                pseudo: trainer::PseudoTargetPolicy {
                    mode: policy.soft_label_mode,
                    ignore_band: policy.ignore_band,
                },
                ..cfg
            },
            ratio: Some(ratio),
            pseudo_boxes: r.pseudo.num_boxes(),
            threshold: Some(threshold),
            unlabeled_segments: unlabeled.len(),
        })
    }

    fn record(&self, run: &PlannedRun, status: String) -> ExperimentRecord {
        ExperimentRecord {
            run_id: run.run_id.clone(),
            plan: self.plan.name.clone(),
            role: run.role,
            teacher_ref: run.teacher_ref.clone().unwrap_or_default(),
            class: run.class,
            teacher_config: match run.role {
                Role::Teacher => run.model.tag(),
                Role::Student => run.teacher_model.map(|t| t.tag()).unwrap_or_default(),
                Role::Baseline => String::new(),
            },
            student_config: if run.role == Role::Teacher { String::new() } else { run.model.tag() },
            labeled_fraction: run.fraction,
            ratio: String::new(),
            unlabeled_domain: run.unlabeled.map(|u| u.tag()).unwrap_or_default(),
            variant: run
                .variant
                .map(|v| if v.rounds > 1 { format!("{}-round{}", v.tag(), run.round) } else { v.tag() })
                .unwrap_or_default(),
            seed: run.seed,
            source_ap: 0.0,
            target_ap: 0.0,
            source_aph: 0.0,
            target_aph: 0.0,
            pseudo_boxes: 0,
            pseudo_threshold: None,
            status,
        }
    }

    /// Train, evaluate and persist one run. Component errors become a
    /// record with an `error:` status.
    pub fn execute(&mut self, run: &PlannedRun) -> ExperimentRecord {
        match self.try_execute(run) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("run {} failed: {e}", run.run_id);
                self.record(run, format!("error: {e}"))
            }
        }
    }

    fn try_execute(&mut self, run: &PlannedRun) -> Result<ExperimentRecord> {
        let out = self.train_run(run)?;
        let dir = run_dir(&self.out_dir, &run.run_id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        checkpoint::save(&out.train.best_params, &dir.join("best.ckpt"))?;
        store::write_atomic(&dir.join("history.csv"), out.train.history_csv().as_bytes())?;
        let manifest = RunManifest {
            run_id: &run.run_id,
            role: run.role,
            teacher_ref: run.teacher_ref.as_deref(),
            labeled_segments: &out.labeled_ids,
            unlabeled_segments: out.unlabeled_segments,
            pseudo_threshold: out.threshold,
            seed: run.seed,
            config: &out.cfg,
        };
        store::write_atomic(&dir.join("run.json"), &serde_json::to_vec_pretty(&manifest)?)?;
        let eval = EvalConfig::default();
        let inference = out.cfg.inference;
        let src = evaluate_model(&out.train.best_params, &self.data.source_val, &eval, &inference)?;
        let tgt = evaluate_model(&out.train.best_params, &self.data.target_val, &eval, &inference)?;
        self.models.insert(run.run_id.clone(), out.train.best_params);
        let mut rec = self.record(run, "ok".into());
        rec.ratio = out.ratio.map(|r| r.to_string()).unwrap_or_default();
        set_scores(&mut rec, &src, &tgt);
        rec.pseudo_boxes = out.pseudo_boxes;
        rec.pseudo_threshold = out.threshold;
        rec.validate()?;
        Ok(rec)
    }
}

fn set_scores(rec: &mut ExperimentRecord, src: &EvalSummary, tgt: &EvalSummary) {
    rec.source_ap = src.ap;
    rec.source_aph = src.aph;
    rec.target_ap = tgt.ap;
    rec.target_aph = tgt.aph;
}

/// Execute every run of `plan`, appending one record per trained model to
/// `<out_dir>/records.csv`. With `resume`, runs that already have an `ok`
/// record are skipped; otherwise existing records are discarded first.
/// Returns the plan's records in run order.
pub fn run_plan(plan: &ExperimentPlan, out_dir: &Path, resume: bool) -> Result<Vec<ExperimentRecord>> {
    let mut runner = Runner::new(plan, out_dir)?;
    let path = records_path(out_dir);
    let mut done: HashMap<String, ExperimentRecord> = HashMap::new();
    if path.exists() {
        if resume {
            done = load_records(&path)?
                .into_iter()
                .filter(|r| r.status == "ok")
                .map(|r| (r.run_id.clone(), r))
                .collect();
        } else {
            std::fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
        }
    }
    store::write_atomic(&out_dir.join("plan.toml"), plan_to_toml(plan)?.as_bytes())?;
    let mut records = Vec::new();
    for run in plan.expand() {
        if let Some(r) = done.remove(&run.run_id) {
            records.push(r);
            continue;
        }
        log::info!("run {}", run.run_id);
        let rec = runner.execute(&run);
        append_record(&path, &rec)?;
        records.push(rec);
    }
    Ok(records)
}

pub fn plan_to_toml(plan: &ExperimentPlan) -> Result<String> {
    toml::to_string_pretty(plan).map_err(|e| Error::InvalidConfig(format!("plan serialization: {e}")))
}

pub fn plan_from_toml(text: &str) -> Result<ExperimentPlan> {
    let plan: ExperimentPlan = toml::from_str(text)?;
    plan.validate()?;
    Ok(plan)
}

/// Training config file: `model.*`, `schedule.*`, `aug.*`, `data.*` keys,
/// all optional, applied over the defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainFile {
    pub model: ModelKeys,
    pub schedule: ScheduleKeys,
    pub aug: AugKeys,
    pub data: DataKeys,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelKeys {
    pub width: Option<usize>,
    pub frames: Option<usize>,
    pub base_channels: Option<usize>,
    pub class: Option<ObjectClass>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleKeys {
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub decay_start: Option<usize>,
    pub final_ratio: Option<f64>,
    pub ema: Option<f64>,
    pub batch_size: Option<usize>,
    pub steps_per_epoch: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugKeys {
    pub rotate: Option<bool>,
    pub flip: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataKeys {
    pub labeled_fraction: Option<f64>,
    pub ratio: Option<String>,
    pub seed: Option<u64>,
}

impl TrainFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Apply the keys over `base`.
    pub fn apply(&self, base: &TrainConfig) -> Result<TrainConfig> {
        let mut c = base.clone();
        let m = &self.model;
        c.model.width_multiplier = m.width.unwrap_or(c.model.width_multiplier);
        c.model.num_frames = m.frames.unwrap_or(c.model.num_frames);
        c.model.base_channels = m.base_channels.unwrap_or(c.model.base_channels);
        c.model.class = m.class.unwrap_or(c.model.class);
        let s = &self.schedule;
        c.schedule.base_lr = s.lr.unwrap_or(c.schedule.base_lr);
        c.schedule.total_epochs = s.epochs.unwrap_or(c.schedule.total_epochs);
        c.schedule.decay_start_epoch = s.decay_start.unwrap_or(c.schedule.decay_start_epoch);
        c.schedule.final_lr_ratio = s.final_ratio.unwrap_or(c.schedule.final_lr_ratio);
        c.schedule.ema_decay = s.ema.unwrap_or(c.schedule.ema_decay);
        c.schedule.batch_size = s.batch_size.unwrap_or(c.schedule.batch_size);
        if s.steps_per_epoch.is_some() {
            c.schedule.steps_per_epoch = s.steps_per_epoch;
        }
        c.augmentation.rotate = self.aug.rotate.unwrap_or(c.augmentation.rotate);
        c.augmentation.flip = self.aug.flip.unwrap_or(c.augmentation.flip);
        if let Some(r) = &self.data.ratio {
            c.ratio = r.parse()?;
        }
        c.model.validate()?;
        c.schedule.validate()?;
        c.augmentation.validate()?;
        Ok(c)
    }
}

fn svg_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Two-panel SVG of a record set: student vs teacher source AP (with the
/// y = x diagonal), and target vs source AP for every model by role.
pub fn plot_records_svg(records: &[ExperimentRecord], title: &str) -> String {
    let ok: Vec<&ExperimentRecord> = records.iter().filter(|r| r.status == "ok").collect();
    let by_id: HashMap<&str, &ExperimentRecord> = ok.iter().map(|r| (r.run_id.as_str(), *r)).collect();
    let pairs: Vec<(f64, f64)> = ok
        .iter()
        .filter(|r| r.role == Role::Student)
        .filter_map(|s| by_id.get(s.teacher_ref.as_str()).map(|t| (t.source_ap, s.source_ap)))
        .collect();
    let (pw, ph, pad) = (360.0, 360.0, 50.0);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"sans-serif\" font-size=\"11\">\n",
        2.0 * (pw + 2.0 * pad),
        ph + 2.0 * pad + 20.0
    );
    svg.push_str(&format!("<text x=\"10\" y=\"16\" font-size=\"14\">{}</text>\n", svg_escape(title)));
    let panel = |svg: &mut String, ox: f64, xlabel: &str, ylabel: &str, series: &[(&str, &str, Vec<(f64, f64)>)], diag: bool| {
        let all: Vec<f64> = series.iter().flat_map(|(_, _, p)| p.iter().flat_map(|&(x, y)| [x, y])).collect();
        let hi = all.iter().copied().fold(1.0_f64, f64::max).min(100.0);
        let hi = (hi / 10.0).ceil() * 10.0;
        let oy = 20.0 + pad;
        let sx = |x: f64| ox + pad + x / hi * pw;
        let sy = |y: f64| oy + ph - y / hi * ph;
        svg.push_str(&format!(
            "<rect x=\"{}\" y=\"{oy}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"#444\"/>\n",
            ox + pad
        ));
        for k in 0..=5 {
            let v = hi * k as f64 / 5.0;
            svg.push_str(&format!("<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{v:.0}</text>\n", sx(v), oy + ph + 14.0));
            svg.push_str(&format!("<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{v:.0}</text>\n", ox + pad - 4.0, sy(v) + 4.0));
        }
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
            ox + pad + pw / 2.0,
            oy + ph + 32.0,
            svg_escape(xlabel)
        ));
        svg.push_str(&format!(
            "<text transform=\"translate({:.1},{:.1}) rotate(-90)\" text-anchor=\"middle\">{}</text>\n",
            ox + 14.0,
            oy + ph / 2.0,
            svg_escape(ylabel)
        ));
        if diag {
            svg.push_str(&format!(
                "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"#bbb\" stroke-dasharray=\"4\"/>\n",
                sx(0.0),
                sy(0.0),
                sx(hi),
                sy(hi)
            ));
        }
        for (i, (name, color, pts)) in series.iter().enumerate() {
            for &(x, y) in pts {
                svg.push_str(&format!(
                    "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3.5\" fill=\"{color}\" fill-opacity=\"0.7\"/>\n",
                    sx(x),
                    sy(y)
                ));
            }
            let ly = oy + 14.0 + 14.0 * i as f64;
            svg.push_str(&format!("<circle cx=\"{:.1}\" cy=\"{ly:.1}\" r=\"4\" fill=\"{color}\"/>\n", ox + pad + 10.0));
            svg.push_str(&format!("<text x=\"{:.1}\" y=\"{:.1}\">{}</text>\n", ox + pad + 18.0, ly + 4.0, svg_escape(name)));
        }
    };
    panel(&mut svg, 0.0, "teacher source AP", "student source AP", &[("student vs teacher", "#1f77b4", pairs)], true);
    let role_pts = |role: Role| ok.iter().filter(|r| r.role == role).map(|r| (r.source_ap, r.target_ap)).collect::<Vec<_>>();
    panel(
        &mut svg,
        pw + 2.0 * pad,
        "source AP",
        "target AP",
        &[
            ("teacher", "#d62728", role_pts(Role::Teacher)),
            ("student", "#1f77b4", role_pts(Role::Student)),
            ("baseline", "#2ca02c", role_pts(Role::Baseline)),
        ],
        false,
    );
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_recipe_validates_and_ids_are_unique() {
        for name in RECIPES {
            let plan = recipe(name).unwrap();
            plan.validate().unwrap();
            assert_eq!(plan.expand(), plan.expand(), "{name}");
        }
    }

    #[test]
    fn unknown_recipe_lists_available() {
        match recipe("fig99") {
            Err(Error::UnknownRecipe { available, .. }) => assert!(available.contains("fig3")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn fig_width_grid() {
        let plan = recipe("fig-width").unwrap();
        let widths: Vec<usize> = plan.teachers.iter().map(|t| t.width).collect();
        assert_eq!(widths, vec![1, 2, 4]);
        assert_eq!(plan.fractions, vec![0.1, 1.0]);
        assert!(plan.students.iter().all(|s| s.width == 1 && s.frames == 1));
    }

    #[test]
    fn a6_has_two_rounds_per_variant() {
        let plan = recipe("a6-negative").unwrap();
        assert!(plan.variants.iter().all(|v| v.rounds == 2));
        let runs = plan.expand();
        let k2: Vec<&PlannedRun> = runs.iter().filter(|r| r.round == 2).collect();
        assert!(!k2.is_empty());
        for r in k2 {
            let prev = r.teacher_ref.as_ref().unwrap();
            assert!(prev.ends_with(".k1"), "{prev}");
        }
    }

    #[test]
    fn table2_includes_one_to_five() {
        let plan = recipe("table2-scale").unwrap();
        assert!(plan.ratios.contains(&RatioPolicy::Fixed(MixRatio::new(1, 5).unwrap())));
        let m: Vec<usize> = plan.unlabeled.iter().map(|u| u.multiplier).collect();
        assert_eq!(m, vec![1, 4, 16]);
    }

    #[test]
    fn one_point_one_seed_gives_two_runs() {
        let plan = ExperimentPlan {
            seeds: 1,
            ..ExperimentPlan::default()
        };
        let runs = plan.expand();
        assert_eq!(runs.len(), 2);
        assert_eq!(runs[1].teacher_ref.as_deref(), Some(runs[0].run_id.as_str()));
        assert_eq!(runs[0].split_seed, runs[1].split_seed);
        assert_ne!(runs[0].seed, runs[1].seed);
    }

    #[test]
    fn proportional_ratio() {
        assert_eq!(RatioPolicy::Proportional.resolve(64, 1024), MixRatio::new(1, 16).unwrap());
        assert_eq!(RatioPolicy::Proportional.resolve(640, 100), MixRatio::new(1, 1).unwrap());
        assert_eq!("1:5".parse::<RatioPolicy>().unwrap().to_string(), "1:5");
    }

    #[test]
    fn plan_toml_roundtrip() {
        let plan = recipe("table1-augs").unwrap();
        let text = plan_to_toml(&plan).unwrap();
        assert_eq!(plan_from_toml(&text).unwrap(), plan);
    }

    #[test]
    fn long_schedule_only_for_labeled_only_low_fraction() {
        let plan = ExperimentPlan::default();
        let runs = plan.expand();
        let t = plan.train_config(&runs[0]);
        let s = plan.train_config(&runs[1]);
        assert_eq!(t.schedule.total_epochs, 2 * s.schedule.total_epochs);
        assert_eq!(t.schedule.decay_start_epoch, 2 * s.schedule.decay_start_epoch);
    }

    #[test]
    fn train_file_applies_keys() {
        let f = TrainFile::from_toml(
            "[model]\nwidth = 2\n[schedule]\nlr = 0.001\nepochs = 5\ndecay_start = 1\n[aug]\nflip = false\n[data]\nratio = \"1:5\"\n",
        )
        .unwrap();
        let c = f.apply(&TrainConfig::default()).unwrap();
        assert_eq!(c.model.width_multiplier, 2);
        assert_eq!(c.schedule.total_epochs, 5);
        assert!(!c.augmentation.flip && c.augmentation.rotate);
        assert_eq!(c.ratio, MixRatio::new(1, 5).unwrap());
        assert!(TrainFile::from_toml("[model]\nwidht = 2\n").is_err());
    }
}
