use pillarlab::distill::{pseudo_label, select_score_threshold, student_pool, FilterPolicy};
use pillarlab::metrics::{evaluate_model, EvalConfig};
use pillarlab::net::{checkpoint, InferenceConfig, ModelConfig};
use pillarlab::store::{MixRatio, TrainPool};
use pillarlab::synth::{generate_segments, make_domain_defaults, RunSegment, SceneConfig};
use pillarlab::trainer::{train, AugmentationPolicy, TrainConfig, TrainOutcome, TrainSchedule};
use pillarlab::Error;

fn segments(seed: u64, n: usize) -> Vec<RunSegment> {
    let (source, _) = make_domain_defaults();
    let scene = SceneConfig {
        frames_per_segment: 2,
        ..SceneConfig::default()
    };
    generate_segments(seed, n, &source, &scene).unwrap()
}

fn short_run(pool: &TrainPool, val: &[RunSegment], ratio: MixRatio) -> TrainOutcome {
    let cfg = TrainConfig {
        schedule: TrainSchedule {
            total_epochs: 3,
            decay_start_epoch: 1,
            steps_per_epoch: Some(15),
            batch_size: 2,
            ..TrainSchedule::default()
        },
        augmentation: AugmentationPolicy::none(),
        ratio,
        ..TrainConfig::default()
    };
    train(&cfg, pool, val, 1).unwrap()
}

#[test]
fn teacher_student_round_trip() {
    let labeled = segments(1, 3);
    let val = segments(2, 1);
    let teacher = short_run(&TrainPool::labeled_only(&labeled), &val, MixRatio::default());
    assert!(teacher.last_loss < teacher.first_loss, "{} -> {}", teacher.first_loss, teacher.last_loss);
    assert!(teacher.best_params.is_finite());
    assert_eq!(teacher.history.len(), 3);

    // Checkpoints survive the disk and refuse a different architecture.
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("teacher.ckpt");
    checkpoint::save(&teacher.best_params, &path).unwrap();
    let loaded = checkpoint::load(&path, Some(&teacher.best_params.config)).unwrap();
    assert_eq!(loaded.values, teacher.best_params.values);
    let wider = ModelConfig {
        width_multiplier: 2,
        ..ModelConfig::default()
    };
    assert!(matches!(checkpoint::load(&path, Some(&wider)), Err(Error::ConfigMismatch(_))));

    let threshold = select_score_threshold(&loaded, &val, &[0.1, 0.3, 0.5], 0.5, 0.5).unwrap();
    assert!([0.1, 0.3, 0.5].contains(&threshold));

    let unlabeled: Vec<RunSegment> = segments(3, 2).iter().map(RunSegment::strip_labels).collect();
    let policy = FilterPolicy {
        score_threshold: threshold,
        ..FilterPolicy::default()
    };
    let set = pseudo_label(&loaded, "t", &unlabeled, &policy, InferenceConfig::default().nms_iou).unwrap();
    assert_eq!(set.frames.len(), 4);
    assert!(set.frames.values().flatten().all(|b| b.score.unwrap() >= threshold));

    let pool = student_pool(&labeled, &unlabeled, &set).unwrap();
    assert_eq!(pool.pseudo.len(), 4);
    let student = short_run(&pool, &val, MixRatio::new(1, 1).unwrap());
    let summary = evaluate_model(&student.best_params, &val, &EvalConfig::default(), &InferenceConfig::default()).unwrap();
    assert!((0.0..=100.0).contains(&summary.ap));
    assert!(summary.aph <= summary.ap);
}

#[test]
fn training_is_deterministic() {
    let labeled = segments(4, 2);
    let val = segments(5, 1);
    let pool = TrainPool::labeled_only(&labeled);
    let a = short_run(&pool, &val, MixRatio::default());
    let b = short_run(&pool, &val, MixRatio::default());
    assert_eq!(a.final_params.values, b.final_params.values);
    assert_eq!(a.history, b.history);
}

#[test]
fn threshold_selection_rejects_bad_candidates() {
    let params = pillarlab::net::DetectorParams::init(&ModelConfig::default(), 0).unwrap();
    let val = segments(6, 1);
    assert!(select_score_threshold(&params, &val, &[], 0.5, 0.5).is_err());
    assert!(select_score_threshold(&params, &val, &[1.5], 0.5, 0.5).is_err());
}
