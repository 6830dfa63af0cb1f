use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use pillarlab::distill::{pseudo_label, FilterPolicy};
use pillarlab::geom::ObjectClass;
use pillarlab::metrics::{
    ancova_group_test, ancova_points, dataset_stats, evaluate_model, sign_test_greater, teacher_student_pairs,
    EvalConfig,
};
use pillarlab::net::checkpoint;
use pillarlab::orchestrator::{
    load_records, plan_from_toml, plan_to_toml, plot_records_svg, prepare_data, recipe, records_path, run_plan,
    DataConfig, TrainFile,
};
use pillarlab::store::{read_dataset, sample_labeled_split, PseudoLabelSet, TrainPool};
use pillarlab::trainer::{train, TrainConfig};

#[derive(Parser)]
#[command(name = "pillarlab", version, about = "Pseudo-label training laboratory for pillar-based LiDAR detectors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic source/target datasets.
    GenData {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// TOML data configuration (sizes, scene, domain profiles).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a detector on a labeled split, optionally mixed with pseudo-labels.
    Train {
        /// Dataset directory written by `gen-data`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// TOML training config (model.*, schedule.*, aug.*, data.*).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Pseudo-label file; its target-domain segments join the stream.
        #[arg(long)]
        pseudo: Option<PathBuf>,
    },
    /// Pseudo-label the unlabeled target segments with a checkpoint.
    PseudoLabel {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Root directory; the file goes to `<out>/pseudo/<teacher-id>.plb`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "teacher")]
        teacher_id: String,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long)]
        pedestrian_threshold: Option<f64>,
    },
    /// Evaluate a checkpoint on the source and target validation sets.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// CSV output path (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Execute an experiment plan.
    RunPlan {
        /// Plan TOML (see `recipe`).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Skip runs that already have a successful record.
        #[arg(long)]
        resume: bool,
        /// Also write `<out>/records.svg`.
        #[arg(long)]
        plot: bool,
        /// Shrink the plan to smoke-test size.
        #[arg(long)]
        minimal: bool,
        /// Override the number of seeds.
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Print (or write) the plan of a named recipe as TOML.
    Recipe {
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize a record CSV: teacher/student gains and the ANCOVA test.
    Analyze {
        records: PathBuf,
        /// Write an SVG scatter plot next to the CSV.
        #[arg(long)]
        plot: bool,
    },
    /// Per-domain ground-truth statistics of a dataset directory.
    Stats {
        #[arg(long)]
        data: PathBuf,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::GenData { out, config, seed } => gen_data(&out, config.as_deref(), seed),
        Command::Train {
            data,
            out,
            config,
            seed,
            pseudo,
        } => train_cmd(&data, &out, config.as_deref(), seed, pseudo.as_deref()),
        Command::PseudoLabel {
            data,
            checkpoint,
            out,
            teacher_id,
            threshold,
            pedestrian_threshold,
        } => pseudo_cmd(&data, &checkpoint, &out, &teacher_id, threshold, pedestrian_threshold),
        Command::Eval { data, checkpoint, out } => eval_cmd(&data, &checkpoint, out.as_deref()),
        Command::RunPlan {
            config,
            out,
            resume,
            plot,
            minimal,
            seeds,
        } => {
            let text = std::fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let mut plan = plan_from_toml(&text)?;
            if minimal {
                plan = plan.minimal();
            }
            if let Some(n) = seeds {
                plan.seeds = n;
            }
            let records = run_plan(&plan, &out, resume)?;
            let failed = records.iter().filter(|r| r.status != "ok").count();
            log::info!("{} records ({failed} failed) in {}", records.len(), records_path(&out).display());
            if plot {
                let path = out.join("records.svg");
                std::fs::write(&path, plot_records_svg(&records, &plan.name))?;
                log::info!("plot written to {}", path.display());
            }
            Ok(())
        }
        Command::Recipe { name, out } => {
            let text = plan_to_toml(&recipe(&name)?)?;
            match out {
                Some(p) => std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{text}"),
            }
            Ok(())
        }
        Command::Analyze { records, plot } => analyze(&records, plot),
        Command::Stats { data } => stats(&data),
    }
}

fn gen_data(out: &Path, config: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let mut cfg = match config {
        Some(p) => toml::from_str::<DataConfig>(&std::fs::read_to_string(p)?)?,
        None => DataConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let d = prepare_data(&cfg, out)?;
    println!(
        "source-train {} target-train {} source-val {} target-val {} segments in {}",
        d.source_train.len(),
        d.target_train.len(),
        d.source_val.len(),
        d.target_val.len(),
        out.display()
    );
    Ok(())
}

fn train_cmd(data: &Path, out: &Path, config: Option<&Path>, seed: Option<u64>, pseudo: Option<&Path>) -> Result<()> {
    let file = match config {
        Some(p) => TrainFile::load(p)?,
        None => TrainFile::default(),
    };
    let cfg: TrainConfig = file.apply(&TrainConfig::default())?;
    let seed = seed.or(file.data.seed).unwrap_or(0);
    let fraction = file.data.labeled_fraction.unwrap_or(1.0);
    let (_, source) = read_dataset(data, "source-train")?;
    let (_, val) = read_dataset(data, "source-val")?;
    let ids: Vec<String> = source.iter().map(|s| s.segment_id.clone()).collect();
    let (lab, _) = sample_labeled_split(&ids, fraction, seed)?;
    let labeled: Vec<_> = source.into_iter().filter(|s| lab.contains(&s.segment_id)).collect();
    let mut pool = TrainPool::labeled_only(&labeled);
    if let Some(p) = pseudo {
        let set = PseudoLabelSet::load(p)?;
        let (_, target) = read_dataset(data, "target-train")?;
        pool.add_pseudo(&target, &set);
    }
    let outcome = train(&cfg, &pool, &val, seed)?;
    std::fs::create_dir_all(out)?;
    checkpoint::save(&outcome.best_params, &out.join("best.ckpt"))?;
    checkpoint::save(&outcome.final_params, &out.join("final.ckpt"))?;
    std::fs::write(out.join("history.csv"), outcome.history_csv())?;
    println!(
        "best source-val AP {:.2} at epoch {}; checkpoints in {}",
        outcome.best_val_ap,
        outcome.best_epoch,
        out.display()
    );
    Ok(())
}

fn pseudo_cmd(
    data: &Path,
    ckpt: &Path,
    out: &Path,
    teacher_id: &str,
    threshold: f64,
    pedestrian_threshold: Option<f64>,
) -> Result<()> {
    let teacher = checkpoint::load(ckpt, None)?;
    let (_, target) = read_dataset(data, "target-train")?;
    let policy = FilterPolicy {
        score_threshold: threshold,
        pedestrian_threshold,
        ..FilterPolicy::default()
    };
    let set = pseudo_label(&teacher, teacher_id, &target, &policy, teacher_inference().nms_iou)?;
    let path = set.save(out)?;
    println!("{} pseudo boxes over {} frames -> {}", set.num_boxes(), set.frames.len(), path.display());
    Ok(())
}

fn teacher_inference() -> pillarlab::net::InferenceConfig {
    pillarlab::net::InferenceConfig::default()
}

fn eval_cmd(data: &Path, ckpt: &Path, out: Option<&Path>) -> Result<()> {
    let params = checkpoint::load(ckpt, None)?;
    let eval = EvalConfig::default();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["class", "domain", "AP", "APH", "#gts", "#dets"])?;
    for name in ["source-val", "target-val"] {
        let (_, segs) = read_dataset(data, name)?;
        let s = evaluate_model(&params, &segs, &eval, &teacher_inference())?;
        let domain = segs.first().map_or(name.to_string(), |s| s.domain.clone());
        w.write_record([
            params.config.class.to_string(),
            domain,
            format!("{:.4}", s.ap),
            format!("{:.4}", s.aph),
            s.num_gt.to_string(),
            s.num_det.to_string(),
        ])?;
    }
    let bytes = w.into_inner()?;
    match out {
        Some(p) => std::fs::write(p, bytes)?,
        None => std::io::stdout().write_all(&bytes)?,
    }
    Ok(())
}

fn analyze(path: &Path, plot: bool) -> Result<()> {
    let records = load_records(path)?;
    if records.is_empty() {
        bail!("no records in {}", path.display());
    }
    let pairs = teacher_student_pairs(&records);
    println!("{} records, {} teacher/student pairs", records.len(), pairs.len());
    let mut keys: Vec<(ObjectClass, String, String)> = pairs
        .iter()
        .map(|p| (p.student.class, format!("{}", p.student.labeled_fraction), p.student.teacher_config.clone()))
        .collect();
    keys.sort();
    keys.dedup();
    println!("class,fraction,teacher,n,teacher_ap,student_ap,gain,wins,sign_p,teacher_tgt_ap,student_tgt_ap");
    for (class, fraction, teacher) in keys {
        let group: Vec<_> = pairs
            .iter()
            .filter(|p| {
                p.student.class == class
                    && format!("{}", p.student.labeled_fraction) == fraction
                    && p.student.teacher_config == teacher
            })
            .collect();
        let n = group.len() as f64;
        let mean = |f: &dyn Fn(&pillarlab::metrics::TeacherStudent) -> f64| group.iter().map(|p| f(p)).sum::<f64>() / n;
        let gains: Vec<f64> = group.iter().map(|p| p.source_gain()).collect();
        let (wins, m, p) = sign_test_greater(&gains);
        println!(
            "{class},{fraction},{teacher},{},{:.2},{:.2},{:+.2},{wins}/{m},{p:.4},{:.2},{:.2}",
            group.len(),
            mean(&|p| p.teacher.source_ap),
            mean(&|p| p.student.source_ap),
            mean(&|p| p.source_gain()),
            mean(&|p| p.teacher.target_ap),
            mean(&|p| p.student.target_ap),
        );
    }
    match ancova_group_test(&ancova_points(&records)) {
        Ok(r) => {
            println!(
                "ANCOVA (target AP ~ source AP + group): F = {:.4}, p = {:.4e}, df = (1, {})",
                r.f_statistic, r.p_value, r.df_den
            );
            println!("  common slope {:.4}; intercepts teacher {:.3} student {:.3}", r.common_slope, r.group_intercepts[0], r.group_intercepts[1]);
            for (name, fit) in ["teacher", "student"].iter().zip(&r.group_fits) {
                println!("  {name}: target = {:.4} * source + {:.3} (n = {})", fit.slope, fit.intercept, fit.n);
            }
        }
        Err(e) => println!("ANCOVA not available: {e}"),
    }
    if plot {
        let svg_path = path.with_extension("svg");
        let title = path.file_stem().map_or("records".into(), |s| s.to_string_lossy().into_owned());
        std::fs::write(&svg_path, plot_records_svg(&records, &title))?;
        println!("plot written to {}", svg_path.display());
    }
    Ok(())
}

fn stats(data: &Path) -> Result<()> {
    println!("dataset,domain,frames,vehicles,mean_vehicle_length,mean_vehicle_width,pedestrian_scene_fraction,mean_pedestrians_per_scene");
    for name in ["source-train", "source-val", "target-val"] {
        let (_, segs) = read_dataset(data, name)?;
        for s in dataset_stats(&segs)? {
            println!(
                "{name},{},{},{},{:.3},{:.3},{:.3},{:.3}",
                s.domain,
                s.frames,
                s.vehicles,
                s.mean_vehicle_length,
                s.mean_vehicle_width,
                s.pedestrian_scene_fraction,
                s.mean_pedestrians_per_scene
            );
        }
    }
    Ok(())
}
