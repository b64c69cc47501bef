//! Command-line interface: argument definitions and command implementations.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use tripletrack_core::metric::{CueEncoder, Cues};
use tripletrack_core::metrics::{evaluate, MotReport, SUMMARY_FIELDS};
use tripletrack_core::tracker::Affinity;
use tripletrack_core::training::TrainLogRow;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::experiment::{
    build_scene, calibrate_gate, median, train_id_stage, train_metric_stage, train_motion_stage,
    train_verification_stage, validation_triplets, SceneKind, Study, Variant,
};
use crate::mot::{self, ImageFrame};

#[derive(Debug, Parser)]
#[command(
    name = "tripletrack",
    version,
    about = "Multi-cue metric learning for multi-object tracking"
)]
pub struct Cli {
    /// TOML run configuration (defaults apply to missing keys).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the training, validation and benchmark scenes.
    Simulate,
    /// Train one network stage.
    Train {
        #[arg(value_enum)]
        stage: Stage,
    },
    /// Track a detection file.
    Track {
        /// Association model.
        #[arg(long, value_enum, default_value_t = AffinityKind::Metric)]
        affinity: AffinityKind,
        /// MOT detection CSV (default: the simulated benchmark scene).
        #[arg(long)]
        detections: Option<PathBuf>,
        /// Descriptor sidecar (default: next to the detections as `desc.csv`).
        #[arg(long)]
        descriptors: Option<PathBuf>,
    },
    /// Score a result file against ground truth.
    Evaluate {
        /// Ground-truth MOT CSV (default: the simulated benchmark scene).
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Result MOT CSV (default: the metric tracker's output).
        #[arg(long)]
        result: Option<PathBuf>,
        /// IoU needed for a match.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Multi-seed study over window lengths or cue/loss variants.
    Sweep {
        #[arg(value_enum)]
        parameter: SweepParameter,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    Id,
    Motion,
    Metric,
    Verification,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Id => "id",
            Stage::Motion => "motion",
            Stage::Metric => "metric",
            Stage::Verification => "verification",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AffinityKind {
    Metric,
    Verification,
    /// Greedy IoU baseline; needs no checkpoint.
    Iou,
}

impl AffinityKind {
    fn name(self) -> &'static str {
        match self {
            AffinityKind::Metric => "metric",
            AffinityKind::Verification => "verification",
            AffinityKind::Iou => "iou",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepParameter {
    /// Window length `N` of the full model.
    N,
    /// Cue and loss variants.
    Ablation,
}

/// Output locations under `--out`.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn scene_dir(&self, kind: SceneKind) -> PathBuf {
        self.root.join("scene").join(kind.name())
    }

    pub fn gt(&self, kind: SceneKind) -> PathBuf {
        self.scene_dir(kind).join("gt.csv")
    }

    pub fn detections(&self, kind: SceneKind) -> PathBuf {
        self.scene_dir(kind).join("det.csv")
    }

    pub fn descriptors(&self, kind: SceneKind) -> PathBuf {
        self.scene_dir(kind).join("desc.csv")
    }

    pub fn checkpoint(&self, stage: Stage) -> PathBuf {
        self.root
            .join("checkpoints")
            .join(format!("{}.ckpt", stage.name()))
    }

    pub fn training_log(&self, stage: Stage) -> PathBuf {
        self.root.join("logs").join(format!("{}.csv", stage.name()))
    }

    pub fn result(&self, affinity: &str) -> PathBuf {
        self.root.join("results").join(format!("{affinity}.csv"))
    }

    pub fn metrics(&self, name: &str, ext: &str) -> PathBuf {
        self.root.join("metrics").join(format!("{name}.{ext}"))
    }

    pub fn sweep(&self, name: &str) -> PathBuf {
        self.root.join("sweeps").join(format!("{name}.csv"))
    }
}

struct Context {
    config: RunConfig,
    layout: Layout,
    force: bool,
}

impl Context {
    fn image(&self) -> ImageFrame {
        ImageFrame {
            width: self.config.image.width,
            height: self.config.image.height,
        }
    }

    fn seed(&self) -> u64 {
        self.config.seed
    }

    /// Refuses to overwrite any of `paths` without `--force`; checked before work starts.
    fn claim(&self, paths: &[PathBuf]) -> Result<()> {
        if self.force {
            return Ok(());
        }
        match paths.iter().find(|p| p.exists()) {
            Some(p) => Err(Error::Exists(p.clone())),
            None => Ok(()),
        }
    }

    fn require(&self, path: &Path, command: &str) -> Result<()> {
        if path.exists() {
            Ok(())
        } else {
            Err(Error::Prerequisite {
                path: path.to_path_buf(),
                command: command.to_string(),
            })
        }
    }

    fn load_checkpoint(&self, stage: Stage) -> Result<Checkpoint> {
        let path = self.layout.checkpoint(stage);
        self.require(&path, &format!("tripletrack train {}", stage.name()))?;
        Checkpoint::load(&path)
    }
}

/// Loads and validates the configuration and applies command-line overrides.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

pub fn run(cli: &Cli) -> Result<()> {
    let ctx = Context {
        config: resolve_config(cli)?,
        layout: Layout {
            root: cli.out.clone(),
        },
        force: cli.force,
    };
    match &cli.command {
        Command::Simulate => simulate(&ctx),
        Command::Train { stage } => train(&ctx, *stage),
        Command::Track {
            affinity,
            detections,
            descriptors,
        } => track(
            &ctx,
            *affinity,
            detections.as_deref(),
            descriptors.as_deref(),
        ),
        Command::Evaluate {
            gt,
            result,
            threshold,
        } => evaluate_files(&ctx, gt.as_deref(), result.as_deref(), *threshold)
            .map(|text| print!("{text}")),
        Command::Sweep { parameter } => sweep(&ctx, *parameter),
    }
}

fn simulate(ctx: &Context) -> Result<()> {
    let l = &ctx.layout;
    let outputs: Vec<PathBuf> = SceneKind::ALL
        .iter()
        .flat_map(|&k| [l.gt(k), l.detections(k), l.descriptors(k)])
        .collect();
    ctx.claim(&outputs)?;
    let image = ctx.image();
    for kind in SceneKind::ALL {
        let scene = build_scene(&ctx.config, ctx.seed(), kind)?;
        mot::write_text(
            &l.gt(kind),
            &mot::format_rows(&mot::ground_truth_rows(&scene, &image)),
        )?;
        mot::write_text(
            &l.detections(kind),
            &mot::format_rows(&mot::detection_rows(&scene.detections, &image)),
        )?;
        mot::write_text(
            &l.descriptors(kind),
            &mot::format_descriptors(&scene.detections),
        )?;
        log::info!(
            "{} scene: {} trajectories, {} detections",
            kind.name(),
            scene.trajectories.len(),
            scene.detections.len()
        );
    }
    Ok(())
}

pub fn format_log(rows: &[TrainLogRow]) -> String {
    let mut out = String::from("iteration,loss,accuracy\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.iteration, r.loss, r.accuracy));
    }
    out
}

fn train(ctx: &Context, stage: Stage) -> Result<()> {
    let l = &ctx.layout;
    let (ckpt_path, log_path) = (l.checkpoint(stage), l.training_log(stage));
    let cfg = &ctx.config;
    let seed = ctx.seed();
    let (checkpoint, log) = match stage {
        Stage::Id => {
            ctx.claim(&[ckpt_path.clone(), log_path.clone()])?;
            let train = build_scene(cfg, seed, SceneKind::Train)?;
            let (net, log) = train_id_stage(cfg, &train, seed)?;
            (Checkpoint::of_id_net(&net), log)
        }
        Stage::Motion => {
            ctx.claim(&[ckpt_path.clone(), log_path.clone()])?;
            let (net, log) = train_motion_stage(cfg, cfg.motion.window, seed)?;
            (Checkpoint::of_prediction_net(&net), log)
        }
        Stage::Metric | Stage::Verification => {
            let id = ctx.load_checkpoint(Stage::Id)?.to_id_net()?;
            let motion = ctx.load_checkpoint(Stage::Motion)?.to_prediction_net()?;
            ctx.claim(&[ckpt_path.clone(), log_path.clone()])?;
            let window = motion.window();
            let encoder = CueEncoder::new(id, motion, Cues::Both);
            let train = build_scene(cfg, seed, SceneKind::Train)?;
            let validation = build_scene(cfg, seed, SceneKind::Validation)?;
            let triplets = validation_triplets(cfg, &validation, window, seed)?;
            if stage == Stage::Metric {
                let outcome = train_metric_stage(cfg, encoder, &train, &triplets, seed)?;
                log::info!(
                    "held-out margin satisfaction {:.4} (untrained {:.4})",
                    outcome.satisfaction,
                    outcome.satisfaction_before
                );
                let gate = calibrate_gate(cfg, &outcome.net, &triplets)?;
                let mut ck = Checkpoint::of_metric_net(&outcome.net);
                ck.meta.insert("gate".into(), gate.to_string());
                (ck, outcome.log)
            } else {
                let (net, log) = train_verification_stage(cfg, encoder, &train, &triplets, seed)?;
                let gate = calibrate_gate(cfg, &net, &triplets)?;
                let mut ck = Checkpoint::of_verification_net(&net);
                ck.meta.insert("gate".into(), gate.to_string());
                (ck, log)
            }
        }
    };
    mot::write_text(&ckpt_path, &checkpoint.to_text())?;
    mot::write_text(&log_path, &format_log(&log))
}

fn stored_gate(ctx: &Context, ck: &Checkpoint) -> Result<f64> {
    if let Some(g) = ctx.config.tracker.gate {
        return Ok(g);
    }
    ck.meta
        .get("gate")
        .and_then(|g| g.parse().ok())
        .ok_or_else(|| Error::Config("checkpoint has no calibrated gate; set tracker.gate".into()))
}

fn track(
    ctx: &Context,
    affinity: AffinityKind,
    detections: Option<&Path>,
    descriptors: Option<&Path>,
) -> Result<()> {
    let l = &ctx.layout;
    let det_path = detections.map_or_else(|| l.detections(SceneKind::Benchmark), Path::to_path_buf);
    let desc_path =
        descriptors.map_or_else(|| det_path.with_file_name("desc.csv"), Path::to_path_buf);
    ctx.require(&det_path, "tripletrack simulate")?;
    ctx.require(&desc_path, "tripletrack simulate")?;
    let cfg = &ctx.config;
    let checkpoint = match affinity {
        AffinityKind::Metric => Some(ctx.load_checkpoint(Stage::Metric)?),
        AffinityKind::Verification => Some(ctx.load_checkpoint(Stage::Verification)?),
        AffinityKind::Iou => None,
    };
    let out = l.result(affinity.name());
    ctx.claim(&[out.clone()])?;
    let frames = mot::read_detections(&det_path, &desc_path, &ctx.image(), 0)?;
    let boxes = match (&checkpoint, affinity) {
        (Some(ck), AffinityKind::Metric) => {
            run_learned(ctx, &ck.to_metric_net()?, stored_gate(ctx, ck)?, &frames)?
        }
        (Some(ck), AffinityKind::Verification) => run_learned(
            ctx,
            &ck.to_verification_net()?,
            stored_gate(ctx, ck)?,
            &frames,
        )?,
        _ => tripletrack_core::tracker::run_iou_tracker(
            cfg.tracker.iou_baseline_threshold,
            &cfg.tracker_config(f64::INFINITY),
            &frames,
        )?,
    };
    mot::write_text(
        &out,
        &mot::format_rows(&mot::result_rows(&boxes, &ctx.image())),
    )
}

fn run_learned<A: Affinity>(
    ctx: &Context,
    affinity: &A,
    gate: f64,
    frames: &[Vec<tripletrack_core::simulator::Detection>],
) -> Result<Vec<tripletrack_core::tracker::TrackedBox>> {
    Ok(tripletrack_core::tracker::run_tracker(
        affinity,
        &ctx.config.tracker_config(gate),
        frames,
    )?)
}

/// Metric values as printed: counts as integers, rates with six decimals.
pub fn metric_values(report: &MotReport) -> Vec<(&'static str, String)> {
    report
        .summary()
        .iter()
        .map(|&(name, v)| {
            let text = match name {
                "MOTA" | "MOTP" | "MT" | "ML" => format!("{v:.6}"),
                _ => format!("{v:.0}"),
            };
            (name, text)
        })
        .collect()
}

pub fn metrics_text(report: &MotReport) -> String {
    metric_values(report)
        .iter()
        .map(|(k, v)| format!("{k:<8} {v:>12}\n"))
        .collect()
}

pub fn metrics_csv(report: &MotReport) -> String {
    let mut out = String::from("metric,value\n");
    for (k, v) in metric_values(report) {
        out.push_str(&format!("{k},{v}\n"));
    }
    out
}

fn evaluate_files(
    ctx: &Context,
    gt: Option<&Path>,
    result: Option<&Path>,
    threshold: Option<f64>,
) -> Result<String> {
    let l = &ctx.layout;
    let gt_path = gt.map_or_else(|| l.gt(SceneKind::Benchmark), Path::to_path_buf);
    let result_path =
        result.map_or_else(|| l.result(AffinityKind::Metric.name()), Path::to_path_buf);
    ctx.require(&gt_path, "tripletrack simulate")?;
    ctx.require(&result_path, "tripletrack track")?;
    let name = result_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("result")
        .to_string();
    let (text_path, csv_path) = (l.metrics(&name, "txt"), l.metrics(&name, "csv"));
    ctx.claim(&[text_path.clone(), csv_path.clone()])?;
    let threshold = threshold.unwrap_or(ctx.config.evaluation.iou_threshold);
    let gt = mot::records(&mot::read_rows(&gt_path)?, &gt_path)?;
    let hyp = mot::records(&mot::read_rows(&result_path)?, &result_path)?;
    let report = evaluate(&gt, &hyp, threshold)?;
    let text = metrics_text(&report);
    mot::write_text(&text_path, &text)?;
    mot::write_text(&csv_path, &metrics_csv(&report))?;
    Ok(text)
}

fn seed_header(n: usize) -> String {
    (1..=n).map(|i| format!(",seed_{i}")).collect()
}

fn sweep(ctx: &Context, parameter: SweepParameter) -> Result<()> {
    let mut study = Study::new(ctx.config.clone());
    let seeds = ctx.config.evaluation.seeds;
    match parameter {
        SweepParameter::N => {
            let out = ctx.layout.sweep("n");
            ctx.claim(&[out.clone()])?;
            let mut text = format!("n,mota{}\n", seed_header(seeds));
            for (n, motas) in study.window_sweep()? {
                text.push_str(&format!("{n},{:.6}", median(&motas)));
                motas
                    .iter()
                    .for_each(|m| text.push_str(&format!(",{m:.6}")));
                text.push('\n');
            }
            mot::write_text(&out, &text)
        }
        SweepParameter::Ablation => {
            let out = ctx.layout.sweep("ablation");
            ctx.claim(&[out.clone()])?;
            let window = ctx.config.motion.window;
            let mut text = format!(
                "variant,{}{}\n",
                SUMMARY_FIELDS.join(","),
                seed_header(seeds)
            );
            for v in Variant::ALL {
                let mut reports = Vec::new();
                for s in study.seeds() {
                    reports.push(study.run_variant(s, v, window)?.report);
                }
                text.push_str(&ablation_row(&v.to_string(), &reports));
            }
            let baseline = study
                .seeds()
                .into_iter()
                .map(|s| study.run_baseline(s))
                .collect::<Result<Vec<_>>>()?;
            text.push_str(&ablation_row("IoU", &baseline));
            mot::write_text(&out, &text)
        }
    }
}

/// One ablation row: the per-metric median over seeds, then each seed's MOTA.
fn ablation_row(label: &str, reports: &[MotReport]) -> String {
    let mut row = label.to_string();
    let columns: Vec<Vec<f64>> = (0..SUMMARY_FIELDS.len())
        .map(|i| reports.iter().map(|r| r.summary()[i].1).collect())
        .collect();
    for (i, values) in columns.iter().enumerate() {
        let m = median(values);
        let name = reports[0].summary()[i].0;
        match name {
            "MOTA" | "MOTP" | "MT" | "ML" => row.push_str(&format!(",{m:.6}")),
            _ => row.push_str(&format!(",{m:.1}")),
        }
    }
    for r in reports {
        row.push_str(&format!(",{:.6}", r.mota));
    }
    row.push('\n');
    row
}
