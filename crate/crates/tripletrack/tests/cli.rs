use std::path::{Path, PathBuf};

use clap::Parser;
use tempfile::TempDir;

use tripletrack::commands::{run, Cli};
use tripletrack::{mot, Error};

const SMALL: &str = "seed = 3\n\
[scene]\nidentities = 12\nframes = 60\n\
[id_net]\niterations = 150\nlog_every = 10\n\
[motion]\ntrajectories = 100\niterations = 100\nlog_every = 10\n\
[metric]\niterations = 80\nlog_every = 20\n\
[verification]\niterations = 40\nlog_every = 10\n";

struct Workspace {
    dir: TempDir,
    config: PathBuf,
}

impl Workspace {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, config).unwrap();
        Self { dir, config: path }
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    fn run(&self, args: &[&str]) -> Result<(), Error> {
        let out = self.out();
        let mut argv = vec!["tripletrack", "--out", out.to_str().unwrap(), "--config"];
        argv.push(self.config.to_str().unwrap());
        argv.extend_from_slice(args);
        run(&Cli::try_parse_from(argv).unwrap())
    }

    fn read(&self, rel: &str) -> String {
        std::fs::read_to_string(self.out().join(rel)).unwrap()
    }
}

fn data_lines(text: &str) -> usize {
    text.lines().count() - 1
}

#[test]
fn simulate_is_deterministic_and_complete() {
    let (a, b) = (Workspace::new(SMALL), Workspace::new(SMALL));
    a.run(&["simulate"]).unwrap();
    b.run(&["simulate"]).unwrap();
    for kind in ["train", "validation", "benchmark"] {
        for file in ["gt.csv", "det.csv", "desc.csv"] {
            let rel = format!("scene/{kind}/{file}");
            assert_eq!(a.read(&rel), b.read(&rel), "{rel}");
        }
    }
    let rows = mot::parse_rows(&a.read("scene/benchmark/gt.csv"), Path::new("gt.csv")).unwrap();
    assert!(!rows.is_empty());
    assert!(rows
        .iter()
        .all(|r| r.id > 0 && r.frame >= 1 && r.frame <= 60));
}

#[test]
fn ground_truth_rows_cover_every_trajectory_frame() {
    use tripletrack::experiment::{build_scene, SceneKind};
    let ws = Workspace::new(SMALL);
    ws.run(&["simulate"]).unwrap();
    let cfg = tripletrack::RunConfig::load(&ws.config).unwrap();
    let scene = build_scene(&cfg, cfg.seed, SceneKind::Benchmark).unwrap();
    let expected: usize = scene.trajectories.iter().map(|t| t.positions.len()).sum();
    let rows = mot::parse_rows(&ws.read("scene/benchmark/gt.csv"), Path::new("gt.csv")).unwrap();
    assert_eq!(rows.len(), expected);
}

#[test]
fn dropping_every_detection_leaves_only_false_positives() {
    let ws = Workspace::new("[scene]\ndrop_rate = 1.0\nfalse_positive_rate = 0.5\n");
    ws.run(&["simulate"]).unwrap();
    let rows = mot::parse_rows(&ws.read("scene/benchmark/det.csv"), Path::new("det.csv")).unwrap();
    assert!(!rows.is_empty());
    ws.run(&["track", "--affinity", "iou"]).unwrap();
    let report = evaluate(&ws, "results/iou.csv");
    assert_eq!(report.matches, 0);
    assert_eq!(report.misses, report.gt_boxes);
}

fn evaluate(ws: &Workspace, result: &str) -> tripletrack_core::metrics::MotReport {
    let gt = mot::read_rows(&ws.out().join("scene/benchmark/gt.csv")).unwrap();
    let hyp = mot::read_rows(&ws.out().join(result)).unwrap();
    let path = Path::new("x");
    tripletrack_core::metrics::evaluate(
        &mot::records(&gt, path).unwrap(),
        &mot::records(&hyp, path).unwrap(),
        0.5,
    )
    .unwrap()
}

#[test]
fn missing_prerequisites_name_the_command() {
    let ws = Workspace::new(SMALL);
    match ws.run(&["train", "metric"]) {
        Err(Error::Prerequisite { command, .. }) => {
            assert!(command.contains("train id"), "{command}")
        }
        other => panic!("expected prerequisite error, got {other:?}"),
    }
    match ws.run(&["track"]) {
        Err(Error::Prerequisite { .. }) => {}
        other => panic!("expected prerequisite error, got {other:?}"),
    }
}

#[test]
fn existing_outputs_need_force() {
    let ws = Workspace::new(SMALL);
    ws.run(&["simulate"]).unwrap();
    assert!(matches!(ws.run(&["simulate"]), Err(Error::Exists(_))));
    ws.run(&["simulate", "--force"]).unwrap();
}

#[test]
fn ground_truth_scored_against_itself_is_perfect() {
    let ws = Workspace::new(SMALL);
    ws.run(&["simulate"]).unwrap();
    let gt = ws.out().join("scene/benchmark/gt.csv");
    ws.run(&[
        "evaluate",
        "--gt",
        gt.to_str().unwrap(),
        "--result",
        gt.to_str().unwrap(),
    ])
    .unwrap();
    let csv = ws.read("metrics/gt.csv");
    assert!(csv.lines().any(|l| l == "MOTA,1.000000"), "{csv}");
    assert!(csv.lines().any(|l| l == "IDS,0"), "{csv}");
}

#[test]
fn empty_detections_give_empty_results() {
    let ws = Workspace::new(SMALL);
    let det = ws.dir.path().join("det.csv");
    std::fs::write(&det, "").unwrap();
    std::fs::write(ws.dir.path().join("desc.csv"), "").unwrap();
    ws.run(&[
        "track",
        "--affinity",
        "iou",
        "--detections",
        det.to_str().unwrap(),
    ])
    .unwrap();
    assert_eq!(ws.read("results/iou.csv"), "");
}

#[test]
fn training_logs_and_checkpoints() {
    let ws = Workspace::new(SMALL);
    ws.run(&["simulate"]).unwrap();
    for stage in ["id", "motion", "metric", "verification"] {
        ws.run(&["train", stage]).unwrap();
        assert!(ws.out().join(format!("checkpoints/{stage}.ckpt")).exists());
    }
    assert_eq!(data_lines(&ws.read("logs/id.csv")), 15);
    assert_eq!(data_lines(&ws.read("logs/motion.csv")), 10);
    assert_eq!(data_lines(&ws.read("logs/verification.csv")), 4);
    let metric = ws.read("logs/metric.csv");
    assert_eq!(metric.lines().next(), Some("iteration,loss,accuracy"));
    assert_eq!(data_lines(&metric), 4);
    let losses: Vec<f64> = metric
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(losses.last().unwrap() < &losses[0], "{losses:?}");

    ws.run(&["track"]).unwrap();
    ws.run(&["track", "--affinity", "verification"]).unwrap();
    ws.run(&["evaluate"]).unwrap();
    let report = ws.read("metrics/metric.txt");
    assert!(report.contains("MOTA"));
}

#[test]
fn unknown_sweep_parameter_is_a_usage_error() {
    let err = Cli::try_parse_from(["tripletrack", "sweep", "lr"]).unwrap_err();
    assert_eq!(err.kind(), clap::error::ErrorKind::InvalidValue);
}
