//! End-to-end experiments: scene generation, staged training, tracking and
//! scoring for the benchmark, the sequence-length sweep and the loss/cue
//! ablation.
//!
//! Each run seed derives three scenes that share one identity gallery: a
//! training scene, a validation scene (held-out triplets, gate calibration)
//! and a benchmark scene that is tracked and scored. Component networks are
//! trained once per seed (and per window length) and shared by every variant.

use std::collections::BTreeMap;
use std::fmt;

use tripletrack_core::appearance::{train_id_net, IdNet};
use tripletrack_core::geometry::BBox;
use tripletrack_core::metric::{
    margin_satisfaction, train_metric_net, CueEncoder, Cues, MetricNet,
};
use tripletrack_core::metrics::{evaluate, MotRecord, MotReport};
use tripletrack_core::motion::{train_prediction_net_from, PredictionNet};
use tripletrack_core::rng::{derive_seed, seeded, SimRng};
use tripletrack_core::simulator::{
    generate_scene, labelled_descriptors, make_motion_pairs, sample_trajectories, triplet_set,
    MotionPair, Scene, TripletInstance, TripletSampler,
};
use tripletrack_core::tracker::{
    intra_identity_costs, quantile, run_iou_tracker, run_tracker, Affinity, TrackedBox,
};
use tripletrack_core::training::TrainLogRow;
use tripletrack_core::verification::{train_verification_net, VerificationNet};

use crate::config::RunConfig;
use crate::error::{Error, Result};

/// Named random streams derived from a run seed.
pub mod stream {
    pub const GALLERY: u64 = 1;
    pub const TRAIN_SCENE: u64 = 2;
    pub const VALIDATION_SCENE: u64 = 3;
    pub const BENCHMARK_SCENE: u64 = 4;
    pub const ID_NET: u64 = 10;
    pub const MOTION: u64 = 11;
    pub const METRIC: u64 = 12;
    pub const VERIFICATION: u64 = 13;
    pub const VALIDATION_TRIPLETS: u64 = 14;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SceneKind {
    Train,
    Validation,
    Benchmark,
}

impl SceneKind {
    pub const ALL: [SceneKind; 3] = [
        SceneKind::Train,
        SceneKind::Validation,
        SceneKind::Benchmark,
    ];

    fn stream(self) -> u64 {
        match self {
            SceneKind::Train => stream::TRAIN_SCENE,
            SceneKind::Validation => stream::VALIDATION_SCENE,
            SceneKind::Benchmark => stream::BENCHMARK_SCENE,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SceneKind::Train => "train",
            SceneKind::Validation => "validation",
            SceneKind::Benchmark => "benchmark",
        }
    }
}

/// Run seed of the `index`-th repetition under a master seed.
pub fn run_seed(master: u64, index: usize) -> u64 {
    derive_seed(master, 0x5eed_0000 + index as u64)
}

pub fn stage_rng(seed: u64, stream: u64) -> SimRng {
    seeded(derive_seed(seed, stream))
}

pub fn build_scene(cfg: &RunConfig, seed: u64, kind: SceneKind) -> Result<Scene> {
    let scene = cfg.scene_config(
        derive_seed(seed, kind.stream()),
        Some(derive_seed(seed, stream::GALLERY)),
    );
    Ok(generate_scene(&scene)?)
}

pub fn train_id_stage(
    cfg: &RunConfig,
    train: &Scene,
    seed: u64,
) -> Result<(IdNet, Vec<TrainLogRow>)> {
    let mut rng = stage_rng(seed, stream::ID_NET);
    Ok(train_id_net(
        &labelled_descriptors(train),
        cfg.id_dims(),
        &cfg.id_training(),
        &mut rng,
    )?)
}

/// Balanced training and validation pairs from freshly sampled trajectories.
pub fn motion_pairs(
    cfg: &RunConfig,
    window: usize,
    rng: &mut SimRng,
) -> Result<(Vec<MotionPair>, Vec<MotionPair>)> {
    let scene = cfg.scene_config(0, None);
    let m = &cfg.motion;
    let train = sample_trajectories(&scene, m.trajectories, m.trajectory_length, rng)?;
    let held = sample_trajectories(
        &scene,
        (m.trajectories / 10).max(2),
        m.trajectory_length,
        rng,
    )?;
    Ok((
        make_motion_pairs(&train, window, rng)?,
        make_motion_pairs(&held, window, rng)?,
    ))
}

pub fn train_motion_stage(
    cfg: &RunConfig,
    window: usize,
    seed: u64,
) -> Result<(PredictionNet, Vec<TrainLogRow>)> {
    let mut rng = stage_rng(seed, stream::MOTION ^ ((window as u64) << 32));
    let (pairs, validation) = motion_pairs(cfg, window, &mut rng)?;
    let net = PredictionNet::with_std(cfg.motion_dims(window), cfg.motion.init_std, &mut rng);
    Ok(train_prediction_net_from(
        net,
        &pairs,
        &validation,
        &cfg.motion_training(),
        &mut rng,
    )?)
}

pub fn validation_triplets(
    cfg: &RunConfig,
    validation: &Scene,
    window: usize,
    seed: u64,
) -> Result<Vec<TripletInstance>> {
    let mut rng = stage_rng(seed, stream::VALIDATION_TRIPLETS);
    Ok(triplet_set(
        validation,
        &cfg.triplet_batch(window),
        cfg.metric.validation_batches,
        &mut rng,
    )?)
}

#[derive(Debug, Clone)]
pub struct MetricOutcome {
    pub net: MetricNet,
    pub log: Vec<TrainLogRow>,
    /// Margin satisfaction on held-out triplets before and after training.
    pub satisfaction_before: f64,
    pub satisfaction: f64,
}

pub fn train_metric_stage(
    cfg: &RunConfig,
    encoder: CueEncoder,
    train: &Scene,
    validation: &[TripletInstance],
    seed: u64,
) -> Result<MetricOutcome> {
    let mut rng = stage_rng(seed, stream::METRIC);
    let window = encoder.window();
    let net = MetricNet::new(encoder, cfg.metric.embedding, &mut rng);
    let loss = cfg.triplet_loss();
    let satisfaction_before = margin_satisfaction(&net, validation, &loss)?;
    let sampler = TripletSampler::new(train, window);
    let (net, log) = train_metric_net(
        net,
        &sampler,
        validation,
        &cfg.metric_training(window),
        &mut rng,
    )?;
    let satisfaction = margin_satisfaction(&net, validation, &loss)?;
    Ok(MetricOutcome {
        net,
        log,
        satisfaction_before,
        satisfaction,
    })
}

pub fn train_verification_stage(
    cfg: &RunConfig,
    encoder: CueEncoder,
    train: &Scene,
    validation: &[TripletInstance],
    seed: u64,
) -> Result<(VerificationNet, Vec<TrainLogRow>)> {
    let mut rng = stage_rng(seed, stream::VERIFICATION);
    let window = encoder.window();
    let net = VerificationNet::new(encoder, cfg.verification.hidden, &mut rng);
    let sampler = TripletSampler::new(train, window);
    Ok(train_verification_net(
        net,
        &sampler,
        validation,
        &cfg.verification_training(window),
        &mut rng,
    )?)
}

/// The configured gate, or the configured quantile of intra-identity costs
/// on held-out triplets.
pub fn calibrate_gate<A: Affinity + ?Sized>(
    cfg: &RunConfig,
    affinity: &A,
    validation: &[TripletInstance],
) -> Result<f64> {
    if let Some(g) = cfg.tracker.gate {
        return Ok(g);
    }
    let costs = intra_identity_costs(affinity, validation)?;
    quantile(&costs, cfg.tracker.gate_quantile)
        .ok_or_else(|| Error::Config("no validation triplets to calibrate the gate".into()))
}

pub fn ground_truth_records(scene: &Scene) -> Vec<MotRecord> {
    let mut out: Vec<MotRecord> = scene
        .trajectories
        .iter()
        .flat_map(|t| {
            t.positions
                .iter()
                .enumerate()
                .map(move |(k, &p)| MotRecord {
                    frame: t.start_frame + k as u32,
                    id: t.identity + 1,
                    bbox: BBox::centered(p, t.size),
                })
        })
        .collect();
    out.sort_by_key(|r| (r.frame, r.id));
    out
}

pub fn box_records(boxes: &[TrackedBox]) -> Vec<MotRecord> {
    boxes
        .iter()
        .map(|b| MotRecord {
            frame: b.frame,
            id: b.id,
            bbox: b.bbox(),
        })
        .collect()
}

pub fn score(cfg: &RunConfig, scene: &Scene, boxes: &[TrackedBox]) -> Result<MotReport> {
    Ok(evaluate(
        &ground_truth_records(scene),
        &box_records(boxes),
        cfg.evaluation.iou_threshold,
    )?)
}

pub fn track<A: Affinity + ?Sized>(
    cfg: &RunConfig,
    affinity: &A,
    gate: f64,
    scene: &Scene,
) -> Result<Vec<TrackedBox>> {
    Ok(run_tracker(
        affinity,
        &cfg.tracker_config(gate),
        &scene.frames(),
    )?)
}

pub fn track_baseline(cfg: &RunConfig, scene: &Scene) -> Result<Vec<TrackedBox>> {
    Ok(run_iou_tracker(
        cfg.tracker.iou_baseline_threshold,
        &cfg.tracker_config(f64::INFINITY),
        &scene.frames(),
    )?)
}

/// Cue set and loss of one ablation row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Variant {
    AppearanceTriplet,
    MotionTriplet,
    BothTriplet,
    AppearanceVerification,
    MotionVerification,
    BothVerification,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::AppearanceTriplet,
        Variant::MotionTriplet,
        Variant::BothTriplet,
        Variant::AppearanceVerification,
        Variant::MotionVerification,
        Variant::BothVerification,
    ];

    pub fn cues(self) -> Cues {
        match self {
            Variant::AppearanceTriplet | Variant::AppearanceVerification => Cues::Appearance,
            Variant::MotionTriplet | Variant::MotionVerification => Cues::Motion,
            Variant::BothTriplet | Variant::BothVerification => Cues::Both,
        }
    }

    pub fn triplet(self) -> bool {
        matches!(
            self,
            Variant::AppearanceTriplet | Variant::MotionTriplet | Variant::BothTriplet
        )
    }

    /// The same cues trained with the other loss.
    pub fn counterpart(self) -> Variant {
        match self {
            Variant::AppearanceTriplet => Variant::AppearanceVerification,
            Variant::MotionTriplet => Variant::MotionVerification,
            Variant::BothTriplet => Variant::BothVerification,
            Variant::AppearanceVerification => Variant::AppearanceTriplet,
            Variant::MotionVerification => Variant::MotionTriplet,
            Variant::BothVerification => Variant::BothTriplet,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}+{}",
            self.cues().label(),
            if self.triplet() { "T" } else { "V" }
        )
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub gate: f64,
    pub report: MotReport,
    /// Held-out margin satisfaction (triplet variants only).
    pub satisfaction: Option<f64>,
}

struct SeedCache {
    scenes: BTreeMap<SceneKind, Scene>,
    id_net: Option<IdNet>,
    motion: BTreeMap<usize, PredictionNet>,
    triplets: BTreeMap<usize, Vec<TripletInstance>>,
    metric: BTreeMap<(Cues, usize), MetricOutcome>,
    verification: BTreeMap<(Cues, usize), VerificationNet>,
}

/// Multi-seed experiments sharing trained components across variants.
pub struct Study {
    pub config: RunConfig,
    cache: BTreeMap<u64, SeedCache>,
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5).unwrap_or(f64::NAN)
}

impl Study {
    pub fn new(config: RunConfig) -> Self {
        Self {
            config,
            cache: BTreeMap::new(),
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.config.evaluation.seeds)
            .map(|i| run_seed(self.config.seed, i))
            .collect()
    }

    fn entry(&mut self, seed: u64) -> Result<&mut SeedCache> {
        if !self.cache.contains_key(&seed) {
            let mut scenes = BTreeMap::new();
            for kind in SceneKind::ALL {
                scenes.insert(kind, build_scene(&self.config, seed, kind)?);
            }
            self.cache.insert(
                seed,
                SeedCache {
                    scenes,
                    id_net: None,
                    motion: BTreeMap::new(),
                    triplets: BTreeMap::new(),
                    metric: BTreeMap::new(),
                    verification: BTreeMap::new(),
                },
            );
        }
        Ok(self.cache.get_mut(&seed).expect("inserted above"))
    }

    pub fn scene(&mut self, seed: u64, kind: SceneKind) -> Result<&Scene> {
        Ok(&self.entry(seed)?.scenes[&kind])
    }

    pub fn id_net(&mut self, seed: u64) -> Result<IdNet> {
        let cfg = self.config.clone();
        let e = self.entry(seed)?;
        if e.id_net.is_none() {
            e.id_net = Some(train_id_stage(&cfg, &e.scenes[&SceneKind::Train], seed)?.0);
        }
        Ok(e.id_net.clone().expect("trained above"))
    }

    pub fn prediction_net(&mut self, seed: u64, window: usize) -> Result<PredictionNet> {
        let cfg = self.config.clone();
        let e = self.entry(seed)?;
        if !e.motion.contains_key(&window) {
            e.motion
                .insert(window, train_motion_stage(&cfg, window, seed)?.0);
        }
        Ok(e.motion[&window].clone())
    }

    pub fn validation_triplets(
        &mut self,
        seed: u64,
        window: usize,
    ) -> Result<Vec<TripletInstance>> {
        let cfg = self.config.clone();
        let e = self.entry(seed)?;
        if !e.triplets.contains_key(&window) {
            let t = validation_triplets(&cfg, &e.scenes[&SceneKind::Validation], window, seed)?;
            e.triplets.insert(window, t);
        }
        Ok(e.triplets[&window].clone())
    }

    pub fn encoder(&mut self, seed: u64, cues: Cues, window: usize) -> Result<CueEncoder> {
        Ok(CueEncoder::new(
            self.id_net(seed)?,
            self.prediction_net(seed, window)?,
            cues,
        ))
    }

    pub fn metric(&mut self, seed: u64, cues: Cues, window: usize) -> Result<MetricOutcome> {
        if let Some(m) = self.entry(seed)?.metric.get(&(cues, window)) {
            return Ok(m.clone());
        }
        let encoder = self.encoder(seed, cues, window)?;
        let validation = self.validation_triplets(seed, window)?;
        let cfg = self.config.clone();
        let e = self.entry(seed)?;
        let outcome = train_metric_stage(
            &cfg,
            encoder,
            &e.scenes[&SceneKind::Train],
            &validation,
            seed,
        )?;
        e.metric.insert((cues, window), outcome.clone());
        Ok(outcome)
    }

    pub fn verification(
        &mut self,
        seed: u64,
        cues: Cues,
        window: usize,
    ) -> Result<VerificationNet> {
        if let Some(v) = self.entry(seed)?.verification.get(&(cues, window)) {
            return Ok(v.clone());
        }
        let encoder = self.encoder(seed, cues, window)?;
        let validation = self.validation_triplets(seed, window)?;
        let cfg = self.config.clone();
        let e = self.entry(seed)?;
        let net = train_verification_stage(
            &cfg,
            encoder,
            &e.scenes[&SceneKind::Train],
            &validation,
            seed,
        )?
        .0;
        e.verification.insert((cues, window), net.clone());
        Ok(net)
    }

    fn run_affinity<A: Affinity>(&mut self, seed: u64, affinity: &A) -> Result<RunOutcome> {
        let cfg = self.config.clone();
        let validation = self.validation_triplets(seed, affinity.window())?;
        let gate = calibrate_gate(&cfg, affinity, &validation)?;
        let bench = self.scene(seed, SceneKind::Benchmark)?;
        let boxes = track(&cfg, affinity, gate, bench)?;
        Ok(RunOutcome {
            gate,
            report: score(&cfg, bench, &boxes)?,
            satisfaction: None,
        })
    }

    pub fn run_variant(
        &mut self,
        seed: u64,
        variant: Variant,
        window: usize,
    ) -> Result<RunOutcome> {
        if variant.triplet() {
            let m = self.metric(seed, variant.cues(), window)?;
            let mut outcome = self.run_affinity(seed, &m.net)?;
            outcome.satisfaction = Some(m.satisfaction);
            Ok(outcome)
        } else {
            let net = self.verification(seed, variant.cues(), window)?;
            self.run_affinity(seed, &net)
        }
    }

    pub fn run_baseline(&mut self, seed: u64) -> Result<MotReport> {
        let cfg = self.config.clone();
        let bench = self.scene(seed, SceneKind::Benchmark)?;
        score(&cfg, bench, &track_baseline(&cfg, bench)?)
    }

    /// MOTA per seed of every ablation variant at the configured window.
    pub fn ablation(&mut self) -> Result<Vec<(Variant, Vec<f64>)>> {
        let window = self.config.motion.window;
        let seeds = self.seeds();
        let mut rows = Vec::new();
        for v in Variant::ALL {
            let mut motas = Vec::new();
            for &s in &seeds {
                let r = self.run_variant(s, v, window)?;
                log::info!(
                    "ablation {v} seed {s:#x}: MOTA {:.4} (gate {:.3})",
                    r.report.mota,
                    r.gate
                );
                motas.push(r.report.mota);
            }
            rows.push((v, motas));
        }
        Ok(rows)
    }

    /// MOTA per seed of the full model at each configured window length.
    pub fn window_sweep(&mut self) -> Result<Vec<(usize, Vec<f64>)>> {
        let seeds = self.seeds();
        let mut rows = Vec::new();
        for window in self.config.evaluation.sweep_windows.clone() {
            let mut motas = Vec::new();
            for &s in &seeds {
                let r = self.run_variant(s, Variant::BothTriplet, window)?;
                log::info!("sweep N={window} seed {s:#x}: MOTA {:.4}", r.report.mota);
                motas.push(r.report.mota);
            }
            rows.push((window, motas));
        }
        Ok(rows)
    }
}
