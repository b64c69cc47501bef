//! Run configuration: a TOML file with one table per stage.
//!
//! Every key is optional; missing keys take the desk-scale defaults below and
//! unknown keys are rejected. Full-scale values are noted next to the
//! defaults they replace.

use std::path::Path;

use serde::{Deserialize, Serialize};

use tripletrack_core::appearance::{IdNetDims, IdNetTraining};
use tripletrack_core::metric::MetricNetTraining;
use tripletrack_core::motion::{PredictionNetDims, PredictionNetTraining, MOTION_INIT_STD};
use tripletrack_core::nn::{Distance, NegativeTerm, RmspropConfig, TripletLossConfig};
use tripletrack_core::simulator::{SceneConfig, TripletBatchSpec};
use tripletrack_core::tracker::TrackerConfig;
use tripletrack_core::verification::VerificationTraining;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every stage derives its own stream from it.
    pub seed: u64,
    pub scene: SceneSection,
    pub image: ImageSection,
    pub optimizer: OptimizerSection,
    pub id_net: IdNetSection,
    pub motion: MotionSection,
    pub metric: MetricSection,
    pub verification: VerificationSection,
    pub tracker: TrackerSection,
    pub evaluation: EvaluationSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSection {
    pub identities: usize,
    pub frames: u32,
    pub descriptor_dim: usize,
    pub appearance_noise: f64,
    pub motion_noise: f64,
    pub speed: f64,
    pub max_speed: f64,
    pub curvature: f64,
    pub curvature_period: f64,
    pub position_noise: f64,
    pub drop_rate: f64,
    pub false_positive_rate: f64,
    pub occlusion_rate: f64,
    pub occlusion_duration: u32,
    pub occlusion_noise_scale: f64,
    pub min_track_length: u32,
    pub box_width_min: f64,
    pub box_width_max: f64,
}

/// Pixel frame used when writing MOT files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageSection {
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    /// RMSprop moving-average coefficient.
    pub decay: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdNetSection {
    pub hidden: usize,
    /// Appearance feature width `A` (full scale: 4096).
    pub feature: usize,
    pub iterations: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: u64,
    pub log_every: u64,
    pub validation_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionSection {
    /// LSTM width `H` (full scale: 300).
    pub hidden: usize,
    /// Unroll length `N` (full scale: 6).
    pub window: usize,
    pub init_std: f64,
    pub trajectories: usize,
    pub trajectory_length: usize,
    pub iterations: u64,
    pub batch_size: usize,
    /// Full scale: 3e-4, decayed 5% every 20 000 iterations.
    pub learning_rate: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: u64,
    pub log_every: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceName {
    Euclidean,
    SquaredEuclidean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeTermName {
    PositiveNegative,
    AnchorNegative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricSection {
    /// Embedding width `K` (full scale: 256).
    pub embedding: usize,
    /// Margin `tau` (full scale: -2).
    pub tau: f64,
    pub distance: DistanceName,
    pub negative_term: NegativeTermName,
    pub iterations: u64,
    pub identities_per_batch: usize,
    pub instances_per_identity: usize,
    pub learning_rate: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: u64,
    pub log_every: u64,
    /// Held-out batches used for margin satisfaction.
    pub validation_batches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerificationSection {
    pub hidden: usize,
    pub iterations: u64,
    pub learning_rate: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: u64,
    pub log_every: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerSection {
    /// Fixed cost gate; when absent it is calibrated on validation data.
    pub gate: Option<f64>,
    /// Quantile of true-continuation costs used as the calibrated gate.
    pub gate_quantile: f64,
    pub max_age: u32,
    pub init_hits: u32,
    pub young_track_radius: f64,
    pub iou_baseline_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub iou_threshold: f64,
    /// Number of seeds in benchmark, sweep and ablation runs.
    pub seeds: usize,
    pub sweep_windows: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scene: SceneSection::default(),
            image: ImageSection::default(),
            optimizer: OptimizerSection::default(),
            id_net: IdNetSection::default(),
            motion: MotionSection::default(),
            metric: MetricSection::default(),
            verification: VerificationSection::default(),
            tracker: TrackerSection::default(),
            evaluation: EvaluationSection::default(),
        }
    }
}

impl Default for SceneSection {
    fn default() -> Self {
        let s = SceneConfig::default();
        Self {
            identities: s.identities,
            frames: s.frames,
            descriptor_dim: s.descriptor_dim,
            appearance_noise: s.appearance_noise,
            motion_noise: s.motion_noise,
            speed: s.speed,
            max_speed: s.max_speed,
            curvature: s.curvature,
            curvature_period: s.curvature_period,
            position_noise: s.position_noise,
            drop_rate: s.drop_rate,
            false_positive_rate: s.false_positive_rate,
            occlusion_rate: s.occlusion_rate,
            occlusion_duration: s.occlusion_duration,
            occlusion_noise_scale: s.occlusion_noise_scale,
            min_track_length: s.min_track_length,
            box_width_min: s.box_width_min,
            box_width_max: s.box_width_max,
        }
    }
}

impl Default for ImageSection {
    fn default() -> Self {
        Self {
            width: 1920.0,
            height: 1080.0,
        }
    }
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let r = RmspropConfig::default();
        Self {
            decay: r.decay,
            epsilon: r.epsilon,
        }
    }
}

impl Default for IdNetSection {
    fn default() -> Self {
        let d = IdNetDims::default();
        let t = IdNetTraining::default();
        Self {
            hidden: d.hidden,
            feature: d.feature,
            iterations: t.iterations,
            batch_size: t.batch_size,
            learning_rate: t.rmsprop.learning_rate,
            lr_decay_factor: t.rmsprop.lr_decay_factor,
            lr_decay_every: t.rmsprop.lr_decay_every,
            log_every: t.log_every,
            validation_fraction: t.validation_fraction,
        }
    }
}

impl Default for MotionSection {
    fn default() -> Self {
        let d = PredictionNetDims::default();
        let t = PredictionNetTraining::default();
        Self {
            hidden: d.hidden,
            window: d.window,
            init_std: MOTION_INIT_STD,
            trajectories: 2000,
            trajectory_length: 20,
            iterations: t.iterations,
            batch_size: t.batch_size,
            learning_rate: t.rmsprop.learning_rate,
            lr_decay_factor: t.rmsprop.lr_decay_factor,
            lr_decay_every: t.rmsprop.lr_decay_every,
            log_every: t.log_every,
        }
    }
}

impl Default for MetricSection {
    fn default() -> Self {
        let t = MetricNetTraining::default();
        Self {
            embedding: 16,
            tau: t.loss.tau,
            distance: DistanceName::Euclidean,
            negative_term: NegativeTermName::PositiveNegative,
            iterations: t.iterations,
            identities_per_batch: t.batch.identities_per_batch,
            instances_per_identity: t.batch.instances_per_identity,
            learning_rate: t.rmsprop.learning_rate,
            lr_decay_factor: t.rmsprop.lr_decay_factor,
            lr_decay_every: t.rmsprop.lr_decay_every,
            log_every: t.log_every,
            validation_batches: 5,
        }
    }
}

impl Default for VerificationSection {
    fn default() -> Self {
        let t = VerificationTraining::default();
        Self {
            hidden: 32,
            iterations: t.iterations,
            learning_rate: t.rmsprop.learning_rate,
            lr_decay_factor: t.rmsprop.lr_decay_factor,
            lr_decay_every: t.rmsprop.lr_decay_every,
            log_every: t.log_every,
        }
    }
}

impl Default for TrackerSection {
    fn default() -> Self {
        let t = TrackerConfig::default();
        Self {
            gate: None,
            gate_quantile: 0.95,
            max_age: t.max_age,
            init_hits: t.init_hits,
            young_track_radius: t.young_track_radius,
            iou_baseline_threshold: 0.3,
        }
    }
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            seeds: 5,
            sweep_windows: (1..=8).collect(),
        }
    }
}

fn invalid(key: &str, message: impl std::fmt::Display) -> Error {
    Error::Config(format!("{key}: {message}"))
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(key, format!("must be a positive number, got {v}")))
    }
}

fn nonzero(key: &str, v: u64) -> Result<()> {
    if v > 0 {
        Ok(())
    } else {
        Err(invalid(key, "must be at least 1"))
    }
}

fn fraction(key: &str, v: f64, open: bool) -> Result<()> {
    let ok = if open {
        v > 0.0 && v < 1.0
    } else {
        (0.0..=1.0).contains(&v)
    };
    if ok {
        Ok(())
    } else {
        Err(invalid(
            key,
            format!(
                "must lie in {}, got {v}",
                if open { "(0, 1)" } else { "[0, 1]" }
            ),
        ))
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Checks every field; the message names the offending key.
    pub fn validate(&self) -> Result<()> {
        self.scene_config(self.seed, None)
            .validate()
            .map_err(|e| invalid("scene", e))?;
        positive("image.width", self.image.width)?;
        positive("image.height", self.image.height)?;
        fraction("optimizer.decay", self.optimizer.decay, true)?;
        positive("optimizer.epsilon", self.optimizer.epsilon)?;

        let id = &self.id_net;
        nonzero("id_net.hidden", id.hidden as u64)?;
        nonzero("id_net.feature", id.feature as u64)?;
        nonzero("id_net.batch_size", id.batch_size as u64)?;
        positive("id_net.learning_rate", id.learning_rate)?;
        fraction("id_net.lr_decay_factor", id.lr_decay_factor, false)?;
        nonzero("id_net.lr_decay_every", id.lr_decay_every)?;
        fraction("id_net.validation_fraction", id.validation_fraction, true)?;

        let m = &self.motion;
        nonzero("motion.hidden", m.hidden as u64)?;
        nonzero("motion.window", m.window as u64)?;
        positive("motion.init_std", m.init_std)?;
        if m.trajectories < 2 {
            return Err(invalid(
                "motion.trajectories",
                "need at least 2 trajectories",
            ));
        }
        if m.trajectory_length < 2 {
            return Err(invalid(
                "motion.trajectory_length",
                "need at least 2 positions",
            ));
        }
        nonzero("motion.batch_size", m.batch_size as u64)?;
        positive("motion.learning_rate", m.learning_rate)?;
        fraction("motion.lr_decay_factor", m.lr_decay_factor, false)?;
        nonzero("motion.lr_decay_every", m.lr_decay_every)?;

        let k = &self.metric;
        nonzero("metric.embedding", k.embedding as u64)?;
        if !k.tau.is_finite() {
            return Err(invalid("metric.tau", "must be finite"));
        }
        if k.identities_per_batch == 0 || k.identities_per_batch >= self.scene.identities {
            return Err(invalid(
                "metric.identities_per_batch",
                format!(
                    "must lie in [1, scene.identities) = [1, {})",
                    self.scene.identities
                ),
            ));
        }
        nonzero(
            "metric.instances_per_identity",
            k.instances_per_identity as u64,
        )?;
        positive("metric.learning_rate", k.learning_rate)?;
        fraction("metric.lr_decay_factor", k.lr_decay_factor, false)?;
        nonzero("metric.lr_decay_every", k.lr_decay_every)?;
        nonzero("metric.validation_batches", k.validation_batches as u64)?;

        let v = &self.verification;
        nonzero("verification.hidden", v.hidden as u64)?;
        positive("verification.learning_rate", v.learning_rate)?;
        fraction("verification.lr_decay_factor", v.lr_decay_factor, false)?;
        nonzero("verification.lr_decay_every", v.lr_decay_every)?;

        let t = &self.tracker;
        if let Some(g) = t.gate {
            if !(g >= 0.0) {
                return Err(invalid("tracker.gate", format!("must be ≥ 0, got {g}")));
            }
        }
        fraction("tracker.gate_quantile", t.gate_quantile, false)?;
        nonzero("tracker.init_hits", t.init_hits as u64)?;
        positive("tracker.young_track_radius", t.young_track_radius)?;
        if !(t.iou_baseline_threshold > 0.0 && t.iou_baseline_threshold <= 1.0) {
            return Err(invalid(
                "tracker.iou_baseline_threshold",
                "must lie in (0, 1]",
            ));
        }

        fraction(
            "evaluation.iou_threshold",
            self.evaluation.iou_threshold,
            true,
        )?;
        nonzero("evaluation.seeds", self.evaluation.seeds as u64)?;
        if self.evaluation.sweep_windows.is_empty() || self.evaluation.sweep_windows.contains(&0) {
            return Err(invalid(
                "evaluation.sweep_windows",
                "must be a non-empty list of positive lengths",
            ));
        }
        Ok(())
    }

    pub fn scene_config(&self, seed: u64, gallery_seed: Option<u64>) -> SceneConfig {
        let s = &self.scene;
        SceneConfig {
            identities: s.identities,
            frames: s.frames,
            descriptor_dim: s.descriptor_dim,
            appearance_noise: s.appearance_noise,
            motion_noise: s.motion_noise,
            speed: s.speed,
            max_speed: s.max_speed,
            curvature: s.curvature,
            curvature_period: s.curvature_period,
            position_noise: s.position_noise,
            drop_rate: s.drop_rate,
            false_positive_rate: s.false_positive_rate,
            occlusion_rate: s.occlusion_rate,
            occlusion_duration: s.occlusion_duration,
            occlusion_noise_scale: s.occlusion_noise_scale,
            min_track_length: s.min_track_length,
            box_width_min: s.box_width_min,
            box_width_max: s.box_width_max,
            seed,
            gallery_seed,
        }
    }

    fn rmsprop(&self, learning_rate: f64, factor: f64, every: u64) -> RmspropConfig {
        RmspropConfig {
            learning_rate,
            decay: self.optimizer.decay,
            epsilon: self.optimizer.epsilon,
            lr_decay_factor: factor,
            lr_decay_every: every,
        }
    }

    pub fn id_dims(&self) -> IdNetDims {
        IdNetDims {
            descriptor: self.scene.descriptor_dim,
            hidden: self.id_net.hidden,
            feature: self.id_net.feature,
            classes: self.scene.identities,
        }
    }

    pub fn id_training(&self) -> IdNetTraining {
        let s = &self.id_net;
        IdNetTraining {
            iterations: s.iterations,
            batch_size: s.batch_size,
            rmsprop: self.rmsprop(s.learning_rate, s.lr_decay_factor, s.lr_decay_every),
            log_every: s.log_every,
            validation_fraction: s.validation_fraction,
        }
    }

    pub fn motion_dims(&self, window: usize) -> PredictionNetDims {
        PredictionNetDims {
            hidden: self.motion.hidden,
            window,
        }
    }

    pub fn motion_training(&self) -> PredictionNetTraining {
        let s = &self.motion;
        PredictionNetTraining {
            iterations: s.iterations,
            batch_size: s.batch_size,
            rmsprop: self.rmsprop(s.learning_rate, s.lr_decay_factor, s.lr_decay_every),
            log_every: s.log_every,
        }
    }

    pub fn triplet_loss(&self) -> TripletLossConfig {
        TripletLossConfig {
            tau: self.metric.tau,
            distance: match self.metric.distance {
                DistanceName::Euclidean => Distance::Euclidean,
                DistanceName::SquaredEuclidean => Distance::SquaredEuclidean,
            },
            negative_term: match self.metric.negative_term {
                NegativeTermName::PositiveNegative => NegativeTerm::PositiveNegative,
                NegativeTermName::AnchorNegative => NegativeTerm::AnchorNegative,
            },
        }
    }

    pub fn triplet_batch(&self, window: usize) -> TripletBatchSpec {
        TripletBatchSpec {
            identities_per_batch: self.metric.identities_per_batch,
            instances_per_identity: self.metric.instances_per_identity,
            window,
        }
    }

    pub fn metric_training(&self, window: usize) -> MetricNetTraining {
        let s = &self.metric;
        MetricNetTraining {
            iterations: s.iterations,
            batch: self.triplet_batch(window),
            loss: self.triplet_loss(),
            rmsprop: self.rmsprop(s.learning_rate, s.lr_decay_factor, s.lr_decay_every),
            log_every: s.log_every,
        }
    }

    pub fn verification_training(&self, window: usize) -> VerificationTraining {
        let s = &self.verification;
        VerificationTraining {
            iterations: s.iterations,
            batch: self.triplet_batch(window),
            rmsprop: self.rmsprop(s.learning_rate, s.lr_decay_factor, s.lr_decay_every),
            log_every: s.log_every,
        }
    }

    pub fn tracker_config(&self, gate: f64) -> TrackerConfig {
        TrackerConfig {
            gate,
            max_age: self.tracker.max_age,
            init_hits: self.tracker.init_hits,
            young_track_radius: self.tracker.young_track_radius,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(RunConfig::parse("").unwrap(), cfg);
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let cfg = RunConfig::parse("seed = 4\n[motion]\nwindow = 3\n").unwrap();
        assert_eq!((cfg.seed, cfg.motion.window), (4, 3));
        assert_eq!(cfg.motion.hidden, MotionSection::default().hidden);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::parse("[scene]\nidentites = 4\n").unwrap_err();
        assert!(err.to_string().contains("identites"), "{err}");
        assert!(RunConfig::parse("bogus = 1\n").is_err());
    }

    #[test]
    fn invalid_values_name_their_key() {
        let err = RunConfig::parse("[scene]\ndrop_rate = 1.5\n").unwrap_err();
        assert!(err.to_string().contains("drop_rate"), "{err}");
        let err = RunConfig::parse("[metric]\nidentities_per_batch = 20\n").unwrap_err();
        assert!(
            err.to_string().contains("metric.identities_per_batch"),
            "{err}"
        );
        let err = RunConfig::parse("[tracker]\ngate = -1.0\n").unwrap_err();
        assert!(err.to_string().contains("tracker.gate"), "{err}");
    }
}
