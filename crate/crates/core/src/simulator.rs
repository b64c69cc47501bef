//! Synthetic scenes: trajectories, appearance descriptors and detection streams.
//!
//! Motion is constant velocity perturbed by Gaussian acceleration noise and a
//! slowly oscillating turn rate, reflected at the image border. Each identity
//! owns a Gaussian appearance prototype; detections observe it with i.i.d.
//! noise, are dropped at random and during occlusion episodes, and are mixed
//! with false positives carrying fresh random descriptors.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::{BoxSize, Position, HALF_EXTENT};
use crate::rng::{derive_seed, seeded};

const GALLERY_STREAM: u64 = 0x6761_6c6c;

/// Box height over width for every simulated target.
pub const BOX_ASPECT: f64 = 2.5;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub identities: usize,
    pub frames: u32,
    pub descriptor_dim: usize,
    /// Standard deviation of per-detection appearance noise.
    pub appearance_noise: f64,
    /// Standard deviation of per-frame velocity perturbation.
    pub motion_noise: f64,
    /// Mean speed per frame.
    pub speed: f64,
    /// Upper bound on the per-frame displacement.
    pub max_speed: f64,
    /// Peak turn rate in radians per frame.
    pub curvature: f64,
    /// Period of the turn-rate oscillation in frames.
    pub curvature_period: f64,
    /// Standard deviation of detection position jitter.
    pub position_noise: f64,
    pub drop_rate: f64,
    /// Probability of one false positive per frame.
    pub false_positive_rate: f64,
    /// Per-identity, per-frame probability of starting an occlusion episode.
    pub occlusion_rate: f64,
    pub occlusion_duration: u32,
    /// Appearance-noise multiplier during the partially visible part of an occlusion.
    pub occlusion_noise_scale: f64,
    pub min_track_length: u32,
    pub box_width_min: f64,
    pub box_width_max: f64,
    pub seed: u64,
    /// Seed of the identity appearance prototypes; scenes sharing it show
    /// the same people. Derived from `seed` when unset.
    pub gallery_seed: Option<u64>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            identities: 20,
            frames: 200,
            descriptor_dim: 16,
            appearance_noise: 0.5,
            motion_noise: 0.0005,
            speed: 0.012,
            max_speed: 0.03,
            curvature: 0.03,
            curvature_period: 80.0,
            position_noise: 0.001,
            drop_rate: 0.05,
            false_positive_rate: 0.2,
            occlusion_rate: 0.01,
            occlusion_duration: 6,
            occlusion_noise_scale: 2.0,
            min_track_length: 40,
            box_width_min: 0.03,
            box_width_max: 0.05,
            seed: 0,
            gallery_seed: None,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("drop_rate", self.drop_rate),
            ("false_positive_rate", self.false_positive_rate),
            ("occlusion_rate", self.occlusion_rate),
        ];
        for (name, v) in rates {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.identities == 0 || self.frames < 2 || self.descriptor_dim == 0 {
            return Err(Error::Config(format!(
                "identities, descriptor_dim must be positive and frames ≥ 2 (got {}, {}, {})",
                self.identities, self.descriptor_dim, self.frames
            )));
        }
        if self.min_track_length < 2 || self.min_track_length > self.frames {
            return Err(Error::Config(format!(
                "min_track_length must lie in [2, frames], got {}",
                self.min_track_length
            )));
        }
        for (name, v) in [
            ("appearance_noise", self.appearance_noise),
            ("motion_noise", self.motion_noise),
            ("speed", self.speed),
            ("curvature", self.curvature),
            ("position_noise", self.position_noise),
            ("occlusion_noise_scale", self.occlusion_noise_scale),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be finite and ≥ 0, got {v}"
                )));
            }
        }
        if !(self.max_speed > 0.0 && self.max_speed < HALF_EXTENT) {
            return Err(Error::Config(format!(
                "max_speed must lie in (0, 0.5), got {}",
                self.max_speed
            )));
        }
        if !(self.curvature_period > 0.0) {
            return Err(Error::Config("curvature_period must be positive".into()));
        }
        if !(self.box_width_min > 0.0 && self.box_width_min <= self.box_width_max) {
            return Err(Error::Config(
                "box widths must satisfy 0 < min ≤ max".into(),
            ));
        }
        Ok(())
    }

    fn motion(&self) -> MotionModel {
        MotionModel {
            acceleration_noise: self.motion_noise,
            curvature: self.curvature,
            curvature_period: self.curvature_period,
            max_speed: self.max_speed,
        }
    }
}

/// Parameters of the per-step motion update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionModel {
    pub acceleration_noise: f64,
    pub curvature: f64,
    pub curvature_period: f64,
    pub max_speed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub identity: u32,
    pub start_frame: u32,
    pub positions: Vec<Position>,
    pub size: BoxSize,
}

impl Trajectory {
    pub fn end_frame(&self) -> u32 {
        self.start_frame + self.positions.len() as u32 - 1
    }

    pub fn at_frame(&self, frame: u32) -> Option<Position> {
        frame
            .checked_sub(self.start_frame)
            .and_then(|i| self.positions.get(i as usize).copied())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub frame: u32,
    pub position: Position,
    pub size: BoxSize,
    pub descriptor: Vec<f64>,
    pub confidence: f64,
    /// Ground-truth identity; `None` for false positives and for detections
    /// read back from interchange files.
    pub truth: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub config: SceneConfig,
    pub trajectories: Vec<Trajectory>,
    /// Sorted by frame.
    pub detections: Vec<Detection>,
    pub prototypes: Vec<Vec<f64>>,
}

impl Scene {
    /// Detections grouped per frame, covering every frame of the scene.
    pub fn frames(&self) -> Vec<Vec<Detection>> {
        group_by_frame(&self.detections, self.config.frames)
    }
}

pub fn group_by_frame(detections: &[Detection], frames: u32) -> Vec<Vec<Detection>> {
    let mut out: Vec<Vec<Detection>> = (0..frames).map(|_| Vec::new()).collect();
    for d in detections {
        if let Some(slot) = out.get_mut(d.frame as usize) {
            slot.push(d.clone());
        }
    }
    out
}

fn reflect(value: f64, velocity: &mut f64) -> f64 {
    if value > HALF_EXTENT {
        *velocity = -*velocity;
        2.0 * HALF_EXTENT - value
    } else if value < -HALF_EXTENT {
        *velocity = -*velocity;
        -2.0 * HALF_EXTENT - value
    } else {
        value
    }
}

/// Rolls out `length` positions from `start` with initial `velocity`.
pub fn simulate_motion<R: Rng + ?Sized>(
    start: Position,
    velocity: (f64, f64),
    length: usize,
    model: &MotionModel,
    phase: f64,
    rng: &mut R,
) -> Vec<Position> {
    let mut positions = Vec::with_capacity(length);
    let mut p = start.clamped();
    let (mut vx, mut vy) = velocity;
    positions.push(p);
    for t in 1..length {
        if model.curvature > 0.0 {
            let omega =
                model.curvature * libm::sin(2.0 * PI * t as f64 / model.curvature_period + phase);
            let (s, c) = (libm::sin(omega), libm::cos(omega));
            (vx, vy) = (c * vx - s * vy, s * vx + c * vy);
        }
        if model.acceleration_noise > 0.0 {
            let ax: f64 = rng.sample(StandardNormal);
            let ay: f64 = rng.sample(StandardNormal);
            vx += model.acceleration_noise * ax;
            vy += model.acceleration_noise * ay;
        }
        let speed = libm::hypot(vx, vy);
        if speed > model.max_speed {
            vx *= model.max_speed / speed;
            vy *= model.max_speed / speed;
        }
        let x = reflect(p.x + vx, &mut vx);
        let y = reflect(p.y + vy, &mut vy);
        p = Position::new(x, y);
        positions.push(p);
    }
    positions
}

/// Samples a trajectory of `length` frames starting at frame 0.
///
/// Start is uniform over the inner 80% of the image; speed is uniform in
/// `[0.5, 1.5]·speed` with uniform heading.
pub fn sample_trajectory<R: Rng + ?Sized>(
    config: &SceneConfig,
    length: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    if length < 2 {
        return Err(Error::Config(format!(
            "trajectory length must be ≥ 2, got {length}"
        )));
    }
    let spawn = 0.8 * HALF_EXTENT;
    let start = Position::new(
        rng.random_range(-spawn..=spawn),
        rng.random_range(-spawn..=spawn),
    );
    let heading = rng.random_range(0.0..2.0 * PI);
    let speed = (config.speed * rng.random_range(0.5..=1.5)).min(config.max_speed);
    let phase = rng.random_range(0.0..2.0 * PI);
    let width = rng.random_range(config.box_width_min..=config.box_width_max);
    let positions = simulate_motion(
        start,
        (speed * libm::cos(heading), speed * libm::sin(heading)),
        length,
        &config.motion(),
        phase,
        rng,
    );
    Ok(Trajectory {
        identity: 0,
        start_frame: 0,
        positions,
        size: BoxSize {
            width,
            height: width * BOX_ASPECT,
        },
    })
}

/// Independent fixed-length trajectories starting at frame 0, used for
/// motion-network training.
pub fn sample_trajectories<R: Rng + ?Sized>(
    config: &SceneConfig,
    count: usize,
    length: usize,
    rng: &mut R,
) -> Result<Vec<Trajectory>> {
    (0..count)
        .map(|i| {
            sample_trajectory(config, length, rng).map(|mut t| {
                t.identity = i as u32;
                t
            })
        })
        .collect()
}

fn gaussian_vector<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// Generates ground truth and the detection stream; a pure function of `config`.
pub fn generate_scene(config: &SceneConfig) -> Result<Scene> {
    config.validate()?;
    let mut rng = seeded(config.seed);
    let dim = config.descriptor_dim;
    let frames = config.frames;

    let mut gallery = seeded(
        config
            .gallery_seed
            .unwrap_or_else(|| derive_seed(config.seed, GALLERY_STREAM)),
    );
    let prototypes: Vec<Vec<f64>> = (0..config.identities)
        .map(|_| gaussian_vector(dim, &mut gallery))
        .collect();
    let mut trajectories = Vec::with_capacity(config.identities);
    for id in 0..config.identities {
        let length = rng.random_range(config.min_track_length..=frames);
        let start = rng.random_range(0..=frames - length);
        let mut t = sample_trajectory(config, length as usize, &mut rng)?;
        t.identity = id as u32;
        t.start_frame = start;
        trajectories.push(t);
    }

    let partial_frames = config.occlusion_duration.div_ceil(3);
    let mut occlusion_left = alloc::vec![0u32; config.identities];
    let mut detections = Vec::new();
    let jitter = Normal::new(0.0, config.position_noise.max(0.0)).expect("finite std");
    for frame in 0..frames {
        let mut in_frame = Vec::new();
        for (id, traj) in trajectories.iter().enumerate() {
            let Some(pos) = traj.at_frame(frame) else {
                continue;
            };
            let mut noise = config.appearance_noise;
            if occlusion_left[id] == 0
                && config.occlusion_duration > 0
                && rng.random_bool(config.occlusion_rate)
            {
                occlusion_left[id] = config.occlusion_duration;
            }
            if occlusion_left[id] > 0 {
                let elapsed = config.occlusion_duration - occlusion_left[id];
                occlusion_left[id] -= 1;
                if elapsed >= partial_frames {
                    continue;
                }
                noise *= config.occlusion_noise_scale;
            }
            if rng.random_bool(config.drop_rate) {
                continue;
            }
            let descriptor = prototypes[id]
                .iter()
                .map(|p| p + noise * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let position = if config.position_noise > 0.0 {
                Position::new(
                    pos.x + jitter.sample(&mut rng),
                    pos.y + jitter.sample(&mut rng),
                )
                .clamped()
            } else {
                pos
            };
            in_frame.push(Detection {
                frame,
                position,
                size: traj.size,
                descriptor,
                confidence: 1.0,
                truth: Some(traj.identity),
            });
        }
        if rng.random_bool(config.false_positive_rate) {
            let width = rng.random_range(config.box_width_min..=config.box_width_max);
            in_frame.push(Detection {
                frame,
                position: Position::new(
                    rng.random_range(-HALF_EXTENT..=HALF_EXTENT),
                    rng.random_range(-HALF_EXTENT..=HALF_EXTENT),
                ),
                size: BoxSize {
                    width,
                    height: width * BOX_ASPECT,
                },
                descriptor: gaussian_vector(dim, &mut rng),
                confidence: 1.0,
                truth: None,
            });
        }
        in_frame.shuffle(&mut rng);
        detections.extend(in_frame);
    }

    Ok(Scene {
        config: config.clone(),
        trajectories,
        detections,
        prototypes,
    })
}

/// Exactly `len` consecutive positions (frames `t−len+1 … t`).
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryWindow {
    positions: Vec<Position>,
}

impl TrajectoryWindow {
    pub fn new(positions: Vec<Position>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InsufficientData("empty trajectory window".into()));
        }
        if let Some(p) = positions.iter().find(|p| !p.in_bounds()) {
            return Err(Error::Config(format!(
                "window position {p:?} outside [-0.5, 0.5]²"
            )));
        }
        Ok(Self { positions })
    }

    /// The `len` positions ending at `history[end]`, front-padded with
    /// `history[0]` when the history is too short.
    pub fn ending_at(history: &[Position], end: usize, len: usize) -> Result<Self> {
        if end >= history.len() || len == 0 {
            return Err(Error::InsufficientData(format!(
                "window end {end} outside history of {}",
                history.len()
            )));
        }
        let positions = (0..len)
            .map(|k| {
                let back = len - 1 - k;
                history[end.saturating_sub(back)]
            })
            .collect();
        Self::new(positions)
    }

    pub fn positions(&self) -> &[Position] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn last(&self) -> Position {
        *self.positions.last().expect("non-empty window")
    }
}

/// A window and candidate position labelled by whether the candidate continues it.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionPair {
    pub window: TrajectoryWindow,
    pub candidate: Position,
    pub continues: bool,
}

/// Every `(window of N, true next position)` pair of each trajectory.
pub fn positive_motion_pairs(
    trajectories: &[Trajectory],
    window: usize,
) -> Result<Vec<MotionPair>> {
    let mut out = Vec::new();
    for t in trajectories {
        if t.positions.len() <= window {
            continue;
        }
        for s in 0..t.positions.len() - window {
            out.push(MotionPair {
                window: TrajectoryWindow::new(t.positions[s..s + window].to_vec())?,
                candidate: t.positions[s + window],
                continues: true,
            });
        }
    }
    Ok(out)
}

/// Balanced positive/negative motion pairs.
///
/// Each positive is paired with a negative sharing its window whose candidate is
/// the position of a different trajectory at the same frame (or, when no other
/// trajectory covers that frame, a random position of a random other trajectory).
pub fn make_motion_pairs<R: Rng + ?Sized>(
    trajectories: &[Trajectory],
    window: usize,
    rng: &mut R,
) -> Result<Vec<MotionPair>> {
    if trajectories.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "negative motion pairs need at least 2 trajectories, got {}",
            trajectories.len()
        )));
    }
    let mut out = Vec::new();
    let mut others = Vec::with_capacity(trajectories.len());
    for (i, t) in trajectories.iter().enumerate() {
        if t.positions.len() <= window {
            continue;
        }
        for s in 0..t.positions.len() - window {
            let w = TrajectoryWindow::new(t.positions[s..s + window].to_vec())?;
            let frame = t.start_frame + (s + window) as u32;
            others.clear();
            others.extend(
                trajectories
                    .iter()
                    .enumerate()
                    .filter(|&(j, o)| j != i && o.at_frame(frame).is_some())
                    .map(|(_, o)| o.at_frame(frame).expect("checked")),
            );
            let negative = match others.choose(rng) {
                Some(&p) => p,
                None => {
                    let mut j = rng.random_range(0..trajectories.len() - 1);
                    if j >= i {
                        j += 1;
                    }
                    *trajectories[j]
                        .positions
                        .choose(rng)
                        .expect("non-empty trajectory")
                }
            };
            out.push(MotionPair {
                window: w.clone(),
                candidate: t.positions[s + window],
                continues: true,
            });
            out.push(MotionPair {
                window: w,
                candidate: negative,
                continues: false,
            });
        }
    }
    Ok(out)
}

/// One channel input: appearance descriptor, trajectory window and candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub descriptor: Vec<f64>,
    pub window: TrajectoryWindow,
    pub candidate: Position,
    pub identity: u32,
    /// Frame of the window's last position.
    pub frame: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletInstance {
    pub anchor: Bundle,
    pub positive: Bundle,
    pub negative: Bundle,
}

impl TripletInstance {
    pub fn check(&self) -> Result<()> {
        if self.anchor.identity != self.positive.identity
            || self.anchor.identity == self.negative.identity
            || self.anchor.frame == self.positive.frame
        {
            return Err(Error::InsufficientData(format!(
                "malformed triplet: identities ({}, {}, {}), anchor/positive frames ({}, {})",
                self.anchor.identity,
                self.positive.identity,
                self.negative.identity,
                self.anchor.frame,
                self.positive.frame
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TripletBatchSpec {
    pub identities_per_batch: usize,
    pub instances_per_identity: usize,
    pub window: usize,
}

impl Default for TripletBatchSpec {
    fn default() -> Self {
        Self {
            identities_per_batch: 5,
            instances_per_identity: 20,
            window: 6,
        }
    }
}

/// Index of usable timestamps and observed descriptors per identity.
#[derive(Debug, Clone)]
pub struct TripletSampler<'a> {
    scene: &'a Scene,
    window: usize,
    /// Identity → usable window-end frames.
    usable: BTreeMap<u32, Vec<u32>>,
    /// Identity → `(frame, index into scene.detections)` of its true detections.
    observed: BTreeMap<u32, Vec<(u32, usize)>>,
    /// Frame → trajectories covering it.
    alive: Vec<Vec<usize>>,
}

impl<'a> TripletSampler<'a> {
    pub fn new(scene: &'a Scene, window: usize) -> Self {
        let mut observed: BTreeMap<u32, Vec<(u32, usize)>> = BTreeMap::new();
        for (k, d) in scene.detections.iter().enumerate() {
            if let Some(id) = d.truth {
                observed.entry(id).or_default().push((d.frame, k));
            }
        }
        let mut usable = BTreeMap::new();
        let mut alive: Vec<Vec<usize>> = (0..scene.config.frames).map(|_| Vec::new()).collect();
        for (ti, t) in scene.trajectories.iter().enumerate() {
            for f in t.start_frame..=t.end_frame() {
                if let Some(slot) = alive.get_mut(f as usize) {
                    slot.push(ti);
                }
            }
            if !observed.contains_key(&t.identity) {
                continue;
            }
            let len = t.positions.len();
            let stamps: Vec<u32> = (window.saturating_sub(1)..len.saturating_sub(1))
                .map(|l| t.start_frame + l as u32)
                .collect();
            if stamps.len() < 2 {
                log::warn!(
                    "identity {} has {} usable timestamps; skipped for triplets",
                    t.identity,
                    stamps.len()
                );
                continue;
            }
            usable.insert(t.identity, stamps);
        }
        Self {
            scene,
            window,
            usable,
            observed,
            alive,
        }
    }

    pub fn eligible_identities(&self) -> Vec<u32> {
        self.usable.keys().copied().collect()
    }

    fn trajectory(&self, identity: u32) -> &Trajectory {
        self.scene
            .trajectories
            .iter()
            .find(|t| t.identity == identity)
            .expect("indexed identity")
    }

    fn descriptor_near<R: Rng + ?Sized>(&self, identity: u32, end: u32, rng: &mut R) -> Vec<f64> {
        let obs = &self.observed[&identity];
        let lo = end.saturating_sub(self.window as u32 - 1);
        let near: Vec<usize> = obs
            .iter()
            .filter(|(f, _)| (lo..=end + 1).contains(f))
            .map(|&(_, k)| k)
            .collect();
        let k = match near.choose(rng) {
            Some(&k) => k,
            None => obs.choose(rng).expect("observed identity").1,
        };
        self.scene.detections[k].descriptor.clone()
    }

    fn window_at(&self, identity: u32, end: u32) -> Result<TrajectoryWindow> {
        let t = self.trajectory(identity);
        let end_local = (end - t.start_frame) as usize;
        TrajectoryWindow::new(t.positions[end_local + 1 - self.window..=end_local].to_vec())
    }

    fn consistent_bundle<R: Rng + ?Sized>(
        &self,
        identity: u32,
        end: u32,
        rng: &mut R,
    ) -> Result<Bundle> {
        let t = self.trajectory(identity);
        Ok(Bundle {
            descriptor: self.descriptor_near(identity, end, rng),
            window: self.window_at(identity, end)?,
            candidate: t.at_frame(end + 1).expect("usable stamp has a successor"),
            identity,
            frame: end,
        })
    }

    /// One triplet for `identity` with a random other identity as negative.
    pub fn sample_instance<R: Rng + ?Sized>(
        &self,
        identity: u32,
        rng: &mut R,
    ) -> Result<TripletInstance> {
        let stamps = self
            .usable
            .get(&identity)
            .ok_or_else(|| Error::InsufficientData(format!("identity {identity} not usable")))?;
        let i1 = rng.random_range(0..stamps.len());
        let mut i2 = rng.random_range(0..stamps.len() - 1);
        if i2 >= i1 {
            i2 += 1;
        }
        let anchor = self.consistent_bundle(identity, stamps[i1], rng)?;
        let positive = self.consistent_bundle(identity, stamps[i2], rng)?;

        let others: Vec<u32> = self
            .usable
            .keys()
            .copied()
            .filter(|&j| j != identity)
            .collect();
        let &j = others
            .choose(rng)
            .ok_or_else(|| Error::InsufficientData("no identity available for negatives".into()))?;
        let t3 = *self.usable[&j].choose(rng).expect("usable stamps");
        let next = &self.alive[(t3 + 1) as usize];
        let k = *next
            .choose(rng)
            .expect("negative's own trajectory covers t3+1");
        let candidate = self.scene.trajectories[k]
            .at_frame(t3 + 1)
            .expect("alive index");
        let negative = Bundle {
            descriptor: self.descriptor_near(j, t3, rng),
            window: self.window_at(j, t3)?,
            candidate,
            identity: j,
            frame: t3,
        };
        let instance = TripletInstance {
            anchor,
            positive,
            negative,
        };
        instance.check()?;
        Ok(instance)
    }
}

/// One batch: `identities_per_batch` distinct identities × `instances_per_identity`.
pub fn make_triplets<R: Rng + ?Sized>(
    sampler: &TripletSampler<'_>,
    spec: &TripletBatchSpec,
    rng: &mut R,
) -> Result<Vec<TripletInstance>> {
    let eligible = sampler.eligible_identities();
    if eligible.len() < spec.identities_per_batch + 1 {
        return Err(Error::InsufficientData(format!(
            "triplet batches need {} usable identities, found {}",
            spec.identities_per_batch + 1,
            eligible.len()
        )));
    }
    let chosen: Vec<u32> = eligible
        .choose_multiple(rng, spec.identities_per_batch)
        .copied()
        .collect();
    let mut batch = Vec::with_capacity(spec.identities_per_batch * spec.instances_per_identity);
    for id in chosen {
        for _ in 0..spec.instances_per_identity {
            batch.push(sampler.sample_instance(id, rng)?);
        }
    }
    Ok(batch)
}

/// Convenience for a fixed-size evaluation set drawn batch by batch.
pub fn triplet_set<R: Rng + ?Sized>(
    scene: &Scene,
    spec: &TripletBatchSpec,
    batches: usize,
    rng: &mut R,
) -> Result<Vec<TripletInstance>> {
    let sampler = TripletSampler::new(scene, spec.window);
    let mut out = Vec::new();
    for _ in 0..batches {
        out.extend(make_triplets(&sampler, spec, rng)?);
    }
    Ok(out)
}

/// Splits detections into per-identity `(descriptor, identity)` samples.
pub fn labelled_descriptors(scene: &Scene) -> Vec<(Vec<f64>, usize)> {
    scene
        .detections
        .iter()
        .filter_map(|d| d.truth.map(|id| (d.descriptor.clone(), id as usize)))
        .collect()
}

/// Mini-batches in order (the last batch may be short).
pub fn minibatches<T>(items: &[T], size: usize) -> impl Iterator<Item = &[T]> {
    items.chunks(size.max(1))
}
