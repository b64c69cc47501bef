//! Shared-weight fusion network trained with the triplet margin constraint.
//!
//! Every bundle (descriptor, window, candidate) is encoded by the ID-Net and
//! the Prediction-Net; the concatenated cue features pass through one tanh
//! dense layer into a `K`-dimensional embedding. The anchor, positive and
//! negative channels all run through the same parameters.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::appearance::{IdNet, IdNetCache};
use crate::error::{shape_err, Error, Result};
use crate::geometry::Position;
use crate::motion::{MotionCache, PredictionNet};
use crate::nn::{
    rmsprop_step, triplet_hinge_loss_batch, triplet_margin, visit_child, visit_child_mut,
    Activation, Linear, LinearCache, Module, RmspropConfig, TripletLossConfig,
};
use crate::simulator::{
    make_triplets, Bundle, TrajectoryWindow, TripletBatchSpec, TripletInstance, TripletSampler,
};
use crate::tensor::{Param, Tensor};
use crate::training::TrainLogRow;

/// Which cue features feed the fusion layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Cues {
    Appearance,
    Motion,
    Both,
}

impl Cues {
    pub fn appearance(self) -> bool {
        matches!(self, Cues::Appearance | Cues::Both)
    }

    pub fn motion(self) -> bool {
        matches!(self, Cues::Motion | Cues::Both)
    }

    pub fn label(self) -> &'static str {
        match self {
            Cues::Appearance => "A",
            Cues::Motion => "M",
            Cues::Both => "A+M",
        }
    }
}

/// The appearance and motion component networks behind a fusion head.
#[derive(Debug, Clone, PartialEq)]
pub struct CueEncoder {
    pub id_net: IdNet,
    pub prediction_net: PredictionNet,
    pub cues: Cues,
}

#[derive(Debug, Clone)]
pub struct CueCache {
    appearance: Option<IdNetCache>,
    motion: Option<MotionCache>,
}

/// A live track as seen by an affinity model.
#[derive(Debug, Clone, Copy)]
pub struct TrackQuery<'a> {
    /// Position history up to the current frame (at least one entry).
    pub positions: &'a [Position],
    pub descriptor: &'a [f64],
}

impl TrackQuery<'_> {
    /// Window and candidate describing the track's own last step.
    pub fn own_step(&self, window: usize) -> Result<(TrajectoryWindow, Position)> {
        let last = self
            .positions
            .len()
            .checked_sub(1)
            .ok_or(Error::InsufficientData(
                "track query without positions".into(),
            ))?;
        let end = last.saturating_sub(1);
        Ok((
            TrajectoryWindow::ending_at(self.positions, end, window)?,
            self.positions[last],
        ))
    }

    /// Window ending at the current frame, used for detection candidates.
    pub fn current_window(&self, window: usize) -> Result<TrajectoryWindow> {
        let last = self
            .positions
            .len()
            .checked_sub(1)
            .ok_or(Error::InsufficientData(
                "track query without positions".into(),
            ))?;
        TrajectoryWindow::ending_at(self.positions, last, window)
    }
}

impl CueEncoder {
    pub fn new(id_net: IdNet, prediction_net: PredictionNet, cues: Cues) -> Self {
        Self {
            id_net,
            prediction_net,
            cues,
        }
    }

    pub fn feature_dim(&self) -> usize {
        let a = if self.cues.appearance() {
            self.id_net.feature_dim()
        } else {
            0
        };
        let m = if self.cues.motion() {
            self.prediction_net.feature_dim()
        } else {
            0
        };
        a + m
    }

    pub fn window(&self) -> usize {
        self.prediction_net.window()
    }

    fn combine(&self, appearance: Option<Tensor>, motion: Option<Tensor>) -> Result<Tensor> {
        match (appearance, motion) {
            (Some(a), Some(m)) => Tensor::concat_cols(&[&a, &m]),
            (Some(a), None) => Ok(a),
            (None, Some(m)) => Ok(m),
            (None, None) => Err(Error::Config("no cue selected".into())),
        }
    }

    /// Concatenated cue features for a batch of bundles.
    pub fn forward(&self, bundles: &[&Bundle]) -> Result<(Tensor, CueCache)> {
        if bundles.is_empty() {
            return shape_err("cue batch", &[1], &[0]);
        }
        let (a, appearance) = if self.cues.appearance() {
            let d = self.id_net.descriptor_dim();
            if let Some(b) = bundles.iter().find(|b| b.descriptor.len() != d) {
                return shape_err("bundle descriptor", &[d], &[b.descriptor.len()]);
            }
            let rows: Vec<&[f64]> = bundles.iter().map(|b| b.descriptor.as_slice()).collect();
            let (f, c) = self.id_net.features(&Tensor::from_rows(&rows)?)?;
            (Some(f), Some(c))
        } else {
            (None, None)
        };
        let (m, motion) = if self.cues.motion() {
            let windows: Vec<&TrajectoryWindow> = bundles.iter().map(|b| &b.window).collect();
            let candidates: Vec<Position> = bundles.iter().map(|b| b.candidate).collect();
            let (f, c) = self.prediction_net.motion_features(&windows, &candidates)?;
            (Some(f), Some(c))
        } else {
            (None, None)
        };
        Ok((self.combine(a, m)?, CueCache { appearance, motion }))
    }

    pub fn backward(&mut self, cache: &CueCache, grad: &Tensor) -> Result<()> {
        let a_width = if cache.appearance.is_some() {
            self.id_net.feature_dim()
        } else {
            0
        };
        let m_width = if cache.motion.is_some() {
            self.prediction_net.feature_dim()
        } else {
            0
        };
        if grad.cols() != a_width + m_width {
            return shape_err(
                "cue gradient",
                &[grad.rows(), a_width + m_width],
                grad.shape(),
            );
        }
        match (&cache.appearance, &cache.motion) {
            (Some(a), Some(m)) => {
                let parts = grad.split_cols(&[a_width, m_width])?;
                self.id_net.backward_features(a, &parts[0])?;
                self.prediction_net.backward_features(m, &parts[1])
            }
            (Some(a), None) => self.id_net.backward_features(a, grad),
            (None, Some(m)) => self.prediction_net.backward_features(m, grad),
            (None, None) => Ok(()),
        }
    }

    /// Appearance features of a frame's detections, computed once per frame.
    pub fn detection_appearance(&self, descriptors: &[&[f64]]) -> Result<Option<Tensor>> {
        if !self.cues.appearance() || descriptors.is_empty() {
            return Ok(None);
        }
        let d = self.id_net.descriptor_dim();
        if let Some(x) = descriptors.iter().find(|x| x.len() != d) {
            return shape_err("detection descriptor", &[d], &[x.len()]);
        }
        Ok(Some(
            self.id_net.features(&Tensor::from_rows(descriptors)?)?.0,
        ))
    }

    /// Cue features of the track itself (one row) and of each detection as
    /// the track's continuation (one row per detection).
    pub fn track_and_detections(
        &self,
        track: &TrackQuery<'_>,
        detection_appearance: Option<&Tensor>,
        detection_positions: &[Position],
    ) -> Result<(Tensor, Tensor)> {
        let n = self.window();
        let (window, candidate) = track.own_step(n)?;
        let own = Bundle {
            descriptor: track.descriptor.to_vec(),
            window,
            candidate,
            identity: 0,
            frame: 0,
        };
        let (track_features, _) = self.forward(&[&own])?;
        let motion = if self.cues.motion() {
            let encoding = self
                .prediction_net
                .encode_window(&track.current_window(n)?)?;
            Some(
                self.prediction_net
                    .features_from_encoding(&encoding, detection_positions)?,
            )
        } else {
            None
        };
        let appearance = if self.cues.appearance() {
            let a = detection_appearance
                .ok_or_else(|| Error::Config("detection appearance features missing".into()))?;
            if a.rows() != detection_positions.len() {
                return shape_err(
                    "detection features",
                    &[detection_positions.len()],
                    a.shape(),
                );
            }
            Some(a.clone())
        } else {
            None
        };
        Ok((track_features, self.combine(appearance, motion)?))
    }
}

impl Module for CueEncoder {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        visit_child("id_net", &self.id_net, f);
        visit_child("prediction_net", &self.prediction_net, f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        visit_child_mut("id_net", &mut self.id_net, f);
        visit_child_mut("prediction_net", &mut self.prediction_net, f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricNet {
    pub encoder: CueEncoder,
    pub fusion: Linear,
}

#[derive(Debug, Clone)]
pub struct MetricCache {
    cues: CueCache,
    fusion: LinearCache,
}

impl MetricNet {
    /// Wraps pretrained components with a fresh fan-in scaled fusion layer.
    pub fn new<R: Rng + ?Sized>(encoder: CueEncoder, embedding_dim: usize, rng: &mut R) -> Self {
        let fan_in = encoder.feature_dim();
        let std = 1.0 / libm::sqrt(fan_in.max(1) as f64);
        let fusion = Linear::new(fan_in, embedding_dim, Activation::Tanh, std, rng);
        Self { encoder, fusion }
    }

    pub fn embedding_dim(&self) -> usize {
        self.fusion.outputs()
    }

    pub fn cues(&self) -> Cues {
        self.encoder.cues
    }

    pub fn embed_batch(&self, bundles: &[&Bundle]) -> Result<(Tensor, MetricCache)> {
        let (features, cues) = self.encoder.forward(bundles)?;
        let (embedding, fusion) = self.fusion.forward(&features)?;
        Ok((embedding, MetricCache { cues, fusion }))
    }

    pub fn backward(&mut self, cache: &MetricCache, grad: &Tensor) -> Result<()> {
        let d_features = self.fusion.backward(&cache.fusion, grad)?;
        self.encoder.backward(&cache.cues, &d_features)
    }

    pub fn embed(&self, bundle: &Bundle) -> Result<Vec<f64>> {
        Ok(self.embed_batch(&[bundle])?.0.into_data())
    }

    /// Embeddings of many bundles, evaluated in chunks.
    pub fn embed_all(&self, bundles: &[&Bundle]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(bundles.len());
        for chunk in bundles.chunks(256) {
            let e = self.embed_batch(chunk)?.0;
            out.extend((0..e.rows()).map(|r| e.row_slice(r).to_vec()));
        }
        Ok(out)
    }

    /// Mean triplet hinge loss; accumulates gradients into every component when `backward`.
    pub fn triplet_loss(
        &mut self,
        triplets: &[TripletInstance],
        config: &TripletLossConfig,
        backward: bool,
    ) -> Result<f64> {
        let anchors: Vec<&Bundle> = triplets.iter().map(|t| &t.anchor).collect();
        let positives: Vec<&Bundle> = triplets.iter().map(|t| &t.positive).collect();
        let negatives: Vec<&Bundle> = triplets.iter().map(|t| &t.negative).collect();
        let (ea, ca) = self.embed_batch(&anchors)?;
        let (ep, cp) = self.embed_batch(&positives)?;
        let (en, cn) = self.embed_batch(&negatives)?;
        let (loss, [ga, gp, gn]) = triplet_hinge_loss_batch(&ea, &ep, &en, config)?;
        if backward {
            self.backward(&ca, &ga)?;
            self.backward(&cp, &gp)?;
            self.backward(&cn, &gn)?;
        }
        Ok(loss)
    }

    /// Embedding-distance costs between tracks (rows) and detections (columns).
    pub fn cost_rows(
        &self,
        tracks: &[TrackQuery<'_>],
        descriptors: &[&[f64]],
        positions: &[Position],
    ) -> Result<Vec<Vec<f64>>> {
        if positions.is_empty() {
            return Ok(tracks.iter().map(|_| Vec::new()).collect());
        }
        let appearance = self.encoder.detection_appearance(descriptors)?;
        tracks
            .iter()
            .map(|t| {
                let (own, dets) =
                    self.encoder
                        .track_and_detections(t, appearance.as_ref(), positions)?;
                let e_track = self.fusion.infer(&own)?;
                let e_dets = self.fusion.infer(&dets)?;
                Ok((0..e_dets.rows())
                    .map(|r| euclidean(e_track.data(), e_dets.row_slice(r)))
                    .collect())
            })
            .collect()
    }
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
}

impl Module for MetricNet {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        self.encoder.visit_params(f);
        visit_child("fusion", &self.fusion, f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        self.encoder.visit_params_mut(f);
        visit_child_mut("fusion", &mut self.fusion, f);
    }
}

/// Fraction of triplets satisfying `d(a,p) − d(·,n) ≤ tau`.
pub fn margin_satisfaction(
    net: &MetricNet,
    triplets: &[TripletInstance],
    config: &TripletLossConfig,
) -> Result<f64> {
    if triplets.is_empty() {
        return Err(Error::InsufficientData(
            "margin satisfaction of an empty triplet set".into(),
        ));
    }
    let mut satisfied = 0usize;
    for chunk in triplets.chunks(128) {
        let a: Vec<&Bundle> = chunk.iter().map(|t| &t.anchor).collect();
        let p: Vec<&Bundle> = chunk.iter().map(|t| &t.positive).collect();
        let n: Vec<&Bundle> = chunk.iter().map(|t| &t.negative).collect();
        let (ea, ep, en) = (
            net.embed_batch(&a)?.0,
            net.embed_batch(&p)?.0,
            net.embed_batch(&n)?.0,
        );
        satisfied += (0..chunk.len())
            .filter(|&r| {
                triplet_margin(ea.row_slice(r), ep.row_slice(r), en.row_slice(r), config)
                    <= config.tau
            })
            .count();
    }
    Ok(satisfied as f64 / triplets.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricNetTraining {
    pub iterations: u64,
    pub batch: TripletBatchSpec,
    pub loss: TripletLossConfig,
    pub rmsprop: RmspropConfig,
    pub log_every: u64,
}

impl Default for MetricNetTraining {
    fn default() -> Self {
        Self {
            iterations: 600,
            batch: TripletBatchSpec::default(),
            loss: TripletLossConfig::default(),
            rmsprop: RmspropConfig {
                learning_rate: 3e-3,
                decay: 0.9,
                epsilon: 1e-8,
                lr_decay_factor: 0.95,
                lr_decay_every: 200,
            },
            log_every: 100,
        }
    }
}

/// End-to-end triplet training starting from `net`; logs margin satisfaction on `validation`.
pub fn train_metric_net<R: Rng + ?Sized>(
    mut net: MetricNet,
    sampler: &TripletSampler<'_>,
    validation: &[TripletInstance],
    hyper: &MetricNetTraining,
    rng: &mut R,
) -> Result<(MetricNet, Vec<TrainLogRow>)> {
    if hyper.loss.tau >= 0.0 {
        log::warn!(
            "triplet margin tau = {} is not negative; the constraint is trivially weak",
            hyper.loss.tau
        );
    }
    if hyper.batch.window != net.encoder.window() {
        return shape_err(
            "triplet window",
            &[net.encoder.window()],
            &[hyper.batch.window],
        );
    }
    let mut log = Vec::new();
    let (mut window_loss, mut window_count) = (0.0, 0u64);
    for it in 0..hyper.iterations {
        let batch = make_triplets(sampler, &hyper.batch, rng)?;
        for t in &batch {
            t.check()?;
        }
        let loss = net.triplet_loss(&batch, &hyper.loss, true)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "metric-net loss at iteration {it} (lr {:.2e})",
                hyper.rmsprop.learning_rate_at(it)
            )));
        }
        rmsprop_step(&mut net, &hyper.rmsprop, it);
        window_loss += loss;
        window_count += 1;
        if hyper.log_every > 0 && (it + 1) % hyper.log_every == 0 {
            let accuracy = if validation.is_empty() {
                margin_satisfaction(&net, &batch, &hyper.loss)?
            } else {
                margin_satisfaction(&net, validation, &hyper.loss)?
            };
            let mean = window_loss / window_count as f64;
            log::debug!(
                "metric-net iteration {} loss {mean:.4} margin satisfaction {accuracy:.3}",
                it + 1
            );
            log.push(TrainLogRow {
                iteration: it + 1,
                loss: mean,
                accuracy,
            });
            window_loss = 0.0;
            window_count = 0;
        }
    }
    Ok((net, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::appearance::IdNetDims;
    use crate::motion::PredictionNetDims;
    use crate::nn::{grad_check, GradCheckConfig};
    use crate::rng::seeded;
    use crate::simulator::{generate_scene, SceneConfig};
    use rand::seq::SliceRandom;

    fn small_net(cues: Cues, seed: u64) -> MetricNet {
        let mut rng = seeded(seed);
        let id_net = IdNet::new(
            IdNetDims {
                descriptor: 4,
                hidden: 6,
                feature: 8,
                classes: 3,
            },
            &mut rng,
        );
        let prediction_net = PredictionNet::with_std(
            PredictionNetDims {
                hidden: 8,
                window: 3,
            },
            0.5,
            &mut rng,
        );
        MetricNet::new(CueEncoder::new(id_net, prediction_net, cues), 4, &mut rng)
    }

    fn small_triplets(seed: u64, count: usize) -> Vec<TripletInstance> {
        let scene = generate_scene(&SceneConfig {
            identities: 8,
            frames: 40,
            descriptor_dim: 4,
            min_track_length: 20,
            seed,
            ..SceneConfig::default()
        })
        .unwrap();
        let sampler = TripletSampler::new(&scene, 3);
        let spec = TripletBatchSpec {
            identities_per_batch: 2,
            instances_per_identity: count / 2,
            window: 3,
        };
        make_triplets(&sampler, &spec, &mut seeded(seed + 100)).unwrap()
    }

    #[test]
    fn embedding_has_k_dims_and_is_deterministic() {
        let net = small_net(Cues::Both, 1);
        let t = &small_triplets(1, 2)[0];
        let e = net.embed(&t.anchor).unwrap();
        assert_eq!(e.len(), 4);
        assert_eq!(e, net.embed(&t.anchor).unwrap());
        assert!(e.iter().all(|v| v.is_finite() && v.abs() <= 1.0));
    }

    #[test]
    fn wrong_descriptor_width_is_rejected() {
        let net = small_net(Cues::Both, 1);
        let mut b = small_triplets(1, 2)[0].anchor.clone();
        b.descriptor.push(0.0);
        assert!(matches!(net.embed(&b), Err(Error::Shape { .. })));
    }

    #[test]
    fn end_to_end_gradients_reach_every_component() {
        let triplets = small_triplets(2, 4);
        let mut net = small_net(Cues::Both, 2);
        // Keep every hinge active while the loss stays small (finite differences
        // lose precision on large loss values).
        let margins: Vec<f64> = triplets
            .iter()
            .map(|t| {
                let e = |b: &Bundle| net.embed(b).unwrap();
                triplet_margin(
                    &e(&t.anchor),
                    &e(&t.positive),
                    &e(&t.negative),
                    &TripletLossConfig::default(),
                )
            })
            .collect();
        let cfg = TripletLossConfig {
            tau: margins.iter().copied().fold(f64::INFINITY, f64::min) - 0.05,
            ..TripletLossConfig::default()
        };
        let report = grad_check(
            &mut net,
            |m, backward| m.triplet_loss(&triplets, &cfg, backward).unwrap(),
            &GradCheckConfig::default(),
        );
        assert!(report.passed, "worst {:?}", report.worst());
        net.zero_grad();
        net.triplet_loss(&triplets, &cfg, true).unwrap();
        for prefix in [
            "id_net.hidden",
            "prediction_net.lstm",
            "prediction_net.position",
            "fusion",
        ] {
            let mut touched = false;
            net.visit_params(&mut |name, p| {
                if name.starts_with(prefix) && p.grad.data().iter().any(|g| *g != 0.0) {
                    touched = true;
                }
            });
            assert!(touched, "{prefix} received no gradient");
        }
    }

    #[test]
    fn channels_share_one_function() {
        let triplets = small_triplets(3, 6);
        let cfg = TripletLossConfig::default();
        let mut net = small_net(Cues::Both, 3);
        let loss = net.triplet_loss(&triplets, &cfg, false).unwrap();

        let b = triplets.len();
        let mut all: Vec<(usize, &Bundle)> = Vec::new();
        for (i, t) in triplets.iter().enumerate() {
            all.extend([
                (i, &t.anchor),
                (b + i, &t.positive),
                (2 * b + i, &t.negative),
            ]);
        }
        all.shuffle(&mut seeded(9));
        let refs: Vec<&Bundle> = all.iter().map(|(_, x)| *x).collect();
        let (e, _) = net.embed_batch(&refs).unwrap();
        let mut rows = alloc::vec![Vec::new(); 3 * b];
        for (r, (slot, _)) in all.iter().enumerate() {
            rows[*slot] = e.row_slice(r).to_vec();
        }
        let oracle: f64 = (0..b)
            .map(|i| {
                let m = triplet_margin(&rows[i], &rows[b + i], &rows[2 * b + i], &cfg);
                (m - cfg.tau).max(0.0)
            })
            .sum::<f64>()
            / b as f64;
        assert!((loss - oracle).abs() < 1e-12, "{loss} vs {oracle}");
    }

    #[test]
    fn vacuous_margin_is_always_satisfied() {
        let net = small_net(Cues::Both, 4);
        let triplets = small_triplets(4, 10);
        let cfg = TripletLossConfig {
            tau: 1e9,
            ..TripletLossConfig::default()
        };
        assert_eq!(margin_satisfaction(&net, &triplets, &cfg).unwrap(), 1.0);
        assert!(margin_satisfaction(&net, &[], &cfg).is_err());
    }

    #[test]
    fn random_nets_rarely_satisfy_the_margin() {
        let triplets = small_triplets(5, 40);
        let cfg = TripletLossConfig::default();
        let mean: f64 = (0..10)
            .map(|s| margin_satisfaction(&small_net(Cues::Both, 100 + s), &triplets, &cfg).unwrap())
            .sum::<f64>()
            / 10.0;
        assert!(mean < 0.25, "{mean}");
    }

    #[test]
    fn single_cue_encoders_use_their_own_width() {
        assert_eq!(small_net(Cues::Appearance, 1).encoder.feature_dim(), 8);
        assert_eq!(small_net(Cues::Motion, 1).encoder.feature_dim(), 8);
        assert_eq!(small_net(Cues::Both, 1).encoder.feature_dim(), 16);
    }

    #[test]
    fn cost_rows_match_direct_embedding() {
        let net = small_net(Cues::Both, 6);
        let positions = [
            Position::new(0.0, 0.0),
            Position::new(0.01, 0.0),
            Position::new(0.02, 0.01),
            Position::new(0.03, 0.01),
        ];
        let descriptor = [0.1, -0.2, 0.3, 0.0];
        let track = TrackQuery {
            positions: &positions,
            descriptor: &descriptor,
        };
        let dets = [Position::new(0.04, 0.01), Position::new(-0.2, 0.3)];
        let det_desc: [&[f64]; 2] = [&[0.1, -0.2, 0.3, 0.1], &[1.0, 1.0, -1.0, 0.0]];
        let costs = net.cost_rows(&[track], &det_desc, &dets).unwrap();
        assert_eq!((costs.len(), costs[0].len()), (1, 2));

        let own = Bundle {
            descriptor: descriptor.to_vec(),
            window: TrajectoryWindow::ending_at(&positions, 2, 3).unwrap(),
            candidate: positions[3],
            identity: 0,
            frame: 0,
        };
        let e_own = net.embed(&own).unwrap();
        for (j, (&p, d)) in dets.iter().zip(det_desc).enumerate() {
            let b = Bundle {
                descriptor: d.to_vec(),
                window: TrajectoryWindow::ending_at(&positions, 3, 3).unwrap(),
                candidate: p,
                identity: 0,
                frame: 0,
            };
            let expected = euclidean(&e_own, &net.embed(&b).unwrap());
            assert!((costs[0][j] - expected).abs() < 1e-12);
        }
    }
}
