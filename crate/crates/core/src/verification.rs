//! Verification-loss counterpart of the metric network.
//!
//! The same cue encoder feeds a binary same/different softmax head applied to
//! the concatenated features of two bundles. Pairs come from triplets:
//! (anchor, positive) is "same", (anchor, negative) is "different".

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::geometry::Position;
use crate::metric::{CueCache, CueEncoder, TrackQuery};
use crate::nn::{
    rmsprop_step, softmax, softmax_cross_entropy, visit_child, visit_child_mut, Activation, Linear,
    LinearCache, Module, RmspropConfig,
};
use crate::simulator::{make_triplets, Bundle, TripletBatchSpec, TripletInstance, TripletSampler};
use crate::tensor::{Param, Tensor};
use crate::training::TrainLogRow;

/// Classifier output index for "same identity".
pub const SAME: usize = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationNet {
    pub encoder: CueEncoder,
    pub hidden: Linear,
    pub classifier: Linear,
}

struct PairCache {
    left: CueCache,
    right: CueCache,
    hidden: LinearCache,
    classifier: LinearCache,
}

impl VerificationNet {
    pub fn new<R: Rng + ?Sized>(encoder: CueEncoder, hidden: usize, rng: &mut R) -> Self {
        let f = encoder.feature_dim();
        let scale = |fan_in: usize| 1.0 / libm::sqrt(fan_in.max(1) as f64);
        Self {
            hidden: Linear::new(2 * f, hidden, Activation::Tanh, scale(2 * f), rng),
            classifier: Linear::new(hidden, 2, Activation::Identity, scale(hidden), rng),
            encoder,
        }
    }

    fn head(&self, pair_features: &Tensor) -> Result<Tensor> {
        self.classifier.infer(&self.hidden.infer(pair_features)?)
    }

    fn pair_logits(&self, left: &[&Bundle], right: &[&Bundle]) -> Result<(Tensor, PairCache)> {
        if left.len() != right.len() {
            return shape_err("verification pairs", &[left.len()], &[right.len()]);
        }
        let (fl, cl) = self.encoder.forward(left)?;
        let (fr, cr) = self.encoder.forward(right)?;
        let (h, hidden) = self.hidden.forward(&Tensor::concat_cols(&[&fl, &fr])?)?;
        let (logits, classifier) = self.classifier.forward(&h)?;
        Ok((
            logits,
            PairCache {
                left: cl,
                right: cr,
                hidden,
                classifier,
            },
        ))
    }

    /// Probability that two bundles show the same identity.
    pub fn same_prob(&self, left: &Bundle, right: &Bundle) -> Result<f64> {
        let (logits, _) = self.pair_logits(&[left], &[right])?;
        Ok(softmax(&logits).data()[SAME])
    }

    /// Mean cross-entropy over (anchor, positive) and (anchor, negative) pairs.
    pub fn pair_loss(
        &mut self,
        triplets: &[TripletInstance],
        backward: bool,
    ) -> Result<(f64, usize)> {
        let mut left = Vec::with_capacity(2 * triplets.len());
        let mut right = Vec::with_capacity(2 * triplets.len());
        let mut labels = Vec::with_capacity(2 * triplets.len());
        for t in triplets {
            left.extend([&t.anchor, &t.anchor]);
            right.extend([&t.positive, &t.negative]);
            labels.extend([SAME, 1 - SAME]);
        }
        let (logits, cache) = self.pair_logits(&left, &right)?;
        let (loss, grad) = softmax_cross_entropy(&logits, &labels)?;
        let correct = (0..logits.rows())
            .filter(|&r| {
                let row = logits.row_slice(r);
                (row[SAME] > row[1 - SAME]) == (labels[r] == SAME)
            })
            .count();
        if backward {
            let dh = self.classifier.backward(&cache.classifier, &grad)?;
            let d_pair = self.hidden.backward(&cache.hidden, &dh)?;
            let f = self.encoder.feature_dim();
            let parts = d_pair.split_cols(&[f, f])?;
            self.encoder.backward(&cache.left, &parts[0])?;
            self.encoder.backward(&cache.right, &parts[1])?;
        }
        Ok((loss, correct))
    }

    pub fn pair_accuracy(&mut self, triplets: &[TripletInstance]) -> Result<f64> {
        if triplets.is_empty() {
            return Err(Error::InsufficientData(
                "pair accuracy of an empty triplet set".into(),
            ));
        }
        let mut correct = 0;
        for chunk in triplets.chunks(128) {
            correct += self.pair_loss(chunk, false)?.1;
        }
        Ok(correct as f64 / (2 * triplets.len()) as f64)
    }

    /// `1 − p(same)` between tracks (rows) and detections (columns).
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
                let mut repeated = Tensor::zeros(&[dets.rows(), own.cols()]);
                for r in 0..dets.rows() {
                    repeated.row_slice_mut(r).copy_from_slice(own.data());
                }
                let p = softmax(&self.head(&Tensor::concat_cols(&[&repeated, &dets])?)?);
                Ok((0..p.rows()).map(|r| 1.0 - p.row_slice(r)[SAME]).collect())
            })
            .collect()
    }
}

impl Module for VerificationNet {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        self.encoder.visit_params(f);
        visit_child("verify_hidden", &self.hidden, f);
        visit_child("verify_classifier", &self.classifier, f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        self.encoder.visit_params_mut(f);
        visit_child_mut("verify_hidden", &mut self.hidden, f);
        visit_child_mut("verify_classifier", &mut self.classifier, f);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerificationTraining {
    pub iterations: u64,
    pub batch: TripletBatchSpec,
    pub rmsprop: RmspropConfig,
    pub log_every: u64,
}

impl Default for VerificationTraining {
    fn default() -> Self {
        Self {
            iterations: 600,
            batch: TripletBatchSpec::default(),
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

/// End-to-end same/different training; logs pair accuracy on `validation`.
pub fn train_verification_net<R: Rng + ?Sized>(
    mut net: VerificationNet,
    sampler: &TripletSampler<'_>,
    validation: &[TripletInstance],
    hyper: &VerificationTraining,
    rng: &mut R,
) -> Result<(VerificationNet, Vec<TrainLogRow>)> {
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
        let (loss, correct) = net.pair_loss(&batch, true)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "verification loss at iteration {it}"
            )));
        }
        rmsprop_step(&mut net, &hyper.rmsprop, it);
        window_loss += loss;
        window_count += 1;
        if hyper.log_every > 0 && (it + 1) % hyper.log_every == 0 {
            let accuracy = if validation.is_empty() {
                correct as f64 / (2 * batch.len()) as f64
            } else {
                net.pair_accuracy(validation)?
            };
            log.push(TrainLogRow {
                iteration: it + 1,
                loss: window_loss / window_count as f64,
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
    use crate::appearance::{IdNet, IdNetDims};
    use crate::metric::Cues;
    use crate::motion::{PredictionNet, PredictionNetDims};
    use crate::nn::{grad_check, GradCheckConfig};
    use crate::rng::seeded;
    use crate::simulator::{generate_scene, SceneConfig};

    fn small_net(cues: Cues, seed: u64) -> VerificationNet {
        let mut rng = seeded(seed);
        let id_net = IdNet::new(
            IdNetDims {
                descriptor: 4,
                hidden: 6,
                feature: 5,
                classes: 3,
            },
            &mut rng,
        );
        let prediction_net = PredictionNet::with_std(
            PredictionNetDims {
                hidden: 4,
                window: 3,
            },
            0.5,
            &mut rng,
        );
        VerificationNet::new(CueEncoder::new(id_net, prediction_net, cues), 6, &mut rng)
    }

    fn triplets(seed: u64, count: usize) -> Vec<TripletInstance> {
        let scene = generate_scene(&SceneConfig {
            identities: 8,
            frames: 40,
            descriptor_dim: 4,
            min_track_length: 20,
            seed,
            ..SceneConfig::default()
        })
        .unwrap();
        let spec = TripletBatchSpec {
            identities_per_batch: 2,
            instances_per_identity: count / 2,
            window: 3,
        };
        make_triplets(&TripletSampler::new(&scene, 3), &spec, &mut seeded(seed)).unwrap()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let batch = triplets(1, 4);
        for cues in [Cues::Appearance, Cues::Motion, Cues::Both] {
            let mut net = small_net(cues, 3);
            let report = grad_check(
                &mut net,
                |m, backward| m.pair_loss(&batch, backward).unwrap().0,
                &GradCheckConfig::default(),
            );
            assert!(report.passed, "{cues:?}: worst {:?}", report.worst());
        }
    }

    #[test]
    fn costs_are_complementary_probabilities() {
        let net = small_net(Cues::Both, 3);
        let positions = [Position::new(0.0, 0.0), Position::new(0.01, 0.0)];
        let descriptor = [0.5, 0.1, -0.3, 0.2];
        let track = TrackQuery {
            positions: &positions,
            descriptor: &descriptor,
        };
        let det_desc: [&[f64]; 1] = [&[0.4, 0.0, -0.3, 0.2]];
        let costs = net
            .cost_rows(&[track], &det_desc, &[Position::new(0.02, 0.0)])
            .unwrap();
        let (window, candidate) = track.own_step(3).unwrap();
        let own = Bundle {
            descriptor: descriptor.to_vec(),
            window,
            candidate,
            identity: 0,
            frame: 0,
        };
        let det = Bundle {
            descriptor: det_desc[0].to_vec(),
            window: track.current_window(3).unwrap(),
            candidate: Position::new(0.02, 0.0),
            identity: 0,
            frame: 0,
        };
        let p = net.same_prob(&own, &det).unwrap();
        assert!((costs[0][0] - (1.0 - p)).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&costs[0][0]));
    }
}
