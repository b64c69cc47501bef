//! LSTM motion network.
//!
//! The LSTM consumes a window of `N` positions; a dense layer embeds the
//! candidate position. Their difference passes through the top dense layer
//! (the motion feature) and a two-way classifier scoring whether the candidate
//! continues the window.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::geometry::Position;
use crate::nn::{
    rmsprop_step, softmax, softmax_cross_entropy, visit_child, visit_child_mut, Activation, Linear,
    LinearCache, Lstm, LstmSequenceCache, Module, RmspropConfig,
};
use crate::simulator::{MotionPair, TrajectoryWindow};
use crate::tensor::{Param, Tensor};
use crate::training::TrainLogRow;

/// Classifier output index for "candidate continues the window".
pub const SAME_TRAJECTORY: usize = 1;

/// Default weight scale. Smaller scales (e.g. 0.01) start at a symmetric
/// saddle that short training budgets do not escape.
pub const MOTION_INIT_STD: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PredictionNetDims {
    pub hidden: usize,
    /// LSTM unroll length `N`.
    pub window: usize,
}

impl Default for PredictionNetDims {
    fn default() -> Self {
        Self {
            hidden: 32,
            window: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionNet {
    pub lstm: Lstm,
    pub position: Linear,
    pub top: Linear,
    pub classifier: Linear,
    window: usize,
}

#[derive(Debug, Clone)]
pub struct MotionCache {
    lstm: LstmSequenceCache,
    position: LinearCache,
    top: LinearCache,
}

/// Per-step `B × 2` LSTM inputs for a batch of windows.
pub fn window_inputs(windows: &[&TrajectoryWindow], len: usize) -> Result<Vec<Tensor>> {
    if let Some(w) = windows.iter().find(|w| w.len() != len) {
        return shape_err("trajectory window length", &[len], &[w.len()]);
    }
    (0..len)
        .map(|step| {
            let rows: Vec<[f64; 2]> = windows
                .iter()
                .map(|w| w.positions()[step].as_array())
                .collect();
            Tensor::from_rows(&rows)
        })
        .collect()
}

pub fn position_rows(positions: &[Position]) -> Result<Tensor> {
    let rows: Vec<[f64; 2]> = positions.iter().map(Position::as_array).collect();
    Tensor::from_rows(&rows)
}

impl PredictionNet {
    /// Weights `N(0, MOTION_INIT_STD²)`, zero biases (forget gate 1.0).
    pub fn new<R: Rng + ?Sized>(dims: PredictionNetDims, rng: &mut R) -> Self {
        Self::with_std(dims, MOTION_INIT_STD, rng)
    }

    pub fn with_std<R: Rng + ?Sized>(dims: PredictionNetDims, std: f64, rng: &mut R) -> Self {
        let h = dims.hidden;
        Self {
            lstm: Lstm::new(2, h, std, rng),
            position: Linear::new(2, h, Activation::Identity, std, rng),
            top: Linear::new(h, h, Activation::Tanh, std, rng),
            classifier: Linear::new(h, 2, Activation::Identity, std, rng),
            window: dims.window.max(1),
        }
    }

    pub fn dims(&self) -> PredictionNetDims {
        PredictionNetDims {
            hidden: self.lstm.hidden(),
            window: self.window,
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn feature_dim(&self) -> usize {
        self.top.outputs()
    }

    /// Motion features `FC_top(LSTM(window) − FC_pos(candidate))` for a batch.
    pub fn motion_features(
        &self,
        windows: &[&TrajectoryWindow],
        candidates: &[Position],
    ) -> Result<(Tensor, MotionCache)> {
        if windows.len() != candidates.len() || windows.is_empty() {
            return shape_err("motion batch", &[windows.len()], &[candidates.len()]);
        }
        let inputs = window_inputs(windows, self.window)?;
        let (encoded, lstm) = self.lstm.forward(&inputs)?;
        let (embedded, position) = self.position.forward(&position_rows(candidates)?)?;
        let (features, top) = self.top.forward(&encoded.sub(&embedded)?)?;
        Ok((
            features,
            MotionCache {
                lstm,
                position,
                top,
            },
        ))
    }

    pub fn backward_features(&mut self, cache: &MotionCache, grad: &Tensor) -> Result<()> {
        let d_diff = self.top.backward(&cache.top, grad)?;
        self.lstm.backward(&cache.lstm, &d_diff)?;
        let mut d_embedded = d_diff;
        d_embedded.data_mut().iter_mut().for_each(|v| *v = -*v);
        self.position.backward(&cache.position, &d_embedded)?;
        Ok(())
    }

    /// LSTM summary of one window, reusable across candidates.
    pub fn encode_window(&self, window: &TrajectoryWindow) -> Result<Vec<f64>> {
        let inputs = window_inputs(&[window], self.window)?;
        Ok(self.lstm.forward(&inputs)?.0.into_data())
    }

    /// Motion features of several candidates against one encoded window.
    pub fn features_from_encoding(
        &self,
        encoding: &[f64],
        candidates: &[Position],
    ) -> Result<Tensor> {
        let embedded = self.position.infer(&position_rows(candidates)?)?;
        let mut diff = embedded;
        let h = encoding.len();
        for r in 0..diff.rows() {
            for (v, e) in diff.row_slice_mut(r).iter_mut().zip(encoding) {
                *v = e - *v;
            }
        }
        if diff.cols() != h {
            return shape_err("motion encoding", &[h], diff.shape());
        }
        self.top.infer(&diff)
    }

    pub fn motion_feature(
        &self,
        window: &TrajectoryWindow,
        candidate: Position,
    ) -> Result<Vec<f64>> {
        Ok(self.motion_features(&[window], &[candidate])?.0.into_data())
    }

    /// Probability that `candidate` continues `window`.
    pub fn predict_prob(&self, window: &TrajectoryWindow, candidate: Position) -> Result<f64> {
        let (features, _) = self.motion_features(&[window], &[candidate])?;
        let p = softmax(&self.classifier.infer(&features)?);
        Ok(p.data()[SAME_TRAJECTORY])
    }

    /// Mean cross-entropy over labelled pairs; accumulates gradients when `backward`.
    pub fn pair_loss(&mut self, pairs: &[&MotionPair], backward: bool) -> Result<(f64, usize)> {
        let windows: Vec<&TrajectoryWindow> = pairs.iter().map(|p| &p.window).collect();
        let candidates: Vec<Position> = pairs.iter().map(|p| p.candidate).collect();
        let labels: Vec<usize> = pairs.iter().map(|p| usize::from(p.continues)).collect();
        let (features, cache) = self.motion_features(&windows, &candidates)?;
        let (logits, cls_cache) = self.classifier.forward(&features)?;
        let (loss, grad) = softmax_cross_entropy(&logits, &labels)?;
        let correct = (0..logits.rows())
            .filter(|&r| {
                let row = logits.row_slice(r);
                usize::from(row[1] > row[0]) == labels[r]
            })
            .count();
        if backward {
            let d_features = self.classifier.backward(&cls_cache, &grad)?;
            self.backward_features(&cache, &d_features)?;
        }
        Ok((loss, correct))
    }

    pub fn accuracy(&mut self, pairs: &[MotionPair]) -> Result<f64> {
        if pairs.is_empty() {
            return Ok(0.0);
        }
        let mut correct = 0;
        for chunk in pairs.chunks(256) {
            let refs: Vec<&MotionPair> = chunk.iter().collect();
            correct += self.pair_loss(&refs, false)?.1;
        }
        Ok(correct as f64 / pairs.len() as f64)
    }
}

impl Module for PredictionNet {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        visit_child("lstm", &self.lstm, f);
        visit_child("position", &self.position, f);
        visit_child("top", &self.top, f);
        visit_child("classifier", &self.classifier, f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        visit_child_mut("lstm", &mut self.lstm, f);
        visit_child_mut("position", &mut self.position, f);
        visit_child_mut("top", &mut self.top, f);
        visit_child_mut("classifier", &mut self.classifier, f);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionNetTraining {
    pub iterations: u64,
    /// Pairs per mini-batch.
    pub batch_size: usize,
    pub rmsprop: RmspropConfig,
    pub log_every: u64,
}

impl Default for PredictionNetTraining {
    fn default() -> Self {
        Self {
            iterations: 3000,
            batch_size: 10,
            rmsprop: RmspropConfig {
                learning_rate: 3e-3,
                decay: 0.9,
                epsilon: 1e-8,
                lr_decay_factor: 0.95,
                lr_decay_every: 300,
            },
            log_every: 100,
        }
    }
}

/// Trains on labelled pairs; `validation` supplies the logged accuracy.
pub fn train_prediction_net<R: Rng + ?Sized>(
    pairs: &[MotionPair],
    validation: &[MotionPair],
    dims: PredictionNetDims,
    hyper: &PredictionNetTraining,
    rng: &mut R,
) -> Result<(PredictionNet, Vec<TrainLogRow>)> {
    let net = PredictionNet::new(dims, rng);
    train_prediction_net_from(net, pairs, validation, hyper, rng)
}

/// Continues training from an existing network.
pub fn train_prediction_net_from<R: Rng + ?Sized>(
    mut net: PredictionNet,
    pairs: &[MotionPair],
    validation: &[MotionPair],
    hyper: &PredictionNetTraining,
    rng: &mut R,
) -> Result<(PredictionNet, Vec<TrainLogRow>)> {
    if pairs.is_empty() {
        return Err(Error::InsufficientData(
            "no motion pairs to train on".into(),
        ));
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut cursor = order.len();
    let mut log = Vec::new();
    let (mut window_loss, mut window_count) = (0.0, 0u64);
    for it in 0..hyper.iterations {
        if cursor + hyper.batch_size > order.len() {
            order.shuffle(rng);
            cursor = 0;
        }
        let batch: Vec<&MotionPair> = order[cursor..(cursor + hyper.batch_size).min(order.len())]
            .iter()
            .map(|&i| &pairs[i])
            .collect();
        cursor += hyper.batch_size;
        let (loss, _) = net.pair_loss(&batch, true)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "prediction-net loss at iteration {it} (lr {:.2e})",
                hyper.rmsprop.learning_rate_at(it)
            )));
        }
        rmsprop_step(&mut net, &hyper.rmsprop, it);
        window_loss += loss;
        window_count += 1;
        if hyper.log_every > 0 && (it + 1) % hyper.log_every == 0 {
            let accuracy = net.accuracy(validation)?;
            log::debug!(
                "prediction-net iteration {} loss {:.4} val acc {:.3}",
                it + 1,
                window_loss / window_count as f64,
                accuracy
            );
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
    use crate::nn::{grad_check, GradCheckConfig};
    use crate::rng::seeded;
    use crate::simulator::{make_motion_pairs, sample_trajectories, SceneConfig};

    fn window_of(xs: &[(f64, f64)]) -> TrajectoryWindow {
        TrajectoryWindow::new(xs.iter().map(|&(x, y)| Position::new(x, y)).collect()).unwrap()
    }

    #[test]
    fn zero_head_is_undecided() {
        let mut net = PredictionNet::new(
            PredictionNetDims {
                hidden: 8,
                window: 3,
            },
            &mut seeded(0),
        );
        net.classifier.weight.value.fill(0.0);
        let w = window_of(&[(0.0, 0.0), (0.01, 0.0), (0.02, 0.0)]);
        let p = net.predict_prob(&w, Position::new(0.3, 0.1)).unwrap();
        assert!((p - 0.5).abs() < 1e-15);
    }

    #[test]
    fn features_have_hidden_width_and_are_deterministic() {
        let net = PredictionNet::new(
            PredictionNetDims {
                hidden: 8,
                window: 3,
            },
            &mut seeded(1),
        );
        let w = window_of(&[(0.0, 0.0), (0.01, 0.0), (0.02, 0.0)]);
        let a = net.motion_feature(&w, Position::new(0.03, 0.0)).unwrap();
        assert_eq!(a.len(), 8);
        assert_eq!(a, net.motion_feature(&w, Position::new(0.03, 0.0)).unwrap());
        let enc = net.encode_window(&w).unwrap();
        let b = net
            .features_from_encoding(&enc, &[Position::new(0.03, 0.0)])
            .unwrap();
        assert_eq!(a, b.into_data());
    }

    #[test]
    fn wrong_window_length_is_rejected() {
        let net = PredictionNet::new(
            PredictionNetDims {
                hidden: 4,
                window: 3,
            },
            &mut seeded(2),
        );
        let w = window_of(&[(0.0, 0.0), (0.01, 0.0)]);
        assert!(net.motion_feature(&w, Position::new(0.0, 0.0)).is_err());
    }

    #[test]
    fn probability_pair_sums_to_one() {
        let net = PredictionNet::with_std(
            PredictionNetDims {
                hidden: 6,
                window: 3,
            },
            0.5,
            &mut seeded(3),
        );
        let w = window_of(&[(0.1, 0.0), (0.11, 0.0), (0.12, 0.0)]);
        let (f, _) = net
            .motion_features(&[&w], &[Position::new(-0.2, 0.3)])
            .unwrap();
        let p = softmax(&net.classifier.infer(&f).unwrap());
        assert!((p.data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn unrolled_bptt_passes_grad_check() {
        let mut rng = seeded(4);
        let trajectories = sample_trajectories(&SceneConfig::default(), 3, 6, &mut rng).unwrap();
        let pairs = make_motion_pairs(&trajectories, 3, &mut rng).unwrap();
        let batch: Vec<&MotionPair> = pairs.iter().take(4).collect();
        let mut net = PredictionNet::with_std(
            PredictionNetDims {
                hidden: 4,
                window: 3,
            },
            0.8,
            &mut rng,
        );
        let report = grad_check(
            &mut net,
            |m, backward| m.pair_loss(&batch, backward).unwrap().0,
            &GradCheckConfig::default(),
        );
        assert!(report.passed, "{report:?}");
    }
}
