//! Identity-classification appearance network.
//!
//! An MLP `D → hidden → A → Y` trained with softmax cross-entropy over identity
//! labels. The classifier layer is used only during training; the appearance
//! feature is the tanh activation of the `A`-wide penultimate layer.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::nn::{
    rmsprop_step, softmax_cross_entropy, visit_child, visit_child_mut, Activation, Linear,
    LinearCache, Module, RmspropConfig,
};
use crate::tensor::{Param, Tensor};
use crate::training::TrainLogRow;

/// Default verification threshold on unit-normalized features.
pub const VERIFY_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IdNetDims {
    pub descriptor: usize,
    pub hidden: usize,
    pub feature: usize,
    pub classes: usize,
}

impl Default for IdNetDims {
    fn default() -> Self {
        Self {
            descriptor: 16,
            hidden: 64,
            feature: 32,
            classes: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdNet {
    pub hidden: Linear,
    pub feature: Linear,
    pub classifier: Linear,
}

#[derive(Debug, Clone)]
pub struct IdNetCache {
    hidden: LinearCache,
    feature: LinearCache,
}

impl IdNet {
    /// Fan-in scaled Gaussian weights, zero biases.
    pub fn new<R: Rng + ?Sized>(dims: IdNetDims, rng: &mut R) -> Self {
        let scale = |fan_in: usize| 1.0 / libm::sqrt(fan_in as f64);
        Self {
            hidden: Linear::new(
                dims.descriptor,
                dims.hidden,
                Activation::Tanh,
                scale(dims.descriptor),
                rng,
            ),
            feature: Linear::new(
                dims.hidden,
                dims.feature,
                Activation::Tanh,
                scale(dims.hidden),
                rng,
            ),
            classifier: Linear::new(
                dims.feature,
                dims.classes,
                Activation::Identity,
                scale(dims.feature),
                rng,
            ),
        }
    }

    pub fn dims(&self) -> IdNetDims {
        IdNetDims {
            descriptor: self.hidden.inputs(),
            hidden: self.hidden.outputs(),
            feature: self.feature.outputs(),
            classes: self.classifier.outputs(),
        }
    }

    pub fn descriptor_dim(&self) -> usize {
        self.hidden.inputs()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature.outputs()
    }

    /// Appearance features for a `B × D` batch.
    pub fn features(&self, descriptors: &Tensor) -> Result<(Tensor, IdNetCache)> {
        let (h, hidden) = self.hidden.forward(descriptors)?;
        let (f, feature) = self.feature.forward(&h)?;
        Ok((f, IdNetCache { hidden, feature }))
    }

    pub fn backward_features(&mut self, cache: &IdNetCache, grad: &Tensor) -> Result<()> {
        let dh = self.feature.backward(&cache.feature, grad)?;
        self.hidden.backward(&cache.hidden, &dh)?;
        Ok(())
    }

    pub fn logits(&self, descriptors: &Tensor) -> Result<Tensor> {
        let (f, _) = self.features(descriptors)?;
        self.classifier.infer(&f)
    }

    /// Mean cross-entropy on a labelled batch; accumulates gradients when `backward`.
    pub fn classification_loss(
        &mut self,
        descriptors: &Tensor,
        labels: &[usize],
        backward: bool,
    ) -> Result<f64> {
        let (f, cache) = self.features(descriptors)?;
        let (logits, cls_cache) = self.classifier.forward(&f)?;
        let (loss, grad) = softmax_cross_entropy(&logits, labels)?;
        if backward {
            let df = self.classifier.backward(&cls_cache, &grad)?;
            self.backward_features(&cache, &df)?;
        }
        Ok(loss)
    }

    pub fn accuracy(&self, samples: &[(Vec<f64>, usize)]) -> Result<f64> {
        if samples.is_empty() {
            return Ok(0.0);
        }
        let mut correct = 0usize;
        for chunk in samples.chunks(256) {
            let rows: Vec<&[f64]> = chunk.iter().map(|(d, _)| d.as_slice()).collect();
            let logits = self.logits(&Tensor::from_rows(&rows)?)?;
            for (r, (_, label)) in chunk.iter().enumerate() {
                if argmax(logits.row_slice(r)) == *label {
                    correct += 1;
                }
            }
        }
        Ok(correct as f64 / samples.len() as f64)
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

impl Module for IdNet {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        visit_child("hidden", &self.hidden, f);
        visit_child("feature", &self.feature, f);
        visit_child("classifier", &self.classifier, f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        visit_child_mut("hidden", &mut self.hidden, f);
        visit_child_mut("feature", &mut self.feature, f);
        visit_child_mut("classifier", &mut self.classifier, f);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdNetTraining {
    pub iterations: u64,
    pub batch_size: usize,
    pub rmsprop: RmspropConfig,
    pub log_every: u64,
    /// Fraction of samples held out for the logged validation accuracy.
    pub validation_fraction: f64,
}

impl Default for IdNetTraining {
    fn default() -> Self {
        Self {
            iterations: 4000,
            batch_size: 32,
            rmsprop: RmspropConfig {
                learning_rate: 3e-3,
                decay: 0.9,
                epsilon: 1e-8,
                lr_decay_factor: 0.9,
                lr_decay_every: 1000,
            },
            log_every: 100,
            validation_fraction: 0.2,
        }
    }
}

/// Trains an identity classifier over `(descriptor, label)` samples.
pub fn train_id_net<R: Rng + ?Sized>(
    samples: &[(Vec<f64>, usize)],
    dims: IdNetDims,
    hyper: &IdNetTraining,
    rng: &mut R,
) -> Result<(IdNet, Vec<TrainLogRow>)> {
    if let Some((d, _)) = samples.iter().find(|(d, _)| d.len() != dims.descriptor) {
        return shape_err("id-net descriptor", &[dims.descriptor], &[d.len()]);
    }
    if let Some(&(_, label)) = samples.iter().find(|(_, l)| *l >= dims.classes) {
        return Err(Error::LabelOutOfRange {
            label,
            classes: dims.classes,
        });
    }
    let mut seen = alloc::vec![false; dims.classes];
    samples.iter().for_each(|(_, l)| seen[*l] = true);
    if dims.classes < 2 || seen.iter().filter(|&&s| s).count() < 2 {
        return Err(Error::InsufficientData(
            "identity classification needs samples from at least 2 identities".into(),
        ));
    }

    let mut net = IdNet::new(dims, rng);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(rng);
    let held = ((samples.len() as f64) * hyper.validation_fraction) as usize;
    let (val_idx, train_idx) = order.split_at(held.min(samples.len().saturating_sub(1)));
    let validation: Vec<(Vec<f64>, usize)> = val_idx.iter().map(|&i| samples[i].clone()).collect();
    let mut train: Vec<usize> = train_idx.to_vec();

    let mut log = Vec::new();
    let mut cursor = train.len();
    let mut window_loss = 0.0;
    let mut window_count = 0u64;
    for it in 0..hyper.iterations {
        if cursor + hyper.batch_size > train.len() {
            train.shuffle(rng);
            cursor = 0;
        }
        let batch = &train[cursor..(cursor + hyper.batch_size).min(train.len())];
        cursor += hyper.batch_size;
        let rows: Vec<&[f64]> = batch.iter().map(|&i| samples[i].0.as_slice()).collect();
        let labels: Vec<usize> = batch.iter().map(|&i| samples[i].1).collect();
        let loss = net.classification_loss(&Tensor::from_rows(&rows)?, &labels, true)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("id-net loss at iteration {it}")));
        }
        rmsprop_step(&mut net, &hyper.rmsprop, it);
        window_loss += loss;
        window_count += 1;
        if hyper.log_every > 0 && (it + 1) % hyper.log_every == 0 {
            let accuracy = net.accuracy(&validation)?;
            log::debug!(
                "id-net iteration {} loss {:.4} val acc {:.3}",
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

/// Penultimate-layer feature of a single descriptor.
pub fn appearance_feature(net: &IdNet, descriptor: &[f64]) -> Result<Vec<f64>> {
    if descriptor.len() != net.descriptor_dim() {
        return shape_err(
            "appearance descriptor",
            &[net.descriptor_dim()],
            &[descriptor.len()],
        );
    }
    let (f, _) = net.features(&Tensor::row(descriptor))?;
    Ok(f.into_data())
}

pub fn unit_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroVector);
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

/// Same identity iff the L2 distance of the unit-normalized features is below `threshold`.
pub fn verify_pair(f1: &[f64], f2: &[f64], threshold: f64) -> Result<bool> {
    if f1.len() != f2.len() {
        return shape_err("verify_pair", &[f1.len()], &[f2.len()]);
    }
    let (a, b) = (unit_normalize(f1)?, unit_normalize(f2)?);
    let d = libm::sqrt(
        a.iter()
            .zip(&b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>(),
    );
    Ok(d < threshold)
}

/// Accuracy over `positives` same-identity and `negatives` cross-identity
/// pairs drawn from labelled descriptors.
pub fn verification_accuracy<R: Rng + ?Sized>(
    net: &IdNet,
    samples: &[(Vec<f64>, usize)],
    positives: usize,
    negatives: usize,
    threshold: f64,
    rng: &mut R,
) -> Result<f64> {
    let features: Vec<Vec<f64>> = samples
        .iter()
        .map(|(d, _)| appearance_feature(net, d))
        .collect::<Result<_>>()?;
    let mut by_identity: alloc::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, (_, l)) in samples.iter().enumerate() {
        by_identity.entry(*l).or_default().push(i);
    }
    let multi: Vec<&Vec<usize>> = by_identity.values().filter(|v| v.len() >= 2).collect();
    if multi.is_empty() || by_identity.len() < 2 {
        return Err(Error::InsufficientData(
            "verification needs two identities and one with repeated observations".into(),
        ));
    }
    let mut correct = 0usize;
    for _ in 0..positives {
        let group = multi[rng.random_range(0..multi.len())];
        let a = rng.random_range(0..group.len());
        let mut b = rng.random_range(0..group.len() - 1);
        if b >= a {
            b += 1;
        }
        if verify_pair(&features[group[a]], &features[group[b]], threshold)? {
            correct += 1;
        }
    }
    let mut made = 0;
    while made < negatives {
        let a = rng.random_range(0..samples.len());
        let b = rng.random_range(0..samples.len());
        if samples[a].1 == samples[b].1 {
            continue;
        }
        made += 1;
        if !verify_pair(&features[a], &features[b], threshold)? {
            correct += 1;
        }
    }
    Ok(correct as f64 / (positives + negatives) as f64)
}
