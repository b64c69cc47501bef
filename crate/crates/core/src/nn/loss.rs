use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    let cols = out.cols();
    for row in out.data_mut().chunks_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = libm::exp(*v - max);
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Mean negative log-likelihood of `labels` and its gradient `(softmax − onehot)/B`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (batch, classes) = (logits.rows(), logits.cols());
    if labels.len() != batch {
        return shape_err(
            "softmax_cross_entropy labels",
            logits.shape(),
            &[labels.len()],
        );
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    let mut grad = logits.clone();
    let mut loss = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let row = grad.row_slice_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| libm::exp(v - max)).sum();
        let log_z = max + libm::log(sum);
        loss += log_z - row[label];
        for v in row.iter_mut() {
            *v = libm::exp(*v - log_z) / batch as f64;
        }
        row[label] -= 1.0 / batch as f64;
    }
    Ok((loss / batch as f64, grad))
}

/// Which pair supplies the second distance of the margin constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NegativeTerm {
    /// `d(positive, negative)`
    #[default]
    PositiveNegative,
    /// `d(anchor, negative)`
    AnchorNegative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Distance {
    #[default]
    Euclidean,
    SquaredEuclidean,
}

/// Added under the square root so the distance gradient stays finite at zero.
pub const DISTANCE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripletLossConfig {
    /// Margin; negative in the intended configuration.
    pub tau: f64,
    pub negative_term: NegativeTerm,
    pub distance: Distance,
}

impl Default for TripletLossConfig {
    fn default() -> Self {
        Self {
            tau: -2.0,
            negative_term: NegativeTerm::PositiveNegative,
            distance: Distance::Euclidean,
        }
    }
}

impl Distance {
    /// Distance and its gradient with respect to `a` (the gradient for `b` is the negation).
    fn eval(self, a: &[f64], b: &[f64]) -> (f64, Vec<f64>) {
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        let sq: f64 = diff.iter().map(|d| d * d).sum();
        match self {
            Distance::Euclidean => {
                let d = libm::sqrt(sq + DISTANCE_EPS);
                let g = diff.iter().map(|v| v / d).collect();
                (d, g)
            }
            Distance::SquaredEuclidean => (sq, diff.iter().map(|v| 2.0 * v).collect()),
        }
    }

    pub fn between(self, a: &[f64], b: &[f64]) -> f64 {
        let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        match self {
            Distance::Euclidean => libm::sqrt(sq + DISTANCE_EPS),
            Distance::SquaredEuclidean => sq,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletGrads {
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

/// The margin term `d(a,p) − d(·,n)` whose sign against `tau` decides the constraint.
pub fn triplet_margin(a: &[f64], p: &[f64], n: &[f64], config: &TripletLossConfig) -> f64 {
    let second = match config.negative_term {
        NegativeTerm::PositiveNegative => config.distance.between(p, n),
        NegativeTerm::AnchorNegative => config.distance.between(a, n),
    };
    config.distance.between(a, p) - second
}

/// Hinge `max(0, d(a,p) − d(·,n) − tau)` and its (sub)gradients.
pub fn triplet_hinge_loss(
    anchor: &[f64],
    positive: &[f64],
    negative: &[f64],
    config: &TripletLossConfig,
) -> Result<(f64, TripletGrads)> {
    let k = anchor.len();
    if positive.len() != k || negative.len() != k {
        return shape_err(
            "triplet embeddings",
            &[k, positive.len()],
            &[negative.len()],
        );
    }
    let (d_ap, g_ap) = config.distance.eval(anchor, positive);
    let (d_second, g_second) = match config.negative_term {
        NegativeTerm::PositiveNegative => config.distance.eval(positive, negative),
        NegativeTerm::AnchorNegative => config.distance.eval(anchor, negative),
    };
    let value = d_ap - d_second - config.tau;
    let mut grads = TripletGrads {
        anchor: vec![0.0; k],
        positive: vec![0.0; k],
        negative: vec![0.0; k],
    };
    if value <= 0.0 {
        return Ok((0.0, grads));
    }
    let second_from = match config.negative_term {
        NegativeTerm::PositiveNegative => &mut grads.positive,
        NegativeTerm::AnchorNegative => &mut grads.anchor,
    };
    for j in 0..k {
        second_from[j] -= g_second[j];
    }
    for j in 0..k {
        grads.anchor[j] += g_ap[j];
        grads.positive[j] -= g_ap[j];
        grads.negative[j] += g_second[j];
    }
    Ok((value, grads))
}

/// Mean hinge loss over `B × K` embedding batches, gradients scaled by `1/B`.
pub fn triplet_hinge_loss_batch(
    anchor: &Tensor,
    positive: &Tensor,
    negative: &Tensor,
    config: &TripletLossConfig,
) -> Result<(f64, [Tensor; 3])> {
    if anchor.shape() != positive.shape() || anchor.shape() != negative.shape() {
        return shape_err("triplet batch", anchor.shape(), negative.shape());
    }
    let batch = anchor.rows();
    let scale = 1.0 / batch as f64;
    let mut ga = Tensor::zeros(anchor.shape());
    let mut gp = Tensor::zeros(anchor.shape());
    let mut gn = Tensor::zeros(anchor.shape());
    let mut total = 0.0;
    for r in 0..batch {
        let (loss, g) = triplet_hinge_loss(
            anchor.row_slice(r),
            positive.row_slice(r),
            negative.row_slice(r),
            config,
        )?;
        total += loss;
        for (dst, src) in [
            (ga.row_slice_mut(r), &g.anchor),
            (gp.row_slice_mut(r), &g.positive),
            (gn.row_slice_mut(r), &g.negative),
        ] {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = s * scale;
            }
        }
    }
    Ok((total * scale, [ga, gp, gn]))
}
