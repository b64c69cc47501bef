use alloc::vec;

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::nn::Module;
use crate::tensor::{matmul, matmul_nt, matmul_tn_acc, Param, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => libm::tanh(x),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation output `y`.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Intermediates of a dense-layer forward pass.
#[derive(Debug, Clone)]
pub struct LinearCache {
    pub input: Tensor,
    pub output: Tensor,
}

/// `act(input · W + b)` for `input: B×I`, `W: I×O`, `b: O`.
pub fn fc_forward(
    input: &Tensor,
    weight: &Param,
    bias: &Param,
    activation: Activation,
) -> Result<(Tensor, LinearCache)> {
    let w = weight.value.shape();
    if input.shape().len() != 2 || w.len() != 2 || input.cols() != w[0] {
        return shape_err("fc_forward input·W", input.shape(), w);
    }
    if bias.value.len() != w[1] {
        return shape_err("fc_forward bias", w, bias.value.shape());
    }
    let (b, i, o) = (input.rows(), w[0], w[1]);
    let mut out = vec![0.0; b * o];
    matmul(input.data(), weight.value.data(), b, i, o, &mut out);
    let bias = bias.value.data();
    for row in out.chunks_mut(o) {
        for (v, bv) in row.iter_mut().zip(bias) {
            *v = activation.apply(*v + bv);
        }
    }
    let output = Tensor::new(&[b, o], out)?;
    Ok((
        output.clone(),
        LinearCache {
            input: input.clone(),
            output,
        },
    ))
}

/// A dense layer owning its weight and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    pub activation: Activation,
}

impl Linear {
    /// Weights `N(0, std²)`, zero bias.
    pub fn new<R: Rng + ?Sized>(
        inputs: usize,
        outputs: usize,
        activation: Activation,
        std: f64,
        rng: &mut R,
    ) -> Self {
        Self {
            weight: Param::new(Tensor::randn(&[inputs, outputs], std, rng)),
            bias: Param::zeros(&[outputs]),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, LinearCache)> {
        fc_forward(input, &self.weight, &self.bias, self.activation)
    }

    /// Forward pass without keeping a cache.
    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        self.forward(input).map(|(out, _)| out)
    }

    /// Accumulates `dW`, `db` and returns `d input`.
    pub fn backward(&mut self, cache: &LinearCache, grad_output: &Tensor) -> Result<Tensor> {
        if grad_output.shape() != cache.output.shape() {
            return shape_err(
                "Linear::backward",
                cache.output.shape(),
                grad_output.shape(),
            );
        }
        let (b, i, o) = (cache.input.rows(), self.inputs(), self.outputs());
        let mut pre = grad_output.clone();
        for (g, y) in pre.data_mut().iter_mut().zip(cache.output.data()) {
            *g *= self.activation.derivative_from_output(*y);
        }
        matmul_tn_acc(
            cache.input.data(),
            pre.data(),
            b,
            i,
            o,
            self.weight.grad.data_mut(),
        );
        let bias_grad = self.bias.grad.data_mut();
        for row in pre.data().chunks(o) {
            for (bg, g) in bias_grad.iter_mut().zip(row) {
                *bg += g;
            }
        }
        let mut grad_in = vec![0.0; b * i];
        matmul_nt(pre.data(), self.weight.value.data(), b, o, i, &mut grad_in);
        Tensor::new(&[b, i], grad_in)
    }
}

impl Module for Linear {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        f("weight", &self.weight);
        f("bias", &self.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        f("weight", &mut self.weight);
        f("bias", &mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::nn::{grad_check, GradCheckConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer(w: Tensor, b: Tensor, act: Activation) -> Linear {
        Linear {
            weight: Param::new(w),
            bias: Param::new(b),
            activation: act,
        }
    }

    #[test]
    fn identity_weights_pass_input_through() {
        let l = layer(
            Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap(),
            Tensor::new(&[2], alloc::vec![0.0, 0.0]).unwrap(),
            Activation::Identity,
        );
        let out = l.infer(&Tensor::from_rows(&[[1.0, 2.0]]).unwrap()).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0]);
    }

    #[test]
    fn weighted_sum_plus_bias() {
        let l = layer(
            Tensor::from_rows(&[[2.0], [3.0]]).unwrap(),
            Tensor::new(&[1], alloc::vec![1.0]).unwrap(),
            Activation::Identity,
        );
        let out = l.infer(&Tensor::from_rows(&[[1.0, 1.0]]).unwrap()).unwrap();
        assert_eq!(out.data(), &[6.0]);
    }

    #[test]
    fn random_batch_matches_triple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let l = Linear::new(5, 3, Activation::Identity, 1.0, &mut rng);
        let x = Tensor::randn(&[4, 5], 1.0, &mut rng);
        let out = l.infer(&x).unwrap();
        let (w, b) = (l.weight.value.data(), l.bias.value.data());
        for r in 0..4 {
            for c in 0..3 {
                let mut acc = b[c];
                for k in 0..5 {
                    acc += x.data()[r * 5 + k] * w[k * 3 + c];
                }
                assert!((out.data()[r * 3 + c] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = Linear::new(3, 2, Activation::Tanh, 1.0, &mut rng);
        let err = l.infer(&Tensor::zeros(&[1, 4])).unwrap_err();
        match err {
            Error::Shape { left, right, .. } => {
                assert_eq!(left, alloc::vec![1, 4]);
                assert_eq!(right, alloc::vec![3, 2]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gradients_match_finite_differences_for_each_activation() {
        for (seed, act) in [Activation::Identity, Activation::Tanh, Activation::Relu]
            .into_iter()
            .enumerate()
        {
            let mut rng = ChaCha8Rng::seed_from_u64(seed as u64 + 40);
            let mut l = Linear::new(4, 3, act, 0.7, &mut rng);
            let x = Tensor::randn(&[3, 4], 1.0, &mut rng);
            let coeff = Tensor::randn(&[3, 3], 1.0, &mut rng);
            let report = grad_check(
                &mut l,
                |m, backward| {
                    let (y, cache) = m.forward(&x).unwrap();
                    let loss: f64 = y.data().iter().zip(coeff.data()).map(|(a, b)| a * b).sum();
                    if backward {
                        m.backward(&cache, &coeff).unwrap();
                    }
                    loss
                },
                &GradCheckConfig::default(),
            );
            assert!(report.passed, "{act:?}: {report:?}");
        }
    }
}
