//! Minimal neural-network substrate: dense layers, an LSTM cell, losses,
//! RMSprop and finite-difference gradient checking.
//!
//! Layers return an explicit cache from `forward`; `backward` consumes the
//! cache, accumulates parameter gradients and returns the input gradient.

pub mod gradcheck;
pub mod linear;
pub mod loss;
pub mod lstm;
pub mod optim;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::tensor::Param;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use linear::{fc_forward, Activation, Linear, LinearCache};
pub use loss::{
    softmax, softmax_cross_entropy, triplet_hinge_loss, triplet_hinge_loss_batch, triplet_margin,
    Distance, NegativeTerm, TripletGrads, TripletLossConfig,
};
pub use lstm::{Lstm, LstmCell, LstmSequenceCache, LstmStepCache};
pub use optim::{rmsprop_step, RmspropConfig};

/// Weight standard deviation used by every network in this crate.
pub const INIT_STD: f64 = 0.01;

/// Anything that owns named trainable parameters.
pub trait Module {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param));

    fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |_, p| p.zero_grad());
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit_params(&mut |n, _| names.push(String::from(n)));
        names
    }

    fn num_weights(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, p| n += p.value.len());
        n
    }
}

/// Visits a child module's parameters with `prefix.` prepended to each name.
pub(crate) fn visit_child(prefix: &str, child: &dyn Module, f: &mut dyn FnMut(&str, &Param)) {
    child.visit_params(&mut |name, p| f(&format!("{prefix}.{name}"), p));
}

pub(crate) fn visit_child_mut(
    prefix: &str,
    child: &mut dyn Module,
    f: &mut dyn FnMut(&str, &mut Param),
) {
    child.visit_params_mut(&mut |name, p| f(&format!("{prefix}.{name}"), p));
}

/// Logistic sigmoid.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}
