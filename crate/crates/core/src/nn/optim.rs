use crate::nn::Module;

/// RMSprop with a piecewise-constant learning-rate decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmspropConfig {
    pub learning_rate: f64,
    /// Decay of the running mean of squared gradients.
    pub decay: f64,
    pub epsilon: f64,
    pub lr_decay_factor: f64,
    /// Iterations between decays.
    pub lr_decay_every: u64,
}

impl Default for RmspropConfig {
    /// Prediction-network schedule at full scale: 3e-4, ×0.95 every 20 000 iterations.
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            decay: 0.9,
            epsilon: 1e-8,
            lr_decay_factor: 0.95,
            lr_decay_every: 20_000,
        }
    }
}

impl RmspropConfig {
    pub fn learning_rate_at(&self, iteration: u64) -> f64 {
        let decays = iteration / self.lr_decay_every.max(1);
        self.learning_rate * libm::pow(self.lr_decay_factor, decays as f64)
    }
}

/// `ms ← ρ·ms + (1−ρ)·g²; w ← w − lr·g/√(ms+ε)`, then zeroes all gradients.
pub fn rmsprop_step(module: &mut dyn Module, config: &RmspropConfig, iteration: u64) {
    let lr = config.learning_rate_at(iteration);
    let rho = config.decay;
    module.visit_params_mut(&mut |_, p| {
        let grads = p.grad.data_mut();
        let ms = p.mean_square.data_mut();
        let values = p.value.data_mut();
        for ((w, g), m) in values.iter_mut().zip(grads.iter_mut()).zip(ms.iter_mut()) {
            *m = rho * *m + (1.0 - rho) * *g * *g;
            if *g != 0.0 {
                *w -= lr * *g / libm::sqrt(*m + config.epsilon);
            }
            *g = 0.0;
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;
    use crate::tensor::Param;

    struct Single(Param);

    impl Module for Single {
        fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
            f("w", &self.0);
        }
        fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
            f("w", &mut self.0);
        }
    }

    #[test]
    fn unit_gradient_closed_form() {
        let mut m = Single(Param::zeros(&[1]));
        m.0.grad.data_mut()[0] = 1.0;
        let config = RmspropConfig {
            learning_rate: 0.1,
            decay: 0.9,
            epsilon: 0.0,
            lr_decay_factor: 1.0,
            lr_decay_every: 1,
        };
        rmsprop_step(&mut m, &config, 0);
        assert!((m.0.mean_square.data()[0] - 0.1).abs() < 1e-15);
        assert!((m.0.value.data()[0] + 0.316_227_766_016_837_94).abs() < 1e-12);
        assert_eq!(m.0.grad.data()[0], 0.0);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(3);
        let mut layer = Linear::new(3, 2, crate::nn::Activation::Tanh, 1.0, &mut rng);
        let before = layer.clone();
        for it in 0..5 {
            rmsprop_step(&mut layer, &RmspropConfig::default(), it);
        }
        assert_eq!(layer.weight.value, before.weight.value);
        assert_eq!(layer.bias.value, before.bias.value);
    }

    #[test]
    fn step_schedule_matches_documented_decay() {
        let config = RmspropConfig::default();
        assert_eq!(config.learning_rate_at(0), 3e-4);
        assert_eq!(config.learning_rate_at(19_999), 3e-4);
        assert!((config.learning_rate_at(40_001) - 0.000_270_75).abs() < 1e-15);
    }
}
