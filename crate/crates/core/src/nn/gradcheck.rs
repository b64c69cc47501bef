//! Central finite-difference verification of analytic gradients.

use alloc::string::String;
use alloc::vec::Vec;

use crate::nn::Module;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `(parameter name, max relative error)` in visiting order.
    pub per_param: Vec<(String, f64)>,
    pub max_relative_error: f64,
    pub passed: bool,
    /// Name of the first parameter that produced a non-finite value.
    pub non_finite: Option<String>,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&(String, f64)> {
        self.per_param.iter().max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

/// `|a − n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares analytic gradients with central differences for every weight of `model`.
///
/// `loss(model, backward)` must evaluate the scalar loss deterministically and,
/// when `backward` is true, accumulate its gradient into the parameters.
pub fn grad_check<M: Module>(
    model: &mut M,
    mut loss: impl FnMut(&mut M, bool) -> f64,
    config: &GradCheckConfig,
) -> GradCheckReport {
    model.zero_grad();
    let base = loss(model, true);
    let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
    model.visit_params(&mut |name, p| analytic.push((String::from(name), p.grad.data().to_vec())));
    model.zero_grad();

    let mut report = GradCheckReport {
        per_param: Vec::with_capacity(analytic.len()),
        max_relative_error: 0.0,
        passed: true,
        non_finite: None,
    };
    if !base.is_finite() {
        report.passed = false;
        report.max_relative_error = f64::INFINITY;
        report.non_finite = analytic.first().map(|(n, _)| n.clone());
        return report;
    }

    for (index, (name, grads)) in analytic.iter().enumerate() {
        let mut worst = 0.0f64;
        for (element, &g) in grads.iter().enumerate() {
            let plus = perturbed(model, &mut loss, index, element, config.step);
            let minus = perturbed(model, &mut loss, index, element, -config.step);
            let numeric = (plus - minus) / (2.0 * config.step);
            if !numeric.is_finite() || !g.is_finite() {
                report.non_finite.get_or_insert_with(|| name.clone());
                worst = f64::INFINITY;
                continue;
            }
            worst = worst.max(relative_error(g, numeric));
        }
        report.max_relative_error = report.max_relative_error.max(worst);
        report.per_param.push((name.clone(), worst));
    }
    model.zero_grad();
    report.passed = report.non_finite.is_none() && report.max_relative_error < config.tolerance;
    report
}

fn perturbed<M: Module>(
    model: &mut M,
    loss: &mut impl FnMut(&mut M, bool) -> f64,
    index: usize,
    element: usize,
    delta: f64,
) -> f64 {
    let mut original = 0.0;
    nudge(model, index, element, |v| {
        original = *v;
        *v += delta;
    });
    let value = loss(model, false);
    nudge(model, index, element, |v| *v = original);
    value
}

fn nudge<M: Module>(model: &mut M, index: usize, element: usize, mut f: impl FnMut(&mut f64)) {
    let mut i = 0;
    model.visit_params_mut(&mut |_, p| {
        if i == index {
            f(&mut p.value.data_mut()[element]);
        }
        i += 1;
    });
}
