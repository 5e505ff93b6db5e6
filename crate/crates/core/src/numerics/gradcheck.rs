//! Central-difference gradient verification.

use rand::Rng as _;

use super::loss::cross_entropy;
use super::network::{Mode, Network};
use super::rng;
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Below this magnitude the comparison switches from relative to absolute
/// error.
pub const ABSOLUTE_ERROR_FLOOR: f64 = 1e-8;

/// Default central-difference step. The differences are always evaluated at
/// 64-bit, so the step can stay small enough that ReLU kinks are rarely
/// crossed.
pub const DEFAULT_EPSILON: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    /// Analytic gradients from the 32-bit network; the central differences
    /// are evaluated on a 64-bit copy so that rounding in the loss does not
    /// swamp small gradients.
    F32,
    /// The network is widened to 64 bits and both sides are recomputed.
    F64,
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    pub samples: usize,
    pub precision: Precision,
    pub mode: Mode,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: DEFAULT_EPSILON,
            samples: 50,
            precision: Precision::F32,
            mode: Mode::Eval,
            seed: 0,
        }
    }
}

impl GradCheckOptions {
    pub fn f64() -> Self {
        GradCheckOptions {
            precision: Precision::F64,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    pub worst_parameter: String,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs());
    if denom < ABSOLUTE_ERROR_FLOOR {
        (analytic - numeric).abs()
    } else {
        (analytic - numeric).abs() / denom
    }
}

/// Compares backprop gradients with `(L(p + e) - L(p - e)) / 2e` at
/// `samples` coordinates, spread round-robin over the trainable parameter
/// tensors, and returns the worst relative error.
pub fn finite_difference_check(
    network: &Network<f32>,
    batch: &Tensor<f32>,
    labels: &[usize],
    options: &GradCheckOptions,
) -> Result<GradCheckReport> {
    if options.samples == 0 || options.epsilon.is_nan() || options.epsilon <= 0.0 {
        return Err(Error::InvalidArgument(
            "gradient check needs samples >= 1 and epsilon > 0".into(),
        ));
    }
    match options.precision {
        Precision::F32 => check(network, network.cast::<f64>(), batch.cast(), labels, options),
        Precision::F64 => {
            let wide = network.cast::<f64>();
            check(&wide, wide.clone(), batch.cast(), labels, options)
        }
    }
}

fn loss_at<T: Real>(net: &Network<T>, batch: &Tensor<T>, labels: &[usize], mode: Mode) -> Result<f64> {
    let (logits, _) = net.forward(batch, mode)?;
    Ok(cross_entropy(&logits, labels)?.0)
}

fn check<A: Real>(
    analytic_net: &Network<A>,
    mut net: Network<f64>,
    batch: Tensor<f64>,
    labels: &[usize],
    options: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let analytic_batch: Tensor<A> = batch.cast();
    let (logits, tape) = analytic_net.forward(&analytic_batch, options.mode)?;
    let (_, grad_logits) = cross_entropy(&logits, labels)?;
    let grads = analytic_net.backward(&tape, &grad_logits)?;
    drop(tape);

    let candidates: Vec<usize> = (0..net.params().len()).filter(|&i| net.is_param_trainable(i)).collect();
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("network has no trainable parameters".into()));
    }
    let mut r = rng::stream(options.seed, 0x6C6B);
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: 0,
        worst_parameter: String::new(),
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    for s in 0..options.samples {
        let t = candidates[s % candidates.len()];
        let idx = r.random_range(0..net.params()[t].len());
        let original = net.params()[t].data()[idx];
        let eps = options.epsilon;
        net.params_mut()[t].data_mut()[idx] = original + eps;
        let plus = loss_at(&net, &batch, labels, options.mode)?;
        net.params_mut()[t].data_mut()[idx] = original - eps;
        let minus = loss_at(&net, &batch, labels, options.mode)?;
        net.params_mut()[t].data_mut()[idx] = original;
        // Use the step actually representable at this precision.
        let h = (original + eps) - (original - eps);
        let numeric = (plus - minus) / h;
        let analytic = grads.tensors[t].data()[idx].as_f64();
        let err = relative_error(analytic, numeric);
        report.checked += 1;
        if err >= report.max_relative_error {
            report.max_relative_error = err;
            report.worst_parameter = net.param_names()[t].clone();
            report.worst_index = idx;
            report.worst_analytic = analytic;
            report.worst_numeric = numeric;
        }
    }
    Ok(report)
}
