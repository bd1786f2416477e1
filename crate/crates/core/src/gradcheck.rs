//! Finite-difference check of the full wrapper-loss gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::numerics::{ProbabilityVector, UniformNoiseBlock};
use crate::wrapper::{training_noise, TrainConfig, TrainingExample, WrapperModel};

/// Gradients whose magnitude stays below this are compared absolutely.
/// It sits far above the roundoff of a central difference on an O(1) loss.
pub const ABSOLUTE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    pub items: usize,
    pub classes: usize,
    pub samples: usize,
    pub input_dim: usize,
    pub step: f64,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            items: 5,
            classes: 3,
            samples: 16,
            input_dim: 6,
            step: 1e-4,
            lambda: 1e-2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub parameters: usize,
    pub loss: f64,
    pub max_relative_error: f64,
    pub worst_parameter: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// Parameters whose ±step moves some item across a ReLU kink or the β
    /// floor. A central difference is meaningless there, so they are left
    /// out of the maximum.
    pub at_kink: Vec<usize>,
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(ABSOLUTE_FLOOR)
}

/// A random batch with random black-box outputs, labels and features.
pub fn random_batch(cfg: &GradCheckConfig) -> Result<Vec<TrainingExample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.items)
        .map(|i| {
            let features: Vec<f64> = (0..cfg.input_dim).map(|_| rng.sample(StandardNormal)).collect();
            let w: Vec<f64> = (0..cfg.classes).map(|_| rng.random_range(0.05..1.0)).collect();
            let label = rng.random_range(0..cfg.classes);
            TrainingExample::new(format!("gc-{i}"), features, label, ProbabilityVector::from_weights(&w)?)
        })
        .collect()
}

/// Compares the analytic gradient of every regressor parameter with a
/// central difference under frozen noise.
pub fn wrapper_gradcheck(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let batch = random_batch(cfg)?;
    let tc = TrainConfig {
        m_train: cfg.samples,
        lambda: cfg.lambda,
        seed: cfg.seed,
        ..TrainConfig::default()
    };
    let mut model = WrapperModel::new(cfg.input_dim, &tc)?;
    let noise: Vec<UniformNoiseBlock> = batch
        .iter()
        .map(|e| training_noise(cfg.seed, &e.example_id, 0, cfg.samples, cfg.classes))
        .collect();
    let (out, grads) = model.loss_and_gradient(&batch, &noise)?;
    let analytic = grads.flat_params();
    let signature = |m: &WrapperModel| -> Result<Vec<Vec<bool>>> {
        batch.iter().map(|e| m.kink_signature(&e.features)).collect()
    };
    let base = signature(&model)?;
    let mut numeric = Vec::with_capacity(analytic.len());
    let mut at_kink = Vec::new();
    for i in 0..analytic.len() {
        let orig = *model.regressor.param_mut(i);
        *model.regressor.param_mut(i) = orig + cfg.step;
        let up = model.loss(&batch, &noise)?.loss;
        let mut smooth = signature(&model)? == base;
        *model.regressor.param_mut(i) = orig - cfg.step;
        let down = model.loss(&batch, &noise)?.loss;
        smooth &= signature(&model)? == base;
        *model.regressor.param_mut(i) = orig;
        numeric.push((up - down) / (2.0 * cfg.step));
        if !smooth {
            at_kink.push(i);
        }
    }
    let (worst_parameter, max_relative_error) = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(*a, *n))
        .enumerate()
        .filter(|(i, _)| at_kink.binary_search(i).is_err())
        .fold((0, 0.0), |best, (i, e)| if e > best.1 { (i, e) } else { best });
    Ok(GradCheckReport {
        parameters: analytic.len(),
        loss: out.loss,
        max_relative_error,
        worst_parameter,
        analytic,
        numeric,
        at_kink,
    })
}
