//! The uncertainty wrapper: a β-regressor whose output scales the black-box
//! probabilities into Dirichlet concentrations, its Monte Carlo
//! cross-entropy loss and the training loop.

use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::{Activation, AdamState, DenseNetwork, GradientBundle, LayerSpec};
use crate::numerics::{
    derive_stream, dirichlet_sample, id_hash, sample_with_beta_derivative, ConcentrationVector,
    ProbabilityVector, UniformNoiseBlock, EPSILON_CLIP,
};
use crate::parallel::Execution;

pub const DEFAULT_BETA_MIN: f64 = 1e-2;
/// Floor on Monte Carlo means inside the log of the loss.
pub const LOG_FLOOR: f64 = 1e-12;

/// Hidden layers of the β-regressor: four dense ReLU layers of twenty units.
pub const DEFAULT_HIDDEN: [usize; 4] = [20, 20, 20, 20];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WrapperModel {
    #[serde(flatten)]
    pub regressor: DenseNetwork,
    pub beta_min: f64,
    pub epsilon_clip: f64,
    #[serde(rename = "M_train")]
    pub m_train: usize,
    pub lambda: f64,
}

/// A black-box prediction enriched with its Dirichlet concentration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrichedPrediction {
    pub y: ProbabilityVector,
    pub beta: f64,
    pub alpha: ConcentrationVector,
}

impl EnrichedPrediction {
    /// Builds the prediction for a given β (clipping `y` as the wrapper does).
    pub fn new(y: ProbabilityVector, beta: f64, epsilon_clip: f64) -> Result<Self> {
        let alpha = compose_alpha(&y, beta, epsilon_clip)?;
        Ok(Self { y, beta, alpha })
    }

    pub fn classes(&self) -> usize {
        self.y.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub m_train: usize,
    pub lambda: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub beta_min: f64,
    pub epsilon_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 80,
            batch_size: 32,
            lr: 1e-3,
            m_train: 20,
            lambda: 1e-2,
            seed: 0,
            hidden: DEFAULT_HIDDEN.to_vec(),
            beta_min: DEFAULT_BETA_MIN,
            epsilon_clip: EPSILON_CLIP,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.m_train == 0 {
            return Err(Error::Config("epochs, batch size and samples must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.lambda >= 0.0) || !(self.beta_min > 0.0) {
            return Err(Error::Config("lr and beta_min must be positive, lambda non-negative".into()));
        }
        if !(self.epsilon_clip > 0.0 && self.epsilon_clip < 0.5) {
            return Err(Error::Config(format!("epsilon_clip {} out of range", self.epsilon_clip)));
        }
        Ok(())
    }
}

/// One row of wrapper training data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub example_id: String,
    pub features: Vec<f64>,
    /// One-hot (or soft) label distribution over the classes.
    pub target: Vec<f64>,
    pub black_box: ProbabilityVector,
}

impl TrainingExample {
    pub fn new(
        example_id: impl Into<String>,
        features: Vec<f64>,
        label: usize,
        black_box: ProbabilityVector,
    ) -> Result<Self> {
        let classes = black_box.len();
        if label >= classes {
            return Err(Error::Shape(format!("label {label} out of range for {classes} classes")));
        }
        let mut target = vec![0.0; classes];
        target[label] = 1.0;
        Ok(Self {
            example_id: example_id.into(),
            features,
            target,
            black_box,
        })
    }
}

/// α = β · clip-renormalize(y).
pub fn compose_alpha(y: &ProbabilityVector, beta: f64, epsilon_clip: f64) -> Result<ConcentrationVector> {
    ConcentrationVector::scaled(&y.clip_renormalize(epsilon_clip), beta)
}

/// Componentwise mean of `noise.rows()` Dirichlet samples.
pub fn mc_expected_output(alpha: &ConcentrationVector, noise: &UniformNoiseBlock) -> Result<ProbabilityVector> {
    if noise.rows() == 0 {
        return Err(Error::Config("need at least one Monte Carlo sample".into()));
    }
    let samples = dirichlet_sample(alpha, noise)?;
    let mut mean = vec![0.0; alpha.len()];
    for s in &samples {
        mean.iter_mut().zip(s.as_slice()).for_each(|(m, v)| *m += v);
    }
    let m = samples.len() as f64;
    mean.iter_mut().for_each(|v| *v /= m);
    ProbabilityVector::from_weights(&mean)
}

/// Noise stream for one training item in one epoch.
pub fn training_noise(seed: u64, example_id: &str, epoch: u64, samples: usize, classes: usize) -> UniformNoiseBlock {
    UniformNoiseBlock::generate(seed, derive_stream(&[id_hash(example_id), epoch]), samples, classes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub betas: Vec<f64>,
}

struct ItemTerms {
    cross_entropy: f64,
    beta: f64,
    grads: Option<GradientBundle>,
}

impl WrapperModel {
    pub fn new(input_dim: usize, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut spec: Vec<LayerSpec> = config
            .hidden
            .iter()
            .map(|&h| LayerSpec::new(h, Activation::Relu))
            .collect();
        spec.push(LayerSpec::new(1, Activation::Softplus));
        Ok(Self {
            regressor: DenseNetwork::init(input_dim, &spec, config.seed)?,
            beta_min: config.beta_min,
            epsilon_clip: config.epsilon_clip,
            m_train: config.m_train,
            lambda: config.lambda,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.regressor.validate()?;
        if self.regressor.output_dim() != 1 {
            return Err(Error::Shape(format!(
                "regressor must output one value, has {}",
                self.regressor.output_dim()
            )));
        }
        if !(self.beta_min > 0.0) {
            return Err(Error::Config("beta_min must be positive".into()));
        }
        if !(self.epsilon_clip > 0.0 && self.epsilon_clip < 0.5) {
            return Err(Error::Config(format!("epsilon_clip {} out of range", self.epsilon_clip)));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.regressor.input_dim
    }

    /// β for one input: regressor head output floored at `beta_min`.
    pub fn beta(&self, features: &[f64]) -> Result<f64> {
        Ok(self.regressor.predict(features)?[0].max(self.beta_min))
    }

    /// The regressor's ReLU pattern plus whether the β floor is inactive.
    /// β is smooth in the parameters while this stays fixed.
    pub fn kink_signature(&self, features: &[f64]) -> Result<Vec<bool>> {
        let mut sig = self.regressor.relu_pattern(features)?;
        sig.push(self.regressor.predict(features)?[0] > self.beta_min);
        Ok(sig)
    }

    pub fn enrich(&self, features: &[f64], y: &ProbabilityVector) -> Result<EnrichedPrediction> {
        EnrichedPrediction::new(y.clone(), self.beta(features)?, self.epsilon_clip)
    }

    fn item_terms(&self, item: &TrainingExample, noise: &UniformNoiseBlock, with_grad: bool) -> Result<ItemTerms> {
        let classes = item.black_box.len();
        if item.target.len() != classes {
            return Err(Error::Shape(format!(
                "item {}: target has {} classes, black-box output has {classes}",
                item.example_id,
                item.target.len()
            )));
        }
        let (out, tape) = self.regressor.forward(&item.features)?;
        let raw = out[0];
        let beta = raw.max(self.beta_min);
        let y = item.black_box.clip_renormalize(self.epsilon_clip);
        let (samples, derivs) = sample_with_beta_derivative(&y, beta, noise)?;
        let m = samples.len() as f64;

        let mut cross_entropy = 0.0;
        let mut d_ce_d_beta = 0.0;
        for c in 0..classes {
            let mean = samples.iter().map(|r| r[c]).sum::<f64>() / m;
            let t = item.target[c];
            if t == 0.0 {
                continue;
            }
            if mean > LOG_FLOOR {
                cross_entropy -= t * mean.ln();
                let d_mean = derivs.iter().map(|r| r[c]).sum::<f64>() / m;
                d_ce_d_beta -= t * d_mean / mean;
            } else {
                cross_entropy -= t * LOG_FLOOR.ln();
            }
        }
        cross_entropy /= classes as f64;
        d_ce_d_beta /= classes as f64;
        if !cross_entropy.is_finite() || !d_ce_d_beta.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss term for item {}",
                item.example_id
            )));
        }

        let grads = if with_grad {
            // per-item contribution before the 1/N batch average
            let d_beta = d_ce_d_beta + 2.0 * self.lambda * beta;
            let gate = if raw > self.beta_min { 1.0 } else { 0.0 };
            Some(self.regressor.backward(&tape, &[d_beta * gate])?)
        } else {
            None
        };
        Ok(ItemTerms {
            cross_entropy,
            beta,
            grads,
        })
    }

    fn batch_terms(
        &self,
        batch: &[TrainingExample],
        noise: &[UniformNoiseBlock],
        with_grad: bool,
        exec: Execution,
    ) -> Result<(LossOutput, Option<GradientBundle>)> {
        if batch.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        if noise.len() != batch.len() {
            return Err(Error::Shape(format!(
                "{} noise blocks for {} items",
                noise.len(),
                batch.len()
            )));
        }
        let terms = exec.try_map(batch, |i, item| self.item_terms(item, &noise[i], with_grad))?;
        let n = batch.len() as f64;
        // fixed ascending-index reduction
        let mut ce = 0.0;
        let mut reg = 0.0;
        let mut grads = with_grad.then(|| GradientBundle::zeros_like(&self.regressor));
        for t in &terms {
            ce += t.cross_entropy;
            reg += t.beta * t.beta;
            if let (Some(acc), Some(g)) = (grads.as_mut(), t.grads.as_ref()) {
                acc.add_assign(g);
            }
        }
        if let Some(g) = grads.as_mut() {
            g.scale(1.0 / n);
        }
        let loss = ce / n + self.lambda * reg / n;
        Ok((
            LossOutput {
                loss,
                betas: terms.iter().map(|t| t.beta).collect(),
            },
            grads,
        ))
    }

    /// Regularized Monte Carlo cross-entropy over a batch.
    pub fn loss(&self, batch: &[TrainingExample], noise: &[UniformNoiseBlock]) -> Result<LossOutput> {
        self.batch_terms(batch, noise, false, Execution::default()).map(|(l, _)| l)
    }

    /// Loss together with its gradient with respect to every regressor parameter.
    pub fn loss_and_gradient(
        &self,
        batch: &[TrainingExample],
        noise: &[UniformNoiseBlock],
    ) -> Result<(LossOutput, GradientBundle)> {
        self.loss_and_gradient_with(batch, noise, Execution::default())
    }

    pub fn loss_and_gradient_with(
        &self,
        batch: &[TrainingExample],
        noise: &[UniformNoiseBlock],
        exec: Execution,
    ) -> Result<(LossOutput, GradientBundle)> {
        let (l, g) = self.batch_terms(batch, noise, true, exec)?;
        Ok((l, g.expect("gradient requested")))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

/// Free-function form of [`WrapperModel::loss`].
pub fn wrapper_loss(
    batch: &[TrainingExample],
    model: &WrapperModel,
    noise: &[UniformNoiseBlock],
) -> Result<LossOutput> {
    model.loss(batch, noise)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: WrapperModel,
    /// Mean training loss per epoch.
    pub loss_trace: Vec<f64>,
}

/// Mini-batch Adam on the wrapper loss. Fresh noise every epoch, shared by
/// all evaluations within a step.
pub fn train_wrapper(dataset: &[TrainingExample], config: &TrainConfig) -> Result<TrainOutcome> {
    train_wrapper_with(dataset, config, Execution::default())
}

pub fn train_wrapper_with(
    dataset: &[TrainingExample],
    config: &TrainConfig,
    exec: Execution,
) -> Result<TrainOutcome> {
    config.validate()?;
    let first = dataset
        .first()
        .ok_or_else(|| Error::Config("cannot train on an empty dataset".into()))?;
    let input_dim = first.features.len();
    let classes = first.black_box.len();
    if let Some(bad) = dataset
        .iter()
        .find(|e| e.features.len() != input_dim || e.black_box.len() != classes)
    {
        return Err(Error::Shape(format!("example {} has inconsistent dimensions", bad.example_id)));
    }

    let mut model = WrapperModel::new(input_dim, config)?;
    let mut adam = AdamState::new(&model.regressor, config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(0x5eed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut trace = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<TrainingExample> = chunk.iter().map(|&i| dataset[i].clone()).collect();
            let noise: Vec<UniformNoiseBlock> = batch
                .iter()
                .map(|e| training_noise(config.seed, &e.example_id, epoch as u64, config.m_train, classes))
                .collect();
            let (out, grads) = model.loss_and_gradient_with(&batch, &noise, exec)?;
            if !out.loss.is_finite() || !grads.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {epoch}, batch {b}"
                )));
            }
            adam.step(&mut model.regressor, &grads);
            epoch_loss += out.loss * batch.len() as f64;
        }
        trace.push(epoch_loss / dataset.len() as f64);
        log::debug!("wrapper epoch {}: loss {:.6}", epoch + 1, trace[epoch]);
    }
    Ok(TrainOutcome {
        model,
        loss_trace: trace,
    })
}
