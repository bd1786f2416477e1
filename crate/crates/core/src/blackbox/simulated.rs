use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::{Activation, AdamState, DenseNetwork, GradientBundle, LayerSpec};
use crate::numerics::ProbabilityVector;

/// A dense softmax classifier standing in for a prediction API.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedBlackBox {
    net: DenseNetwork,
}

impl SimulatedBlackBox {
    pub fn from_network(net: DenseNetwork) -> Result<Self> {
        net.validate()?;
        match net.layers.last().map(|l| l.activation) {
            Some(Activation::Softmax) => Ok(Self { net }),
            _ => Err(Error::Config("black-box network needs a softmax head".into())),
        }
    }

    pub fn classes(&self) -> usize {
        self.net.output_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim
    }

    pub fn probabilities(&self, features: &[f64]) -> Result<ProbabilityVector> {
        ProbabilityVector::new(self.net.predict(features)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.net.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_network(DenseNetwork::load(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlackBoxTrainConfig {
    /// Zero leaves the classifier untrained.
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
}

impl Default for BlackBoxTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 80,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
            hidden: vec![32, 32],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_accuracy: f64,
    pub validation_accuracy: Option<f64>,
}

fn accuracy_of(bb: &SimulatedBlackBox, data: &[(Vec<f64>, usize)]) -> Result<f64> {
    let mut hits = 0;
    for (x, y) in data {
        if bb.probabilities(x)?.argmax() == *y {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len().max(1) as f64)
}

/// Trains a ReLU MLP with a softmax head under cross-entropy. The head
/// starts at zero, so an untrained model predicts the uniform distribution.
pub fn train_simulated_blackbox(
    train: &[(Vec<f64>, usize)],
    validation: &[(Vec<f64>, usize)],
    config: &BlackBoxTrainConfig,
) -> Result<(SimulatedBlackBox, TrainReport)> {
    let (first, _) = train
        .first()
        .ok_or_else(|| Error::Config("black-box training set is empty".into()))?;
    let input_dim = first.len();
    let classes = train.iter().map(|(_, y)| *y).max().unwrap_or(0) + 1;
    let distinct = {
        let mut seen = vec![false; classes];
        train.iter().for_each(|(_, y)| seen[*y] = true);
        seen.iter().filter(|s| **s).count()
    };
    if distinct < 2 {
        return Err(Error::Config("black-box training data needs at least two classes".into()));
    }
    if config.batch_size == 0 || !(config.lr > 0.0) {
        return Err(Error::Config("batch size and learning rate must be positive".into()));
    }

    let mut spec: Vec<LayerSpec> = config.hidden.iter().map(|&h| LayerSpec::new(h, Activation::Relu)).collect();
    spec.push(LayerSpec::new(classes, Activation::Softmax));
    let mut net = DenseNetwork::init(input_dim, &spec, config.seed)?;
    if let Some(head) = net.layers.last_mut() {
        head.weights.iter_mut().for_each(|w| *w = 0.0);
    }

    let mut adam = AdamState::new(&net, config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(0xb1ac);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let mut grads = GradientBundle::zeros_like(&net);
            for &i in chunk {
                let (x, y) = &train[i];
                let (probs, tape) = net.forward(x)?;
                // softmax + cross-entropy: gradient at the logits is p - onehot
                let mut delta = probs;
                delta[*y] -= 1.0;
                grads.add_assign(&net.backward_from_preactivation(&tape, delta)?);
            }
            grads.scale(1.0 / chunk.len() as f64);
            if !grads.is_finite() {
                return Err(Error::Numeric(format!("non-finite gradient at epoch {epoch}, batch {b}")));
            }
            adam.step(&mut net, &grads);
        }
    }
    let bb = SimulatedBlackBox { net };
    let report = TrainReport {
        train_accuracy: accuracy_of(&bb, train)?,
        validation_accuracy: if validation.is_empty() {
            None
        } else {
            Some(accuracy_of(&bb, validation)?)
        },
    };
    Ok((bb, report))
}
