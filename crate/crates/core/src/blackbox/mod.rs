//! Where black-box predictions come from. Every source answers with
//! probability vectors only; nothing else crosses this boundary.

mod remote;
mod simulated;

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use remote::{RemoteClient, MAX_BATCH, MAX_IN_FLIGHT};
pub use simulated::{train_simulated_blackbox, BlackBoxTrainConfig, SimulatedBlackBox, TrainReport};

use crate::error::{Error, Result};
use crate::numerics::ProbabilityVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub example_id: String,
    pub probs: ProbabilityVector,
}

/// One query: an id plus the features the black box sees.
#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    pub example_id: &'a str,
    pub features: &'a [f64],
}

/// Stored predictions keyed by example id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionStore {
    by_id: HashMap<String, ProbabilityVector>,
}

impl PredictionStore {
    pub fn new(records: Vec<PredictionRecord>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(records.len());
        let mut classes = None;
        for r in records {
            match classes {
                None => classes = Some(r.probs.len()),
                Some(c) if c != r.probs.len() => {
                    return Err(Error::Shape(format!(
                        "prediction for {} has {} classes, expected {c}",
                        r.example_id,
                        r.probs.len()
                    )))
                }
                _ => {}
            }
            if by_id.insert(r.example_id.clone(), r.probs).is_some() {
                return Err(Error::Config(format!("duplicate prediction for {}", r.example_id)));
            }
        }
        Ok(Self { by_id })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::new(load_predictions(path)?)
    }

    pub fn get(&self, example_id: &str) -> Result<&ProbabilityVector> {
        self.by_id
            .get(example_id)
            .ok_or_else(|| Error::Lookup(format!("no stored prediction for {example_id}")))
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }
}

pub enum BlackBoxSource {
    Simulated(SimulatedBlackBox),
    File(PredictionStore),
    Remote(RemoteClient),
}

impl BlackBoxSource {
    pub fn predict(&self, q: Query<'_>) -> Result<PredictionRecord> {
        let probs = match self {
            BlackBoxSource::Simulated(bb) => bb.probabilities(q.features)?,
            BlackBoxSource::File(store) => store.get(q.example_id)?.clone(),
            BlackBoxSource::Remote(client) => return Ok(client.predict_batch(&[q])?.remove(0)),
        };
        Ok(PredictionRecord {
            example_id: q.example_id.to_string(),
            probs,
        })
    }

    /// Predictions in query order. Remote sources send up to
    /// [`MAX_BATCH`] instances per request.
    pub fn batch_predict(&self, queries: &[Query<'_>]) -> Result<Vec<PredictionRecord>> {
        match self {
            BlackBoxSource::Remote(client) => client.predict_batch(queries),
            _ => queries.iter().map(|q| self.predict(*q)).collect(),
        }
    }
}

pub fn parse_predictions(text: &str) -> Result<Vec<PredictionRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn load_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_predictions(&s)
}

pub fn predictions_to_jsonl(records: &[PredictionRecord]) -> Result<String> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    Ok(s)
}

pub fn save_predictions(records: &[PredictionRecord], path: &Path) -> Result<()> {
    std::fs::write(path, predictions_to_jsonl(records)?).map_err(|e| Error::io(path, e))
}

/// Fraction of records whose argmax matches the label.
pub fn accuracy(records: &[PredictionRecord], labels: &[usize]) -> Result<f64> {
    if records.is_empty() || records.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            records.len(),
            labels.len()
        )));
    }
    let hits = records
        .iter()
        .zip(labels)
        .filter(|(r, &l)| r.probs.argmax() == l)
        .count();
    Ok(hits as f64 / records.len() as f64)
}
