//! Scalar uncertainty scores: entropy of the black-box output, entropy of
//! the Monte Carlo Dirichlet mean, and variation ratios.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dirichlet_sample, format_float, id_hash, ProbabilityVector, UniformNoiseBlock};
use crate::parallel::Execution;
use crate::wrapper::{mc_expected_output, EnrichedPrediction};

pub const DEFAULT_SCORING_SAMPLES: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    BaselineEntropy,
    SampledEntropy,
    VariationRatio,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::BaselineEntropy, Method::SampledEntropy, Method::VariationRatio];

    pub fn tag(self) -> &'static str {
        match self {
            Method::BaselineEntropy => "baseline_entropy",
            Method::SampledEntropy => "sampled_entropy",
            Method::VariationRatio => "variation_ratio",
        }
    }

    pub fn uses_wrapper(self) -> bool {
        self != Method::BaselineEntropy
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline_entropy" | "baseline-entropy" | "baseline" => Ok(Method::BaselineEntropy),
            "sampled_entropy" | "sampled-entropy" => Ok(Method::SampledEntropy),
            "variation_ratio" | "var-ratios" | "var_ratios" | "variation-ratio" => Ok(Method::VariationRatio),
            other => Err(Error::Config(format!("unknown scoring method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyScore {
    pub example_id: String,
    pub method: Method,
    pub value: f64,
    /// Monte Carlo samples used; 0 for the baseline.
    pub m_used: usize,
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

/// Natural-log entropy of the black-box output, with 0·ln 0 = 0.
pub fn baseline_entropy(y: &ProbabilityVector) -> f64 {
    entropy(y.as_slice())
}

/// Entropy of the mean of `noise.rows()` Dirichlet draws.
pub fn sampled_entropy(enriched: &EnrichedPrediction, noise: &UniformNoiseBlock) -> Result<f64> {
    Ok(entropy(mc_expected_output(&enriched.alpha, noise)?.as_slice()))
}

/// 1 - (modal argmax count) / M over `noise.rows()` draws. Ties in a
/// sample's argmax and between modal classes go to the lowest index.
pub fn variation_ratio(enriched: &EnrichedPrediction, noise: &UniformNoiseBlock) -> Result<f64> {
    let samples = dirichlet_sample(&enriched.alpha, noise)?;
    if samples.is_empty() {
        return Err(Error::Config("need at least one Monte Carlo sample".into()));
    }
    let mut counts = vec![0usize; enriched.classes()];
    for s in &samples {
        counts[s.argmax()] += 1;
    }
    let modal = counts.iter().copied().max().unwrap_or(0);
    Ok(1.0 - modal as f64 / samples.len() as f64)
}

/// Scoring noise for one example: keyed by its id, never by its position.
pub fn scoring_noise(seed: u64, example_id: &str, samples: usize, classes: usize) -> UniformNoiseBlock {
    UniformNoiseBlock::generate(seed, id_hash(example_id), samples, classes)
}

pub fn score_one(
    example_id: &str,
    prediction: &EnrichedPrediction,
    method: Method,
    samples: usize,
    seed: u64,
) -> Result<UncertaintyScore> {
    if method.uses_wrapper() && samples == 0 {
        return Err(Error::Config("sampling methods need M >= 1".into()));
    }
    let (value, m_used) = match method {
        Method::BaselineEntropy => (baseline_entropy(&prediction.y), 0),
        Method::SampledEntropy => {
            let noise = scoring_noise(seed, example_id, samples, prediction.classes());
            (sampled_entropy(prediction, &noise)?, samples)
        }
        Method::VariationRatio => {
            let noise = scoring_noise(seed, example_id, samples, prediction.classes());
            (variation_ratio(prediction, &noise)?, samples)
        }
    };
    Ok(UncertaintyScore {
        example_id: example_id.to_string(),
        method,
        value,
        m_used,
    })
}

/// One score per prediction, in input order.
pub fn score_dataset(
    ids: &[String],
    predictions: &[EnrichedPrediction],
    method: Method,
    samples: usize,
    seed: u64,
) -> Result<Vec<UncertaintyScore>> {
    score_dataset_with(ids, predictions, method, samples, seed, Execution::default())
}

pub fn score_dataset_with(
    ids: &[String],
    predictions: &[EnrichedPrediction],
    method: Method,
    samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<UncertaintyScore>> {
    if ids.len() != predictions.len() {
        return Err(Error::Shape(format!(
            "{} ids for {} predictions",
            ids.len(),
            predictions.len()
        )));
    }
    exec.try_map(predictions, |i, p| score_one(&ids[i], p, method, samples, seed))
}

/// One row of the scores CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub example_id: String,
    pub method: Method,
    #[serde(rename = "M")]
    pub m: usize,
    pub score: f64,
    pub bb_argmax: usize,
    pub true_label: usize,
    pub correct: bool,
}

impl ScoreRecord {
    pub fn new(score: &UncertaintyScore, y: &ProbabilityVector, true_label: usize) -> Self {
        let bb_argmax = y.argmax();
        Self {
            example_id: score.example_id.clone(),
            method: score.method,
            m: score.m_used,
            score: score.value,
            bb_argmax,
            true_label,
            correct: bb_argmax == true_label,
        }
    }
}

pub fn write_scores_csv(records: &[ScoreRecord], path: &Path) -> Result<()> {
    let bytes = scores_csv_bytes(records)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn scores_csv_bytes(records: &[ScoreRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["example_id", "method", "M", "score", "bb_argmax", "true_label", "correct"])
        .map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.example_id.clone(),
            r.method.tag().to_string(),
            r.m.to_string(),
            format_float(r.score),
            r.bb_argmax.to_string(),
            r.true_label.to_string(),
            r.correct.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Config(e.to_string()))
}

pub fn read_scores_csv(path: &Path) -> Result<Vec<ScoreRecord>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    let mut out = Vec::new();
    for (i, rec) in r.deserialize().enumerate() {
        // header is line 1
        out.push(rec.map_err(|e| Error::Parse {
            line: i + 2,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Config(format!("csv: {e}"))
}
