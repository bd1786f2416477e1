//! Datasets: JSONL schema, text featurizers and the synthetic domain-shift
//! generator.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::Hasher;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub example_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
    pub label: usize,
}

impl Example {
    pub fn with_features(example_id: impl Into<String>, features: Vec<f64>, label: usize) -> Self {
        Self {
            example_id: example_id.into(),
            text: None,
            features: Some(features),
            label,
        }
    }

    pub fn with_text(example_id: impl Into<String>, text: impl Into<String>, label: usize) -> Self {
        Self {
            example_id: example_id.into(),
            text: Some(text.into()),
            features: None,
            label,
        }
    }
}

/// Lowercases and splits on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = fnv::FnvHasher::default();
    h.write(bytes);
    h.finish()
}

/// Hashed bag of words: token counts in `fnv1a64(token) mod dim` buckets,
/// L2-normalized unless empty.
pub fn featurize_hashed_bow(text: &str, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 {
        return Err(Error::Config("hashed feature dimension must be at least 1".into()));
    }
    let mut v = vec![0.0; dim];
    for tok in tokenize(text) {
        v[(fnv1a64(tok.as_bytes()) % dim as u64) as usize] += 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    Ok(v)
}

/// Word vectors keyed by token; out-of-vocabulary tokens are skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(vectors: HashMap<String, Vec<f64>>) -> Result<Self> {
        let dim = vectors
            .values()
            .next()
            .map(|v| v.len())
            .ok_or_else(|| Error::Config("embedding table is empty".into()))?;
        if let Some((tok, v)) = vectors.iter().find(|(_, v)| v.len() != dim) {
            return Err(Error::Shape(format!(
                "embedding for {tok:?} has dimension {}, expected {dim}",
                v.len()
            )));
        }
        Ok(Self { dim, vectors })
    }

    /// Parses `token v1 v2 … vd` lines.
    pub fn parse(text: &str) -> Result<Self> {
        let mut vectors = HashMap::new();
        let mut dim = None;
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(tok) = parts.next() else { continue };
            let v = parts
                .map(|p| p.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            match dim {
                None => dim = Some(v.len()),
                Some(d) if d != v.len() => {
                    return Err(Error::Parse {
                        line: i + 1,
                        message: format!("vector has {} components, expected {d}", v.len()),
                    })
                }
                _ => {}
            }
            vectors.insert(tok.to_string(), v);
        }
        Self::new(vectors)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&s)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(|v| v.as_slice())
    }
}

/// Mean embedding of the in-vocabulary tokens; zero vector when none match.
pub fn featurize_avg_embedding(text: &str, table: &EmbeddingTable) -> Vec<f64> {
    let mut acc = vec![0.0; table.dim()];
    let mut n = 0usize;
    for tok in tokenize(text) {
        if let Some(v) = table.get(&tok) {
            acc.iter_mut().zip(v).for_each(|(a, x)| *a += x);
            n += 1;
        }
    }
    if n > 0 {
        acc.iter_mut().for_each(|a| *a /= n as f64);
    }
    acc
}

/// How an [`Example`] becomes a feature vector.
#[derive(Debug, Clone)]
pub enum Featurizer {
    /// Use the stored `features` field.
    Provided,
    HashedBow { dim: usize },
    Embedding(EmbeddingTable),
}

impl Featurizer {
    pub fn featurize(&self, ex: &Example) -> Result<Vec<f64>> {
        match (self, &ex.features, &ex.text) {
            (Featurizer::Provided, Some(f), _) => Ok(f.clone()),
            (Featurizer::Provided, None, _) => Err(Error::Config(format!(
                "example {} has no stored features",
                ex.example_id
            ))),
            (Featurizer::HashedBow { dim }, _, Some(t)) => featurize_hashed_bow(t, *dim),
            (Featurizer::Embedding(table), _, Some(t)) => Ok(featurize_avg_embedding(t, table)),
            (_, _, None) => Err(Error::Config(format!("example {} has no text", ex.example_id))),
        }
    }

    /// Stored features when present, hashed text otherwise.
    pub fn auto(dataset: &[Example], hash_dim: usize) -> Self {
        if dataset.iter().all(|e| e.features.is_some()) {
            Featurizer::Provided
        } else {
            Featurizer::HashedBow { dim: hash_dim }
        }
    }
}

/// Checks the per-example and cross-example schema rules.
pub fn validate_dataset(dataset: &[Example]) -> Result<()> {
    let mut width: Option<(usize, usize)> = None;
    for (i, ex) in dataset.iter().enumerate() {
        check_example(ex, &mut width, i + 1)?;
    }
    Ok(())
}

fn check_example(ex: &Example, width: &mut Option<(usize, usize)>, line: usize) -> Result<()> {
    if ex.text.is_none() && ex.features.is_none() {
        return Err(Error::Parse {
            line,
            message: format!("example {} has neither text nor features", ex.example_id),
        });
    }
    if let Some(f) = &ex.features {
        match *width {
            None => *width = Some((f.len(), line)),
            Some((w, first)) if w != f.len() => {
                return Err(Error::Parse {
                    line,
                    message: format!(
                        "feature length {} differs from length {w} first seen on line {first}",
                        f.len()
                    ),
                })
            }
            _ => {}
        }
    }
    Ok(())
}

pub fn parse_dataset(text: &str) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    let mut width = None;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ex: Example = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        check_example(&ex, &mut width, i + 1)?;
        out.push(ex);
    }
    Ok(out)
}

pub fn load_dataset(path: &Path) -> Result<Vec<Example>> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&s)
}

pub fn dataset_to_jsonl(dataset: &[Example]) -> Result<String> {
    let mut s = String::new();
    for ex in dataset {
        s.push_str(&serde_json::to_string(ex)?);
        s.push('\n');
    }
    Ok(s)
}

pub fn save_dataset(dataset: &[Example], path: &Path) -> Result<()> {
    validate_dataset(dataset)?;
    std::fs::write(path, dataset_to_jsonl(dataset)?).map_err(|e| Error::io(path, e))
}

/// Parameters of the two-Gaussian source/target generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftScenario {
    pub n_source: usize,
    pub n_target: usize,
    pub dim: usize,
    pub class_separation: f64,
    pub shift_rotation_degrees: f64,
    pub shift_translation: f64,
    pub noise_flip_rate: f64,
    pub seed: u64,
}

impl Default for ShiftScenario {
    fn default() -> Self {
        Self {
            n_source: 2000,
            n_target: 2000,
            dim: 16,
            class_separation: 4.0,
            shift_rotation_degrees: 35.0,
            shift_translation: 1.5,
            noise_flip_rate: 0.05,
            seed: 20_200_226,
        }
    }
}

impl ShiftScenario {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("dim must be at least 1".into()));
        }
        if self.dim < 2 && (self.shift_rotation_degrees != 0.0 || self.shift_translation != 0.0) {
            return Err(Error::Config("rotation and translation need dim >= 2".into()));
        }
        if !(self.class_separation >= 0.0)
            || !(self.shift_rotation_degrees >= 0.0)
            || !(self.shift_translation >= 0.0)
        {
            return Err(Error::Config("scenario parameters must be non-negative".into()));
        }
        if !(0.0..=0.5).contains(&self.noise_flip_rate) {
            return Err(Error::Config(format!(
                "flip rate must be in [0, 0.5], got {}",
                self.noise_flip_rate
            )));
        }
        Ok(())
    }
}

/// Train / validation / test partition of one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Vec<Example>,
    pub validation: Vec<Example>,
    pub test: Vec<Example>,
}

impl Splits {
    pub fn all(&self) -> impl Iterator<Item = &Example> {
        self.train.iter().chain(&self.validation).chain(&self.test)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftData {
    pub source: Splits,
    pub target: Splits,
}

struct DomainShape {
    cos: f64,
    sin: f64,
    translation: f64,
    flip: f64,
}

fn draw_domain(s: &ShiftScenario, n: usize, prefix: &str, stream: u64, shape: &DomainShape) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    rng.set_stream(stream);
    let width = n.max(1).to_string().len();
    (0..n)
        .map(|i| {
            let label = rng.random_range(0..2usize);
            let mut x: Vec<f64> = (0..s.dim).map(|_| rng.sample(StandardNormal)).collect();
            x[0] += if label == 1 { 0.5 } else { -0.5 } * s.class_separation;
            if s.dim >= 2 {
                let (a, b) = (x[0], x[1]);
                x[0] = shape.cos * a - shape.sin * b;
                x[1] = shape.sin * a + shape.cos * b + shape.translation;
            }
            // draw the flip unconditionally so the stream layout ignores the rate
            let flip = rng.random::<f64>() < shape.flip;
            let label = if flip { 1 - label } else { label };
            let mut id = String::with_capacity(prefix.len() + width + 1);
            let _ = write!(id, "{prefix}-{i:0width$}");
            Example::with_features(id, x, label)
        })
        .collect()
}

fn split(mut examples: Vec<Example>, seed: u64, stream: u64) -> Splits {
    let n = examples.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_train = (0.7 * n as f64).round() as usize;
    let n_val = ((0.1 * n as f64).round() as usize).min(n - n_train);
    let mut bucket = vec![2u8; n];
    for (rank, &idx) in order.iter().enumerate() {
        bucket[idx] = if rank < n_train {
            0
        } else if rank < n_train + n_val {
            1
        } else {
            2
        };
    }
    let mut out = Splits {
        train: Vec::with_capacity(n_train),
        validation: Vec::with_capacity(n_val),
        test: Vec::with_capacity(n - n_train - n_val),
    };
    // ids are generated in ascending order, so each split stays sorted
    for (ex, b) in examples.drain(..).zip(bucket) {
        match b {
            0 => out.train.push(ex),
            1 => out.validation.push(ex),
            _ => out.test.push(ex),
        }
    }
    out
}

/// Source: two unit-covariance Gaussians at ±separation/2 on the first
/// axis. Target: the same clusters rotated in the first two axes,
/// translated along the second, with labels flipped at the given rate.
pub fn generate_shift_scenario(s: &ShiftScenario) -> Result<ShiftData> {
    s.validate()?;
    let identity = DomainShape {
        cos: 1.0,
        sin: 0.0,
        translation: 0.0,
        flip: 0.0,
    };
    let theta = s.shift_rotation_degrees.to_radians();
    let shifted = DomainShape {
        cos: theta.cos(),
        sin: theta.sin(),
        translation: s.shift_translation,
        flip: s.noise_flip_rate,
    };
    let source = draw_domain(s, s.n_source, "src", 1, &identity);
    let target = draw_domain(s, s.n_target, "tgt", 2, &shifted);
    Ok(ShiftData {
        source: split(source, s.seed, 3),
        target: split(target, s.seed, 4),
    })
}
