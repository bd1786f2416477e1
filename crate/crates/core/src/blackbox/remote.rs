use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{PredictionRecord, Query};
use crate::error::{Error, Result};
use crate::numerics::ProbabilityVector;

/// Instances per request.
pub const MAX_BATCH: usize = 64;
/// Concurrent requests.
pub const MAX_IN_FLIGHT: usize = 4;
const RETRIES: usize = 2;
const BACKOFF_BASE: Duration = Duration::from_millis(100);
const RENORMALIZE_TOLERANCE: f64 = 1e-6;

#[derive(Serialize)]
struct PredictRequest<'a> {
    instances: Vec<&'a [f64]>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictResponse {
    probabilities: Vec<Vec<f64>>,
}

/// Client for a JSON prediction service exposing `POST /predict`.
#[derive(Debug, Clone)]
pub struct RemoteClient {
    url: String,
    agent: ureq::Agent,
    backoff: Duration,
}

enum Failure {
    /// Connection-level problem; worth retrying.
    Transport(String),
    /// Server answered but the answer is unusable.
    Fatal(String),
}

impl RemoteClient {
    /// `endpoint` is the service base URL; `/predict` is appended unless present.
    pub fn new(endpoint: &str, timeout: Duration) -> Self {
        let trimmed = endpoint.trim_end_matches('/');
        let url = if trimmed.ends_with("/predict") {
            trimmed.to_string()
        } else {
            format!("{trimmed}/predict")
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            url,
            agent,
            backoff: BACKOFF_BASE,
        }
    }

    pub fn with_backoff(mut self, base: Duration) -> Self {
        self.backoff = base;
        self
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn transport_error(&self, example_id: &str, message: String) -> Error {
        Error::Transport {
            endpoint: self.url.clone(),
            example_id: example_id.to_string(),
            message,
        }
    }

    fn send_once(&self, chunk: &[Query<'_>]) -> std::result::Result<Vec<Vec<f64>>, Failure> {
        let body = PredictRequest {
            instances: chunk.iter().map(|q| q.features).collect(),
        };
        let mut resp = self
            .agent
            .post(&self.url)
            .header("Content-Type", "application/json")
            .send_json(&body)
            .map_err(|e| Failure::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if (400..500).contains(&status) {
            return Err(Failure::Fatal(format!("HTTP {status}")));
        }
        if status >= 500 {
            return Err(Failure::Transport(format!("HTTP {status}")));
        }
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Failure::Transport(e.to_string()))?;
        let parsed: PredictResponse =
            serde_json::from_str(&text).map_err(|e| Failure::Fatal(format!("malformed body: {e}")))?;
        if parsed.probabilities.len() != chunk.len() {
            return Err(Failure::Fatal(format!(
                "{} probability rows for {} instances",
                parsed.probabilities.len(),
                chunk.len()
            )));
        }
        Ok(parsed.probabilities)
    }

    fn send_with_retry(&self, chunk: &[Query<'_>]) -> Result<Vec<PredictionRecord>> {
        let first_id = chunk.first().map_or("", |q| q.example_id);
        let mut attempt = 0;
        let rows = loop {
            match self.send_once(chunk) {
                Ok(rows) => break rows,
                Err(Failure::Transport(_)) if attempt < RETRIES => {
                    thread::sleep(self.backoff * (1u32 << attempt));
                    attempt += 1;
                }
                Err(Failure::Transport(msg)) | Err(Failure::Fatal(msg)) => {
                    return Err(self.transport_error(first_id, msg));
                }
            }
        };
        chunk
            .iter()
            .zip(rows)
            .map(|(q, row)| {
                let probs = validate_row(row).map_err(|m| self.transport_error(q.example_id, m))?;
                Ok(PredictionRecord {
                    example_id: q.example_id.to_string(),
                    probs,
                })
            })
            .collect()
    }

    /// Sends the queries in chunks of [`MAX_BATCH`], at most
    /// [`MAX_IN_FLIGHT`] at a time, and returns records in query order.
    pub fn predict_batch(&self, queries: &[Query<'_>]) -> Result<Vec<PredictionRecord>> {
        let chunks: Vec<&[Query<'_>]> = queries.chunks(MAX_BATCH).collect();
        let mut out = Vec::with_capacity(queries.len());
        for wave in chunks.chunks(MAX_IN_FLIGHT) {
            let results: Vec<Result<Vec<PredictionRecord>>> = thread::scope(|s| {
                let handles: Vec<_> = wave
                    .iter()
                    .map(|chunk| s.spawn(move || self.send_with_retry(chunk)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("request thread panicked"))
                    .collect()
            });
            let mut classes = out.first().map(|r: &PredictionRecord| r.probs.len());
            for r in results {
                for rec in r? {
                    match classes {
                        None => classes = Some(rec.probs.len()),
                        Some(c) if c != rec.probs.len() => {
                            return Err(self.transport_error(
                                &rec.example_id,
                                format!("{} classes, earlier rows had {c}", rec.probs.len()),
                            ))
                        }
                        _ => {}
                    }
                    out.push(rec);
                }
            }
        }
        Ok(out)
    }
}

/// Accepts rows within [`RENORMALIZE_TOLERANCE`] of the simplex, renormalizing them.
fn validate_row(row: Vec<f64>) -> std::result::Result<ProbabilityVector, String> {
    if row.is_empty() {
        return Err("empty probability row".into());
    }
    if let Some(v) = row.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(format!("invalid probability {v}"));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > RENORMALIZE_TOLERANCE {
        return Err(format!("probabilities sum to {sum}"));
    }
    ProbabilityVector::from_weights(&row).map_err(|e| e.to_string())
}
