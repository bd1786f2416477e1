//! Rejection by uncertainty: partitions, the NRA / CQ / RQ metrics and
//! rejection curves.
//!
//! Items are ranked from most to least uncertain. Equal scores keep their
//! input order, so the earlier item is rejected first.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uncertainty score of one prediction and whether the black box got it right.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredOutcome {
    pub score: f64,
    pub correct: bool,
}

impl ScoredOutcome {
    pub fn new(score: f64, correct: bool) -> Self {
        Self { score, correct }
    }
}

/// Counts of accurate/misclassified items among non-rejected/rejected ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RejectionPartition {
    pub an_count: usize,
    pub mn_count: usize,
    pub ar_count: usize,
    pub mr_count: usize,
}

impl RejectionPartition {
    pub fn total(&self) -> usize {
        self.an_count + self.mn_count + self.ar_count + self.mr_count
    }

    pub fn accurate(&self) -> usize {
        self.an_count + self.ar_count
    }

    pub fn misclassified(&self) -> usize {
        self.mn_count + self.mr_count
    }

    pub fn kept(&self) -> usize {
        self.an_count + self.mn_count
    }

    pub fn rejected(&self) -> usize {
        self.ar_count + self.mr_count
    }
}

/// Number of rejected items for a fraction of `n`.
pub fn rejection_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64).floor() as usize).min(n)
}

fn check_fraction(fraction: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config(format!("reject fraction {fraction} outside [0, 1]")));
    }
    Ok(())
}

/// Indices ordered from most to least uncertain, ties by input order.
fn rejection_order(scored: &[ScoredOutcome]) -> Result<Vec<usize>> {
    if scored.is_empty() {
        return Err(Error::Config("no scored predictions".into()));
    }
    if let Some(i) = scored.iter().position(|s| s.score.is_nan()) {
        return Err(Error::Config(format!("score at position {i} is NaN")));
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    // stable sort keeps input order among equal scores
    order.sort_by(|&a, &b| scored[b].score.total_cmp(&scored[a].score));
    Ok(order)
}

fn partition_from_prefix(k: usize, wrong_prefix: &[usize]) -> RejectionPartition {
    let n = wrong_prefix.len() - 1;
    let total_wrong = wrong_prefix[n];
    let mr = wrong_prefix[k];
    let ar = k - mr;
    let mn = total_wrong - mr;
    let an = n - k - mn;
    RejectionPartition {
        an_count: an,
        mn_count: mn,
        ar_count: ar,
        mr_count: mr,
    }
}

fn wrong_prefix(order: &[usize], scored: &[ScoredOutcome]) -> Vec<usize> {
    let mut prefix = Vec::with_capacity(order.len() + 1);
    prefix.push(0);
    let mut acc = 0;
    for &i in order {
        if !scored[i].correct {
            acc += 1;
        }
        prefix.push(acc);
    }
    prefix
}

/// Rejects the ⌊fraction·n⌋ most uncertain items and counts the outcome.
pub fn partition(scored: &[ScoredOutcome], reject_fraction: f64) -> Result<RejectionPartition> {
    check_fraction(reject_fraction)?;
    let order = rejection_order(scored)?;
    let prefix = wrong_prefix(&order, scored);
    Ok(partition_from_prefix(rejection_count(reject_fraction, scored.len()), &prefix))
}

/// Non-rejected accuracy |A∩N| / |N|.
pub fn nra(p: &RejectionPartition) -> Result<f64> {
    if p.kept() == 0 {
        return Err(Error::Undefined("non-rejected accuracy with nothing kept".into()));
    }
    Ok(p.an_count as f64 / p.kept() as f64)
}

/// Classification quality (|A∩N| + |M∩R|) / n.
pub fn cq(p: &RejectionPartition) -> Result<f64> {
    if p.total() == 0 {
        return Err(Error::Undefined("classification quality of an empty set".into()));
    }
    Ok((p.an_count + p.mr_count) as f64 / p.total() as f64)
}

/// Rejection quality (|M∩R|·|A|) / (|A∩R|·|M|).
///
/// With nothing accurate rejected the ratio is `f64::INFINITY` if any
/// misclassified item was rejected and 1.0 (neutral) if nothing was.
pub fn rq(p: &RejectionPartition) -> Result<f64> {
    if p.misclassified() == 0 {
        return Err(Error::Undefined("rejection quality with no misclassified items".into()));
    }
    if p.ar_count == 0 {
        return Ok(if p.mr_count > 0 { f64::INFINITY } else { 1.0 });
    }
    Ok((p.mr_count * p.accurate()) as f64 / (p.ar_count * p.misclassified()) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RejectionCurvePoint {
    pub rejected_fraction: f64,
    /// Smallest rejected score; `+inf` when nothing is rejected.
    pub threshold: f64,
    /// NaN when undefined (everything rejected).
    pub nra: f64,
    pub cq: f64,
    /// `+inf` sentinel per [`rq`]; NaN when no item is misclassified.
    pub rq: f64,
    pub partition: RejectionPartition,
}

/// Fractions 0.00, 0.01, …, 0.50.
pub fn default_fraction_grid() -> Vec<f64> {
    (0..=50).map(|i| i as f64 / 100.0).collect()
}

pub fn sweep_curve(scored: &[ScoredOutcome], fractions: &[f64]) -> Result<Vec<RejectionCurvePoint>> {
    for f in fractions {
        check_fraction(*f)?;
    }
    if fractions.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Config("fractions must be sorted ascending".into()));
    }
    let order = rejection_order(scored)?;
    let prefix = wrong_prefix(&order, scored);
    Ok(fractions
        .iter()
        .map(|&f| {
            let k = rejection_count(f, scored.len());
            let p = partition_from_prefix(k, &prefix);
            RejectionCurvePoint {
                rejected_fraction: f,
                threshold: if k == 0 { f64::INFINITY } else { scored[order[k - 1]].score },
                nra: nra(&p).unwrap_or(f64::NAN),
                cq: cq(&p).unwrap_or(f64::NAN),
                rq: rq(&p).unwrap_or(f64::NAN),
                partition: p,
            }
        })
        .collect())
}
