use serde::{Deserialize, Serialize};

use super::noise::UniformNoiseBlock;
use super::special::gamma_quantile;
use crate::error::{Error, Result};

/// Tolerance on `|Σp - 1|` for a valid probability vector.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Floor applied to black-box probabilities before they become
/// concentrations.
pub const EPSILON_CLIP: f64 = 1e-6;

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::Domain("probability vector is empty".into()));
        }
        if let Some(v) = p.iter().find(|v| !(**v >= 0.0 && **v <= 1.0)) {
            return Err(Error::Domain(format!("probability {v} outside [0, 1]")));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::Domain(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(Self(p))
    }

    /// Normalizes non-negative weights with a positive total.
    pub fn from_weights(w: &[f64]) -> Result<Self> {
        let total: f64 = w.iter().sum();
        if !(total > 0.0) || !total.is_finite() || w.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Domain(format!("cannot normalize weights {w:?}")));
        }
        Ok(Self(w.iter().map(|v| v / total).collect()))
    }

    pub fn uniform(classes: usize) -> Self {
        Self(vec![1.0 / classes as f64; classes])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Index of the largest component; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    /// Clips every component to at least `eps` and renormalizes.
    pub fn clip_renormalize(&self, eps: f64) -> Self {
        let clipped: Vec<f64> = self.0.iter().map(|v| v.max(eps)).collect();
        let total: f64 = clipped.iter().sum();
        Self(clipped.into_iter().map(|v| v / total).collect())
    }
}

impl TryFrom<Vec<f64>> for ProbabilityVector {
    type Error = Error;

    fn try_from(p: Vec<f64>) -> Result<Self> {
        Self::new(p)
    }
}

impl From<ProbabilityVector> for Vec<f64> {
    fn from(p: ProbabilityVector) -> Self {
        p.0
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Dirichlet concentration parameters; all strictly positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ConcentrationVector(Vec<f64>);

impl ConcentrationVector {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::Domain("concentration vector is empty".into()));
        }
        if let Some(v) = alpha.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::Domain(format!("concentration {v} is not strictly positive")));
        }
        Ok(Self(alpha))
    }

    /// `beta * y`; valid whenever `beta > 0` and `y` has no zero component.
    pub fn scaled(y: &ProbabilityVector, beta: f64) -> Result<Self> {
        Self::new(y.as_slice().iter().map(|v| beta * v).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

impl TryFrom<Vec<f64>> for ConcentrationVector {
    type Error = Error;

    fn try_from(a: Vec<f64>) -> Result<Self> {
        Self::new(a)
    }
}

impl From<ConcentrationVector> for Vec<f64> {
    fn from(a: ConcentrationVector) -> Self {
        a.0
    }
}

fn check_noise(classes: usize, noise: &UniformNoiseBlock) -> Result<()> {
    if noise.cols() != classes {
        return Err(Error::Shape(format!(
            "noise block has {} columns for {} classes",
            noise.cols(),
            classes
        )));
    }
    Ok(())
}

/// Row normalization after rescaling by the largest entry. Draws for tiny
/// shapes sit near the quantile floor and a plain sum could underflow.
fn scaled_row(g: &[f64]) -> (f64, f64, Vec<f64>) {
    let scale = g.iter().cloned().fold(0.0, f64::max);
    let total: f64 = g.iter().map(|v| v / scale).sum();
    let row = g.iter().map(|v| v / scale / total).collect();
    (scale, total, row)
}

fn normalize_row(g: &[f64]) -> Vec<f64> {
    scaled_row(g).2
}

/// Draws `noise.rows()` Dirichlet samples by pushing each uniform through
/// the Gamma quantile of its component and normalizing the row.
pub fn dirichlet_sample(
    alpha: &ConcentrationVector,
    noise: &UniformNoiseBlock,
) -> Result<Vec<ProbabilityVector>> {
    check_noise(alpha.len(), noise)?;
    (0..noise.rows())
        .map(|m| {
            let g = alpha
                .as_slice()
                .iter()
                .zip(noise.row(m))
                .map(|(&a, &u)| gamma_quantile(a, u))
                .collect::<Result<Vec<_>>>()?;
            Ok(ProbabilityVector(normalize_row(&g)))
        })
        .collect()
}

pub fn dirichlet_mean(alpha: &ConcentrationVector) -> ProbabilityVector {
    let total = alpha.total();
    ProbabilityVector(alpha.as_slice().iter().map(|a| a / total).collect())
}

/// Marginal variance of component `c`: α_c(α₀ - α_c) / (α₀²(α₀ + 1)).
pub fn dirichlet_component_variance(alpha: &ConcentrationVector, c: usize) -> Result<f64> {
    let a = *alpha
        .as_slice()
        .get(c)
        .ok_or_else(|| Error::Shape(format!("class {c} out of range for {} classes", alpha.len())))?;
    let a0 = alpha.total();
    Ok(a * (a0 - a) / (a0 * a0 * (a0 + 1.0)))
}

/// ∂Q(a, u)/∂a at fixed `u`, given `q = Q(a, u)`.
///
/// For small shapes Q behaves like (u·Γ(a+1))^(1/a), which no fixed absolute
/// step resolves. Its logarithm is smooth at every scale, so the central
/// difference is taken on ln Q with a step proportional to `a`. Quantiles
/// are clamped away from zero, so the logarithms are always finite.
fn quantile_shape_derivative(a: f64, u: f64, q: f64) -> Result<f64> {
    let h = 1e-4 * a;
    let up = gamma_quantile(a + h, u)?;
    let down = gamma_quantile(a - h, u)?;
    Ok(q * (up.ln() - down.ln()) / (2.0 * h))
}

/// Samples `ŷ` for α = β·y together with `dŷ/dβ`, both M×C, under common
/// random numbers.
pub fn sample_with_beta_derivative(
    y: &ProbabilityVector,
    beta: f64,
    noise: &UniformNoiseBlock,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::Domain(format!("beta must be positive, got {beta}")));
    }
    check_noise(y.len(), noise)?;
    let classes = y.len();
    let mut samples = Vec::with_capacity(noise.rows());
    let mut derivs = Vec::with_capacity(noise.rows());
    let mut g = vec![0.0; classes];
    let mut dg = vec![0.0; classes];
    for m in 0..noise.rows() {
        for c in 0..classes {
            let yc = y.as_slice()[c];
            let a = beta * yc;
            let u = noise.get(m, c);
            g[c] = gamma_quantile(a, u)?;
            // chain rule: ∂a/∂β = y_c
            dg[c] = yc * quantile_shape_derivative(a, u, g[c])?;
        }
        let (scale, total, row) = scaled_row(&g);
        let dtotal: f64 = dg.iter().map(|v| v / scale).sum();
        let drow: Vec<f64> = row
            .iter()
            .zip(&dg)
            .map(|(r, dgc)| (dgc / scale - r * dtotal) / total)
            .collect();
        samples.push(row);
        derivs.push(drow);
    }
    Ok((samples, derivs))
}

/// `dŷ_{m,c}/dβ` for samples of Dir(β·y) driven by `noise`.
pub fn sample_derivative_wrt_beta(
    y: &ProbabilityVector,
    beta: f64,
    noise: &UniformNoiseBlock,
) -> Result<Vec<Vec<f64>>> {
    sample_with_beta_derivative(y, beta, noise).map(|(_, d)| d)
}
