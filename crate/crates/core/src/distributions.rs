//! Gaussian, categorical and finite-mixture densities with seeded sampling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Tolerance on the sum of a probability vector before renormalization.
pub const PROB_TOL: f64 = 1e-12;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Diagonal-covariance Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl GaussianParams {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::invalid("gaussian must have dimension >= 1"));
        }
        if mean.len() != var.len() {
            return Err(Error::dims(mean.len(), var.len()));
        }
        if let Some(v) = var.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::invalid(format!(
                "variance must be positive and finite, got {v}"
            )));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("mean must be finite"));
        }
        Ok(GaussianParams { mean, var })
    }

    pub fn univariate(mean: f64, var: f64) -> Result<Self> {
        Self::new(vec![mean], vec![var])
    }

    pub fn standard(dim: usize) -> Result<Self> {
        Self::new(vec![0.0; dim], vec![1.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn var(&self) -> &[f64] {
        &self.var
    }
}

/// Probability vector, renormalized on construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalParams {
    probs: Vec<f64>,
}

impl CategoricalParams {
    /// Accepts vectors summing to 1 within [`PROB_TOL`] and rescales them to
    /// sum to 1 exactly (up to roundoff).
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let probs = normalize_probs(probs)?;
        Ok(CategoricalParams { probs })
    }

    /// Builds from nonnegative weights of any positive total.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::invalid("weights must have a positive finite sum"));
        }
        if weights.iter().any(|w| *w < 0.0) {
            return Err(Error::invalid("weights must be nonnegative"));
        }
        Self::new(weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("categorical needs at least one outcome"));
        }
        Ok(CategoricalParams {
            probs: vec![1.0 / k as f64; k],
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

fn normalize_probs(probs: Vec<f64>) -> Result<Vec<f64>> {
    if probs.is_empty() {
        return Err(Error::invalid("probability vector is empty"));
    }
    if let Some(p) = probs.iter().find(|p| !(**p >= 0.0 && p.is_finite())) {
        return Err(Error::invalid(format!(
            "probabilities must be finite and >= 0, got {p}"
        )));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > PROB_TOL {
        return Err(Error::invalid(format!(
            "probabilities sum to {total}, not 1"
        )));
    }
    Ok(probs.into_iter().map(|p| p / total).collect())
}

/// Finite mixture of Gaussians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    weights: Vec<f64>,
    components: Vec<GaussianParams>,
}

impl MixtureParams {
    pub fn new(weights: Vec<f64>, components: Vec<GaussianParams>) -> Result<Self> {
        if weights.len() != components.len() {
            return Err(Error::dims(weights.len(), components.len()));
        }
        let weights = normalize_probs(weights)?;
        let dim = components[0].dim();
        if let Some(c) = components.iter().find(|c| c.dim() != dim) {
            return Err(Error::dims(dim, c.dim()));
        }
        Ok(MixtureParams {
            weights,
            components,
        })
    }

    /// Univariate mixture from `(weight, mean, var)` triples.
    pub fn univariate(parts: &[(f64, f64, f64)]) -> Result<Self> {
        let components = parts
            .iter()
            .map(|&(_, m, v)| GaussianParams::univariate(m, v))
            .collect::<Result<Vec<_>>>()?;
        Self::new(parts.iter().map(|p| p.0).collect(), components)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[GaussianParams] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }
}

/// Numerically stable `log Σ exp(v)`. Returns `-inf` for an empty slice or
/// when every entry is `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn gaussian_logpdf(x: &[f64], p: &GaussianParams) -> Result<f64> {
    if x.len() != p.dim() {
        return Err(Error::dims(p.dim(), x.len()));
    }
    Ok(gaussian_logpdf_unchecked(x, &p.mean, &p.var))
}

pub(crate) fn gaussian_logpdf_unchecked(x: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    x.iter()
        .zip(mean)
        .zip(var)
        .map(|((x, m), v)| -0.5 * (LN_2PI + v.ln()) - (x - m) * (x - m) / (2.0 * v))
        .sum()
}

/// Scalar normal log density.
pub fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln()) - (x - mean) * (x - mean) / (2.0 * var)
}

pub fn sample_gaussian(rng: &mut Rng, p: &GaussianParams) -> Vec<f64> {
    p.mean
        .iter()
        .zip(&p.var)
        .map(|(m, v)| m + v.sqrt() * rng.standard_normal())
        .collect()
}

/// Inverse-CDF draw: smallest `k` with `u < Σ_{j≤k} p_j`, skipping
/// zero-probability outcomes.
pub fn sample_categorical(rng: &mut Rng, p: &CategoricalParams) -> usize {
    let u = rng.uniform();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (k, &pk) in p.probs.iter().enumerate() {
        if pk > 0.0 {
            acc += pk;
            last_positive = k;
            if u < acc {
                return k;
            }
        }
    }
    last_positive
}

pub fn mixture_logpdf(x: f64, m: &MixtureParams) -> Result<f64> {
    if m.dim() != 1 {
        return Err(Error::dims(1, m.dim()));
    }
    Ok(mixture_logpdf_1d(x, m))
}

pub(crate) fn mixture_logpdf_1d(x: f64, m: &MixtureParams) -> f64 {
    let terms: Vec<f64> = m
        .weights
        .iter()
        .zip(&m.components)
        .map(|(w, c)| w.ln() + normal_logpdf(x, c.mean[0], c.var[0]))
        .collect();
    log_sum_exp(&terms)
}

/// Shannon entropy in nats with `0 log 0 = 0`.
pub fn entropy_discrete(p: &CategoricalParams) -> f64 {
    -p.probs
        .iter()
        .filter(|&&pk| pk > 0.0)
        .map(|pk| pk * pk.ln())
        .sum::<f64>()
}
