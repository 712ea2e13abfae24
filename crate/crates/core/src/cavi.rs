//! Coordinate ascent variational inference for a Bayesian mixture of
//! univariate unit-variance Gaussians with a `N(0, σ²)` prior on the means.
//!
//! The variational family is mean-field: `q(μ_j) = N(m_j, s²_j)` for each
//! component and `q(c_i) = Categorical(φ_i)` for each point.

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::distributions::log_sum_exp;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Synthetic data drawn from the generative model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmDataset {
    pub x: Vec<f64>,
    pub true_means: Vec<f64>,
    pub true_assignments: Vec<usize>,
    pub sigma2: f64,
}

impl GmmDataset {
    pub fn k(&self) -> usize {
        self.true_means.len()
    }
}

/// Draws `μ_j ~ N(0, σ²)`, then exactly `n_per_component` points per
/// cluster in shuffled order, then `x_i ~ N(μ_{c_i}, 1)`.
pub fn generate_gmm(
    rng: &mut Rng,
    k: usize,
    n_per_component: usize,
    sigma2: f64,
) -> Result<GmmDataset> {
    if k == 0 || n_per_component == 0 {
        return Err(Error::invalid(
            "need K >= 1 and at least one point per component",
        ));
    }
    check_sigma2(sigma2)?;
    let sd = sigma2.sqrt();
    let true_means: Vec<f64> = (0..k).map(|_| sd * rng.standard_normal()).collect();
    let mut true_assignments: Vec<usize> = (0..k)
        .flat_map(|j| std::iter::repeat_n(j, n_per_component))
        .collect();
    rng.shuffle(&mut true_assignments);
    let x = true_assignments
        .iter()
        .map(|&c| true_means[c] + rng.standard_normal())
        .collect();
    Ok(GmmDataset {
        x,
        true_means,
        true_assignments,
        sigma2,
    })
}

fn check_sigma2(sigma2: f64) -> Result<()> {
    if !(sigma2 > 0.0) || sigma2.is_nan() {
        return Err(Error::invalid(format!(
            "prior variance must be > 0, got {sigma2}"
        )));
    }
    Ok(())
}

/// Mean-field factors. `phi` is `N × K`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalState {
    pub m: Vec<f64>,
    pub s2: Vec<f64>,
    pub phi: Vec<f64>,
}

impl VariationalState {
    pub fn k(&self) -> usize {
        self.m.len()
    }

    pub fn n(&self) -> usize {
        self.phi.len() / self.m.len().max(1)
    }

    pub fn phi_row(&self, i: usize) -> &[f64] {
        let k = self.k();
        &self.phi[i * k..(i + 1) * k]
    }

    /// Most probable component per point.
    pub fn hard_assignments(&self) -> Vec<usize> {
        (0..self.n())
            .map(|i| {
                self.phi_row(i)
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (j, &p)| {
                        if p > best.1 {
                            (j, p)
                        } else {
                            best
                        }
                    })
                    .0
            })
            .collect()
    }

    fn validate(&self, n: usize) -> Result<()> {
        let k = self.k();
        if k == 0 || self.s2.len() != k {
            return Err(Error::invalid("state needs matching, nonempty m and s2"));
        }
        if self.phi.len() != n * k {
            return Err(Error::dims(n * k, self.phi.len()));
        }
        if self.s2.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::invalid("factor variances must be > 0"));
        }
        Ok(())
    }
}

/// `φ_ij ∝ exp(−½(m_j² + s_j²) + x_i m_j)`, normalized per row in log space.
pub fn update_phi(x: &[f64], m: &[f64], s2: &[f64]) -> Vec<f64> {
    let k = m.len();
    let base: Vec<f64> = m.iter().zip(s2).map(|(m, s)| -0.5 * (m * m + s)).collect();
    let mut phi = Vec::with_capacity(x.len() * k);
    let mut logits = vec![0.0; k];
    for &xi in x {
        for j in 0..k {
            logits[j] = base[j] + xi * m[j];
        }
        let lse = log_sum_exp(&logits);
        phi.extend(logits.iter().map(|l| (l - lse).exp()));
    }
    phi
}

/// `m_j = Σ_i φ_ij x_i / (1/σ² + Σ_i φ_ij)`, `s²_j = 1 / (1/σ² + Σ_i φ_ij)`.
///
/// Sums run over points in index order, so results do not depend on any
/// parallel split.
pub fn update_means(x: &[f64], phi: &[f64], k: usize, sigma2: f64) -> (Vec<f64>, Vec<f64>) {
    let mut weight = vec![0.0; k];
    let mut weighted_x = vec![0.0; k];
    for (i, &xi) in x.iter().enumerate() {
        for j in 0..k {
            let p = phi[i * k + j];
            weight[j] += p;
            weighted_x[j] += p * xi;
        }
    }
    let precision0 = 1.0 / sigma2;
    let s2: Vec<f64> = weight.iter().map(|w| 1.0 / (precision0 + w)).collect();
    let m = weighted_x.iter().zip(&s2).map(|(wx, s)| wx * s).collect();
    (m, s2)
}

/// ELBO up to terms that depend on none of `m`, `s²`, `φ`:
///
/// ```text
/// Σ_j −(m_j² + s_j²)/(2σ²)
///   + Σ_ij φ_ij · −½(x_i² − 2 x_i m_j + m_j² + s_j²)
///   + ½ Σ_j log s_j²
///   − Σ_ij φ_ij log φ_ij
/// ```
pub fn elbo_gmm(x: &[f64], state: &VariationalState, sigma2: f64) -> f64 {
    let k = state.k();
    let prior: f64 = state
        .m
        .iter()
        .zip(&state.s2)
        .map(|(m, s)| -(m * m + s) / (2.0 * sigma2))
        .sum();
    let mut fit = 0.0;
    let mut entropy = 0.0;
    for (i, &xi) in x.iter().enumerate() {
        for j in 0..k {
            let p = state.phi[i * k + j];
            if p > 0.0 {
                let (m, s) = (state.m[j], state.s2[j]);
                fit += p * -0.5 * (xi * xi - 2.0 * xi * m + m * m + s);
                entropy -= p * p.ln();
            }
        }
    }
    let log_s: f64 = 0.5 * state.s2.iter().map(|s| s.ln()).sum::<f64>();
    prior + fit + log_s + entropy
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaviConfig {
    pub max_iters: usize,
    /// Absolute ELBO change below which the loop stops.
    pub tol: f64,
}

impl Default for CaviConfig {
    fn default() -> Self {
        CaviConfig {
            max_iters: 1000,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaviTrace {
    /// ELBO of the initial state, before any update.
    pub initial_elbo: f64,
    /// ELBO after each full sweep.
    pub elbo_per_iter: Vec<f64>,
    pub iterations_run: usize,
    pub converged: bool,
}

/// Initial factors: `m_j ~ U[min x, max x]`, `s²_j = 1`, and each `φ_i`
/// is `0.9 · uniform + 0.1 · Dirichlet(1, …, 1)`.
pub fn initial_state(rng: &mut Rng, x: &[f64], k: usize) -> VariationalState {
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let m = (0..k).map(|_| lo + (hi - lo) * rng.uniform()).collect();
    let s2 = vec![1.0; k];
    let mut phi = Vec::with_capacity(x.len() * k);
    let mut draw = vec![0.0; k];
    for _ in x {
        for d in draw.iter_mut() {
            *d = -rng.uniform_open().ln();
        }
        let total: f64 = draw.iter().sum();
        phi.extend(draw.iter().map(|d| 0.9 / k as f64 + 0.1 * d / total));
    }
    VariationalState { m, s2, phi }
}

/// Runs CAVI from a seeded initialization.
pub fn cavi_fit(
    x: &[f64],
    k: usize,
    sigma2: f64,
    config: CaviConfig,
    rng: &mut Rng,
) -> Result<(VariationalState, CaviTrace)> {
    if x.is_empty() || k == 0 {
        return Err(Error::invalid("need data and K >= 1"));
    }
    let init = initial_state(rng, x, k);
    cavi_from(x, init, sigma2, config)
}

/// Runs CAVI from a given state: each sweep sets every `φ_i`, then every
/// `(m_j, s²_j)`, then evaluates the ELBO. Stops once the ELBO moves by
/// less than `tol` (compared with the previous sweep, or with the initial
/// state on the first sweep) or after `max_iters` sweeps.
pub fn cavi_from(
    x: &[f64],
    mut state: VariationalState,
    sigma2: f64,
    config: CaviConfig,
) -> Result<(VariationalState, CaviTrace)> {
    check_sigma2(sigma2)?;
    if config.max_iters == 0 {
        return Err(Error::invalid("max_iters must be >= 1"));
    }
    if !(config.tol > 0.0) {
        return Err(Error::invalid("tol must be > 0"));
    }
    state.validate(x.len())?;
    let k = state.k();
    let initial_elbo = elbo_gmm(x, &state, sigma2);
    let mut prev = initial_elbo;
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..config.max_iters {
        state.phi = update_phi(x, &state.m, &state.s2);
        let (m, s2) = update_means(x, &state.phi, k, sigma2);
        state.m = m;
        state.s2 = s2;
        let elbo = elbo_gmm(x, &state, sigma2);
        trace.push(elbo);
        if (elbo - prev).abs() < config.tol {
            converged = true;
            break;
        }
        prev = elbo;
    }
    Ok((
        state,
        CaviTrace {
            initial_elbo,
            iterations_run: trace.len(),
            elbo_per_iter: trace,
            converged,
        },
    ))
}

/// Relabeling that best aligns estimated with true component means:
/// `perm[i]` is the true component matched to estimate `i`, minimizing
/// `Σ_i |est_i − true_{perm[i]}|` by brute force.
pub fn match_clusters(est_means: &[f64], true_means: &[f64]) -> Result<Vec<usize>> {
    let k = est_means.len();
    if true_means.len() != k {
        return Err(Error::dims(k, true_means.len()));
    }
    if k > 8 {
        return Err(Error::Unsupported(format!(
            "cluster matching is brute force and capped at K = 8, got {k}"
        )));
    }
    let cost = |perm: &[usize]| -> f64 {
        perm.iter()
            .enumerate()
            .map(|(i, &t)| (est_means[i] - true_means[t]).abs())
            .sum()
    };
    let mut best = (f64::INFINITY, (0..k).collect::<Vec<_>>());
    for perm in (0..k).permutations(k) {
        let c = cost(&perm);
        if c < best.0 {
            best = (c, perm);
        }
    }
    Ok(best.1)
}
