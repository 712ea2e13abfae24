//! KL divergences and the two Gaussian projections of a mixture.
//!
//! The forward projection (minimizing `KL(p ‖ q)`) is moment matching and
//! covers every mode. The reverse projection (minimizing `KL(q ‖ p)`) is
//! fitted by gradient descent and locks onto a single mode.

use std::sync::OnceLock;

use crate::distributions::{
    gaussian_logpdf_unchecked, mixture_logpdf_1d, normal_logpdf, sample_gaussian,
    CategoricalParams, GaussianParams, MixtureParams,
};
use crate::error::{Error, Result};
use crate::oracle::KL_INFINITE;
use crate::quadrature::gauss_hermite;
use crate::rng::Rng;

/// Nodes in the Gauss–Hermite rule used for expectations under a Gaussian.
pub const HERMITE_NODES: usize = 512;

fn hermite_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_hermite(HERMITE_NODES))
}

/// `E_{N(mean, var)}[f(z)]` by Gauss–Hermite quadrature.
pub fn gaussian_expectation(mean: f64, var: f64, f: impl Fn(f64) -> f64) -> f64 {
    let (x, w) = hermite_rule();
    let scale = (2.0 * var).sqrt();
    let norm = std::f64::consts::PI.sqrt();
    x.iter()
        .zip(w)
        .filter(|(_, w)| **w > 0.0)
        .map(|(x, w)| w * f(mean + scale * x))
        .sum::<f64>()
        / norm
}

/// A KL value with its Monte Carlo standard error (zero when exact).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: usize,
}

impl KlEstimate {
    pub fn exact(value: f64) -> Self {
        KlEstimate {
            value,
            std_error: 0.0,
            n_samples: 0,
        }
    }

    pub fn is_exact(&self) -> bool {
        self.std_error == 0.0
    }
}

/// `Σ p log(p / q)` with `0 log 0 = 0`; [`KL_INFINITE`] if `p > 0 = q`.
pub fn kl_discrete(p: &CategoricalParams, q: &CategoricalParams) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::dims(p.len(), q.len()));
    }
    let mut kl = 0.0;
    for (&pi, &qi) in p.probs().iter().zip(q.probs()) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Ok(KL_INFINITE);
        }
        kl += pi * (pi / qi).ln();
    }
    Ok(kl.max(0.0))
}

/// Closed-form KL between diagonal Gaussians.
pub fn kl_gaussian(p: &GaussianParams, q: &GaussianParams) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::dims(p.dim(), q.dim()));
    }
    let kl: f64 = p
        .mean()
        .iter()
        .zip(p.var())
        .zip(q.mean().iter().zip(q.var()))
        .map(|((pm, pv), (qm, qv))| {
            0.5 * ((qv / pv).ln() + (pv + (pm - qm) * (pm - qm)) / qv - 1.0)
        })
        .sum();
    Ok(kl.max(0.0))
}

/// Monte Carlo estimate of `KL(q ‖ p) = E_q[log q − log p]` from `n` draws.
pub fn kl_reverse_mc(
    rng: &mut Rng,
    q: &GaussianParams,
    log_p: impl Fn(&[f64]) -> f64,
    n: usize,
) -> Result<KlEstimate> {
    if n < 2 {
        return Err(Error::invalid("need at least two samples"));
    }
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n {
        let z = sample_gaussian(rng, q);
        let lp = log_p(&z);
        if !lp.is_finite() {
            return Ok(KlEstimate {
                value: KL_INFINITE,
                std_error: 0.0,
                n_samples: n,
            });
        }
        let d = gaussian_logpdf_unchecked(&z, q.mean(), q.var()) - lp;
        sum += d;
        sum_sq += d * d;
    }
    let nf = n as f64;
    let mean = sum / nf;
    let var = ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0);
    Ok(KlEstimate {
        value: mean,
        std_error: (var / nf).sqrt(),
        n_samples: n,
    })
}

/// Forward-KL optimal Gaussian: matches the mixture's mean and variance.
pub fn m_projection(m: &MixtureParams) -> Result<GaussianParams> {
    if m.dim() != 1 {
        return Err(Error::dims(1, m.dim()));
    }
    let mean: f64 = m
        .weights()
        .iter()
        .zip(m.components())
        .map(|(w, c)| w * c.mean()[0])
        .sum();
    // central second moment avoids cancellation for large means
    let central: f64 = m
        .weights()
        .iter()
        .zip(m.components())
        .map(|(w, c)| w * (c.var()[0] + (c.mean()[0] - mean).powi(2)))
        .sum();
    GaussianParams::univariate(mean, central)
}

/// `KL(p ‖ q)` for a univariate mixture `p` and Gaussian `q`, integrating
/// each mixture component with Gauss–Hermite.
pub fn forward_kl_quadrature(p: &MixtureParams, q: &GaussianParams) -> Result<f64> {
    if p.dim() != 1 || q.dim() != 1 {
        return Err(Error::dims(1, p.dim().max(q.dim())));
    }
    let (qm, qv) = (q.mean()[0], q.var()[0]);
    let kl: f64 = p
        .weights()
        .iter()
        .zip(p.components())
        .map(|(w, c)| {
            w * gaussian_expectation(c.mean()[0], c.var()[0], |x| {
                mixture_logpdf_1d(x, p) - normal_logpdf(x, qm, qv)
            })
        })
        .sum();
    Ok(kl.max(0.0))
}

/// `KL(q ‖ p)` for a Gaussian `q` and univariate mixture `p` by quadrature
/// under `q`.
pub fn reverse_kl_quadrature(q: &GaussianParams, p: &MixtureParams) -> Result<f64> {
    if p.dim() != 1 || q.dim() != 1 {
        return Err(Error::dims(1, p.dim().max(q.dim())));
    }
    Ok(reverse_kl_and_grad(q.mean()[0], q.var()[0].ln(), p).0)
}

/// Objective and gradient in `(mean, log var)` of `KL(q ‖ p)`.
///
/// With `z = m + σ ε`, `∂/∂m = −E[g(z)]` and
/// `∂/∂log v = −½ − ½ σ E[g(z) ε]`, where `g = d log p / dz`.
fn reverse_kl_and_grad(mean: f64, log_var: f64, p: &MixtureParams) -> (f64, f64, f64) {
    let (x, w) = hermite_rule();
    let var = log_var.exp();
    let sd = var.sqrt();
    let sqrt2 = std::f64::consts::SQRT_2;
    let norm = std::f64::consts::PI.sqrt();
    let mut e_logp = 0.0;
    let mut e_g = 0.0;
    let mut e_g_eps = 0.0;
    for (xi, wi) in x.iter().zip(w) {
        if *wi == 0.0 {
            continue;
        }
        let eps = sqrt2 * xi;
        let z = mean + sd * eps;
        let (lp, g) = mixture_logpdf_and_score(z, p);
        e_logp += wi * lp;
        e_g += wi * g;
        e_g_eps += wi * g * eps;
    }
    e_logp /= norm;
    e_g /= norm;
    e_g_eps /= norm;
    let neg_entropy = -0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * var).ln();
    (neg_entropy - e_logp, -e_g, -0.5 - 0.5 * sd * e_g_eps)
}

fn mixture_logpdf_and_score(z: f64, p: &MixtureParams) -> (f64, f64) {
    let terms: Vec<(f64, f64)> = p
        .weights()
        .iter()
        .zip(p.components())
        .filter(|(w, _)| **w > 0.0)
        .map(|(w, c)| {
            let (m, v) = (c.mean()[0], c.var()[0]);
            (w.ln() + normal_logpdf(z, m, v), -(z - m) / v)
        })
        .collect();
    let max = terms.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    let mut score = 0.0;
    for (l, g) in &terms {
        let r = (l - max).exp();
        total += r;
        score += r * g;
    }
    (max + total.ln(), score / total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IProjectionConfig {
    pub steps: usize,
    pub step_size: f64,
}

impl Default for IProjectionConfig {
    fn default() -> Self {
        IProjectionConfig {
            steps: 2000,
            step_size: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IProjection {
    pub fit: GaussianParams,
    pub initial_kl: f64,
    pub final_kl: f64,
}

/// Reverse-KL Gaussian fit by gradient descent in `(mean, log var)`.
pub fn i_projection(
    m: &MixtureParams,
    init: &GaussianParams,
    config: IProjectionConfig,
) -> Result<IProjection> {
    if m.dim() != 1 || init.dim() != 1 {
        return Err(Error::dims(1, m.dim().max(init.dim())));
    }
    if config.steps == 0 {
        return Err(Error::invalid("i_projection needs at least one step"));
    }
    if !(config.step_size > 0.0 && config.step_size.is_finite()) {
        return Err(Error::invalid("step size must be positive"));
    }
    let mut mean = init.mean()[0];
    let mut log_var = init.var()[0].ln();
    let (initial_kl, _, _) = reverse_kl_and_grad(mean, log_var, m);
    for step in 0..config.steps {
        let (_, gm, gs) = reverse_kl_and_grad(mean, log_var, m);
        let next_mean = mean - config.step_size * gm;
        let next_log_var = log_var - config.step_size * gs;
        if !(next_mean.is_finite() && next_log_var.is_finite() && next_log_var.exp() > 0.0)
            || next_log_var.exp().is_infinite()
        {
            return Err(Error::Diverged {
                step,
                mean,
                var: log_var.exp(),
            });
        }
        mean = next_mean;
        log_var = next_log_var;
    }
    let (final_kl, _, _) = reverse_kl_and_grad(mean, log_var, m);
    if !final_kl.is_finite() {
        return Err(Error::Diverged {
            step: config.steps,
            mean,
            var: log_var.exp(),
        });
    }
    Ok(IProjection {
        fit: GaussianParams::univariate(mean, log_var.exp())?,
        initial_kl,
        final_kl,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{gaussian_logpdf, mixture_logpdf};
    use crate::quadrature::gauss_legendre;

    fn cat(v: Vec<f64>) -> CategoricalParams {
        CategoricalParams::new(v).unwrap()
    }

    fn g(m: f64, v: f64) -> GaussianParams {
        GaussianParams::univariate(m, v).unwrap()
    }

    fn bimodal() -> MixtureParams {
        MixtureParams::univariate(&[(0.5, -3.0, 1.0), (0.5, 3.0, 1.0)]).unwrap()
    }

    /// ∫ a(x) log(a(x)/b(x)) dx by Gauss–Legendre on `[lo, hi]`.
    fn kl_by_legendre(
        log_a: impl Fn(f64) -> f64,
        log_b: impl Fn(f64) -> f64,
        lo: f64,
        hi: f64,
    ) -> f64 {
        static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
        let (t, w) = RULE.get_or_init(|| gauss_legendre(2000));
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        t.iter()
            .zip(w)
            .map(|(t, w)| {
                let x = mid + half * t;
                let la = log_a(x);
                w * half * la.exp() * (la - log_b(x))
            })
            .sum()
    }

    #[test]
    fn discrete_examples() {
        assert_eq!(
            kl_discrete(&cat(vec![0.5, 0.5]), &cat(vec![0.5, 0.5])).unwrap(),
            0.0
        );
        let v = kl_discrete(&cat(vec![1.0, 0.0]), &cat(vec![0.5, 0.5])).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(
            kl_discrete(&cat(vec![0.5, 0.5]), &cat(vec![1.0, 0.0])).unwrap(),
            KL_INFINITE
        );
        assert!(matches!(
            kl_discrete(&cat(vec![1.0]), &cat(vec![0.5, 0.5])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn discrete_asymmetry_and_cross_entropy_form() {
        let p = cat(vec![0.8, 0.2]);
        let q = cat(vec![0.2, 0.8]);
        let pq = kl_discrete(&p, &q).unwrap();
        let qp = kl_discrete(&q, &p).unwrap();
        assert!(pq > 0.0 && qp > 0.0);
        let p = cat(vec![0.7, 0.2, 0.1]);
        let q = cat(vec![0.1, 0.3, 0.6]);
        assert!((kl_discrete(&p, &q).unwrap() - kl_discrete(&q, &p).unwrap()).abs() > 1e-3);
        let h = crate::distributions::entropy_discrete(&p);
        let cross: f64 = -p
            .probs()
            .iter()
            .zip(q.probs())
            .map(|(a, b)| a * b.ln())
            .sum::<f64>();
        assert!((kl_discrete(&p, &q).unwrap() - (cross - h)).abs() < 1e-14);
    }

    #[test]
    fn gaussian_examples_match_quadrature() {
        assert_eq!(kl_gaussian(&g(0.3, 2.0), &g(0.3, 2.0)).unwrap(), 0.0);
        let pairs = [
            (g(1.0, 1.0), g(0.0, 1.0)),
            (g(0.0, std::f64::consts::E), g(0.0, 1.0)),
            (g(-1.0, 0.3), g(2.0, 4.0)),
        ];
        for (p, q) in &pairs {
            let closed = kl_gaussian(p, q).unwrap();
            let (pm, pv) = (p.mean()[0], p.var()[0]);
            let quad = kl_by_legendre(
                |x| gaussian_logpdf(&[x], p).unwrap(),
                |x| gaussian_logpdf(&[x], q).unwrap(),
                pm - 20.0 * pv.sqrt(),
                pm + 20.0 * pv.sqrt(),
            );
            assert!((closed - quad).abs() < 1e-8, "{closed} vs {quad}");
        }
        assert!((kl_gaussian(&pairs[0].0, &pairs[0].1).unwrap() - 0.5).abs() < 1e-15);
        let e = std::f64::consts::E;
        assert!((kl_gaussian(&pairs[1].0, &pairs[1].1).unwrap() - 0.5 * (e - 2.0)).abs() < 1e-15);
        assert!(kl_gaussian(&g(0.0, 1.0), &GaussianParams::standard(2).unwrap()).is_err());
    }

    #[test]
    fn reverse_mc_examples() {
        let mut rng = Rng::new(31);
        let q = g(0.4, 2.0);
        let own = kl_reverse_mc(&mut rng, &q, |z| gaussian_logpdf(z, &q).unwrap(), 1000).unwrap();
        assert!(own.value.abs() <= 3.0 * own.std_error + 1e-15);

        let std = g(0.0, 1.0);
        let est = kl_reverse_mc(
            &mut rng,
            &g(1.0, 1.0),
            |z| gaussian_logpdf(z, &std).unwrap(),
            100_000,
        )
        .unwrap();
        assert!((est.value - 0.5).abs() < 3.0 * est.std_error, "{est:?}");

        let target = bimodal();
        let est = kl_reverse_mc(
            &mut rng,
            &std,
            |z| mixture_logpdf(z[0], &target).unwrap(),
            100_000,
        )
        .unwrap();
        let quad = kl_by_legendre(
            |x| normal_logpdf(x, 0.0, 1.0),
            |x| mixture_logpdf(x, &target).unwrap(),
            -20.0,
            20.0,
        );
        assert!(
            (est.value - quad).abs() < 3.0 * est.std_error,
            "{est:?} vs {quad}"
        );
        assert!((reverse_kl_quadrature(&std, &target).unwrap() - quad).abs() < 1e-9);
    }

    #[test]
    fn reverse_mc_errors_and_sentinel() {
        let mut rng = Rng::new(1);
        let q = g(0.0, 1.0);
        assert!(kl_reverse_mc(&mut rng, &q, |_| 0.0, 1).is_err());
        let est = kl_reverse_mc(
            &mut rng,
            &q,
            |z| if z[0] > 0.0 { f64::NEG_INFINITY } else { 0.0 },
            100,
        )
        .unwrap();
        assert_eq!(est.value, KL_INFINITE);
    }

    #[test]
    fn reverse_mc_standard_error_scales() {
        let target = bimodal();
        let q = g(0.5, 2.0);
        let se: Vec<f64> = [1_000usize, 10_000, 100_000]
            .iter()
            .map(|&n| {
                kl_reverse_mc(
                    &mut Rng::new(n as u64),
                    &q,
                    |z| mixture_logpdf(z[0], &target).unwrap(),
                    n,
                )
                .unwrap()
                .std_error
            })
            .collect();
        for pair in se.windows(2) {
            let ratio = pair[0] / pair[1];
            let ideal = 10f64.sqrt();
            assert!(ratio > ideal / 2.0 && ratio < ideal * 2.0, "{se:?}");
        }
    }

    /// Minimizes forward KL over a (mean, var) grid with Legendre quadrature.
    fn forward_grid_argmin(p: &MixtureParams, means: &[f64], vars: &[f64]) -> (f64, f64) {
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for &m in means {
            for &v in vars {
                let kl = kl_by_legendre(
                    |x| mixture_logpdf(x, p).unwrap(),
                    |x| normal_logpdf(x, m, v),
                    -25.0,
                    25.0,
                );
                if kl < best.0 {
                    best = (kl, m, v);
                }
            }
        }
        (best.1, best.2)
    }

    fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
        let n = ((hi - lo) / step).round() as usize;
        (0..=n).map(|i| lo + step * i as f64).collect()
    }

    #[test]
    fn m_projection_examples() {
        let single = MixtureParams::univariate(&[(1.0, 1.5, 0.7)]).unwrap();
        let fit = m_projection(&single).unwrap();
        assert!((fit.mean()[0] - 1.5).abs() < 1e-15 && (fit.var()[0] - 0.7).abs() < 1e-15);

        let fit = m_projection(&bimodal()).unwrap();
        assert!(fit.mean()[0].abs() < 1e-12);
        assert!((fit.var()[0] - 10.0).abs() < 1e-12);
        let (gm, gv) =
            forward_grid_argmin(&bimodal(), &grid(-0.5, 0.5, 0.25), &grid(9.0, 11.0, 0.1));
        assert!(
            gm.abs() < 1e-9 && (gv - 10.0).abs() < 1e-9,
            "grid optimum ({gm}, {gv})"
        );

        let nested = MixtureParams::univariate(&[(0.5, 0.0, 1.0), (0.5, 0.0, 4.0)]).unwrap();
        let fit = m_projection(&nested).unwrap();
        assert!(fit.mean()[0].abs() < 1e-15 && (fit.var()[0] - 2.5).abs() < 1e-15);
        let (gm, gv) = forward_grid_argmin(&nested, &grid(-0.5, 0.5, 0.25), &grid(2.0, 3.0, 0.05));
        assert!(
            gm.abs() < 1e-9 && (gv - 2.5).abs() < 1e-9,
            "grid optimum ({gm}, {gv})"
        );
    }

    #[test]
    fn forward_kl_quadrature_matches_legendre() {
        let p = bimodal();
        let q = g(0.5, 6.0);
        let ours = forward_kl_quadrature(&p, &q).unwrap();
        let reference = kl_by_legendre(
            |x| mixture_logpdf(x, &p).unwrap(),
            |x| normal_logpdf(x, 0.5, 6.0),
            -25.0,
            25.0,
        );
        assert!((ours - reference).abs() < 1e-9);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let p = MixtureParams::univariate(&[(0.3, -2.0, 0.5), (0.7, 1.5, 2.0)]).unwrap();
        for &(m, s) in &[(0.0, 0.0), (1.2, -0.7), (-2.5, 0.9)] {
            let (_, gm, gs) = reverse_kl_and_grad(m, s, &p);
            let h = 1e-5;
            let fd_m = (reverse_kl_and_grad(m + h, s, &p).0 - reverse_kl_and_grad(m - h, s, &p).0)
                / (2.0 * h);
            let fd_s = (reverse_kl_and_grad(m, s + h, &p).0 - reverse_kl_and_grad(m, s - h, &p).0)
                / (2.0 * h);
            assert!((gm - fd_m).abs() < 1e-7, "{gm} vs {fd_m}");
            assert!((gs - fd_s).abs() < 1e-7, "{gs} vs {fd_s}");
        }
    }

    #[test]
    fn i_projection_single_target() {
        let target = MixtureParams::univariate(&[(1.0, 1.0, 2.0)]).unwrap();
        let fit = i_projection(&target, &g(-1.0, 0.5), IProjectionConfig::default()).unwrap();
        assert!(fit.final_kl < 1e-6, "{fit:?}");
        assert!(fit.final_kl <= fit.initial_kl);
    }

    /// Reverse KL by Legendre over a (mean, log var) grid restricted to one
    /// half-plane of means.
    fn reverse_grid_argmin(p: &MixtureParams, positive: bool) -> (f64, f64) {
        let means = if positive {
            grid(0.5, 5.0, 0.05)
        } else {
            grid(-5.0, -0.5, 0.05)
        };
        let log_vars = grid(-1.5, 1.5, 0.02);
        let mut best = (f64::INFINITY, 0.0, 0.0);
        let (t, w) = gauss_legendre(200);
        for &m in &means {
            for &s in &log_vars {
                let v: f64 = s.exp();
                let half = 12.0 * v.sqrt();
                let kl: f64 = t
                    .iter()
                    .zip(&w)
                    .map(|(t, w)| {
                        let x = m + half * t;
                        let lq = normal_logpdf(x, m, v);
                        w * half * lq.exp() * (lq - mixture_logpdf(x, p).unwrap())
                    })
                    .sum();
                if kl < best.0 {
                    best = (kl, m, v);
                }
            }
        }
        (best.1, best.2)
    }

    #[test]
    fn i_projection_locks_onto_modes() {
        let target = bimodal();
        let (grid_m, grid_v) = reverse_grid_argmin(&target, true);
        assert!((grid_m - 3.0).abs() < 0.5 && grid_v < 2.0);

        let pos = i_projection(&target, &g(2.0, 1.0), IProjectionConfig::default()).unwrap();
        let neg = i_projection(&target, &g(-2.0, 1.0), IProjectionConfig::default()).unwrap();
        assert!(
            (pos.fit.mean()[0] - 3.0).abs() < 0.5 && pos.fit.var()[0] < 2.0,
            "{pos:?}"
        );
        assert!(
            (neg.fit.mean()[0] + 3.0).abs() < 0.5 && neg.fit.var()[0] < 2.0,
            "{neg:?}"
        );
        assert!((pos.fit.mean()[0] - grid_m).abs() < 0.05);
        assert!((pos.fit.var()[0] - grid_v).abs() < 0.05);
        assert!((pos.fit.mean()[0] + neg.fit.mean()[0]).abs() < 1e-9);
        assert!(pos.final_kl <= pos.initial_kl);

        let m = m_projection(&target).unwrap();
        assert!(m.mean()[0].abs() < 1e-9 && (m.var()[0] - 10.0).abs() < 1e-9);
    }

    #[test]
    fn i_projection_reports_divergence() {
        let target = bimodal();
        let err = i_projection(
            &target,
            &g(2.0, 1.0),
            IProjectionConfig {
                steps: 50,
                step_size: 1e6,
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err:?}");
    }
}
