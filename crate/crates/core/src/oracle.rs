//! Exact inference by enumeration and the closed-form conjugate Gaussian
//! evidence. These are the ground truths for ELBO and KL identities.

use crate::distributions::{normal_logpdf, CategoricalParams, GaussianParams};
use crate::error::{Error, Result};

/// Largest table the enumeration oracle accepts.
pub const MAX_ENUMERATION: usize = 1_000_000;

/// Value used for a KL divergence that is infinite because the first
/// argument puts mass where the second has none. It is produced explicitly,
/// never through overflow.
pub const KL_INFINITE: f64 = f64::INFINITY;

/// Tabulated joint `p(z, x)` over `|Z| × |X|` states, row-major in `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteJoint {
    n_z: usize,
    n_x: usize,
    table: Vec<f64>,
}

impl DiscreteJoint {
    pub fn new(n_z: usize, n_x: usize, table: Vec<f64>) -> Result<Self> {
        if n_z == 0 || n_x == 0 {
            return Err(Error::invalid("joint table must be nonempty"));
        }
        let size = n_z.checked_mul(n_x).ok_or(Error::TooLarge(usize::MAX))?;
        if size > MAX_ENUMERATION {
            return Err(Error::TooLarge(size));
        }
        if table.len() != size {
            return Err(Error::dims(size, table.len()));
        }
        if table.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
            return Err(Error::invalid("joint entries must be finite and >= 0"));
        }
        let total: f64 = table.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("joint sums to {total}, not 1")));
        }
        Ok(DiscreteJoint { n_z, n_x, table })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_x = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_x) {
            return Err(Error::invalid("ragged joint table"));
        }
        Self::new(rows.len(), n_x, rows.concat())
    }

    pub fn n_z(&self) -> usize {
        self.n_z
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn get(&self, z: usize, x: usize) -> f64 {
        self.table[z * self.n_x + x]
    }

    fn column(&self, x: usize) -> Result<Vec<f64>> {
        if x >= self.n_x {
            return Err(Error::invalid(format!(
                "observed index {x} out of range 0..{}",
                self.n_x
            )));
        }
        Ok((0..self.n_z).map(|z| self.get(z, x)).collect())
    }
}

/// Posterior `p(z | x)` and `log p(x)` by column normalization.
pub fn exact_posterior(j: &DiscreteJoint, x: usize) -> Result<(CategoricalParams, f64)> {
    let col = j.column(x)?;
    let evidence: f64 = col.iter().sum();
    if evidence <= 0.0 {
        return Err(Error::ZeroEvidence(x));
    }
    let post = CategoricalParams::from_weights(col)?;
    Ok((post, evidence.ln()))
}

/// The three sides of `ELBO(q) + KL(q ‖ p(·|x)) = log p(x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboKl {
    pub elbo: f64,
    pub kl: f64,
    pub log_evidence: f64,
}

/// Evaluates ELBO and KL by direct enumeration over `z`. If `q` puts mass on
/// a state with `p(z, x) = 0` the KL is [`KL_INFINITE`] and the ELBO `-inf`.
pub fn elbo_kl_identity(j: &DiscreteJoint, x: usize, q: &CategoricalParams) -> Result<ElboKl> {
    if q.len() != j.n_z() {
        return Err(Error::dims(j.n_z(), q.len()));
    }
    let (post, log_evidence) = exact_posterior(j, x)?;
    let mut elbo = 0.0;
    let mut kl = 0.0;
    for z in 0..j.n_z() {
        let qz = q.probs()[z];
        if qz == 0.0 {
            continue;
        }
        let pzx = j.get(z, x);
        if pzx == 0.0 {
            return Ok(ElboKl {
                elbo: f64::NEG_INFINITY,
                kl: KL_INFINITE,
                log_evidence,
            });
        }
        let lq = qz.ln();
        elbo += qz * (pzx.ln() - lq);
        kl += qz * (lq - post.probs()[z].ln());
    }
    Ok(ElboKl {
        elbo,
        kl: kl.max(0.0),
        log_evidence,
    })
}

/// `μ ~ N(0, σ²)`, `x_i | μ ~ N(μ, 1)`: the single-component mixture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConjugateModel {
    prior_var: f64,
}

impl ConjugateModel {
    pub const OBS_VAR: f64 = 1.0;

    pub fn new(prior_var: f64) -> Result<Self> {
        if !(prior_var > 0.0 && prior_var.is_finite()) {
            return Err(Error::invalid(format!(
                "prior variance must be > 0, got {prior_var}"
            )));
        }
        Ok(ConjugateModel { prior_var })
    }

    pub fn prior_var(&self) -> f64 {
        self.prior_var
    }

    /// Exact posterior `N(σ²Σx / (1 + Nσ²), σ² / (1 + Nσ²))`.
    pub fn posterior(&self, data: &[f64]) -> Result<GaussianParams> {
        check_data(data)?;
        let s2 = self.prior_var;
        let n = data.len() as f64;
        let sum: f64 = data.iter().sum();
        let denom = 1.0 + n * s2;
        GaussianParams::univariate(s2 * sum / denom, s2 / denom)
    }
}

fn check_data(data: &[f64]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::invalid("need at least one observation"));
    }
    Ok(())
}

/// `log p(x)` under the marginal `N(0, σ²J + I)`, via the rank-one
/// determinant and inverse identities.
pub fn conjugate_log_evidence(model: &ConjugateModel, data: &[f64]) -> Result<f64> {
    check_data(data)?;
    let s2 = model.prior_var;
    let n = data.len() as f64;
    let sum: f64 = data.iter().sum();
    let sum_sq: f64 = data.iter().map(|x| x * x).sum();
    let denom = 1.0 + n * s2;
    Ok(-0.5
        * (n * (2.0 * std::f64::consts::PI).ln() + denom.ln() + sum_sq - s2 * sum * sum / denom))
}

/// Closed-form `E_q[log p(μ, x)] − E_q[log q(μ)]` for scalar Gaussian `q`.
pub fn conjugate_elbo(model: &ConjugateModel, data: &[f64], q: &GaussianParams) -> Result<f64> {
    check_data(data)?;
    if q.dim() != 1 {
        return Err(Error::dims(1, q.dim()));
    }
    let (a, b) = (q.mean()[0], q.var()[0]);
    let s2 = model.prior_var;
    // E[log N(μ; 0, σ²)] with E[μ²] = a² + b
    let prior = normal_logpdf(0.0, 0.0, s2) - (a * a + b) / (2.0 * s2);
    // E[log N(x_i; μ, 1)] with E[(x_i − μ)²] = (x_i − a)² + b
    let lik: f64 = data
        .iter()
        .map(|x| normal_logpdf(0.0, 0.0, 1.0) - 0.5 * ((x - a) * (x - a) + b))
        .sum();
    let entropy = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * b).ln();
    Ok(prior + lik + entropy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::gaussian_logpdf;
    use crate::quadrature::gauss_legendre;
    use crate::rng::Rng;

    fn table() -> DiscreteJoint {
        DiscreteJoint::from_rows(&[vec![0.4, 0.1], vec![0.2, 0.3]]).unwrap()
    }

    #[test]
    fn posterior_examples() {
        let (post, le) = exact_posterior(&table(), 0).unwrap();
        assert!((post.probs()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((post.probs()[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!((le - 0.6f64.ln()).abs() < 1e-15);

        let prior = [0.2, 0.5, 0.3];
        let g = [0.1, 0.6, 0.3];
        let rows: Vec<Vec<f64>> = prior
            .iter()
            .map(|p| g.iter().map(|q| p * q).collect())
            .collect();
        let indep = DiscreteJoint::from_rows(&rows).unwrap();
        for x in 0..3 {
            let (post, _) = exact_posterior(&indep, x).unwrap();
            for (a, b) in post.probs().iter().zip(prior) {
                assert!((a - b).abs() < 1e-12);
            }
        }

        let diag = DiscreteJoint::from_rows(&[
            vec![0.5, 0.0, 0.0],
            vec![0.0, 0.3, 0.0],
            vec![0.0, 0.0, 0.2],
        ])
        .unwrap();
        for x in 0..3 {
            let (post, _) = exact_posterior(&diag, x).unwrap();
            for z in 0..3 {
                assert_eq!(post.probs()[z], if z == x { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn zero_mass_column_is_an_error() {
        let j = DiscreteJoint::from_rows(&[vec![0.5, 0.0], vec![0.5, 0.0]]).unwrap();
        assert_eq!(exact_posterior(&j, 1).unwrap_err(), Error::ZeroEvidence(1));
    }

    #[test]
    fn enumeration_cap() {
        let err = DiscreteJoint::new(1001, 1000, vec![]).unwrap_err();
        assert_eq!(err, Error::TooLarge(1_001_000));
    }

    #[test]
    fn identity_examples() {
        let j = table();
        let (post, le) = exact_posterior(&j, 0).unwrap();
        let r = elbo_kl_identity(&j, 0, &post).unwrap();
        assert!(r.kl.abs() < 1e-15);
        assert!((r.elbo - le).abs() < 1e-15);

        let half = CategoricalParams::uniform(2).unwrap();
        let r = elbo_kl_identity(&j, 0, &half).unwrap();
        // enumeration of both sides by hand
        let elbo = 0.5 * (0.4f64.ln() - 0.5f64.ln()) + 0.5 * (0.2f64.ln() - 0.5f64.ln());
        let kl = 0.5 * (0.5f64 / (2.0 / 3.0)).ln() + 0.5 * (0.5f64 / (1.0 / 3.0)).ln();
        assert!((r.elbo - elbo).abs() < 1e-15);
        assert!((r.kl - kl).abs() < 1e-15);
        assert!((r.elbo + r.kl - 0.6f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_forcing_sentinel() {
        let j = DiscreteJoint::from_rows(&[vec![0.6, 0.1], vec![0.0, 0.3]]).unwrap();
        let q = CategoricalParams::new(vec![0.0, 1.0]).unwrap();
        let r = elbo_kl_identity(&j, 0, &q).unwrap();
        assert_eq!(r.kl, KL_INFINITE);
        assert_eq!(r.elbo, f64::NEG_INFINITY);
        // q = 0 where p = 0 is fine
        let q = CategoricalParams::new(vec![1.0, 0.0]).unwrap();
        let r = elbo_kl_identity(&j, 0, &q).unwrap();
        assert!(r.kl.abs() < 1e-15);
    }

    fn random_joint(rng: &mut Rng) -> DiscreteJoint {
        let nz = 2 + rng.below(6);
        let nx = 1 + rng.below(6);
        let raw: Vec<f64> = (0..nz * nx).map(|_| rng.uniform_open()).collect();
        let t: f64 = raw.iter().sum();
        DiscreteJoint::new(nz, nx, raw.iter().map(|v| v / t).collect()).unwrap()
    }

    #[test]
    fn identity_and_gibbs_on_random_models() {
        let mut rng = Rng::new(77);
        for _ in 0..200 {
            let j = random_joint(&mut rng);
            let x = rng.below(j.n_x());
            let q =
                CategoricalParams::from_weights((0..j.n_z()).map(|_| rng.uniform_open()).collect())
                    .unwrap();
            let r = elbo_kl_identity(&j, x, &q).unwrap();
            assert!((r.elbo + r.kl - r.log_evidence).abs() < 1e-10);
            assert!(r.kl >= 0.0);
            assert!(r.elbo <= r.log_evidence + 1e-12);
            let (post, _) = exact_posterior(&j, x).unwrap();
            assert!(elbo_kl_identity(&j, x, &post).unwrap().kl < 1e-12);
        }
    }

    /// ∫ p(μ) Π p(x_i | μ) dμ by Gauss–Legendre over ±12 prior sd.
    fn evidence_by_quadrature(s2: f64, data: &[f64]) -> f64 {
        let (t, w) = gauss_legendre(400);
        let half = 12.0 * s2.sqrt();
        let total: f64 = t
            .iter()
            .zip(&w)
            .map(|(t, w)| {
                let mu = half * t;
                let lp = normal_logpdf(mu, 0.0, s2)
                    + data.iter().map(|x| normal_logpdf(*x, mu, 1.0)).sum::<f64>();
                w * half * lp.exp()
            })
            .sum();
        total.ln()
    }

    #[test]
    fn log_evidence_examples() {
        let m = ConjugateModel::new(1.0).unwrap();
        let v = conjugate_log_evidence(&m, &[0.0]).unwrap();
        assert!((v + 0.5 * (4.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
        assert!((v - -1.2655).abs() < 1e-4);

        let closed = conjugate_log_evidence(&m, &[1.0, -1.0]).unwrap();
        let quad = evidence_by_quadrature(1.0, &[1.0, -1.0]);
        assert!((closed - quad).abs() < 1e-8, "{closed} vs {quad}");

        let data = [0.3, -1.2, 2.2];
        let tiny = ConjugateModel::new(1e-14).unwrap();
        let direct: f64 = data
            .iter()
            .map(|x| gaussian_logpdf(&[*x], &GaussianParams::standard(1).unwrap()).unwrap())
            .sum();
        assert!((conjugate_log_evidence(&tiny, &data).unwrap() - direct).abs() < 1e-10);
    }

    #[test]
    fn log_evidence_matches_quadrature_on_random_data() {
        let mut rng = Rng::new(8);
        for _ in 0..10 {
            let s2 = 0.2 + 4.0 * rng.uniform();
            let data: Vec<f64> = (0..1 + rng.below(5))
                .map(|_| 2.0 * rng.standard_normal())
                .collect();
            let m = ConjugateModel::new(s2).unwrap();
            let closed = conjugate_log_evidence(&m, &data).unwrap();
            assert!((closed - evidence_by_quadrature(s2, &data)).abs() < 1e-8);
        }
    }

    #[test]
    fn conjugate_elbo_examples() {
        let m = ConjugateModel::new(1.0).unwrap();
        let q = GaussianParams::univariate(0.0, 0.5).unwrap();
        let e = conjugate_elbo(&m, &[0.0], &q).unwrap();
        assert!((e - conjugate_log_evidence(&m, &[0.0]).unwrap()).abs() < 1e-10);

        let m = ConjugateModel::new(2.5).unwrap();
        let data = [1.5, 0.2, 2.9, 1.1];
        let post = m.posterior(&data).unwrap();
        let le = conjugate_log_evidence(&m, &data).unwrap();
        let at_post = conjugate_elbo(&m, &data, &post).unwrap();
        assert!((at_post - le).abs() < 1e-10);
        let shifted = GaussianParams::univariate(post.mean()[0] + 1.0, post.var()[0]).unwrap();
        assert!(conjugate_elbo(&m, &data, &shifted).unwrap() < at_post);
    }

    #[test]
    fn conjugate_elbo_is_a_lower_bound() {
        let mut rng = Rng::new(4);
        let m = ConjugateModel::new(3.0).unwrap();
        let data: Vec<f64> = (0..6).map(|_| 1.0 + rng.standard_normal()).collect();
        let le = conjugate_log_evidence(&m, &data).unwrap();
        for _ in 0..200 {
            let q =
                GaussianParams::univariate(3.0 * rng.standard_normal(), 0.01 + 2.0 * rng.uniform())
                    .unwrap();
            assert!(conjugate_elbo(&m, &data, &q).unwrap() <= le);
        }
    }
}
