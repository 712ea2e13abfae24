//! Variational autoencoders trained with the reparameterized SGVB estimator,
//! including the β-weighted and capacity-hinged objectives.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;

use crate::nn::{
    adam_step, backward, expect_tag, forward, max_relative_error, next_line, numeric_gradient,
    parse, read_network, sigmoid, softplus, write_network, Activation, AdamConfig, AdamState,
    Grads, Matrix, Network,
};
use crate::trace::RunTrace;
use crate::{Error, Result, Rng};

/// `log σ²` produced by the encoder is clamped to `±LOGVAR_CLAMP`.
pub const LOGVAR_CLAMP: f64 = 10.0;

const VAE_MAGIC: &str = "varinfer-vae";
const VAE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LikelihoodKind {
    /// Independent Bernoulli pixels; the decoder emits logits.
    Bernoulli,
    /// `N(x; decoder(z), I)`.
    GaussianUnitVar,
}

impl fmt::Display for LikelihoodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LikelihoodKind::Bernoulli => "bernoulli",
            LikelihoodKind::GaussianUnitVar => "gaussian-unit-var",
        })
    }
}

impl FromStr for LikelihoodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bernoulli" => Ok(LikelihoodKind::Bernoulli),
            "gaussian-unit-var" | "gaussian" => Ok(LikelihoodKind::GaussianUnitVar),
            other => Err(Error::invalid(format!("unknown likelihood {other:?}"))),
        }
    }
}

impl LikelihoodKind {
    /// `log p(x | a)` summed over a row, with `a` the decoder output.
    pub fn log_likelihood(self, x: &[f64], a: &[f64]) -> f64 {
        match self {
            LikelihoodKind::Bernoulli => x.iter().zip(a).map(|(x, a)| x * a - softplus(*a)).sum(),
            LikelihoodKind::GaussianUnitVar => x
                .iter()
                .zip(a)
                .map(|(x, a)| -0.5 * (x - a) * (x - a) - 0.5 * (2.0 * PI).ln())
                .sum(),
        }
    }

    /// `∂ log p(x | a) / ∂a`.
    pub fn log_likelihood_grad(self, x: f64, a: f64) -> f64 {
        match self {
            LikelihoodKind::Bernoulli => x - sigmoid(a),
            LikelihoodKind::GaussianUnitVar => x - a,
        }
    }

    /// Maps decoder outputs to the mean of `p(x | z)`.
    pub fn mean(self, a: f64) -> f64 {
        match self {
            LikelihoodKind::Bernoulli => sigmoid(a),
            LikelihoodKind::GaussianUnitVar => a,
        }
    }
}

/// Encoder `x ↦ (μ, log σ²)` and decoder `z ↦ a`, where `a` parameterizes `p(x | z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel {
    pub encoder: Network,
    pub decoder: Network,
    latent_dim: usize,
    likelihood: LikelihoodKind,
}

impl VaeModel {
    /// The decoder's last layer must be linear so its outputs can serve as
    /// logits or means.
    pub fn new(encoder: Network, decoder: Network, likelihood: LikelihoodKind) -> Result<Self> {
        let latent_dim = decoder.input_dim();
        if encoder.output_dim() != 2 * latent_dim {
            return Err(Error::dims(2 * latent_dim, encoder.output_dim()));
        }
        if decoder.output_dim() != encoder.input_dim() {
            return Err(Error::dims(encoder.input_dim(), decoder.output_dim()));
        }
        if decoder.layers().last().map(|l| l.activation) != Some(Activation::Identity) {
            return Err(Error::invalid("decoder must end in an identity layer"));
        }
        Ok(VaeModel {
            encoder,
            decoder,
            latent_dim,
            likelihood,
        })
    }

    /// One tanh hidden layer on each side.
    pub fn init(
        rng: &mut Rng,
        data_dim: usize,
        latent_dim: usize,
        hidden: usize,
        likelihood: LikelihoodKind,
    ) -> Result<Self> {
        if latent_dim == 0 || hidden == 0 || data_dim == 0 {
            return Err(Error::invalid("dimensions must be positive"));
        }
        let encoder = Network::init(
            rng,
            data_dim,
            &[
                (hidden, Activation::Tanh),
                (2 * latent_dim, Activation::Identity),
            ],
        )?;
        let decoder = Network::init(
            rng,
            latent_dim,
            &[(hidden, Activation::Tanh), (data_dim, Activation::Identity)],
        )?;
        VaeModel::new(encoder, decoder, likelihood)
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn data_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn likelihood(&self) -> LikelihoodKind {
        self.likelihood
    }

    pub fn is_finite(&self) -> bool {
        self.encoder.is_finite() && self.decoder.is_finite()
    }
}

pub(crate) fn split_encoder_output(out: &Matrix, j: usize) -> (Matrix, Matrix) {
    let logvar = out
        .columns(j, 2 * j)
        .map(|v| v.clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP));
    (out.columns(0, j), logvar)
}

/// Splits the encoder output into `(μ, log σ²)`, clamping the latter.
pub fn encode(model: &VaeModel, x: &Matrix) -> Result<(Matrix, Matrix)> {
    let out = model.encoder.predict(x)?;
    Ok(split_encoder_output(&out, model.latent_dim))
}

/// Draws `ε ~ N(0, I)` row-major and returns `(μ + exp(½ log σ²) ⊙ ε, ε)`.
///
/// # Panics
/// If `mu` and `logvar` differ in shape.
pub fn reparameterize(rng: &mut Rng, mu: &Matrix, logvar: &Matrix) -> (Matrix, Matrix) {
    assert_eq!(mu.shape(), logvar.shape(), "mu and logvar shapes differ");
    let eps = standard_normal_matrix(rng, mu.rows(), mu.cols());
    (shift_scale(mu, logvar, &eps), eps)
}

pub fn standard_normal_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.standard_normal())
}

pub(crate) fn shift_scale(mu: &Matrix, logvar: &Matrix, eps: &Matrix) -> Matrix {
    let mut z = mu.clone();
    for ((z, lv), e) in z.data_mut().iter_mut().zip(logvar.data()).zip(eps.data()) {
        *z += (0.5 * lv).exp() * e;
    }
    z
}

/// `KL(N(μ, diag σ²) ‖ N(0, I))` for each row.
///
/// # Panics
/// If `mu` and `logvar` differ in shape.
pub fn kl_to_standard_normal(mu: &Matrix, logvar: &Matrix) -> Vec<f64> {
    assert_eq!(mu.shape(), logvar.shape(), "mu and logvar shapes differ");
    (0..mu.rows())
        .map(|r| {
            -0.5 * mu
                .row(r)
                .iter()
                .zip(logvar.row(r))
                .map(|(m, lv)| 1.0 + lv - m * m - lv.exp())
                .sum::<f64>()
        })
        .collect()
}

/// Weights of the per-point objective `(1/L) Σ log p(x | z_l) − β |KL − C|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VaeObjective {
    pub samples: usize,
    pub beta: f64,
    pub capacity: f64,
}

impl Default for VaeObjective {
    fn default() -> Self {
        VaeObjective {
            samples: 1,
            beta: 1.0,
            capacity: 0.0,
        }
    }
}

impl VaeObjective {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::invalid("samples per point must be at least 1"));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::invalid(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        if !(self.capacity >= 0.0) || !self.capacity.is_finite() {
            return Err(Error::invalid(format!(
                "capacity must be nonnegative, got {}",
                self.capacity
            )));
        }
        Ok(())
    }
}

/// Batch means of the objective's pieces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VaeLossParts {
    /// Mean of `(1/L) Σ log p(x | z_l)`.
    pub recon: f64,
    pub kl: f64,
    /// Mean of `recon − β |KL − C|`, the quantity training maximizes.
    pub total_elbo: f64,
    pub beta: f64,
    pub capacity: f64,
}

/// Loss parts and gradients of the negated objective, ready for descent.
#[derive(Debug, Clone)]
pub struct VaeGradients {
    pub parts: VaeLossParts,
    pub encoder: Grads,
    pub decoder: Grads,
}

pub(crate) fn hinge_sign(kl: f64, capacity: f64) -> f64 {
    if kl > capacity {
        1.0
    } else if kl < capacity {
        -1.0
    } else {
        0.0
    }
}

/// SGVB estimate and gradients, drawing `L` noise matrices of shape `B × J`.
pub fn sgvb_loss_and_grads(
    rng: &mut Rng,
    model: &VaeModel,
    x: &Matrix,
    objective: &VaeObjective,
) -> Result<VaeGradients> {
    let noise: Vec<Matrix> = (0..objective.samples)
        .map(|_| standard_normal_matrix(rng, x.rows(), model.latent_dim))
        .collect();
    sgvb_with_noise(model, x, &noise, objective)
}

/// As [`sgvb_loss_and_grads`] with caller-supplied noise, one matrix per sample.
/// Holding the noise fixed makes the loss a deterministic function of the
/// parameters.
pub fn sgvb_with_noise(
    model: &VaeModel,
    x: &Matrix,
    noise: &[Matrix],
    objective: &VaeObjective,
) -> Result<VaeGradients> {
    objective.validate()?;
    if noise.len() != objective.samples {
        return Err(Error::dims(objective.samples, noise.len()));
    }
    let (b, j) = (x.rows(), model.latent_dim);
    if b == 0 {
        return Err(Error::invalid("empty batch"));
    }
    if let Some(bad) = noise.iter().find(|e| e.shape() != (b, j)) {
        return Err(Error::dims(b * j, bad.rows() * bad.cols()));
    }
    let enc_acts = forward(&model.encoder, x)?;
    let raw = enc_acts.output();
    let (mu, logvar) = split_encoder_output(raw, j);
    let sigma = logvar.map(|lv| (0.5 * lv).exp());

    let inv_l = 1.0 / objective.samples as f64;
    let inv_b = 1.0 / b as f64;
    let mut recon_rows = vec![0.0; b];
    let mut dec_grads = Grads::zeros_like(&model.decoder);
    let mut d_mu = Matrix::zeros(b, j);
    let mut d_logvar = Matrix::zeros(b, j);
    for eps in noise {
        let z = shift_scale(&mu, &logvar, eps);
        let dec_acts = forward(&model.decoder, &z)?;
        let a = dec_acts.output();
        for (r, acc) in recon_rows.iter_mut().enumerate() {
            *acc += inv_l * model.likelihood.log_likelihood(x.row(r), a.row(r));
        }
        let kind = model.likelihood;
        let upstream = x.zip_map(a, |x, a| -inv_l * inv_b * kind.log_likelihood_grad(x, a))?;
        let back = backward(&model.decoder, &dec_acts, &upstream)?;
        dec_grads.add_assign(&back.grads)?;
        d_mu.add_assign(&back.input_grad)?;
        let through_sigma = back
            .input_grad
            .zip_map(&sigma.zip_map(eps, |s, e| 0.5 * s * e)?, |g, s| g * s)?;
        d_logvar.add_assign(&through_sigma)?;
    }

    let kl_rows = kl_to_standard_normal(&mu, &logvar);
    for r in 0..b {
        let w = objective.beta * hinge_sign(kl_rows[r], objective.capacity) * inv_b;
        for c in 0..j {
            d_mu.row_mut(r)[c] += w * mu.get(r, c);
            d_logvar.row_mut(r)[c] += w * 0.5 * (logvar.get(r, c).exp() - 1.0);
        }
    }
    // The clamp is flat outside its range.
    for r in 0..b {
        for c in 0..j {
            if raw.get(r, j + c).abs() > LOGVAR_CLAMP {
                d_logvar.set(r, c, 0.0);
            }
        }
    }
    let enc_back = backward(&model.encoder, &enc_acts, &d_mu.hcat(&d_logvar)?)?;

    let recon = recon_rows.iter().sum::<f64>() * inv_b;
    let kl = kl_rows.iter().sum::<f64>() * inv_b;
    let penalty = kl_rows
        .iter()
        .map(|k| (k - objective.capacity).abs())
        .sum::<f64>()
        * inv_b;
    let parts = VaeLossParts {
        recon,
        kl,
        total_elbo: recon - objective.beta * penalty,
        beta: objective.beta,
        capacity: objective.capacity,
    };
    for (term, v) in [("reconstruction", recon), ("kl", kl)] {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                term: term.into(),
                epoch: 0,
                batch: 0,
            });
        }
    }
    if !enc_back.grads.is_finite() || !dec_grads.is_finite() {
        return Err(Error::NonFinite {
            term: "gradient".into(),
            epoch: 0,
            batch: 0,
        });
    }
    Ok(VaeGradients {
        parts,
        encoder: enc_back.grads,
        decoder: dec_grads,
    })
}

/// Largest relative error between backpropagated and central-difference
/// gradients of the negated objective over every encoder and decoder
/// parameter, with the noise held fixed.
pub fn gradient_check(
    model: &VaeModel,
    x: &Matrix,
    noise: &[Matrix],
    objective: &VaeObjective,
    h: f64,
) -> Result<f64> {
    let g = sgvb_with_noise(model, x, noise, objective)?;
    let loss = |m: &VaeModel| sgvb_with_noise(m, x, noise, objective).map(|g| -g.parts.total_elbo);
    let enc = numeric_gradient(&model.encoder, h, |net| {
        loss(&VaeModel::new(
            net.clone(),
            model.decoder.clone(),
            model.likelihood,
        )?)
    })?;
    let dec = numeric_gradient(&model.decoder, h, |net| {
        loss(&VaeModel::new(
            model.encoder.clone(),
            net.clone(),
            model.likelihood,
        )?)
    })?;
    Ok(
        max_relative_error(&g.encoder.flat(), &enc)
            .max(max_relative_error(&g.decoder.flat(), &dec)),
    )
}

/// Loss parts over a whole dataset with noise drawn from a fresh generator
/// seeded with `seed`, so that different models can be compared on equal
/// footing.
pub fn evaluate_vae(
    model: &VaeModel,
    data: &Matrix,
    objective: &VaeObjective,
    seed: u64,
) -> Result<VaeLossParts> {
    let mut rng = Rng::new(seed);
    Ok(sgvb_loss_and_grads(&mut rng, model, data, objective)?.parts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VaeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub objective: VaeObjective,
    pub seed: u64,
    pub lr: f64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            epochs: 200,
            batch_size: 16,
            objective: VaeObjective::default(),
            seed: 42,
            lr: 5e-3,
        }
    }
}

fn at_batch(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::NonFinite { term, .. } => Error::NonFinite { term, epoch, batch },
        other => other,
    }
}

/// Adam on the negated objective. Each epoch visits a fresh seeded
/// permutation of the rows; the trace holds per-epoch means of `loss`
/// (the negated objective), `recon`, `kl` and `total_elbo`.
pub fn train_vae(
    mut model: VaeModel,
    data: &Matrix,
    config: &VaeConfig,
) -> Result<(VaeModel, RunTrace)> {
    let start = Instant::now();
    if data.rows() == 0 {
        return Err(Error::invalid("empty dataset"));
    }
    if data.cols() != model.data_dim() {
        return Err(Error::dims(model.data_dim(), data.cols()));
    }
    if config.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    config.objective.validate()?;
    let mut trace = RunTrace::new("vae", config.seed);
    trace.echo("epochs", config.epochs);
    trace.echo("batch_size", config.batch_size);
    trace.echo("samples", config.objective.samples);
    trace.echo("beta", config.objective.beta);
    trace.echo("capacity", config.objective.capacity);
    trace.echo("lr", config.lr);
    trace.echo("latent_dim", model.latent_dim);
    trace.echo("likelihood", model.likelihood);

    let adam = AdamConfig::with_lr(config.lr);
    let mut enc_opt = AdamState::new(&model.encoder, adam);
    let mut dec_opt = AdamState::new(&model.decoder, adam);
    let mut rng = Rng::new(config.seed);
    let mut order: Vec<usize> = (0..data.rows()).collect();
    let n = data.rows() as f64;
    for epoch in 1..=config.epochs {
        rng.shuffle(&mut order);
        let (mut recon, mut kl, mut total) = (0.0, 0.0, 0.0);
        for (bi, idx) in order.chunks(config.batch_size).enumerate() {
            let x = data.select_rows(idx);
            let g = sgvb_loss_and_grads(&mut rng, &model, &x, &config.objective)
                .map_err(|e| at_batch(e, epoch, bi))?;
            adam_step(&mut model.encoder, &g.encoder, &mut enc_opt)?;
            adam_step(&mut model.decoder, &g.decoder, &mut dec_opt)?;
            let w = idx.len() as f64 / n;
            recon += w * g.parts.recon;
            kl += w * g.parts.kl;
            total += w * g.parts.total_elbo;
        }
        trace.push(
            epoch,
            vec![
                ("loss".into(), -total),
                ("recon".into(), recon),
                ("kl".into(), kl),
                ("total_elbo".into(), total),
            ],
        )?;
    }
    trace.wall_time = start.elapsed();
    Ok((model, trace))
}

/// Means of `p(x | z)` at one reparameterized draw from `q(z | x)`.
pub fn reconstruct(model: &VaeModel, rng: &mut Rng, x: &Matrix) -> Result<Matrix> {
    let (mu, logvar) = encode(model, x)?;
    let (z, _) = reparameterize(rng, &mu, &logvar);
    decode_mean(model, &z)
}

/// Means of `p(x | z)` for `n` draws `z ~ N(0, I)`.
pub fn generate(model: &VaeModel, rng: &mut Rng, n: usize) -> Result<Matrix> {
    let z = standard_normal_matrix(rng, n, model.latent_dim);
    decode_mean(model, &z)
}

pub fn decode_mean(model: &VaeModel, z: &Matrix) -> Result<Matrix> {
    let kind = model.likelihood;
    Ok(model.decoder.predict(z)?.map(|a| kind.mean(a)))
}

/// Mean over rows of `−Σ x log p + (1 − x) log(1 − p)`, with `p` clamped away from 0 and 1.
pub fn binary_cross_entropy(x: &Matrix, p: &Matrix) -> Result<f64> {
    let ce = x.zip_map(p, |x, p| {
        let p = p.clamp(1e-12, 1.0 - 1e-12);
        -(x * p.ln() + (1.0 - x) * (1.0 - p).ln())
    })?;
    Ok(ce.sum() / x.rows().max(1) as f64)
}

/// The two 8×8 prototypes of [`two_pattern_dataset`]: horizontal and vertical stripes.
pub fn two_patterns() -> [Vec<f64>; 2] {
    let horizontal = (0..64).map(|i| ((i / 8) % 2 == 0) as u8 as f64).collect();
    let vertical = (0..64).map(|i| ((i % 8) % 2 == 0) as u8 as f64).collect();
    [horizontal, vertical]
}

/// `n` binary 8×8 images alternating between the two prototypes, each pixel
/// flipped independently with probability `flip`.
pub fn two_pattern_dataset(rng: &mut Rng, n: usize, flip: f64) -> Result<Matrix> {
    if !(0.0..=1.0).contains(&flip) {
        return Err(Error::invalid(format!(
            "flip probability {flip} outside [0, 1]"
        )));
    }
    let patterns = two_patterns();
    let mut data = Vec::with_capacity(n * 64);
    for i in 0..n {
        for &p in &patterns[i % 2] {
            data.push(if rng.uniform() < flip { 1.0 - p } else { p });
        }
    }
    Matrix::from_vec(n, 64, data)
}

/// Textual checkpoint: a header with the latent size and likelihood,
/// then the encoder and decoder in the network format.
pub fn vae_to_string(model: &VaeModel) -> String {
    let mut s = format!(
        "{VAE_MAGIC} {VAE_VERSION}\nlatent_dim {}\nlikelihood {}\nencoder\n",
        model.latent_dim, model.likelihood
    );
    write_network(&model.encoder, &mut s);
    s.push_str("decoder\n");
    write_network(&model.decoder, &mut s);
    s
}

pub fn vae_from_str(s: &str) -> Result<VaeModel> {
    let mut lines = s.lines();
    let header = expect_tag(next_line(&mut lines)?, VAE_MAGIC)?;
    let version: u32 = parse(header.first().copied(), "version")?;
    if version != VAE_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported vae version {version}"
        )));
    }
    let latent: usize = parse(
        expect_tag(next_line(&mut lines)?, "latent_dim")?
            .first()
            .copied(),
        "latent_dim",
    )?;
    let kind: LikelihoodKind = expect_tag(next_line(&mut lines)?, "likelihood")?
        .first()
        .ok_or_else(|| Error::Checkpoint("missing likelihood".into()))?
        .parse()
        .map_err(|e: Error| Error::Checkpoint(e.to_string()))?;
    expect_tag(next_line(&mut lines)?, "encoder")?;
    let encoder = read_network(&mut lines)?;
    expect_tag(next_line(&mut lines)?, "decoder")?;
    let decoder = read_network(&mut lines)?;
    let model =
        VaeModel::new(encoder, decoder, kind).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if model.latent_dim != latent {
        return Err(Error::Checkpoint(format!(
            "latent_dim {latent} disagrees with decoder input {}",
            model.latent_dim
        )));
    }
    Ok(model)
}

#[cfg(test)]
mod tests;
