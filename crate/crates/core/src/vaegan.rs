//! VAE-GAN at toy scale: a VAE whose reconstruction error is measured in the
//! feature space of a GAN discriminator, trained as a three-player game.
//!
//! The updates follow the adversarial rules literally:
//! the discriminator descends `L_GAN`, the decoder descends `γ L_llike − L_GAN`
//! and the encoder descends `L_prior + L_llike`. Under these signs the
//! discriminator learns to output values near 1 for generated samples and
//! near 0 for data.

use std::f64::consts::PI;
use std::time::Instant;

use serde::Serialize;

use crate::nn::{
    adam_step, backward, backward_from, expect_tag, forward, max_relative_error, next_line,
    numeric_gradient, parse, read_network, write_network, Activation, Activations, AdamConfig,
    AdamState, Grads, Matrix, Network,
};
use crate::trace::RunTrace;
use crate::vae::{
    kl_to_standard_normal, shift_scale, split_encoder_output, standard_normal_matrix, LOGVAR_CLAMP,
};
use crate::{Error, Result, Rng};

/// Discriminator outputs are clamped to `[DIS_CLAMP, 1 − DIS_CLAMP]` before logs.
pub const DIS_CLAMP: f64 = 1e-7;

const VAEGAN_MAGIC: &str = "varinfer-vaegan";
const VAEGAN_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct VaeGanModel {
    pub encoder: Network,
    pub decoder: Network,
    pub discriminator: Network,
    feature_layer: usize,
}

impl VaeGanModel {
    /// `feature_layer` counts discriminator layers from 1 and must precede the output layer.
    pub fn new(
        encoder: Network,
        decoder: Network,
        discriminator: Network,
        feature_layer: usize,
    ) -> Result<Self> {
        let latent = decoder.input_dim();
        if encoder.output_dim() != 2 * latent {
            return Err(Error::dims(2 * latent, encoder.output_dim()));
        }
        if decoder.output_dim() != discriminator.input_dim() {
            return Err(Error::dims(discriminator.input_dim(), decoder.output_dim()));
        }
        if encoder.input_dim() != discriminator.input_dim() {
            return Err(Error::dims(discriminator.input_dim(), encoder.input_dim()));
        }
        let last = discriminator.layers().last().expect("network has layers");
        if last.output_dim() != 1 || last.activation != Activation::Sigmoid {
            return Err(Error::invalid(
                "discriminator must end in a single sigmoid unit",
            ));
        }
        check_feature_layer(&discriminator, feature_layer)?;
        Ok(VaeGanModel {
            encoder,
            decoder,
            discriminator,
            feature_layer,
        })
    }

    /// Tanh hidden layers throughout; the discriminator has two hidden
    /// layers and its features are taken from the second.
    pub fn init(rng: &mut Rng, data_dim: usize, latent_dim: usize, hidden: usize) -> Result<Self> {
        if data_dim == 0 || latent_dim == 0 || hidden == 0 {
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
        let discriminator = Network::init(
            rng,
            data_dim,
            &[
                (hidden, Activation::Tanh),
                (hidden, Activation::Tanh),
                (1, Activation::Sigmoid),
            ],
        )?;
        VaeGanModel::new(encoder, decoder, discriminator, 2)
    }

    pub fn feature_layer(&self) -> usize {
        self.feature_layer
    }

    pub fn latent_dim(&self) -> usize {
        self.decoder.input_dim()
    }

    pub fn data_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn is_finite(&self) -> bool {
        self.encoder.is_finite() && self.decoder.is_finite() && self.discriminator.is_finite()
    }
}

fn check_feature_layer(dis: &Network, l: usize) -> Result<()> {
    if l == 0 || l >= dis.depth() {
        return Err(Error::invalid(format!(
            "feature layer {l} outside 1..{}",
            dis.depth()
        )));
    }
    Ok(())
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(DIS_CLAMP, 1.0 - DIS_CLAMP)
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// `mean log D(x) + mean log(1 − D(x̃)) + mean log(1 − D(x_p))` with clamped probabilities.
pub fn gan_loss(dis_real: &[f64], dis_fake: &[f64], dis_prior_fake: &[f64]) -> f64 {
    mean(dis_real.iter().map(|p| clamp_prob(*p).ln()))
        + mean(dis_fake.iter().map(|p| (1.0 - clamp_prob(*p)).ln()))
        + mean(dis_prior_fake.iter().map(|p| (1.0 - clamp_prob(*p)).ln()))
}

/// Output of discriminator layer `l` (counted from 1).
pub fn dis_features(model: &VaeGanModel, x: &Matrix, l: usize) -> Result<Matrix> {
    check_feature_layer(&model.discriminator, l)?;
    let mut acts = forward(&model.discriminator, x)?;
    Ok(acts.post.swap_remove(l - 1))
}

/// Mean negative log-density of `features_real` under `N(features_recon, I)`.
pub fn llike_disl(features_real: &Matrix, features_recon: &Matrix) -> Result<f64> {
    if features_real.shape() != features_recon.shape() {
        return Err(Error::dims(
            features_real.data().len(),
            features_recon.data().len(),
        ));
    }
    let (b, d) = features_real.shape();
    if b == 0 {
        return Err(Error::invalid("empty batch"));
    }
    let sq: f64 = features_real
        .data()
        .iter()
        .zip(features_recon.data())
        .map(|(a, c)| (a - c) * (a - c))
        .sum();
    Ok(0.5 * sq / b as f64 + 0.5 * d as f64 * (2.0 * PI).ln())
}

/// Loss values of one step, evaluated before any parameter moves, plus mean
/// discriminator outputs on the three batches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VaeGanLossParts {
    pub l_prior: f64,
    pub l_llike: f64,
    pub l_gan: f64,
    pub gamma: f64,
    pub dis_real: f64,
    pub dis_recon: f64,
    pub dis_prior: f64,
}

/// Gradients of each player's objective, split so the decoder's two sources
/// can be inspected separately. The decoder descends
/// `gamma * dec_llike + dec_gan`.
#[derive(Debug, Clone)]
pub struct VaeGanGradients {
    pub parts: VaeGanLossParts,
    /// `∇_Enc (L_prior + L_llike)`.
    pub encoder: Grads,
    /// `∇_Dec L_llike`.
    pub dec_llike: Grads,
    /// `∇_Dec (−L_GAN)`.
    pub dec_gan: Grads,
    /// `∇_Dis L_GAN`.
    pub discriminator: Grads,
}

impl VaeGanGradients {
    pub fn decoder(&self) -> Result<Grads> {
        let mut g = self.dec_llike.clone().scaled(self.parts.gamma);
        g.add_assign(&self.dec_gan)?;
        Ok(g)
    }
}

fn dis_probs(acts: &Activations) -> Vec<f64> {
    acts.output().data().to_vec()
}

/// `∂ log(clamp p)/∂p`, zero where the clamp is active.
fn dlog(p: f64) -> f64 {
    if p < DIS_CLAMP || p > 1.0 - DIS_CLAMP {
        0.0
    } else {
        1.0 / p
    }
}

fn dlog1m(p: f64) -> f64 {
    if p < DIS_CLAMP || p > 1.0 - DIS_CLAMP {
        0.0
    } else {
        -1.0 / (1.0 - p)
    }
}

fn column(values: impl Iterator<Item = f64>) -> Matrix {
    let v: Vec<f64> = values.collect();
    Matrix::from_vec(v.len(), 1, v).expect("length matches")
}

fn non_finite(term: &str) -> Error {
    Error::NonFinite {
        term: term.into(),
        epoch: 0,
        batch: 0,
    }
}

/// Losses and gradients for a batch given the reparameterization noise
/// `eps` and prior draws `z_prior`, both `B × J`.
pub fn vaegan_gradients(
    model: &VaeGanModel,
    x: &Matrix,
    eps: &Matrix,
    z_prior: &Matrix,
    gamma: f64,
) -> Result<VaeGanGradients> {
    let (b, j) = (x.rows(), model.latent_dim());
    if b == 0 {
        return Err(Error::invalid("empty batch"));
    }
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::invalid(format!(
            "gamma must be nonnegative, got {gamma}"
        )));
    }
    for m in [eps, z_prior] {
        if m.shape() != (b, j) {
            return Err(Error::dims(b * j, m.data().len()));
        }
    }
    let inv_b = 1.0 / b as f64;
    let l = model.feature_layer;
    let (enc, dec, dis) = (&model.encoder, &model.decoder, &model.discriminator);

    let enc_acts = forward(enc, x)?;
    let raw = enc_acts.output();
    let (mu, logvar) = split_encoder_output(raw, j);
    let l_prior = kl_to_standard_normal(&mu, &logvar).iter().sum::<f64>() * inv_b;

    let z = shift_scale(&mu, &logvar, eps);
    let recon_acts = forward(dec, &z)?;
    let x_recon = recon_acts.output();

    let real_acts = forward(dis, x)?;
    let fake_acts = forward(dis, x_recon)?;
    let feat_real = &real_acts.post[l - 1];
    let feat_fake = &fake_acts.post[l - 1];
    let l_llike = llike_disl(feat_real, feat_fake)?;

    let prior_acts = forward(dec, z_prior)?;
    let x_prior = prior_acts.output();
    let prior_dis_acts = forward(dis, x_prior)?;

    let (p_real, p_fake, p_prior) = (
        dis_probs(&real_acts),
        dis_probs(&fake_acts),
        dis_probs(&prior_dis_acts),
    );
    let l_gan = gan_loss(&p_real, &p_fake, &p_prior);
    let parts = VaeGanLossParts {
        l_prior,
        l_llike,
        l_gan,
        gamma,
        dis_real: mean(p_real.iter().copied()),
        dis_recon: mean(p_fake.iter().copied()),
        dis_prior: mean(p_prior.iter().copied()),
    };
    for (term, v) in [("l_prior", l_prior), ("l_llike", l_llike), ("l_gan", l_gan)] {
        if !v.is_finite() {
            return Err(non_finite(term));
        }
    }

    // L_llike through the reconstruction branch only; the data features are constants.
    let d_feat = feat_fake.zip_map(feat_real, |f, r| (f - r) * inv_b)?;
    let llike_to_recon = backward_from(dis, &fake_acts, l, &d_feat)?.input_grad;
    let dec_llike_back = backward(dec, &recon_acts, &llike_to_recon)?;

    // −L_GAN seen by the decoder through both generated batches.
    let up_fake = column(p_fake.iter().map(|p| -dlog1m(*p) * inv_b));
    let up_prior = column(p_prior.iter().map(|p| -dlog1m(*p) * inv_b));
    let fake_back = backward(dis, &fake_acts, &up_fake)?;
    let prior_back = backward(dis, &prior_dis_acts, &up_prior)?;
    let mut dec_gan = backward(dec, &recon_acts, &fake_back.input_grad)?.grads;
    dec_gan.add_assign(&backward(dec, &prior_acts, &prior_back.input_grad)?.grads)?;

    // L_GAN seen by the discriminator: the previous passes carried −L_GAN on
    // the generated batches, so negate them.
    let up_real = column(p_real.iter().map(|p| dlog(*p) * inv_b));
    let mut dis_grads = backward(dis, &real_acts, &up_real)?.grads;
    dis_grads.add_assign(&fake_back.grads.scaled(-1.0))?;
    dis_grads.add_assign(&prior_back.grads.scaled(-1.0))?;

    // Encoder: L_llike via the reparameterized sample, plus the KL term.
    let dz = &dec_llike_back.input_grad;
    let sigma = logvar.map(|lv| (0.5 * lv).exp());
    let mut d_mu = dz.clone();
    let mut d_logvar = dz.zip_map(&sigma.zip_map(eps, |s, e| 0.5 * s * e)?, |g, s| g * s)?;
    for r in 0..b {
        for c in 0..j {
            d_mu.row_mut(r)[c] += inv_b * mu.get(r, c);
            let g = if raw.get(r, j + c).abs() > LOGVAR_CLAMP {
                0.0
            } else {
                d_logvar.get(r, c) + inv_b * 0.5 * (logvar.get(r, c).exp() - 1.0)
            };
            d_logvar.set(r, c, g);
        }
    }
    let enc_grads = backward(enc, &enc_acts, &d_mu.hcat(&d_logvar)?)?.grads;

    let grads = VaeGanGradients {
        parts,
        encoder: enc_grads,
        dec_llike: dec_llike_back.grads,
        dec_gan,
        discriminator: dis_grads,
    };
    for (term, g) in [
        ("encoder gradient", &grads.encoder),
        ("decoder gradient", &grads.dec_llike),
        ("decoder gradient", &grads.dec_gan),
        ("discriminator gradient", &grads.discriminator),
    ] {
        if !g.is_finite() {
            return Err(non_finite(term));
        }
    }
    Ok(grads)
}

/// Largest relative error between each player's backpropagated gradient
/// and central differences of its own objective, with the noise held fixed.
pub fn gradient_check(
    model: &VaeGanModel,
    x: &Matrix,
    eps: &Matrix,
    z_prior: &Matrix,
    gamma: f64,
    h: f64,
) -> Result<f64> {
    let g = vaegan_gradients(model, x, eps, z_prior, gamma)?;
    let parts = |m: &VaeGanModel| vaegan_gradients(m, x, eps, z_prior, gamma).map(|g| g.parts);
    let enc = numeric_gradient(&model.encoder, h, |net| {
        parts(&VaeGanModel {
            encoder: net.clone(),
            ..model.clone()
        })
        .map(|p| p.l_prior + p.l_llike)
    })?;
    let dec = numeric_gradient(&model.decoder, h, |net| {
        parts(&VaeGanModel {
            decoder: net.clone(),
            ..model.clone()
        })
        .map(|p| gamma * p.l_llike - p.l_gan)
    })?;
    let dis = numeric_gradient(&model.discriminator, h, |net| {
        parts(&VaeGanModel {
            discriminator: net.clone(),
            ..model.clone()
        })
        .map(|p| p.l_gan)
    })?;
    Ok([
        max_relative_error(&g.encoder.flat(), &enc),
        max_relative_error(&g.decoder()?.flat(), &dec),
        max_relative_error(&g.discriminator.flat(), &dis),
    ]
    .into_iter()
    .fold(0.0, f64::max))
}

/// One Adam state per player.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeGanOptimizers {
    pub encoder: AdamState,
    pub decoder: AdamState,
    pub discriminator: AdamState,
}

impl VaeGanOptimizers {
    pub fn new(model: &VaeGanModel, lrs: [f64; 3]) -> Self {
        VaeGanOptimizers {
            encoder: AdamState::new(&model.encoder, AdamConfig::with_lr(lrs[0])),
            decoder: AdamState::new(&model.decoder, AdamConfig::with_lr(lrs[1])),
            discriminator: AdamState::new(&model.discriminator, AdamConfig::with_lr(lrs[2])),
        }
    }
}

/// One pass of the training loop on a minibatch. Draws `ε` and then `Z_p`
/// (each `B × J`), evaluates every loss at the current parameters, then
/// applies the three Adam updates. Returns the pre-update loss parts.
pub fn vaegan_step(
    rng: &mut Rng,
    model: &mut VaeGanModel,
    x: &Matrix,
    gamma: f64,
    opts: &mut VaeGanOptimizers,
) -> Result<VaeGanLossParts> {
    let eps = standard_normal_matrix(rng, x.rows(), model.latent_dim());
    let z_prior = standard_normal_matrix(rng, x.rows(), model.latent_dim());
    let g = vaegan_gradients(model, x, &eps, &z_prior, gamma)?;
    adam_step(&mut model.encoder, &g.encoder, &mut opts.encoder)?;
    adam_step(&mut model.decoder, &g.decoder()?, &mut opts.decoder)?;
    adam_step(
        &mut model.discriminator,
        &g.discriminator,
        &mut opts.discriminator,
    )?;
    Ok(g.parts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VaeGanConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub seed: u64,
    /// Encoder, decoder and discriminator learning rates.
    pub lrs: [f64; 3],
}

impl Default for VaeGanConfig {
    fn default() -> Self {
        VaeGanConfig {
            epochs: 500,
            batch_size: 32,
            gamma: 1.0,
            seed: 42,
            lrs: [1e-3; 3],
        }
    }
}

/// Seeded minibatch loop of [`vaegan_step`]. The trace holds per-epoch means
/// of every loss part and of the discriminator outputs.
pub fn train_vaegan(
    mut model: VaeGanModel,
    data: &Matrix,
    config: &VaeGanConfig,
) -> Result<(VaeGanModel, RunTrace)> {
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
    let mut trace = RunTrace::new("vaegan", config.seed);
    trace.echo("epochs", config.epochs);
    trace.echo("batch_size", config.batch_size);
    trace.echo("gamma", config.gamma);
    trace.echo("lr_enc", config.lrs[0]);
    trace.echo("lr_dec", config.lrs[1]);
    trace.echo("lr_dis", config.lrs[2]);
    trace.echo("feature_layer", model.feature_layer);

    let mut opts = VaeGanOptimizers::new(&model, config.lrs);
    let mut rng = Rng::new(config.seed);
    let mut order: Vec<usize> = (0..data.rows()).collect();
    let n = data.rows() as f64;
    for epoch in 1..=config.epochs {
        rng.shuffle(&mut order);
        let mut acc = [0.0; 6];
        for (bi, idx) in order.chunks(config.batch_size).enumerate() {
            let x = data.select_rows(idx);
            let p = vaegan_step(&mut rng, &mut model, &x, config.gamma, &mut opts).map_err(
                |e| match e {
                    Error::NonFinite { term, .. } => Error::NonFinite {
                        term,
                        epoch,
                        batch: bi,
                    },
                    other => other,
                },
            )?;
            let w = idx.len() as f64 / n;
            for (a, v) in acc.iter_mut().zip([
                p.l_prior,
                p.l_llike,
                p.l_gan,
                p.dis_real,
                p.dis_recon,
                p.dis_prior,
            ]) {
                *a += w * v;
            }
        }
        let names = [
            "l_prior",
            "l_llike",
            "l_gan",
            "dis_real",
            "dis_recon",
            "dis_prior",
        ];
        trace.push(
            epoch,
            names.iter().map(|s| s.to_string()).zip(acc).collect(),
        )?;
    }
    trace.wall_time = start.elapsed();
    Ok((model, trace))
}

/// Decoder outputs for `n` prior draws.
pub fn generate_vaegan(model: &VaeGanModel, rng: &mut Rng, n: usize) -> Result<Matrix> {
    model
        .decoder
        .predict(&standard_normal_matrix(rng, n, model.latent_dim()))
}

/// Decoder outputs at one reparameterized draw from the encoder.
pub fn reconstruct_vaegan(model: &VaeGanModel, rng: &mut Rng, x: &Matrix) -> Result<Matrix> {
    let (mu, logvar) = split_encoder_output(&model.encoder.predict(x)?, model.latent_dim());
    let eps = standard_normal_matrix(rng, x.rows(), model.latent_dim());
    model.decoder.predict(&shift_scale(&mu, &logvar, &eps))
}

/// `n` points on two interleaved half circles with Gaussian jitter of
/// standard deviation `noise`, alternating between the two arcs.
pub fn two_moons(rng: &mut Rng, n: usize, noise: f64) -> Result<Matrix> {
    if !(noise >= 0.0) {
        return Err(Error::invalid(format!(
            "noise must be nonnegative, got {noise}"
        )));
    }
    let mut data = Vec::with_capacity(2 * n);
    for i in 0..n {
        let t = PI * rng.uniform();
        let (x, y) = if i % 2 == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        data.push(x + noise * rng.standard_normal());
        data.push(y + noise * rng.standard_normal());
    }
    Matrix::from_vec(n, 2, data)
}

/// Container checkpoint holding the three networks, `γ` and the feature layer.
pub fn vaegan_to_string(model: &VaeGanModel, gamma: f64) -> String {
    let mut s = format!(
        "{VAEGAN_MAGIC} {VAEGAN_VERSION}\ngamma {}\nfeature_layer {}\nencoder\n",
        crate::nn::fmt_f64(gamma),
        model.feature_layer
    );
    write_network(&model.encoder, &mut s);
    s.push_str("decoder\n");
    write_network(&model.decoder, &mut s);
    s.push_str("discriminator\n");
    write_network(&model.discriminator, &mut s);
    s
}

/// Inverse of [`vaegan_to_string`], returning the model and `γ`.
pub fn vaegan_from_str(s: &str) -> Result<(VaeGanModel, f64)> {
    let mut lines = s.lines();
    let header = expect_tag(next_line(&mut lines)?, VAEGAN_MAGIC)?;
    let version: u32 = parse(header.first().copied(), "version")?;
    if version != VAEGAN_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported vaegan version {version}"
        )));
    }
    let gamma: f64 = parse(
        expect_tag(next_line(&mut lines)?, "gamma")?
            .first()
            .copied(),
        "gamma",
    )?;
    let l: usize = parse(
        expect_tag(next_line(&mut lines)?, "feature_layer")?
            .first()
            .copied(),
        "feature_layer",
    )?;
    let mut nets = Vec::with_capacity(3);
    for tag in ["encoder", "decoder", "discriminator"] {
        expect_tag(next_line(&mut lines)?, tag)?;
        nets.push(read_network(&mut lines)?);
    }
    let dis = nets.pop().expect("three networks");
    let dec = nets.pop().expect("three networks");
    let enc = nets.pop().expect("three networks");
    let model = VaeGanModel::new(enc, dec, dis, l).map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok((model, gamma))
}
