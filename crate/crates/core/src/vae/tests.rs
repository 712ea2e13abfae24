use super::*;
use crate::distributions::{normal_logpdf, GaussianParams};
use crate::divergence::{kl_gaussian, kl_reverse_mc};
use crate::nn::{relative_error, Layer};
use crate::oracle::{conjugate_elbo, ConjugateModel};

fn linear(w: &[Vec<f64>], b: Vec<f64>) -> Network {
    Network::new(vec![Layer::new(
        Matrix::from_rows(w).unwrap(),
        b,
        Activation::Identity,
    )
    .unwrap()])
    .unwrap()
}

fn small_model(seed: u64, kind: LikelihoodKind) -> VaeModel {
    VaeModel::init(&mut Rng::new(seed), 5, 2, 6, kind).unwrap()
}

fn random_x(rng: &mut Rng, rows: usize, cols: usize, binary: bool) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        if binary {
            (rng.uniform() < 0.5) as u8 as f64
        } else {
            rng.standard_normal()
        }
    })
}

#[test]
fn zero_encoder_gives_standard_posterior() {
    let mut model = small_model(1, LikelihoodKind::Bernoulli);
    for layer in model.encoder.layers_mut() {
        layer.weights = layer.weights.map(|_| 0.0);
    }
    let x = random_x(&mut Rng::new(2), 3, 5, true);
    let (mu, logvar) = encode(&model, &x).unwrap();
    assert_eq!(mu.shape(), (3, 2));
    assert_eq!(logvar.shape(), (3, 2));
    assert!(mu.data().iter().chain(logvar.data()).all(|v| *v == 0.0));
    assert!(encode(&model, &Matrix::zeros(3, 4)).is_err());
}

#[test]
fn encode_splits_and_clamps() {
    let encoder = linear(
        &[vec![1.0, 2.0, 3.0, 40.0], vec![-1.0, 0.5, 0.25, 0.0]],
        vec![0.1, 0.0, -0.2, 0.0],
    );
    let decoder = linear(&[vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0]);
    let model = VaeModel::new(encoder, decoder, LikelihoodKind::GaussianUnitVar).unwrap();
    let x = Matrix::from_rows(&[vec![0.5, -2.0]]).unwrap();
    let (mu, logvar) = encode(&model, &x).unwrap();
    assert!((mu.get(0, 0) - (0.5 + 2.0 + 0.1)).abs() < 1e-12);
    assert!((mu.get(0, 1) - (1.0 - 1.0)).abs() < 1e-12);
    assert!((logvar.get(0, 0) - (1.5 - 0.5 - 0.2)).abs() < 1e-12);
    assert_eq!(logvar.get(0, 1), LOGVAR_CLAMP);
}

#[test]
fn model_rejects_incompatible_networks() {
    let mut rng = Rng::new(0);
    let enc = Network::init(&mut rng, 4, &[(3, Activation::Identity)]).unwrap();
    let dec = Network::init(&mut rng, 2, &[(4, Activation::Identity)]).unwrap();
    assert!(VaeModel::new(enc, dec.clone(), LikelihoodKind::Bernoulli).is_err());
    let enc = Network::init(&mut rng, 4, &[(4, Activation::Identity)]).unwrap();
    assert!(VaeModel::new(enc.clone(), dec, LikelihoodKind::Bernoulli).is_ok());
    let sig = Network::init(&mut rng, 2, &[(4, Activation::Sigmoid)]).unwrap();
    assert!(VaeModel::new(enc, sig, LikelihoodKind::Bernoulli).is_err());
}

#[test]
fn reparameterize_degenerate_and_standard() {
    let mut rng = Rng::new(5);
    let mu = Matrix::from_fn(4, 3, |r, c| r as f64 - c as f64);
    let (z, eps) = reparameterize(&mut rng, &mu, &Matrix::from_fn(4, 3, |_, _| -10.0));
    for ((z, m), e) in z.data().iter().zip(mu.data()).zip(eps.data()) {
        assert!((z - m).abs() <= 7e-3 * e.abs());
    }
    let zero = Matrix::zeros(4, 3);
    let (z, eps) = reparameterize(&mut rng, &zero, &zero);
    assert_eq!(z, eps);
    let (a, _) = reparameterize(&mut Rng::new(9), &mu, &zero);
    let (b, _) = reparameterize(&mut Rng::new(9), &mu, &zero);
    assert_eq!(a, b);
}

#[test]
fn reparameterization_path_gradients() {
    let eps = Matrix::from_rows(&[vec![0.7, -1.3]]).unwrap();
    let mu = Matrix::from_rows(&[vec![0.2, -0.4]]).unwrap();
    let lv = Matrix::from_rows(&[vec![0.3, -1.1]]).unwrap();
    let h = 1e-6;
    for c in 0..2 {
        let bump = |m: &Matrix, d: f64| {
            let mut m = m.clone();
            m.row_mut(0)[c] += d;
            m
        };
        let dz_dmu = (shift_scale(&bump(&mu, h), &lv, &eps).get(0, c)
            - shift_scale(&bump(&mu, -h), &lv, &eps).get(0, c))
            / (2.0 * h);
        assert!((dz_dmu - 1.0).abs() < 1e-5);
        let dz_dlv = (shift_scale(&mu, &bump(&lv, h), &eps).get(0, c)
            - shift_scale(&mu, &bump(&lv, -h), &eps).get(0, c))
            / (2.0 * h);
        let analytic = 0.5 * (0.5 * lv.get(0, c)).exp() * eps.get(0, c);
        assert!(relative_error(dz_dlv, analytic) < 1e-5);
    }
}

#[test]
fn closed_form_kl_examples() {
    let z = Matrix::zeros(1, 2);
    assert_eq!(kl_to_standard_normal(&z, &z), vec![0.0]);
    let mu = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
    assert!((kl_to_standard_normal(&mu, &z)[0] - 0.5).abs() < 1e-15);
    let lv = Matrix::from_rows(&[vec![4f64.ln()]]).unwrap();
    let kl = kl_to_standard_normal(&Matrix::zeros(1, 1), &lv)[0];
    assert!((kl - 0.5 * (4.0 - 1.0 - 4f64.ln())).abs() < 1e-15);
    assert!((kl - 0.8069).abs() < 1e-4);
    let q = GaussianParams::univariate(0.0, 4.0).unwrap();
    let est = kl_reverse_mc(
        &mut Rng::new(77),
        &q,
        |z| normal_logpdf(z[0], 0.0, 1.0),
        100_000,
    )
    .unwrap();
    assert!(
        (est.value - kl).abs() < 3.0 * est.std_error,
        "{} vs {kl} ± {}",
        est.value,
        est.std_error
    );
}

#[test]
fn closed_form_kl_matches_general_gaussian_kl() {
    let mut rng = Rng::new(31);
    for _ in 0..100 {
        let j = 1 + rng.below(4);
        let mu = Matrix::from_fn(1, j, |_, _| 3.0 * rng.standard_normal());
        let lv = Matrix::from_fn(1, j, |_, _| 8.0 * rng.uniform() - 4.0);
        let q = GaussianParams::new(
            mu.row(0).to_vec(),
            lv.row(0).iter().map(|v| v.exp()).collect(),
        )
        .unwrap();
        let general = kl_gaussian(&q, &GaussianParams::standard(j).unwrap()).unwrap();
        let closed = kl_to_standard_normal(&mu, &lv)[0];
        assert!((general - closed).abs() < 1e-12 * general.max(1.0));
    }
}

/// Decoder that ignores `z`, leaving only the KL term to shape the encoder.
fn kl_only_model(mu: f64, logvar: f64) -> VaeModel {
    let encoder = linear(&[vec![0.0, 0.0]], vec![mu, logvar]);
    let decoder = linear(&[vec![0.0]], vec![0.3]);
    VaeModel::new(encoder, decoder, LikelihoodKind::Bernoulli).unwrap()
}

#[test]
fn kl_gradient_matches_analytic_partials() {
    for (mu, lv) in [(0.7, -0.4), (-1.5, 1.2), (0.0, 0.0)] {
        let model = kl_only_model(mu, lv);
        let x = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let g =
            sgvb_loss_and_grads(&mut Rng::new(1), &model, &x, &VaeObjective::default()).unwrap();
        let bias = &g.encoder.layers[0].bias;
        assert!((bias[0] - mu).abs() < 1e-5);
        assert!((bias[1] - 0.5 * (lv.exp() - 1.0)).abs() < 1e-5);
    }
}

#[test]
fn capacity_hinge_flips_kl_gradient() {
    let model = kl_only_model(0.8, 0.5);
    let x = Matrix::from_rows(&[vec![0.0]]).unwrap();
    let vanilla =
        sgvb_loss_and_grads(&mut Rng::new(1), &model, &x, &VaeObjective::default()).unwrap();
    let hinge = VaeObjective {
        capacity: 5.0,
        ..VaeObjective::default()
    };
    let below = sgvb_loss_and_grads(&mut Rng::new(1), &model, &x, &hinge).unwrap();
    assert!(below.parts.kl < 5.0);
    for (a, b) in vanilla.encoder.layers[0]
        .bias
        .iter()
        .zip(&below.encoder.layers[0].bias)
    {
        assert!(a.abs() > 1e-3);
        assert_eq!(*a, -*b);
    }
    assert_eq!(
        below.parts.total_elbo,
        below.parts.recon - (5.0 - below.parts.kl)
    );
}

#[test]
fn vanilla_objective_is_recon_minus_kl() {
    let model = small_model(3, LikelihoodKind::Bernoulli);
    let x = random_x(&mut Rng::new(4), 6, 5, true);
    let p = sgvb_loss_and_grads(&mut Rng::new(5), &model, &x, &VaeObjective::default())
        .unwrap()
        .parts;
    assert!((p.total_elbo - (p.recon - p.kl)).abs() < 1e-12);
    let beta = VaeObjective {
        beta: 4.0,
        ..VaeObjective::default()
    };
    let p = sgvb_loss_and_grads(&mut Rng::new(5), &model, &x, &beta)
        .unwrap()
        .parts;
    assert!((p.total_elbo - (p.recon - 4.0 * p.kl)).abs() < 1e-12);
}

#[test]
fn full_model_gradients_match_finite_differences() {
    let mut rng = Rng::new(11);
    let cases = [
        (LikelihoodKind::Bernoulli, VaeObjective::default()),
        (LikelihoodKind::GaussianUnitVar, VaeObjective::default()),
        (
            LikelihoodKind::Bernoulli,
            VaeObjective {
                samples: 3,
                beta: 2.5,
                capacity: 0.4,
            },
        ),
    ];
    for (kind, objective) in cases {
        let model = VaeModel::init(&mut rng, 5, 2, 6, kind).unwrap();
        let x = random_x(&mut rng, 4, 5, kind == LikelihoodKind::Bernoulli);
        let noise: Vec<Matrix> = (0..objective.samples)
            .map(|_| standard_normal_matrix(&mut rng, 4, 2))
            .collect();
        let err = gradient_check(&model, &x, &noise, &objective, 1e-5).unwrap();
        assert!(err < 1e-4, "{kind}: {err}");
    }
}

#[test]
fn clamped_logvar_gets_no_gradient() {
    let encoder = linear(&[vec![0.0, 0.0]], vec![0.1, 30.0]);
    let decoder = linear(&[vec![0.5]], vec![0.0]);
    let model = VaeModel::new(encoder, decoder, LikelihoodKind::Bernoulli).unwrap();
    let x = Matrix::from_rows(&[vec![1.0]]).unwrap();
    let g = sgvb_loss_and_grads(&mut Rng::new(2), &model, &x, &VaeObjective::default()).unwrap();
    assert_eq!(g.encoder.layers[0].bias[1], 0.0);
    assert_ne!(g.encoder.layers[0].bias[0], 0.0);
}

#[test]
fn non_finite_loss_is_reported_with_position() {
    let mut model = small_model(6, LikelihoodKind::Bernoulli);
    model.decoder.layers_mut()[1].bias[0] = f64::NAN;
    let x = random_x(&mut Rng::new(1), 8, 5, true);
    match sgvb_loss_and_grads(&mut Rng::new(1), &model, &x, &VaeObjective::default()) {
        Err(Error::NonFinite { term, .. }) => assert_eq!(term, "reconstruction"),
        other => panic!("{other:?}"),
    }
    let config = VaeConfig {
        epochs: 2,
        batch_size: 4,
        ..VaeConfig::default()
    };
    assert!(matches!(
        train_vae(model, &x, &config),
        Err(Error::NonFinite {
            epoch: 1,
            batch: 0,
            ..
        })
    ));
}

#[test]
fn objective_validation() {
    let model = small_model(1, LikelihoodKind::Bernoulli);
    let x = random_x(&mut Rng::new(1), 2, 5, true);
    for bad in [
        VaeObjective {
            samples: 0,
            ..VaeObjective::default()
        },
        VaeObjective {
            beta: 0.0,
            ..VaeObjective::default()
        },
        VaeObjective {
            capacity: -1.0,
            ..VaeObjective::default()
        },
    ] {
        assert!(sgvb_loss_and_grads(&mut Rng::new(1), &model, &x, &bad).is_err());
    }
}

#[test]
fn gaussian_likelihood_is_normal_density() {
    let x = [0.3, -1.2];
    let a = [0.0, 0.5];
    let expected = normal_logpdf(0.3, 0.0, 1.0) + normal_logpdf(-1.2, 0.5, 1.0);
    assert!((LikelihoodKind::GaussianUnitVar.log_likelihood(&x, &a) - expected).abs() < 1e-14);
    let b = LikelihoodKind::Bernoulli.log_likelihood(&[1.0, 0.0], &[0.4, -0.7]);
    let expected = sigmoid(0.4).ln() + (1.0 - sigmoid(-0.7)).ln();
    assert!((b - expected).abs() < 1e-14);
}

/// `z ~ N(0, 1)`, `x_i | z ~ N(z, 1)`: the conjugate model with unit prior
/// variance, written as a linear encoder and decoder.
#[test]
fn sgvb_is_unbiased_on_linear_gaussian_model() {
    let data = [0.8, 1.9, 0.4];
    let (q_mean, q_logvar) = (0.6, -1.0);
    let encoder = linear(
        &[vec![0.0, 0.0], vec![0.0, 0.0], vec![0.0, 0.0]],
        vec![q_mean, q_logvar],
    );
    let decoder = linear(&[vec![1.0, 1.0, 1.0]], vec![0.0; 3]);
    let model = VaeModel::new(encoder, decoder, LikelihoodKind::GaussianUnitVar).unwrap();
    let q = GaussianParams::univariate(q_mean, q_logvar.exp()).unwrap();
    let exact = conjugate_elbo(&ConjugateModel::new(1.0).unwrap(), &data, &q).unwrap();

    let batches = 100;
    let x = Matrix::from_fn(1000, 3, |_, c| data[c]);
    let mut rng = Rng::new(2024);
    let means: Vec<f64> = (0..batches)
        .map(|_| {
            sgvb_loss_and_grads(&mut rng, &model, &x, &VaeObjective::default())
                .unwrap()
                .parts
                .total_elbo
        })
        .collect();
    let mean = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (batches - 1) as f64;
    let se = (var / batches as f64).sqrt();
    assert!((mean - exact).abs() < 3.0 * se, "{mean} vs {exact} ± {se}");
}

#[test]
fn zero_learning_rate_leaves_model() {
    let model = small_model(8, LikelihoodKind::Bernoulli);
    let x = random_x(&mut Rng::new(1), 20, 5, true);
    let config = VaeConfig {
        epochs: 3,
        batch_size: 6,
        lr: 0.0,
        ..VaeConfig::default()
    };
    let (trained, trace) = train_vae(model.clone(), &x, &config).unwrap();
    assert_eq!(trained, model);
    assert_eq!(trace.len(), 3);
}

#[test]
fn training_is_deterministic() {
    let x = random_x(&mut Rng::new(1), 20, 5, true);
    let config = VaeConfig {
        epochs: 4,
        batch_size: 7,
        ..VaeConfig::default()
    };
    let a = train_vae(small_model(8, LikelihoodKind::Bernoulli), &x, &config).unwrap();
    let b = train_vae(small_model(8, LikelihoodKind::Bernoulli), &x, &config).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
}

#[test]
fn training_on_two_patterns_improves_fit() {
    let data = two_pattern_dataset(&mut Rng::new(100), 200, 0.05).unwrap();
    let untrained = VaeModel::init(&mut Rng::new(7), 64, 2, 32, LikelihoodKind::Bernoulli).unwrap();
    let objective = VaeObjective::default();
    let before = -evaluate_vae(&untrained, &data, &objective, 999)
        .unwrap()
        .total_elbo;
    let (model, trace) = train_vae(untrained, &data, &VaeConfig::default()).unwrap();
    let after = -evaluate_vae(&model, &data, &objective, 999)
        .unwrap()
        .total_elbo;
    assert!(after <= 0.7 * before, "{after} vs {before}");

    let mut best = f64::INFINITY;
    let mut best_so_far = Vec::new();
    for loss in trace.column("loss") {
        best = best.min(loss);
        best_so_far.push(best);
    }
    assert!(best_so_far.windows(2).all(|w| w[1] <= w[0]));
    assert!(best_so_far.last().unwrap() < &trace.column("loss")[0]);

    let mut rng = Rng::new(5);
    let recon = reconstruct(&model, &mut rng, &data).unwrap();
    let prior = generate(&model, &mut rng, data.rows()).unwrap();
    assert!(
        binary_cross_entropy(&data, &recon).unwrap() < binary_cross_entropy(&data, &prior).unwrap()
    );
}

#[test]
fn bernoulli_means_stay_in_unit_interval() {
    let mut model = small_model(4, LikelihoodKind::Bernoulli);
    for layer in model.decoder.layers_mut() {
        layer.weights.scale(5.0);
    }
    let out = generate(&model, &mut Rng::new(3), 50).unwrap();
    assert!(out.data().iter().all(|p| *p > 0.0 && *p < 1.0));
    let x = random_x(&mut Rng::new(3), 10, 5, true);
    let r = reconstruct(&model, &mut Rng::new(3), &x).unwrap();
    assert!(r.data().iter().all(|p| *p > 0.0 && *p < 1.0));
    assert_eq!(
        generate(&model, &mut Rng::new(3), 5).unwrap(),
        generate(&model, &mut Rng::new(3), 5).unwrap()
    );
}

#[test]
fn two_pattern_dataset_shape() {
    let clean = two_pattern_dataset(&mut Rng::new(1), 6, 0.0).unwrap();
    let [h, v] = two_patterns();
    assert_eq!(clean.row(0), &h[..]);
    assert_eq!(clean.row(1), &v[..]);
    assert_eq!(clean.row(4), &h[..]);
    let noisy = two_pattern_dataset(&mut Rng::new(1), 400, 0.05).unwrap();
    let flips = (0..400)
        .map(|r| {
            noisy
                .row(r)
                .iter()
                .zip(two_patterns()[r % 2].iter())
                .filter(|(a, b)| a != b)
                .count()
        })
        .sum::<usize>() as f64
        / (400.0 * 64.0);
    assert!((flips - 0.05).abs() < 0.01);
    assert!(two_pattern_dataset(&mut Rng::new(1), 2, 1.5).is_err());
}

#[test]
fn checkpoint_roundtrip() {
    let model = small_model(12, LikelihoodKind::GaussianUnitVar);
    let text = vae_to_string(&model);
    assert!(
        text.starts_with("varinfer-vae 1\nlatent_dim 2\nlikelihood gaussian-unit-var\nencoder\n")
    );
    assert_eq!(vae_from_str(&text).unwrap(), model);
    assert!(vae_from_str(&text.replace("latent_dim 2", "latent_dim 3")).is_err());
    assert!(vae_from_str(&text.replace("varinfer-vae 1", "varinfer-vae 9")).is_err());
}
