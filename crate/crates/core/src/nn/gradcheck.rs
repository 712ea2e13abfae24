use super::matrix::Matrix;
use super::network::{backward, forward, Network};
use crate::error::Result;

/// `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| relative_error(*a, *b))
        .fold(0.0, f64::max)
}

/// Central differences `(f(θ + h) − f(θ − h)) / 2h` over every parameter.
pub fn numeric_gradient(
    net: &Network,
    h: f64,
    mut loss: impl FnMut(&Network) -> Result<f64>,
) -> Result<Vec<f64>> {
    let mut probe = net.clone();
    let mut out = Vec::with_capacity(net.num_params());
    for i in 0..net.num_params() {
        let orig = probe.param(i);
        probe.set_param(i, orig + h);
        let up = loss(&probe)?;
        probe.set_param(i, orig - h);
        let down = loss(&probe)?;
        probe.set_param(i, orig);
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Worst relative disagreement between backprop and central differences.
///
/// `loss_fn` maps the network output to a scalar loss and its gradient with
/// respect to that output.
pub fn finite_diff_check(
    net: &Network,
    loss_fn: impl Fn(&Matrix) -> (f64, Matrix),
    batch: &Matrix,
    h: f64,
) -> Result<f64> {
    assert!(h > 0.0, "finite-difference step must be positive");
    let acts = forward(net, batch)?;
    let (_, upstream) = loss_fn(acts.output());
    let analytic = backward(net, &acts, &upstream)?.grads.flat();
    let numeric = numeric_gradient(net, h, |n| Ok(loss_fn(&n.predict(batch)?).0))?;
    Ok(max_relative_error(&analytic, &numeric))
}
