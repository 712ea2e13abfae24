//! Gauss–Legendre and Gauss–Hermite rules.

use std::f64::consts::PI;

/// Nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        let (_, d) = legendre(n, z);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Physicists' Gauss–Hermite rule: `∫ e^{-x²} f(x) dx ≈ Σ w_i f(x_i)`.
///
/// Roots start from the eigenvalues of the symmetric tridiagonal Jacobi
/// matrix and are polished by Newton on the orthonormal recurrence; weights
/// are `2 / p̃_n'(x)²`. Nodes come back in ascending order. Weights of the
/// outermost nodes of large rules underflow to zero.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let pim4 = PI.powf(-0.25);
    let mut diag = vec![0.0; n];
    let mut off: Vec<f64> = (1..n).map(|k| (k as f64 / 2.0).sqrt()).collect();
    off.push(0.0);
    tridiagonal_eigenvalues(&mut diag, &mut off);
    diag.sort_by(f64::total_cmp);

    let mut x = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    for &guess in &diag {
        let mut z = guess;
        for _ in 0..20 {
            let (p, d) = hermite_orthonormal(n, z, pim4);
            if !(d.is_finite() && d != 0.0) {
                break;
            }
            let dz = p / d;
            z -= dz;
            if dz.abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        let (_, d) = hermite_orthonormal(n, z, pim4);
        x.push(z);
        w.push(2.0 / (d * d));
    }
    // symmetrize to remove roundoff asymmetry
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let xm = 0.5 * (x[j] - x[i]);
        let wm = 0.5 * (w[i] + w[j]);
        x[i] = -xm;
        x[j] = xm;
        w[i] = wm;
        w[j] = wm;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

/// Implicit QL on a symmetric tridiagonal matrix. On return `diag` holds
/// the eigenvalues (unsorted); `off[i]` couples rows `i` and `i + 1`.
fn tridiagonal_eigenvalues(diag: &mut [f64], off: &mut [f64]) {
    let n = diag.len();
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = diag[m].abs() + diag[m + 1].abs();
                if off[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            assert!(iter < 200, "tridiagonal QL failed to converge");
            let mut g = (diag[l + 1] - diag[l]) / (2.0 * off[l]);
            let mut r = g.hypot(1.0);
            g = diag[m] - diag[l] + off[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut underflow = false;
            while i > l {
                i -= 1;
                let f = s * off[i];
                let b = c * off[i];
                r = f.hypot(g);
                off[i + 1] = r;
                if r == 0.0 {
                    diag[i + 1] -= p;
                    off[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = diag[i + 1] - p;
                r = (diag[i] - g) * s + 2.0 * c * b;
                p = s * r;
                diag[i + 1] = g + p;
                g = c * r - b;
            }
            if underflow {
                continue;
            }
            diag[l] -= p;
            off[l] = g;
            off[m] = 0.0;
        }
    }
}

/// Orthonormal Hermite recurrence: value of p̃_n and its derivative.
fn hermite_orthonormal(n: usize, z: f64, pim4: f64) -> (f64, f64) {
    let mut p1 = pim4;
    let mut p2 = 0.0;
    for j in 1..=n {
        let p3 = p2;
        p2 = p1;
        let jf = j as f64;
        p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
    }
    (p1, (2.0 * n as f64).sqrt() * p2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(10);
        let total: f64 = w.iter().sum();
        assert!((total - 2.0).abs() < 1e-14);
        let quartic: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(4)).sum();
        assert!((quartic - 0.4).abs() < 1e-14);
        let cos: f64 = x.iter().zip(&w).map(|(x, w)| w * x.cos()).sum();
        assert!((cos - 2.0 * 1f64.sin()).abs() < 1e-14);
    }

    #[test]
    fn hermite_small_rule_exact() {
        let (x, w) = gauss_hermite(3);
        let r = (1.5f64).sqrt();
        assert!((x[0] + r).abs() < 1e-14 && x[1].abs() < 1e-14 && (x[2] - r).abs() < 1e-14);
        let sp = PI.sqrt();
        assert!((w[1] - 2.0 * sp / 3.0).abs() < 1e-14);
    }

    #[test]
    fn hermite_512_moments() {
        let (x, w) = gauss_hermite(512);
        assert!(
            x.windows(2).all(|p| p[0] < p[1]),
            "nodes not strictly ascending"
        );
        let sp = PI.sqrt();
        let m0: f64 = w.iter().sum();
        let m2: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
        let m4: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(4)).sum();
        assert!((m0 - sp).abs() < 1e-12, "m0 {m0}");
        assert!((m2 - sp / 2.0).abs() < 1e-12, "m2 {m2}");
        assert!((m4 - 0.75 * sp).abs() < 1e-12, "m4 {m4}");
    }
}
