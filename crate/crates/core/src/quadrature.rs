//! Gaussian quadrature rules and the orthogonal-polynomial helpers the
//! envelope functions are built from.

use std::f64::consts::PI;

/// Nodes and weights of a quadrature rule.
#[derive(Clone, Debug)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    /// Maps a rule on [-1, 1] onto [a, b].
    pub fn mapped(&self, a: f64, b: f64) -> Rule {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (b + a);
        Rule {
            nodes: self.nodes.iter().map(|x| mid + half * x).collect(),
            weights: self.weights.iter().map(|w| half * w).collect(),
        }
    }

    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Gauss-Legendre rule with `n` points on [-1, 1].
pub fn gauss_legendre(n: usize) -> Rule {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    Rule { nodes, weights }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss-Hermite rule with `n` points for the weight `exp(-x²)`.
pub fn gauss_hermite(n: usize) -> Rule {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0;
    for i in 0..m {
        // Initial guesses for the largest roots first.
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[0],
            3 => 1.91 * z - 0.91 * nodes[1],
            _ => 2.0 * z - nodes[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            let (p, d) = hermite_normalized_with_derivative(n, z);
            pp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        let (_, d) = hermite_normalized_with_derivative(n, z);
        if d != 0.0 {
            pp = d;
        }
        nodes[i] = z;
        weights[i] = 2.0 / (pp * pp);
    }
    // Roots were found largest first; mirror into ascending order.
    let mut rule_nodes = vec![0.0; n];
    let mut rule_weights = vec![0.0; n];
    for i in 0..m {
        rule_nodes[n - 1 - i] = nodes[i];
        rule_nodes[i] = -nodes[i];
        rule_weights[n - 1 - i] = weights[i];
        rule_weights[i] = weights[i];
    }
    Rule {
        nodes: rule_nodes,
        weights: rule_weights,
    }
}

/// Orthonormal Hermite polynomial (w.r.t. `exp(-x²)`) of degree `n` and its
/// derivative.
fn hermite_normalized_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p1 = PI.powf(-0.25);
    let mut p2 = 0.0;
    for j in 1..=n {
        let jf = j as f64;
        let p3 = p2;
        p2 = p1;
        p1 = x * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
    }
    let d = (2.0 * n as f64).sqrt() * p2;
    (p1, d)
}

/// Values of the normalized 1-D oscillator eigenfunctions ψ₀..ψ_{n_max} at
/// the dimensionless coordinate `x` (lengths in units of the oscillator
/// length).
pub fn hermite_functions(n_max: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n_max + 1);
    let psi0 = PI.powf(-0.25) * (-0.5 * x * x).exp();
    out.push(psi0);
    if n_max >= 1 {
        out.push(2f64.sqrt() * x * psi0);
    }
    for n in 1..n_max {
        let nf = n as f64;
        let next = (2.0 / (nf + 1.0)).sqrt() * x * out[n] - (nf / (nf + 1.0)).sqrt() * out[n - 1];
        out.push(next);
    }
    out
}

/// Single normalized oscillator eigenfunction ψ_n at dimensionless `x`.
pub fn hermite_function(n: usize, x: f64) -> f64 {
    hermite_functions(n, x)[n]
}

/// Generalized Laguerre polynomial L_n^(α)(x).
pub fn laguerre(n: usize, alpha: f64, x: f64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let mut l0 = 1.0;
    let mut l1 = 1.0 + alpha - x;
    for k in 1..n {
        let kf = k as f64;
        let l2 = ((2.0 * kf + 1.0 + alpha - x) * l1 - (kf + alpha) * l0) / (kf + 1.0);
        l0 = l1;
        l1 = l2;
    }
    l1
}

/// n! as a float.
pub fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_integrates_polynomials_exactly() {
        let rule = gauss_legendre(7);
        // degree 13 is exact for 7 points
        let exact = 2.0 / 13.0;
        let got = rule.integrate(|x| x.powi(12));
        assert!((got - exact).abs() < 1e-14, "{got}");
        assert!(rule.integrate(|x| x.powi(13)).abs() < 1e-15);
        let mapped = rule.mapped(0.0, 3.0);
        assert!((mapped.integrate(|x| x * x) - 9.0).abs() < 1e-13);
    }

    #[test]
    fn hermite_rule_moments() {
        for n in [1, 2, 5, 20, 60] {
            let rule = gauss_hermite(n);
            let m0 = rule.integrate(|_| 1.0);
            assert!((m0 - PI.sqrt()).abs() < 1e-13, "n={n}: {m0}");
            if n >= 2 {
                let m2 = rule.integrate(|x| x * x);
                assert!((m2 - PI.sqrt() / 2.0).abs() < 1e-13, "n={n}");
            }
        }
        let rule = gauss_hermite(10);
        assert!(rule.nodes.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn hermite_functions_are_orthonormal() {
        let rule = gauss_hermite(30);
        for m in 0..6 {
            for n in 0..6 {
                // ψ_mψ_n = exp(-x²)·poly, so divide the weight out.
                let v = rule.integrate(|x| {
                    let h = hermite_functions(6, x);
                    h[m] * h[n] * (x * x).exp()
                });
                let expect = if m == n { 1.0 } else { 0.0 };
                assert!((v - expect).abs() < 1e-13, "{m} {n} {v}");
            }
        }
    }

    #[test]
    fn laguerre_low_orders() {
        let x = 0.7;
        assert_eq!(laguerre(0, 2.0, x), 1.0);
        assert!((laguerre(1, 2.0, x) - (3.0 - x)).abs() < 1e-15);
        let l2 = (x * x - 2.0 * (2.0 + 2.0) * x + (2.0 + 1.0) * (2.0 + 2.0)) / 2.0;
        assert!((laguerre(2, 2.0, x) - l2).abs() < 1e-14);
    }
}
