//! Lanczos approximation of exp(−iτH)v for Hermitian H given only as a
//! matrix-vector product.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub trait HermitianOperator {
    fn dim(&self) -> usize;
    /// y = H x
    fn apply(&self, x: &[Complex64], y: &mut [Complex64]);
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

#[derive(Clone, Copy, Debug)]
pub struct KrylovOptions {
    /// Absolute error target relative to ‖v‖.
    pub tolerance: f64,
    pub max_dim: usize,
}

impl Default for KrylovOptions {
    fn default() -> Self {
        KrylovOptions {
            tolerance: 1e-12,
            max_dim: 48,
        }
    }
}

/// exp(−iT) e₁ for a real symmetric tridiagonal T.
fn small_expm_e1(alpha: &[f64], beta: &[f64], tau: f64) -> Vec<Complex64> {
    let m = alpha.len();
    let t = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j {
            beta[i]
        } else if j + 1 == i {
            beta[j]
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(t);
    (0..m)
        .map(|i| {
            (0..m)
                .map(|k| {
                    let u = eig.eigenvectors[(i, k)] * eig.eigenvectors[(0, k)];
                    Complex64::from_polar(u, -tau * eig.eigenvalues[k])
                })
                .sum()
        })
        .collect()
}

/// exp(−iτH) v. Fails when the Krylov space reaches `max_dim` without
/// meeting the tolerance; callers respond by shortening τ.
pub fn expmv(op: &dyn HermitianOperator, v: &[Complex64], tau: f64, options: &KrylovOptions) -> Result<Vec<Complex64>> {
    let n = op.dim();
    let beta0 = norm(v);
    if beta0 == 0.0 || tau == 0.0 {
        return Ok(v.to_vec());
    }
    let max_dim = options.max_dim.min(n).max(1);
    let mut basis: Vec<Vec<Complex64>> = vec![v.iter().map(|x| x / beta0).collect()];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut w = vec![Complex64::new(0.0, 0.0); n];
    loop {
        let j = basis.len() - 1;
        op.apply(&basis[j], &mut w);
        let a = dot(&basis[j], &w).re;
        alpha.push(a);
        // Full Gram-Schmidt, repeated once when cancellation is severe.
        let before = norm(&w);
        for q in &basis {
            let c = dot(q, &w);
            w.iter_mut().zip(q).for_each(|(wi, qi)| *wi -= c * qi);
        }
        let mut b = norm(&w);
        if b < 0.7 * before {
            for q in &basis {
                let c = dot(q, &w);
                w.iter_mut().zip(q).for_each(|(wi, qi)| *wi -= c * qi);
            }
            b = norm(&w);
        }
        let y = small_expm_e1(&alpha, &beta, tau);
        let scale = alpha.iter().map(|a| a.abs()).fold(0.0, f64::max).max(1.0);
        let invariant = b <= 1e-13 * scale;
        let err = b * y[j].norm();
        if invariant || err <= options.tolerance || basis.len() == n {
            let mut out = vec![Complex64::new(0.0, 0.0); n];
            for (q, &c) in basis.iter().zip(&y) {
                out.iter_mut().zip(q).for_each(|(o, qi)| *o += c * beta0 * qi);
            }
            return Ok(out);
        }
        if basis.len() >= max_dim {
            return Err(Error::Numerical(format!(
                "Krylov exponential unconverged at dimension {max_dim} (error estimate {err:.3e})"
            )));
        }
        beta.push(b);
        basis.push(w.iter().map(|x| x / b).collect());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Dense(DMatrix<Complex64>);

    impl HermitianOperator for Dense {
        fn dim(&self) -> usize {
            self.0.nrows()
        }
        fn apply(&self, x: &[Complex64], y: &mut [Complex64]) {
            for (i, yi) in y.iter_mut().enumerate() {
                *yi = (0..x.len()).map(|j| self.0[(i, j)] * x[j]).sum();
            }
        }
    }

    #[test]
    fn matches_dense_exponential() {
        let n = 30;
        let h = DMatrix::from_fn(n, n, |i, j| {
            let re = ((i * 7 + j * 3) % 11) as f64 * 0.1 + ((j * 7 + i * 3) % 11) as f64 * 0.1;
            let im = if i == j { 0.0 } else { (i as f64 - j as f64) * 0.05 };
            Complex64::new(re + if i == j { i as f64 } else { 0.0 }, im)
        });
        // Real symmetric part plus antisymmetric imaginary part is Hermitian.
        let v: Vec<Complex64> = (0..n)
            .map(|i| Complex64::new((i as f64).cos(), (i as f64 * 0.3).sin()))
            .collect();
        let tau = 0.3;
        let got = expmv(
            &Dense(h.clone()),
            &v,
            tau,
            &KrylovOptions {
                tolerance: 1e-13,
                max_dim: 30,
            },
        )
        .unwrap();
        // Reference through the eigendecomposition of the 2n real embedding.
        let re = h.map(|c| c.re);
        let im = h.map(|c| c.im);
        let mut big = DMatrix::<f64>::zeros(2 * n, 2 * n);
        big.view_mut((0, 0), (n, n)).copy_from(&re);
        big.view_mut((n, n), (n, n)).copy_from(&re);
        big.view_mut((0, n), (n, n)).copy_from(&(-&im));
        big.view_mut((n, 0), (n, n)).copy_from(&im);
        let eig = SymmetricEigen::new(big);
        let mut vr = nalgebra::DVector::<f64>::zeros(2 * n);
        for i in 0..n {
            vr[i] = v[i].re;
            vr[n + i] = v[i].im;
        }
        // exp(−iτH) acts as cos(τB) − J sin(τB) in the embedding, J the
        // complex structure.
        let c = &eig.eigenvectors
            * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| (tau * l).cos()))
            * eig.eigenvectors.transpose();
        let s = &eig.eigenvectors
            * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| (tau * l).sin()))
            * eig.eigenvectors.transpose();
        let cv = &c * &vr;
        let sv = &s * &vr;
        for i in 0..n {
            let expect = Complex64::new(cv[i] + sv[n + i], cv[n + i] - sv[i]);
            assert!((got[i] - expect).norm() < 1e-11, "{i}: {} vs {}", got[i], expect);
        }
        let nrm: f64 = got.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        let nv: f64 = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        assert!((nrm - nv).abs() < 1e-12);
    }

    #[test]
    fn reports_unconverged_space() {
        let n = 40;
        let h = DMatrix::from_fn(n, n, |i, j| {
            Complex64::new(if i == j { 100.0 * i as f64 } else { 1.0 }, 0.0)
        });
        let v = vec![Complex64::new(1.0, 0.0); n];
        let r = expmv(
            &Dense(h),
            &v,
            10.0,
            &KrylovOptions {
                tolerance: 1e-12,
                max_dim: 4,
            },
        );
        assert!(matches!(r, Err(Error::Numerical(_))));
    }
}
