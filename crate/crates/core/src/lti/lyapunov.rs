//! Continuous Lyapunov equation `A P + P A^T + Q = 0`.
//!
//! The production path reduces `A` to complex upper-triangular Schur form
//! (real Schur from nalgebra, then each 2x2 bump rotated away with a unitary
//! 2x2 transform) and back-substitutes. `solve_lyapunov_kronecker` is the
//! dense `(I (x) A + A (x) I) vec(P) = -vec(Q)` solve kept as an independent
//! reference.

use nalgebra::linalg::Schur;
use nalgebra::DVector;

use super::{to_complex, CMat, Mat, C64, DEFAULT_STABILITY_MARGIN};
use crate::error::{Error, Result};

const RESIDUAL_TOL: f64 = 1e-10;

/// Complex Schur factorization of a stable `A`, reusable for several
/// right-hand sides.
#[derive(Debug, Clone)]
pub struct LyapunovSolver {
    a: Mat,
    u: CMat,
    t: CMat,
}

impl LyapunovSolver {
    /// Fails with `lyapunov_unstable` unless every eigenvalue has real part
    /// below `-margin`.
    pub fn new(a: &Mat, margin: f64) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::dim(format!("Lyapunov: A is {}x{}", n, a.ncols())));
        }
        let (u, t) = complex_schur(a)?;
        let abscissa = (0..n).map(|i| t[(i, i)].re).fold(f64::NEG_INFINITY, f64::max);
        if n > 0 && abscissa >= -margin {
            return Err(Error::LyapunovUnstable { abscissa, margin });
        }
        Ok(Self { a: a.clone(), u, t })
    }

    /// Max real part of the eigenvalues read off the triangular factor.
    pub fn abscissa(&self) -> f64 {
        (0..self.t.nrows()).map(|i| self.t[(i, i)].re).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn solve(&self, q: &Mat) -> Result<Mat> {
        self.solve_scaled(q, |_| q.norm())
    }

    /// Like [`solve`](Self::solve), with the residual divided by
    /// `denominator(P)` instead of `|Q|`.
    fn solve_scaled(&self, q: &Mat, denominator: impl Fn(&Mat) -> f64) -> Result<Mat> {
        let n = self.a.nrows();
        if q.shape() != (n, n) {
            return Err(Error::dim(format!("Lyapunov: Q is {:?}, expected {n}x{n}", q.shape())));
        }
        if n == 0 {
            return Ok(Mat::zeros(0, 0));
        }
        if q.norm() == 0.0 {
            return Ok(Mat::zeros(n, n));
        }
        let mut p = self.solve_once(q);
        let mut residual = self.residual(&p, q) / denominator(&p);
        if residual > RESIDUAL_TOL {
            // one step of iterative refinement on the residual equation
            let r = &self.a * &p + &p * self.a.transpose() + q;
            let e = self.solve_once(&r);
            let refined = &p + e;
            let refined_res = self.residual(&refined, q) / denominator(&refined);
            if refined_res < residual {
                p = refined;
                residual = refined_res;
            }
        }
        if residual > RESIDUAL_TOL {
            return Err(Error::LyapunovResidual { residual, tolerance: RESIDUAL_TOL });
        }
        Ok(p)
    }

    fn residual(&self, p: &Mat, q: &Mat) -> f64 {
        (&self.a * p + p * self.a.transpose() + q).norm()
    }

    fn solve_once(&self, q: &Mat) -> Mat {
        let n = self.t.nrows();
        let f = self.u.adjoint() * to_complex(q) * &self.u;
        let t = &self.t;
        let mut y = CMat::zeros(n, n);
        for i in (0..n).rev() {
            for j in (0..n).rev() {
                let mut acc = -f[(i, j)];
                for k in (i + 1)..n {
                    acc -= t[(i, k)] * y[(k, j)];
                }
                for k in (j + 1)..n {
                    acc -= y[(i, k)] * t[(j, k)].conj();
                }
                y[(i, j)] = acc / (t[(i, i)] + t[(j, j)].conj());
            }
        }
        let p = &self.u * y * self.u.adjoint();
        let p = p.map(|z| z.re);
        (&p + p.transpose()) * 0.5
    }
}

/// Solves `A P + P A^T + Q = 0` for stable `A` and symmetric `Q`.
pub fn solve_lyapunov(a: &Mat, q: &Mat) -> Result<Mat> {
    LyapunovSolver::new(a, DEFAULT_STABILITY_MARGIN)?.solve(q)
}

/// Gramian `P` with `A P + P A^T + B B^T = 0`. Accepts a normwise backward
/// error `|R| / (2 |A| |P| + |Q|)` up to the residual tolerance, which a
/// lightly damped `A` can need where the `|Q|`-relative residual cannot
/// reach it.
pub fn gramian(a: &Mat, b: &Mat) -> Result<Mat> {
    let solver = LyapunovSolver::new(a, DEFAULT_STABILITY_MARGIN)?;
    let q = b * b.transpose();
    solver.solve_scaled(&q, |p| 2.0 * a.norm() * p.norm() + q.norm())
}

/// Dense Kronecker-product solve of `A P + P A^T + Q = 0`. `O(n^6)`; meant
/// for `n <= 30`.
pub fn solve_lyapunov_kronecker(a: &Mat, q: &Mat) -> Result<Mat> {
    let n = a.nrows();
    if a.ncols() != n || q.shape() != (n, n) {
        return Err(Error::dim("Kronecker Lyapunov: shape mismatch"));
    }
    let eye = Mat::identity(n, n);
    // column-major vec: vec(A P) = (I (x) A) vec(P), vec(P A^T) = (A (x) I) vec(P)
    let k = eye.kronecker(a) + a.kronecker(&eye);
    let rhs = DVector::from_iterator(n * n, q.iter().map(|x| -x));
    let sol = k.lu().solve(&rhs).ok_or(Error::LyapunovUnstable { abscissa: f64::NAN, margin: 0.0 })?;
    Ok(Mat::from_column_slice(n, n, sol.as_slice()))
}

/// `A = U T U^H` with `T` complex upper triangular.
pub(crate) fn complex_schur(a: &Mat) -> Result<(CMat, CMat)> {
    let n = a.nrows();
    if n == 0 {
        return Ok((CMat::zeros(0, 0), CMat::zeros(0, 0)));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("Schur input".into()));
    }
    let (q, t) =
        Schur::try_new(a.clone(), f64::EPSILON, 200 * n.max(10)).ok_or(Error::EigenNoConvergence { size: n })?.unpack();
    let mut u = to_complex(&q);
    let mut t = to_complex(&t);
    let mut k = 0;
    while k + 1 < n {
        let sub = t[(k + 1, k)].norm();
        let scale = t[(k, k)].norm() + t[(k + 1, k + 1)].norm();
        if sub <= f64::EPSILON * scale || sub == 0.0 {
            t[(k + 1, k)] = C64::new(0.0, 0.0);
            k += 1;
            continue;
        }
        let (a11, a12, a21, a22) = (t[(k, k)], t[(k, k + 1)], t[(k + 1, k)], t[(k + 1, k + 1)]);
        let half_tr = (a11 + a22) * 0.5;
        let disc = ((a11 - a22) * 0.5).powi(2) + a12 * a21;
        let lambda = half_tr + disc.sqrt();
        let mut x = [a12, lambda - a11];
        if x[0].norm() + x[1].norm() <= f64::EPSILON * scale {
            x = [lambda - a22, a21];
        }
        let nx = (x[0].norm_sqr() + x[1].norm_sqr()).sqrt();
        let (g1, g2) = (x[0] / nx, x[1] / nx);
        // unitary G = [[g1, -conj(g2)], [g2, conj(g1)]], first column is the eigenvector
        for col in 0..n {
            let (r0, r1) = (t[(k, col)], t[(k + 1, col)]);
            t[(k, col)] = g1.conj() * r0 + g2.conj() * r1;
            t[(k + 1, col)] = -g2 * r0 + g1 * r1;
        }
        for row in 0..n {
            let (c0, c1) = (t[(row, k)], t[(row, k + 1)]);
            t[(row, k)] = c0 * g1 + c1 * g2;
            t[(row, k + 1)] = -c0 * g2.conj() + c1 * g1.conj();
            let (u0, u1) = (u[(row, k)], u[(row, k + 1)]);
            u[(row, k)] = u0 * g1 + u1 * g2;
            u[(row, k + 1)] = -u0 * g2.conj() + u1 * g1.conj();
        }
        t[(k + 1, k)] = C64::new(0.0, 0.0);
        k += 2;
    }
    Ok((u, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn scalar() {
        let p = solve_lyapunov(&Mat::from_element(1, 1, -1.0), &Mat::from_element(1, 1, 2.0)).unwrap();
        assert_relative_eq!(p[(0, 0)], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn decoupled() {
        let a = Mat::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0]));
        let p = solve_lyapunov(&a, &Mat::identity(2, 2)).unwrap();
        assert_relative_eq!(p, Mat::from_diagonal(&DVector::from_vec(vec![0.5, 0.25])), epsilon = 1e-14);
    }

    #[test]
    fn companion_matches_kronecker() {
        let a = Mat::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -3.0]);
        let q = Mat::identity(2, 2);
        let p = solve_lyapunov(&a, &q).unwrap();
        let reference = solve_lyapunov_kronecker(&a, &q).unwrap();
        assert_relative_eq!(p, reference, epsilon = 1e-13);
        let residual = (&a * &p + &p * a.transpose() + &q).norm() / q.norm();
        assert!(residual <= 1e-10);
    }

    #[test]
    fn unstable_is_rejected() {
        let a = Mat::from_element(1, 1, 0.5);
        let err = solve_lyapunov(&a, &Mat::identity(1, 1)).unwrap_err();
        assert!(err.to_string().starts_with("lyapunov_unstable"));
    }

    #[test]
    fn complex_schur_reconstructs() {
        let a = Mat::from_row_slice(3, 3, &[-0.1, 2.0, 0.3, -2.0, -0.1, 0.5, 0.0, 0.4, -1.0]);
        let (u, t) = complex_schur(&a).unwrap();
        for i in 0..3 {
            for j in 0..i {
                assert_eq!(t[(i, j)], C64::new(0.0, 0.0));
            }
        }
        let back = &u * &t * u.adjoint();
        for (x, y) in back.iter().zip(a.iter()) {
            assert!((x.re - y).abs() < 1e-13 && x.im.abs() < 1e-13);
        }
    }
}
