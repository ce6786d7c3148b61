use nalgebra::linalg::{Hessenberg, SVD};

use super::{CMat, Mat, StateSpace, C64};
use crate::error::{Error, Result};

/// Evaluates `C (jw I - A)^{-1} B + D` repeatedly.
///
/// `A` is reduced once to upper Hessenberg form `H = Q^T A Q`, after which
/// each frequency costs `O(n^2)` per input column instead of a dense LU.
#[derive(Debug, Clone)]
pub struct FrequencyEvaluator {
    h: Mat,
    bq: Mat,
    cq: Mat,
    d: Mat,
    scale: f64,
}

impl FrequencyEvaluator {
    pub fn new(sys: &StateSpace) -> Self {
        let n = sys.order();
        if n <= 1 {
            return Self {
                h: sys.a.clone(),
                bq: sys.b.clone(),
                cq: sys.c.clone(),
                d: sys.d.clone(),
                scale: sys.a.amax().max(1.0),
            };
        }
        let (q, h) = Hessenberg::new(sys.a.clone()).unpack();
        Self { bq: q.transpose() * &sys.b, cq: &sys.c * &q, d: sys.d.clone(), scale: h.amax().max(1.0), h }
    }

    pub fn feedthrough(&self) -> &Mat {
        &self.d
    }

    /// Frequency response at `omega` (rad/s).
    pub fn response(&self, omega: f64) -> Result<CMat> {
        let n = self.h.nrows();
        let m = self.bq.ncols();
        let p = self.cq.nrows();
        let mut g = self.d.map(|x| C64::new(x, 0.0));
        if n == 0 {
            return Ok(g);
        }
        // Gaussian elimination on (jw I - H) with adjacent-row pivoting.
        let mut lhs: Vec<C64> = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                let diag = if i == j { C64::new(0.0, omega) } else { C64::new(0.0, 0.0) };
                lhs.push(diag - self.h[(i, j)]);
            }
        }
        let mut rhs: Vec<C64> = Vec::with_capacity(n * m);
        for i in 0..n {
            for j in 0..m {
                rhs.push(C64::new(self.bq[(i, j)], 0.0));
            }
        }
        let tiny = 1e-14 * (self.scale + omega.abs());
        for k in 0..n.saturating_sub(1) {
            let below = lhs[(k + 1) * n + k];
            if below.norm() > lhs[k * n + k].norm() {
                for j in k..n {
                    lhs.swap(k * n + j, (k + 1) * n + j);
                }
                for j in 0..m {
                    rhs.swap(k * m + j, (k + 1) * m + j);
                }
            }
            let pivot = lhs[k * n + k];
            if pivot.norm() <= tiny {
                return Err(Error::ResolventSingular { omega });
            }
            let factor = lhs[(k + 1) * n + k] / pivot;
            if factor.norm() != 0.0 {
                for j in k..n {
                    let v = lhs[k * n + j];
                    lhs[(k + 1) * n + j] -= factor * v;
                }
                for j in 0..m {
                    let v = rhs[k * m + j];
                    rhs[(k + 1) * m + j] -= factor * v;
                }
            }
        }
        if lhs[(n - 1) * n + (n - 1)].norm() <= tiny {
            return Err(Error::ResolventSingular { omega });
        }
        for i in (0..n).rev() {
            let inv = C64::new(1.0, 0.0) / lhs[i * n + i];
            for j in 0..m {
                let mut acc = rhs[i * m + j];
                for k in (i + 1)..n {
                    acc -= lhs[i * n + k] * rhs[k * m + j];
                }
                rhs[i * m + j] = acc * inv;
            }
        }
        for r in 0..p {
            for j in 0..m {
                let mut acc = C64::new(0.0, 0.0);
                for i in 0..n {
                    acc += rhs[i * m + j] * self.cq[(r, i)];
                }
                g[(r, j)] += acc;
            }
        }
        Ok(g)
    }

    pub fn sigma_max(&self, omega: f64) -> Result<f64> {
        Ok(sigma_max(&self.response(omega)?))
    }
}

/// `C (jw I - A)^{-1} B + D`.
pub fn freq_response(sys: &StateSpace, omega: f64) -> Result<CMat> {
    FrequencyEvaluator::new(sys).response(omega)
}

/// Largest singular value of a complex matrix.
pub fn sigma_max(g: &CMat) -> f64 {
    let (p, m) = g.shape();
    if p == 0 || m == 0 {
        return 0.0;
    }
    if p == 1 || m == 1 {
        return g.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    }
    SVD::new(g.clone(), false, false).singular_values[0]
}

/// Top singular triplet plus the second singular value (0 for rank-one
/// shapes).
#[derive(Debug, Clone)]
pub struct SingularPair {
    pub sigma: f64,
    pub second: f64,
    pub left: Vec<C64>,
    pub right: Vec<C64>,
}

pub fn top_singular_pair(g: &CMat) -> Result<SingularPair> {
    let (p, m) = g.shape();
    if p == 0 || m == 0 {
        return Err(Error::Svd("empty matrix".into()));
    }
    if p == 1 || m == 1 {
        let sigma = sigma_max(g);
        if sigma == 0.0 {
            let mut left = vec![C64::new(0.0, 0.0); p];
            let mut right = vec![C64::new(0.0, 0.0); m];
            left[0] = C64::new(1.0, 0.0);
            right[0] = C64::new(1.0, 0.0);
            return Ok(SingularPair { sigma, second: 0.0, left, right });
        }
        let (left, right) = if p == 1 {
            // g = sigma * u * v^H with u = 1, v = conj(g)^T / sigma
            (vec![C64::new(1.0, 0.0)], g.iter().map(|z| z.conj() / sigma).collect())
        } else {
            (g.iter().map(|z| z / sigma).collect(), vec![C64::new(1.0, 0.0)])
        };
        return Ok(SingularPair { sigma, second: 0.0, left, right });
    }
    let svd = SVD::try_new(g.clone(), true, true, f64::EPSILON, 1000)
        .ok_or_else(|| Error::Svd(format!("no convergence on a {p}x{m} matrix")))?;
    let u = svd.u.as_ref().ok_or_else(|| Error::Svd("missing U".into()))?;
    let v_t = svd.v_t.as_ref().ok_or_else(|| Error::Svd("missing V^H".into()))?;
    let sigma = svd.singular_values[0];
    let second = svd.singular_values.get(1).copied().unwrap_or(0.0);
    Ok(SingularPair {
        sigma,
        second,
        left: u.column(0).iter().copied().collect(),
        right: v_t.row(0).iter().map(|z| z.conj()).collect(),
    })
}
