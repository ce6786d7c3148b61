//! Dense continuous-time LTI kernel.
//!
//! Systems are stored as real `(A, B, C, D)` quadruples. A system with zero
//! states is a static gain `D`. Everything here is a pure function of its
//! inputs; the values are `Send + Sync` and may be shared between workers.

mod freq;
mod lyapunov;
mod norms;

pub use freq::{freq_response, sigma_max, top_singular_pair, FrequencyEvaluator, SingularPair};
pub use lyapunov::{gramian, solve_lyapunov, solve_lyapunov_kronecker, LyapunovSolver};
pub use norms::{h2_norm, h2_norm_squared, hinf_norm, HinfNorm, DEFAULT_HINF_TOL};

use nalgebra::linalg::Schur;
use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type CMat = DMatrix<Complex<f64>>;
pub type C64 = Complex<f64>;

/// Closed-loop poles with real part above `-DEFAULT_STABILITY_MARGIN` are
/// not considered stable.
pub const DEFAULT_STABILITY_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub d: Mat,
}

impl StateSpace {
    pub fn new(a: Mat, b: Mat, c: Mat, d: Mat) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::dim(format!("A is {}x{}, expected square", n, a.ncols())));
        }
        if b.nrows() != n {
            return Err(Error::dim(format!("B has {} rows, A has {}", b.nrows(), n)));
        }
        if c.ncols() != n {
            return Err(Error::dim(format!("C has {} columns, A has {}", c.ncols(), n)));
        }
        if d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(Error::dim(format!("D is {}x{}, expected {}x{}", d.nrows(), d.ncols(), c.nrows(), b.ncols())));
        }
        for (name, m) in [("A", &a), ("B", &b), ("C", &c), ("D", &d)] {
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("{name} has a non-finite entry")));
            }
        }
        Ok(Self { a, b, c, d })
    }

    /// A memoryless system `y = D u`.
    pub fn static_gain(d: Mat) -> Self {
        let (p, m) = d.shape();
        Self { a: Mat::zeros(0, 0), b: Mat::zeros(0, m), c: Mat::zeros(p, 0), d }
    }

    pub fn identity(width: usize) -> Self {
        Self::static_gain(Mat::identity(width, width))
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    /// `c * G`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self { a: self.a.clone(), b: self.b.clone(), c: &self.c * factor, d: &self.d * factor }
    }

    /// Sub-system from inputs `cols` to outputs `rows` (same state vector).
    pub fn subsystem(&self, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Result<Self> {
        if rows.end > self.n_outputs() || cols.end > self.n_inputs() {
            return Err(Error::dim(format!(
                "channel slice {rows:?} x {cols:?} exceeds {}x{} ports",
                self.n_outputs(),
                self.n_inputs()
            )));
        }
        let n = self.order();
        Ok(Self {
            a: self.a.clone(),
            b: self.b.view((0, cols.start), (n, cols.len())).into_owned(),
            c: self.c.view((rows.start, 0), (rows.len(), n)).into_owned(),
            d: self.d.view((rows.start, cols.start), (rows.len(), cols.len())).into_owned(),
        })
    }

    pub fn spectrum(&self) -> Result<Spectrum> {
        spectral_abscissa(self)
    }

    pub fn is_stable(&self, margin: f64) -> Result<bool> {
        Ok(self.spectrum()?.is_stable(margin))
    }
}

/// Eigenvalues of the dynamics matrix together with their largest real part.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub eigenvalues: Vec<C64>,
    pub max_real_part: f64,
}

impl Spectrum {
    pub fn is_stable(&self, margin: f64) -> bool {
        self.max_real_part < -margin
    }
}

/// Eigenvalues of a real square matrix through a real Schur form.
pub fn eigenvalues(a: &Mat) -> Result<Vec<C64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::dim(format!("eigenvalues of a {}x{} matrix", n, a.ncols())));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("matrix with non-finite entries".into()));
    }
    let schur =
        Schur::try_new(a.clone(), f64::EPSILON, 200 * n.max(10)).ok_or(Error::EigenNoConvergence { size: n })?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

pub fn spectrum_of(a: &Mat) -> Result<Spectrum> {
    let eigenvalues = eigenvalues(a)?;
    let max_real_part = eigenvalues.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    Ok(Spectrum { eigenvalues, max_real_part })
}

/// Rightmost eigenvalue of `a` with right and left eigenvectors (`a v = l v`,
/// `w^H a = l w^H`), the vectors from inverse iteration.
pub fn rightmost_eigen(a: &Mat) -> Result<(C64, DVector<C64>, DVector<C64>)> {
    let n = a.nrows();
    let ev = eigenvalues(a)?;
    let l = *ev
        .iter()
        .max_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)))
        .ok_or_else(|| Error::dim("rightmost eigenvalue of an empty matrix"))?;
    let shift = l + C64::new(1e-10 * (1.0 + l.norm()), 0.0);
    let ac = to_complex(a);
    let iterate = |m: CMat| -> Result<DVector<C64>> {
        let lu = m.lu();
        let mut x = DVector::from_fn(n, |i, _| C64::new(1.0 + 0.1 * i as f64, 0.0));
        for _ in 0..3 {
            x = lu.solve(&x).ok_or_else(|| Error::NonFinite("inverse iteration".into()))?;
            let nrm = x.norm();
            if !(nrm.is_finite() && nrm > 0.0) {
                return Err(Error::NonFinite("inverse iteration".into()));
            }
            x /= C64::new(nrm, 0.0);
        }
        Ok(x)
    };
    let eye = CMat::identity(n, n);
    let v = iterate(&ac - &eye * shift)?;
    let w = iterate(ac.adjoint() - &eye * shift.conj())?;
    Ok((l, v, w))
}

/// Spectrum of `sys.a`. A static gain has no eigenvalues and an abscissa of
/// `-inf`.
pub fn spectral_abscissa(sys: &StateSpace) -> Result<Spectrum> {
    spectrum_of(&sys.a)
}

/// Realization of `second * first` (signal flows through `first`, then
/// `second`). States are stacked `[x_first; x_second]`.
pub fn connect_series(first: &StateSpace, second: &StateSpace) -> Result<StateSpace> {
    if first.n_outputs() != second.n_inputs() {
        return Err(Error::dim(format!(
            "series connection: first has {} outputs, second has {} inputs",
            first.n_outputs(),
            second.n_inputs()
        )));
    }
    let (n1, n2) = (first.order(), second.order());
    let n = n1 + n2;
    let mut a = Mat::zeros(n, n);
    a.view_mut((0, 0), (n1, n1)).copy_from(&first.a);
    a.view_mut((n1, 0), (n2, n1)).copy_from(&(&second.b * &first.c));
    a.view_mut((n1, n1), (n2, n2)).copy_from(&second.a);
    let mut b = Mat::zeros(n, first.n_inputs());
    b.view_mut((0, 0), (n1, first.n_inputs())).copy_from(&first.b);
    b.view_mut((n1, 0), (n2, first.n_inputs())).copy_from(&(&second.b * &first.d));
    let mut c = Mat::zeros(second.n_outputs(), n);
    c.view_mut((0, 0), (second.n_outputs(), n1)).copy_from(&(&second.d * &first.c));
    c.view_mut((0, n1), (second.n_outputs(), n2)).copy_from(&second.c);
    let d = &second.d * &first.d;
    Ok(StateSpace { a, b, c, d })
}

/// Block-diagonal (decoupled) append: inputs and outputs are concatenated.
pub fn append(first: &StateSpace, second: &StateSpace) -> StateSpace {
    let (n1, n2) = (first.order(), second.order());
    let (m1, m2) = (first.n_inputs(), second.n_inputs());
    let (p1, p2) = (first.n_outputs(), second.n_outputs());
    StateSpace {
        a: block_diag(&first.a, &second.a),
        b: block_diag_rect(&first.b, &second.b, (n1, m1), (n2, m2)),
        c: block_diag_rect(&first.c, &second.c, (p1, n1), (p2, n2)),
        d: block_diag(&first.d, &second.d),
    }
}

pub(crate) fn block_diag(x: &Mat, y: &Mat) -> Mat {
    block_diag_rect(x, y, x.shape(), y.shape())
}

fn block_diag_rect(x: &Mat, y: &Mat, sx: (usize, usize), sy: (usize, usize)) -> Mat {
    let mut out = Mat::zeros(sx.0 + sy.0, sx.1 + sy.1);
    out.view_mut((0, 0), sx).copy_from(x);
    out.view_mut(sx, sy).copy_from(y);
    out
}

pub fn to_complex(m: &Mat) -> CMat {
    m.map(|x| C64::new(x, 0.0))
}

/// Second-order section `k * wn^2 / (s^2 + 2 zeta wn s + wn^2)`.
pub fn second_order(wn: f64, zeta: f64, gain: f64) -> StateSpace {
    StateSpace {
        a: Mat::from_row_slice(2, 2, &[0.0, 1.0, -wn * wn, -2.0 * zeta * wn]),
        b: Mat::from_row_slice(2, 1, &[0.0, 1.0]),
        c: Mat::from_row_slice(1, 2, &[gain * wn * wn, 0.0]),
        d: Mat::zeros(1, 1),
    }
}

/// First-order lag `k / (s + a)`.
pub fn first_order(pole: f64, gain: f64) -> StateSpace {
    StateSpace {
        a: Mat::from_element(1, 1, -pole),
        b: Mat::from_element(1, 1, 1.0),
        c: Mat::from_element(1, 1, gain),
        d: Mat::zeros(1, 1),
    }
}
