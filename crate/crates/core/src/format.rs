//! JSON helpers shared by the model, problem and result files.
//!
//! Matrices are nested arrays of rows. Numbers are written with the
//! shortest representation that parses back to the same `f64`, so a
//! save/load cycle is bit-exact.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{Mat, StateSpace};

pub type Rows = Vec<Vec<f64>>;

pub fn mat_to_rows(m: &Mat) -> Rows {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

/// Builds a matrix from rows. `cols` fixes the width when the matrix may
/// have zero rows or when the caller already knows it.
pub fn mat_from_rows(field: &str, rows: &Rows, cols: Option<usize>) -> Result<Mat> {
    let width = match (rows.first(), cols) {
        (Some(r), _) => r.len(),
        (None, Some(c)) => c,
        (None, None) => 0,
    };
    if let Some(c) = cols {
        if width != c {
            return Err(Error::format(field, format!("row 0 has {width} entries, expected {c}")));
        }
    }
    for (i, r) in rows.iter().enumerate() {
        if r.len() != width {
            return Err(Error::format(
                field,
                format!("ragged matrix: row {i} has {} entries, row 0 has {width}", r.len()),
            ));
        }
        if let Some(j) = r.iter().position(|x| !x.is_finite()) {
            return Err(Error::format(field, format!("entry ({i}, {j}) is not finite")));
        }
    }
    Ok(Mat::from_fn(rows.len(), width, |i, j| rows[i][j]))
}

/// State-space quadruple as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpaceFile {
    pub a: Rows,
    pub b: Rows,
    pub c: Rows,
    pub d: Rows,
}

impl StateSpaceFile {
    pub fn from_system(sys: &StateSpace) -> Self {
        Self { a: mat_to_rows(&sys.a), b: mat_to_rows(&sys.b), c: mat_to_rows(&sys.c), d: mat_to_rows(&sys.d) }
    }

    /// `prefix` names the enclosing field in diagnostics (e.g. `model`).
    pub fn to_system(&self, prefix: &str) -> Result<StateSpace> {
        let n = self.a.len();
        let d_rows = self.d.len();
        let d_cols = self.d.first().map(Vec::len);
        let a = mat_from_rows(&format!("{prefix}.a"), &self.a, Some(n))?;
        let m = self.b.first().map(Vec::len).or(d_cols).unwrap_or(0);
        let b = mat_from_rows(&format!("{prefix}.b"), &self.b, Some(m))?;
        if b.nrows() != n {
            return Err(Error::format(format!("{prefix}.b"), format!("has {} rows, a has {n}", b.nrows())));
        }
        let p = if n > 0 { self.c.len() } else { d_rows };
        let c = if n == 0 && self.c.is_empty() {
            Mat::zeros(p, 0)
        } else {
            mat_from_rows(&format!("{prefix}.c"), &self.c, Some(n))?
        };
        let d = if d_rows == 0 && (p > 0 && m > 0) {
            return Err(Error::format(format!("{prefix}.d"), format!("missing, expected {p}x{m}")));
        } else if d_rows == 0 {
            Mat::zeros(p, m)
        } else {
            mat_from_rows(&format!("{prefix}.d"), &self.d, Some(m))?
        };
        if d.nrows() != c.nrows() {
            return Err(Error::format(format!("{prefix}.d"), format!("has {} rows, c has {}", d.nrows(), c.nrows())));
        }
        StateSpace::new(a, b, c, d)
    }
}

/// Parses JSON, turning syntax and schema errors into `Error::Format` with
/// line and column.
pub fn parse_json<T: serde::de::DeserializeOwned>(what: &str, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::format(what, format!("{e}")))
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ragged_rows_name_the_field() {
        let f = StateSpaceFile {
            a: vec![vec![1.0, 2.0], vec![3.0]],
            b: vec![vec![1.0], vec![1.0]],
            c: vec![vec![1.0, 0.0]],
            d: vec![vec![0.0]],
        };
        let err = f.to_system("plant").unwrap_err().to_string();
        assert!(err.contains("plant.a") && err.contains("ragged"), "{err}");
    }

    #[test]
    fn static_gain_round_trip() {
        let sys = StateSpace::static_gain(Mat::from_row_slice(1, 2, &[0.1, 1.0 / 3.0]));
        let back = StateSpaceFile::from_system(&sys).to_system("w").unwrap();
        assert_eq!(back, sys);
    }

    #[test]
    fn bit_exact_numbers() {
        let sys = StateSpace::new(
            Mat::from_element(1, 1, -std::f64::consts::PI),
            Mat::from_element(1, 1, 1e-300),
            Mat::from_element(1, 1, 0.1 + 0.2),
            Mat::zeros(1, 1),
        )
        .unwrap();
        let text = serde_json::to_string(&StateSpaceFile::from_system(&sys)).unwrap();
        let f: StateSpaceFile = parse_json("sys", &text).unwrap();
        assert_eq!(f.to_system("sys").unwrap(), sys);
    }
}
