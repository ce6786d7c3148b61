use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{Mat, StateSpace};

/// Which entries of one controller block are decision variables.
///
/// Shapes are block-local: `a` is order x order, `b` order x inputs,
/// `c` outputs x order, `d` outputs x inputs. Entries that are not free are
/// held at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockMask {
    pub a: Vec<Vec<u8>>,
    pub b: Vec<Vec<u8>>,
    pub c: Vec<Vec<u8>>,
    pub d: Vec<Vec<u8>>,
}

impl BlockMask {
    pub fn full(order: usize, n_in: usize, n_out: usize, feedthrough: bool) -> Self {
        let ones = |r: usize, c: usize, v: u8| vec![vec![v; c]; r];
        Self {
            a: ones(order, order, 1),
            b: ones(order, n_in, 1),
            c: ones(n_out, order, 1),
            d: ones(n_out, n_in, u8::from(feedthrough)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerBlock {
    /// Indices into the measurement vector `y_K`.
    pub inputs: Vec<usize>,
    /// Indices into the command vector `u_K`.
    pub outputs: Vec<usize>,
    pub order: usize,
    pub mask: BlockMask,
}

/// Structured controller `K(k)` assembled block-diagonally from
/// fixed-order state-space blocks.
///
/// Decision variables are ordered block by block, and within a block as
/// the free entries of `A_K`, `B_K`, `C_K`, `D_K`, each row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TemplateFile", into = "TemplateFile")]
pub struct ControllerTemplate {
    n_inputs: usize,
    n_outputs: usize,
    blocks: Vec<ControllerBlock>,
    lower: Option<Vec<f64>>,
    upper: Option<Vec<f64>>,
    /// Positions of the free entries in `[[A_K, B_K], [C_K, D_K]]`.
    free: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TemplateFile {
    n_inputs: usize,
    n_outputs: usize,
    blocks: Vec<ControllerBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lower: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    upper: Option<Vec<f64>>,
}

impl TryFrom<TemplateFile> for ControllerTemplate {
    type Error = Error;
    fn try_from(f: TemplateFile) -> Result<Self> {
        let t = ControllerTemplate::new(f.n_inputs, f.n_outputs, f.blocks)?;
        t.with_bounds(f.lower, f.upper)
    }
}

impl From<ControllerTemplate> for TemplateFile {
    fn from(t: ControllerTemplate) -> Self {
        TemplateFile { n_inputs: t.n_inputs, n_outputs: t.n_outputs, blocks: t.blocks, lower: t.lower, upper: t.upper }
    }
}

fn check_mask(field: &str, m: &[Vec<u8>], rows: usize, cols: usize) -> Result<()> {
    if m.len() != rows {
        return Err(Error::format(field, format!("{} rows, expected {rows}", m.len())));
    }
    for (i, r) in m.iter().enumerate() {
        if r.len() != cols {
            return Err(Error::format(field, format!("row {i} has {} entries, expected {cols}", r.len())));
        }
        if r.iter().any(|&v| v > 1) {
            return Err(Error::format(field, format!("row {i}: mask entries must be 0 or 1")));
        }
    }
    Ok(())
}

impl ControllerTemplate {
    /// `n_inputs` measurements `y_K`, `n_outputs` commands `u_K`.
    pub fn new(n_inputs: usize, n_outputs: usize, blocks: Vec<ControllerBlock>) -> Result<Self> {
        let nk: usize = blocks.iter().map(|b| b.order).sum();
        let mut free = Vec::new();
        let mut offset = 0;
        for (bi, blk) in blocks.iter().enumerate() {
            let field = format!("template.blocks[{bi}]");
            if let Some(&i) = blk.inputs.iter().find(|&&i| i >= n_inputs) {
                return Err(Error::format(&field, format!("input index {i} >= {n_inputs}")));
            }
            if let Some(&o) = blk.outputs.iter().find(|&&o| o >= n_outputs) {
                return Err(Error::format(&field, format!("output index {o} >= {n_outputs}")));
            }
            let (r, ni, no) = (blk.order, blk.inputs.len(), blk.outputs.len());
            check_mask(&format!("{field}.mask.a"), &blk.mask.a, r, r)?;
            check_mask(&format!("{field}.mask.b"), &blk.mask.b, r, ni)?;
            check_mask(&format!("{field}.mask.c"), &blk.mask.c, no, r)?;
            check_mask(&format!("{field}.mask.d"), &blk.mask.d, no, ni)?;
            let m = &blk.mask;
            for i in 0..r {
                for j in 0..r {
                    if m.a[i][j] == 1 {
                        free.push((offset + i, offset + j));
                    }
                }
            }
            for i in 0..r {
                for (j, &yi) in blk.inputs.iter().enumerate() {
                    if m.b[i][j] == 1 {
                        free.push((offset + i, nk + yi));
                    }
                }
            }
            for (i, &uo) in blk.outputs.iter().enumerate() {
                for j in 0..r {
                    if m.c[i][j] == 1 {
                        free.push((nk + uo, offset + j));
                    }
                }
            }
            for (i, &uo) in blk.outputs.iter().enumerate() {
                for (j, &yi) in blk.inputs.iter().enumerate() {
                    if m.d[i][j] == 1 {
                        free.push((nk + uo, nk + yi));
                    }
                }
            }
            offset += r;
        }
        let mut seen = free.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::format("template.blocks", "two blocks share a controller entry"));
        }
        Ok(Self { n_inputs, n_outputs, blocks, lower: None, upper: None, free })
    }

    /// One block of the given order reading every measurement and driving
    /// every command.
    pub fn full_order(order: usize, n_inputs: usize, n_outputs: usize, feedthrough: bool) -> Self {
        let block = ControllerBlock {
            inputs: (0..n_inputs).collect(),
            outputs: (0..n_outputs).collect(),
            order,
            mask: BlockMask::full(order, n_inputs, n_outputs, feedthrough),
        };
        Self::new(n_inputs, n_outputs, vec![block]).expect("full template is consistent")
    }

    /// Optional box on the decision vector.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn with_bounds(mut self, lower: Option<Vec<f64>>, upper: Option<Vec<f64>>) -> Result<Self> {
        for (name, b) in [("template.lower", &lower), ("template.upper", &upper)] {
            if let Some(v) = b {
                if v.len() != self.dim_k() {
                    return Err(Error::format(name, format!("length {} != dim_k {}", v.len(), self.dim_k())));
                }
            }
        }
        if let (Some(l), Some(u)) = (&lower, &upper) {
            if let Some(i) = (0..l.len()).find(|&i| !(l[i] <= u[i])) {
                return Err(Error::format("template.lower", format!("entry {i} exceeds the upper bound")));
            }
        }
        self.lower = lower;
        self.upper = upper;
        Ok(self)
    }

    pub fn dim_k(&self) -> usize {
        self.free.len()
    }

    pub fn order(&self) -> usize {
        self.blocks.iter().map(|b| b.order).sum()
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    pub fn blocks(&self) -> &[ControllerBlock] {
        &self.blocks
    }

    pub(crate) fn free_positions(&self) -> &[(usize, usize)] {
        &self.free
    }

    pub fn has_feedthrough(&self) -> bool {
        let nk = self.order();
        self.free.iter().any(|&(r, c)| r >= nk && c >= nk)
    }

    /// Clips `k` into the box (no-op without bounds).
    pub fn project(&self, k: &mut [f64]) {
        if let Some(l) = &self.lower {
            for (x, lo) in k.iter_mut().zip(l) {
                *x = x.max(*lo);
            }
        }
        if let Some(u) = &self.upper {
            for (x, hi) in k.iter_mut().zip(u) {
                *x = x.min(*hi);
            }
        }
    }

    pub(crate) fn check_len(&self, k: &[f64]) -> Result<()> {
        if k.len() != self.dim_k() {
            return Err(Error::dim(format!(
                "decision vector has length {}, template dim_k is {}",
                k.len(),
                self.dim_k()
            )));
        }
        if k.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("decision vector".into()));
        }
        Ok(())
    }

    /// `[[A_K, B_K], [C_K, D_K]]` for decision vector `k`.
    pub fn theta(&self, k: &[f64]) -> Result<Mat> {
        self.check_len(k)?;
        let nk = self.order();
        let mut theta = Mat::zeros(nk + self.n_outputs, nk + self.n_inputs);
        for (&(r, c), &v) in self.free.iter().zip(k) {
            theta[(r, c)] = v;
        }
        Ok(theta)
    }

    pub fn devectorize(&self, k: &[f64]) -> Result<StateSpace> {
        let theta = self.theta(k)?;
        let nk = self.order();
        let (nu, ny) = (self.n_outputs, self.n_inputs);
        StateSpace::new(
            theta.view((0, 0), (nk, nk)).into_owned(),
            theta.view((0, nk), (nk, ny)).into_owned(),
            theta.view((nk, 0), (nu, nk)).into_owned(),
            theta.view((nk, nk), (nu, ny)).into_owned(),
        )
    }

    /// Reads the free entries back out of a controller realization.
    pub fn vectorize(&self, controller: &StateSpace) -> Result<Vec<f64>> {
        let nk = self.order();
        if controller.order() != nk
            || controller.n_inputs() != self.n_inputs
            || controller.n_outputs() != self.n_outputs
        {
            return Err(Error::dim(format!(
                "controller is ({} states, {} in, {} out), template expects ({nk}, {}, {})",
                controller.order(),
                controller.n_inputs(),
                controller.n_outputs(),
                self.n_inputs,
                self.n_outputs
            )));
        }
        let entry = |r: usize, c: usize| match (r < nk, c < nk) {
            (true, true) => controller.a[(r, c)],
            (true, false) => controller.b[(r, c - nk)],
            (false, true) => controller.c[(r - nk, c)],
            (false, false) => controller.d[(r - nk, c - nk)],
        };
        Ok(self.free.iter().map(|&(r, c)| entry(r, c)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_template_counts() {
        let t = ControllerTemplate::full_order(4, 2, 1, false);
        assert_eq!(t.dim_k(), 16 + 8 + 4);
        assert!(!t.has_feedthrough());
        let t = ControllerTemplate::full_order(0, 1, 1, true);
        assert_eq!(t.dim_k(), 1);
        assert!(t.has_feedthrough());
    }

    #[test]
    fn round_trip() {
        let t = ControllerTemplate::full_order(2, 2, 1, true);
        let k: Vec<f64> = (0..t.dim_k()).map(|i| (i as f64).sin()).collect();
        let ctrl = t.devectorize(&k).unwrap();
        assert_eq!(t.vectorize(&ctrl).unwrap(), k);
    }

    #[test]
    fn two_blocks_are_block_diagonal() {
        let blk = |i: usize| ControllerBlock {
            inputs: vec![i],
            outputs: vec![i],
            order: 1,
            mask: BlockMask::full(1, 1, 1, true),
        };
        let t = ControllerTemplate::new(2, 2, vec![blk(0), blk(1)]).unwrap();
        assert_eq!(t.dim_k(), 8);
        let ctrl = t.devectorize(&[1.0; 8]).unwrap();
        assert_eq!(ctrl.a[(0, 1)], 0.0);
        assert_eq!(ctrl.d[(0, 1)], 0.0);
        assert_eq!(ctrl.d[(1, 1)], 1.0);
    }

    #[test]
    fn bad_mask_is_reported() {
        let mut blk =
            ControllerBlock { inputs: vec![0], outputs: vec![0], order: 2, mask: BlockMask::full(2, 1, 1, false) };
        blk.mask.b.pop();
        let err = ControllerTemplate::new(1, 1, vec![blk]).unwrap_err().to_string();
        assert!(err.contains("mask.b"), "{err}");
    }
}
