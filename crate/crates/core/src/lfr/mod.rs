//! Linear fractional models.
//!
//! The coefficient system `M` has its ports ordered as
//! `(u_delta, u_K, w) -> (y_delta, y_K, z)`: uncertainty ports first,
//! controller ports second, exogenous channels last. The uncertainty loop
//! is closed with `u_delta = diag(delta_i I_{n_i}) y_delta` and the
//! controller loop with `u_K = K y_K`.

mod file;
mod template;

pub use file::ModelFile;
pub use template::{BlockMask, ControllerBlock, ControllerTemplate};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{connect_series, Mat, StateSpace};

/// Algebraic loops whose condition number exceeds this are rejected.
pub const LOOP_CONDITION_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaBlock {
    pub name: String,
    pub repetitions: usize,
}

/// `Delta = diag(delta_i I_{n_i})`, one named scalar per block.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DeltaStructure {
    pub blocks: Vec<DeltaBlock>,
}

impl DeltaStructure {
    pub fn new(blocks: Vec<(&str, usize)>) -> Result<Self> {
        let s = Self {
            blocks: blocks.into_iter().map(|(n, r)| DeltaBlock { name: n.to_string(), repetitions: r }).collect(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, b) in self.blocks.iter().enumerate() {
            if b.repetitions == 0 {
                return Err(Error::format(format!("delta[{i}]"), "repetitions must be positive"));
            }
            if self.blocks[..i].iter().any(|o| o.name == b.name) {
                return Err(Error::format(format!("delta[{i}]"), format!("duplicate name `{}`", b.name)));
            }
        }
        Ok(())
    }

    pub fn total_dim(&self) -> usize {
        self.blocks.iter().map(|b| b.repetitions).sum()
    }

    pub fn n_params(&self) -> usize {
        self.blocks.len()
    }

    pub fn names(&self) -> Vec<String> {
        self.blocks.iter().map(|b| b.name.clone()).collect()
    }

    /// Diagonal of `Delta` for a parameter vector.
    pub fn expand(&self, sample: &[f64]) -> Result<Vec<f64>> {
        if sample.len() != self.blocks.len() {
            return Err(Error::dim(format!(
                "parameter vector has length {}, structure has {} blocks",
                sample.len(),
                self.blocks.len()
            )));
        }
        Ok(self.blocks.iter().zip(sample).flat_map(|(b, &d)| std::iter::repeat_n(d, b.repetitions)).collect())
    }
}

/// A named slice of the exogenous inputs or outputs (offsets count from
/// the first exogenous port).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub name: String,
    pub offset: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ChannelTable {
    pub inputs: Vec<Channel>,
    pub outputs: Vec<Channel>,
}

impl ChannelTable {
    /// Builds a table from consecutive `(name, width)` lists.
    pub fn consecutive(inputs: &[(&str, usize)], outputs: &[(&str, usize)]) -> Self {
        let lay = |list: &[(&str, usize)]| {
            let mut off = 0;
            list.iter()
                .map(|&(n, w)| {
                    let c = Channel { name: n.to_string(), offset: off, width: w };
                    off += w;
                    c
                })
                .collect()
        };
        Self { inputs: lay(inputs), outputs: lay(outputs) }
    }

    pub fn input(&self, name: &str) -> Result<std::ops::Range<usize>> {
        self.inputs
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.offset..c.offset + c.width)
            .ok_or_else(|| Error::UnknownChannel(format!("input `{name}`")))
    }

    pub fn output(&self, name: &str) -> Result<std::ops::Range<usize>> {
        self.outputs
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.offset..c.offset + c.width)
            .ok_or_else(|| Error::UnknownChannel(format!("output `{name}`")))
    }

    fn validate(&self, n_w: usize, n_z: usize) -> Result<()> {
        for (kind, list, limit) in [("inputs", &self.inputs, n_w), ("outputs", &self.outputs, n_z)] {
            for (i, c) in list.iter().enumerate() {
                if c.width == 0 || c.offset + c.width > limit {
                    return Err(Error::format(
                        format!("channels.{kind}[{i}]"),
                        format!("slice {}..{} outside the {limit} exogenous ports", c.offset, c.offset + c.width),
                    ));
                }
                if list[..i].iter().any(|o| o.name == c.name) {
                    return Err(Error::format(format!("channels.{kind}[{i}]"), format!("duplicate name `{}`", c.name)));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LfrModel {
    pub m: StateSpace,
    pub delta: DeltaStructure,
    /// Width of `u_K` (controller commands).
    pub n_u: usize,
    /// Width of `y_K` (measurements).
    pub n_y: usize,
    pub channels: ChannelTable,
}

impl LfrModel {
    pub fn new(m: StateSpace, delta: DeltaStructure, n_u: usize, n_y: usize, channels: ChannelTable) -> Result<Self> {
        delta.validate()?;
        let nd = delta.total_dim();
        if m.n_inputs() < nd + n_u || m.n_outputs() < nd + n_y {
            return Err(Error::dim(format!(
                "M has {} inputs and {} outputs, the delta and controller ports need {} and {}",
                m.n_inputs(),
                m.n_outputs(),
                nd + n_u,
                nd + n_y
            )));
        }
        channels.validate(m.n_inputs() - nd - n_u, m.n_outputs() - nd - n_y)?;
        Ok(Self { m, delta, n_u, n_y, channels })
    }

    pub fn n_w(&self) -> usize {
        self.m.n_inputs() - self.delta.total_dim() - self.n_u
    }

    pub fn n_z(&self) -> usize {
        self.m.n_outputs() - self.delta.total_dim() - self.n_y
    }

    pub fn check_template(&self, template: &ControllerTemplate) -> Result<()> {
        if template.n_inputs() != self.n_y || template.n_outputs() != self.n_u {
            return Err(Error::dim(format!(
                "template maps {} measurements to {} commands, model has {} and {}",
                template.n_inputs(),
                template.n_outputs(),
                self.n_y,
                self.n_u
            )));
        }
        Ok(())
    }

    /// Uncertainty loop closed, then the controller loop, with the
    /// realization Jacobian with respect to `k` when requested.
    pub fn closed_loop(
        &self,
        template: &ControllerTemplate,
        k: &[f64],
        sample: &[f64],
        with_jacobian: bool,
    ) -> Result<ClosedLoop> {
        self.check_template(template)?;
        let open = instantiate_delta(self, sample)?;
        close_controller_impl(&open, template, k, with_jacobian)
    }
}

/// Rank-one realization perturbation
/// `[dA dB; dC dD] = [xl; yl] [xr^T ur^T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankOne {
    pub xl: DVector<f64>,
    pub yl: DVector<f64>,
    pub xr: DVector<f64>,
    pub ur: DVector<f64>,
}

impl RankOne {
    pub fn zero(n: usize, p: usize, m: usize) -> Self {
        Self { xl: DVector::zeros(n), yl: DVector::zeros(p), xr: DVector::zeros(n), ur: DVector::zeros(m) }
    }

    /// `(dA, dB, dC, dD)` as dense matrices.
    pub fn dense(&self) -> (Mat, Mat, Mat, Mat) {
        (
            &self.xl * self.xr.transpose(),
            &self.xl * self.ur.transpose(),
            &self.yl * self.xr.transpose(),
            &self.yl * self.ur.transpose(),
        )
    }

    /// The same perturbation seen through an output/input slice.
    pub fn restrict(&self, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> Self {
        Self {
            xl: self.xl.clone(),
            yl: self.yl.rows(rows.start, rows.len()).into_owned(),
            xr: self.xr.clone(),
            ur: self.ur.rows(cols.start, cols.len()).into_owned(),
        }
    }

    /// Perturbation of `weight * G` for the realization built by
    /// `connect_series(G, weight)`.
    pub fn through_weight(&self, weight: &StateSpace) -> Self {
        let nw = weight.order();
        let n = self.xl.len();
        let mut xl = DVector::zeros(n + nw);
        xl.rows_mut(0, n).copy_from(&self.xl);
        xl.rows_mut(n, nw).copy_from(&(&weight.b * &self.yl));
        let mut xr = DVector::zeros(n + nw);
        xr.rows_mut(0, n).copy_from(&self.xr);
        Self { xl, yl: &weight.d * &self.yl, xr, ur: self.ur.clone() }
    }
}

/// Closed-loop realization with one rank-one derivative per decision
/// variable (empty when not requested).
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    pub sys: StateSpace,
    pub jacobian: Vec<RankOne>,
}

impl ClosedLoop {
    /// `weight * T_{w -> z}` together with the matching derivatives.
    pub fn channel(&self, table: &ChannelTable, w_name: &str, z_name: &str, weight: &StateSpace) -> Result<ClosedLoop> {
        let cols = table.input(w_name)?;
        let rows = table.output(z_name)?;
        let sys = extract_channel(&self.sys, table, w_name, z_name, weight)?;
        let jacobian =
            self.jacobian.iter().map(|t| t.restrict(rows.clone(), cols.clone()).through_weight(weight)).collect();
        Ok(ClosedLoop { sys, jacobian })
    }
}

/// Static loop closure on the leading ports of `p`.
struct StaticClosure {
    sys: StateSpace,
    l: Mat,
    m: Mat,
}

/// Closes `u_loop = theta y_loop` where the loop ports are the first
/// `theta.nrows()` inputs and the first `theta.ncols()` outputs of `p`.
fn close_static_loop(p: &StateSpace, theta: &Mat, singular: fn(f64) -> Error) -> Result<StaticClosure> {
    let (nl_in, nl_out) = theta.shape();
    let n = p.order();
    let (m_e, p_e) = (p.n_inputs() - nl_in, p.n_outputs() - nl_out);
    let b_l = p.b.view((0, 0), (n, nl_in));
    let b_e = p.b.view((0, nl_in), (n, m_e));
    let c_l = p.c.view((0, 0), (nl_out, n));
    let c_e = p.c.view((nl_out, 0), (p_e, n));
    let d_ll = p.d.view((0, 0), (nl_out, nl_in));
    let d_le = p.d.view((0, nl_in), (nl_out, m_e));
    let d_el = p.d.view((nl_out, 0), (p_e, nl_in));
    let d_ee = p.d.view((nl_out, nl_in), (p_e, m_e));

    let loop_mat = Mat::identity(nl_in, nl_in) - theta * d_ll;
    let l = if d_ll.iter().all(|&x| x == 0.0) || nl_in == 0 {
        Mat::identity(nl_in, nl_in)
    } else {
        let sv = loop_mat.clone().singular_values();
        let smin = sv.min();
        let cond = if smin > 0.0 { sv.max() / smin } else { f64::INFINITY };
        if cond > LOOP_CONDITION_LIMIT {
            return Err(singular(cond));
        }
        loop_mat.try_inverse().ok_or_else(|| singular(f64::INFINITY))?
    };
    let m = &l * theta;
    let bm = b_l * &m;
    let dm = d_el * &m;
    let sys = StateSpace { a: &p.a + &bm * c_l, b: b_e + &bm * d_le, c: c_e + &dm * c_l, d: d_ee + &dm * d_le };
    Ok(StaticClosure { sys, l, m })
}

/// Closes the uncertainty loop; the result has ports `(u_K, w) -> (y_K, z)`.
pub fn instantiate_delta(model: &LfrModel, sample: &[f64]) -> Result<StateSpace> {
    let diag = model.delta.expand(sample)?;
    if diag.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("parameter sample".into()));
    }
    let theta = Mat::from_diagonal(&DVector::from_vec(diag));
    Ok(close_static_loop(&model.m, &theta, |condition| Error::DeltaLoopSingular { condition })?.sys)
}

/// Closes `u_K = K(k) y_K` on an open loop with ports `(u_K, w) -> (y_K, z)`.
/// Controller states are appended after the plant states.
pub fn close_controller(open: &StateSpace, template: &ControllerTemplate, k: &[f64]) -> Result<StateSpace> {
    Ok(close_controller_impl(open, template, k, false)?.sys)
}

/// As `close_controller`, with `d(A, B, C, D)/dk_i` for every free entry.
pub fn close_controller_with_jacobian(
    open: &StateSpace,
    template: &ControllerTemplate,
    k: &[f64],
) -> Result<ClosedLoop> {
    close_controller_impl(open, template, k, true)
}

fn close_controller_impl(
    open: &StateSpace,
    template: &ControllerTemplate,
    k: &[f64],
    with_jacobian: bool,
) -> Result<ClosedLoop> {
    let (nu, ny) = (template.n_outputs(), template.n_inputs());
    if open.n_inputs() < nu || open.n_outputs() < ny {
        return Err(Error::dim(format!(
            "open loop has {}x{} ports, controller needs {ny} measurements and {nu} commands",
            open.n_outputs(),
            open.n_inputs()
        )));
    }
    let theta = template.theta(k)?;
    let nk = template.order();
    let n = open.order();
    let (m_w, p_z) = (open.n_inputs() - nu, open.n_outputs() - ny);

    // augmented plant: states [x; xk], inputs [v; u; w], outputs [xk; y; z], xk' = v
    let mut a = Mat::zeros(n + nk, n + nk);
    a.view_mut((0, 0), (n, n)).copy_from(&open.a);
    let mut b = Mat::zeros(n + nk, nk + nu + m_w);
    b.view_mut((0, nk), (n, nu + m_w)).copy_from(&open.b);
    b.view_mut((n, 0), (nk, nk)).fill_with_identity();
    let mut c = Mat::zeros(nk + ny + p_z, n + nk);
    c.view_mut((0, n), (nk, nk)).fill_with_identity();
    c.view_mut((nk, 0), (ny + p_z, n)).copy_from(&open.c);
    let mut d = Mat::zeros(nk + ny + p_z, nk + nu + m_w);
    d.view_mut((nk, nk), (ny + p_z, nu + m_w)).copy_from(&open.d);
    let aug = StateSpace { a, b, c, d };

    let closure = close_static_loop(&aug, &theta, |condition| Error::ControllerLoopSingular { condition })?;
    let mut jacobian = Vec::new();
    if with_jacobian {
        let (nl_in, nl_out) = theta.shape();
        let nn = n + nk;
        let b_l = aug.b.view((0, 0), (nn, nl_in));
        let c_l = aug.c.view((0, 0), (nl_out, nn));
        let d_ll = aug.d.view((0, 0), (nl_out, nl_in));
        let d_le = aug.d.view((0, nl_in), (nl_out, m_w));
        let d_el = aug.d.view((nl_out, 0), (p_z, nl_in));
        // d M = L dTheta (I + D_ll M)
        let right = Mat::identity(nl_out, nl_out) + d_ll * &closure.m;
        let right_c = &right * c_l;
        let right_d = &right * d_le;
        jacobian.reserve(template.dim_k());
        for &(r, col) in template.free_positions() {
            let l = closure.l.column(r);
            jacobian.push(RankOne {
                xl: b_l * l,
                yl: d_el * l,
                xr: right_c.row(col).transpose(),
                ur: right_d.row(col).transpose(),
            });
        }
    }
    Ok(ClosedLoop { sys: closure.sys, jacobian })
}

/// `weight * T_{w -> z}` from a closed loop whose ports are the exogenous
/// channels.
pub fn extract_channel(
    closed: &StateSpace,
    table: &ChannelTable,
    w_name: &str,
    z_name: &str,
    weight: &StateSpace,
) -> Result<StateSpace> {
    let cols = table.input(w_name)?;
    let rows = table.output(z_name)?;
    let sub = closed.subsystem(rows, cols)?;
    connect_series(&sub, weight)
}
