//! Transcription of the adaptive optimal control problem into a sparse NLP.
//!
//! The transcription is simultaneous: per-index states and controls (and
//! auxiliary variables at complex indices) are all decision variables, with
//! the piecewise dynamics as equality defects. The dynamics row for index
//! `i -> i+1` picks one of four cases from the simplicity set: complex step,
//! reduced complex step, complex step of the lifted stage, or simple step.
//! Constraint rows are the complex set at complex indices and the simple set
//! at simple indices; the cost is the complex tracking cost evaluated on the
//! lifted stages, which at simple indices collapses to the retained-block
//! quadratic because the lift zeroes null-space deviations. With an empty
//! simplicity set the problem is exactly the all-complex transcription.

use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{LiftedTrajectory, ModelPair, RowKind};
use crate::simplicity::SimplicitySet;
use crate::space::{Space, StagePair};

/// Options modifying how a problem is assembled.
#[derive(Debug, Clone, Default)]
pub struct AssembleOptions {
    /// Evaluate only the simple constraint set at every index, on the
    /// reduced coordinates, and drop auxiliary variables entirely. This is
    /// the deliberately constraint-blind all-simple baseline.
    pub simple_constraints_only: bool,
}

/// Variable layout of the assembled NLP.
///
/// Index blocks `0..N` hold `[x_i, u_i, aux_i]`; block `N` holds the terminal
/// state only.
#[derive(Debug, Clone)]
pub struct Layout {
    pub n_horizon: usize,
    var_off: Vec<usize>,
    x_dim: Vec<usize>,
    u_dim: Vec<usize>,
    aux_dim: Vec<usize>,
    pub total_vars: usize,
}

impl Layout {
    pub fn block_range(&self, i: usize) -> Range<usize> {
        let d = self.x_dim[i]
            + self.u_dim.get(i).copied().unwrap_or(0)
            + self.aux_dim.get(i).copied().unwrap_or(0);
        self.var_off[i]..self.var_off[i] + d
    }

    pub fn block_dim(&self, i: usize) -> usize {
        self.block_range(i).len()
    }

    pub fn x_range(&self, i: usize) -> Range<usize> {
        self.var_off[i]..self.var_off[i] + self.x_dim[i]
    }

    pub fn u_range(&self, i: usize) -> Range<usize> {
        let s = self.var_off[i] + self.x_dim[i];
        s..s + self.u_dim[i]
    }

    pub fn aux_range(&self, i: usize) -> Range<usize> {
        let s = self.var_off[i] + self.x_dim[i] + self.u_dim[i];
        s..s + self.aux_dim[i]
    }

    pub fn x_dim(&self, i: usize) -> usize {
        self.x_dim[i]
    }

    pub fn u_dim(&self, i: usize) -> usize {
        self.u_dim.get(i).copied().unwrap_or(0)
    }

    pub fn aux_dim(&self, i: usize) -> usize {
        self.aux_dim.get(i).copied().unwrap_or(0)
    }
}

/// A solved trajectory in the adaptive mixed space.
#[derive(Debug, Clone)]
pub struct AdaptiveTrajectory {
    pub stages: Vec<StagePair>,
    /// Auxiliary variables at complex indices (empty vectors elsewhere).
    pub aux: Vec<DVector<f64>>,
    pub terminal_state: DVector<f64>,
    pub simplicity: SimplicitySet,
}

/// Per-index evaluation of the problem's constraint blocks at an iterate.
///
/// Equality rows attached to index `i` are ordered: initial-state pin (only
/// `i = 0`), dynamics defect `i-1 -> i` (only `i >= 1`), auxiliary defining
/// rows, equality-kind path rows. Inequality rows are the inequality-kind
/// path rows, plus the terminal-set rows at `i = N`.
#[derive(Debug, Clone)]
pub struct BlockEval {
    pub eq_res: Vec<DVector<f64>>,
    pub eq_j_self: Vec<DMatrix<f64>>,
    /// Jacobian of the equality rows with respect to block `i-1` (dynamics
    /// defects only; zero-width at index 0).
    pub eq_j_prev: Vec<DMatrix<f64>>,
    pub ineq_val: Vec<DVector<f64>>,
    pub ineq_j_self: Vec<DMatrix<f64>>,
}

impl BlockEval {
    pub fn max_eq_violation(&self) -> f64 {
        self.eq_res
            .iter()
            .filter(|r| r.len() > 0)
            .map(|r| r.amax())
            .fold(0.0_f64, f64::max)
    }

    pub fn max_ineq_violation(&self) -> f64 {
        self.ineq_val
            .iter()
            .flat_map(|v| v.iter())
            .fold(0.0_f64, |a, &x| a.max(x))
    }
}

/// Constraint residual norms at an iterate.
#[derive(Debug, Clone, Copy, Default)]
pub struct ResidualNorms {
    pub eq_l1: f64,
    pub ineq_l1: f64,
    pub eq_max: f64,
    pub ineq_max: f64,
}

impl ResidualNorms {
    fn absorb_eq(&mut self, r: &DVector<f64>) {
        for &x in r.iter() {
            self.eq_l1 += x.abs();
            self.eq_max = self.eq_max.max(x.abs());
        }
    }

    pub fn l1(&self) -> f64 {
        self.eq_l1 + self.ineq_l1
    }

    pub fn max(&self) -> f64 {
        self.eq_max.max(self.ineq_max)
    }
}

/// The assembled adaptive OCP.
pub struct OcpProblem {
    pair: Arc<dyn ModelPair>,
    simplicity: SimplicitySet,
    x0: DVector<f64>,
    refs: Vec<StagePair>,
    start: usize,
    layout: Layout,
    options: AssembleOptions,
    /// Cost Hessian blocks (2Q_i, 2R_i) per index; terminal gets 2Q_t.
    hess_q: Vec<DMatrix<f64>>,
    hess_r: Vec<DMatrix<f64>>,
    q_simple: DMatrix<f64>,
    r_simple: DMatrix<f64>,
}

/// Assemble the adaptive OCP for simplicity set `s` from initial complex
/// state `x0` over the reference window `refs` (`n_horizon + 1` stages whose
/// first stage is at absolute time `start`).
pub fn assemble(
    pair: Arc<dyn ModelPair>,
    s: &SimplicitySet,
    x0: &DVector<f64>,
    refs: &[StagePair],
    start: usize,
    options: AssembleOptions,
) -> Result<OcpProblem> {
    let n = s.horizon();
    if refs.len() != n + 1 {
        return Err(Error::contract(format!(
            "reference window must cover {} indices, got {}",
            n + 1,
            refs.len()
        )));
    }
    if !s.respects_range() {
        return Err(Error::contract(
            "simplicity set contains boundary indices (first and last state must be complex)",
        ));
    }
    let dims = pair.dims();
    if x0.len() != dims.n_xc {
        return Err(Error::contract("x0 has the wrong dimension"));
    }
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(Error::contract("x0 must be finite"));
    }
    for r in refs {
        r.expect_space(Space::Complex)?;
        r.check_dims(&dims)?;
    }

    let mut var_off = Vec::with_capacity(n + 1);
    let mut x_dim = Vec::with_capacity(n + 1);
    let mut u_dim = Vec::with_capacity(n);
    let mut aux_dim = Vec::with_capacity(n);
    let mut off = 0usize;
    for i in 0..n {
        let simple = s.contains(i);
        var_off.push(off);
        let nx = if simple { dims.n_xs } else { dims.n_xc };
        let nu = if simple { dims.n_us } else { dims.n_uc };
        let na = if simple || options.simple_constraints_only {
            0
        } else {
            pair.aux_dim()
        };
        x_dim.push(nx);
        u_dim.push(nu);
        aux_dim.push(na);
        off += nx + nu + na;
    }
    var_off.push(off);
    x_dim.push(dims.n_xc);
    off += dims.n_xc;

    let layout = Layout {
        n_horizon: n,
        var_off,
        x_dim,
        u_dim,
        aux_dim,
        total_vars: off,
    };

    let ret_x = pair.retained_state();
    let ret_u = pair.retained_control();
    let q_simple = pair.weight_q().select_rows(ret_x).select_columns(ret_x);
    let r_simple = pair.weight_r().select_rows(ret_u).select_columns(ret_u);

    let mut hess_q = Vec::with_capacity(n + 1);
    let mut hess_r = Vec::with_capacity(n);
    for i in 0..n {
        if s.contains(i) {
            hess_q.push(2.0 * &q_simple);
            hess_r.push(2.0 * &r_simple);
        } else {
            hess_q.push(2.0 * pair.weight_q());
            hess_r.push(2.0 * pair.weight_r());
        }
    }
    hess_q.push(2.0 * pair.weight_qt());

    Ok(OcpProblem {
        pair,
        simplicity: s.clone(),
        x0: x0.clone(),
        refs: refs.to_vec(),
        start,
        layout,
        options,
        hess_q,
        hess_r,
        q_simple,
        r_simple,
    })
}

impl OcpProblem {
    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn simplicity(&self) -> &SimplicitySet {
        &self.simplicity
    }

    pub fn pair(&self) -> &Arc<dyn ModelPair> {
        &self.pair
    }

    pub fn refs(&self) -> &[StagePair] {
        &self.refs
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }

    pub fn options(&self) -> &AssembleOptions {
        &self.options
    }

    pub fn space_at(&self, i: usize) -> Space {
        if i < self.layout.n_horizon && self.simplicity.contains(i) {
            Space::Simple
        } else {
            Space::Complex
        }
    }

    /// Number of equality rows attached to index `i` (pin or defect, plus
    /// auxiliary and equality-kind path rows).
    pub fn eq_row_count(&self, i: usize) -> usize {
        let n = self.layout.n_horizon;
        if i < n {
            self.layout.x_dim(i) + self.aux_rows(i) + self.path_meta_counts(i).0
        } else {
            self.layout.x_dim(i)
        }
    }

    /// Number of inequality rows attached to index `i`.
    pub fn ineq_row_count(&self, i: usize) -> usize {
        let n = self.layout.n_horizon;
        if i < n {
            self.path_meta_counts(i).1
        } else {
            self.pair
                .terminal_constraints(&self.refs[n].state, self.start + n)
                .len()
        }
    }

    fn aux_rows(&self, i: usize) -> usize {
        // The auxiliary residual has one row per auxiliary variable for the
        // shipped pairs; fall back to evaluating at the reference otherwise.
        self.layout.aux_dim(i)
    }

    fn path_meta_counts(&self, i: usize) -> (usize, usize) {
        let t = self.start + i;
        let meta = match self.space_at(i) {
            Space::Simple => self.pair.simple_constraint_meta(t),
            Space::Complex if self.options.simple_constraints_only => {
                self.pair.simple_constraint_meta(t)
            }
            Space::Complex => self.pair.complex_constraint_meta(t),
        };
        let eq = meta.iter().filter(|m| m.kind == RowKind::Equality).count();
        (eq, meta.len() - eq)
    }

    /// Reference state in the coordinates of block `i` (reduced at simple
    /// indices).
    fn ref_state_at(&self, i: usize) -> DVector<f64> {
        match self.space_at(i) {
            Space::Complex => self.refs[i].state.clone(),
            Space::Simple => self.pair.reduce_state(&self.refs[i].state),
        }
    }

    fn ref_control_at(&self, i: usize) -> DVector<f64> {
        match self.space_at(i) {
            Space::Complex => self.refs[i].control.clone(),
            Space::Simple => self
                .pair
                .reduce_control(&self.refs[i].control, &self.refs[i].state),
        }
    }

    /// Initial guess tracking the reference exactly; auxiliary variables are
    /// resolved from the reference stages.
    pub fn initial_guess_from_reference(&self) -> Result<DVector<f64>> {
        let mut v = DVector::zeros(self.layout.total_vars);
        let n = self.layout.n_horizon;
        for i in 0..n {
            v.rows_mut(self.layout.x_range(i).start, self.layout.x_dim(i))
                .copy_from(&self.ref_state_at(i));
            v.rows_mut(self.layout.u_range(i).start, self.layout.u_dim(i))
                .copy_from(&self.ref_control_at(i));
            if self.layout.aux_dim(i) > 0 {
                let aux = self.pair.resolve_aux_guess(
                    &self.refs[i].state,
                    &self.refs[i].control,
                    self.start + i,
                );
                v.rows_mut(self.layout.aux_range(i).start, self.layout.aux_dim(i))
                    .copy_from(&aux);
            }
        }
        // The pinned initial state.
        v.rows_mut(self.layout.x_range(0).start, self.layout.x_dim(0))
            .copy_from(&self.x0);
        v.rows_mut(self.layout.x_range(n).start, self.layout.x_dim(n))
            .copy_from(&self.refs[n].state);
        Ok(v)
    }

    pub fn state_at<'a>(&self, v: &'a DVector<f64>, i: usize) -> nalgebra::DVectorView<'a, f64> {
        v.rows(self.layout.x_range(i).start, self.layout.x_dim(i))
    }

    pub fn control_at<'a>(&self, v: &'a DVector<f64>, i: usize) -> nalgebra::DVectorView<'a, f64> {
        v.rows(self.layout.u_range(i).start, self.layout.u_dim(i))
    }

    pub fn aux_at<'a>(&self, v: &'a DVector<f64>, i: usize) -> nalgebra::DVectorView<'a, f64> {
        v.rows(self.layout.aux_range(i).start, self.layout.aux_dim(i))
    }

    /// Unpack a primal vector into a tagged trajectory.
    pub fn unpack(&self, v: &DVector<f64>) -> AdaptiveTrajectory {
        let n = self.layout.n_horizon;
        let mut stages = Vec::with_capacity(n);
        let mut aux = Vec::with_capacity(n);
        for i in 0..n {
            let space = self.space_at(i);
            stages.push(StagePair::new(
                self.state_at(v, i).into_owned(),
                self.control_at(v, i).into_owned(),
                space,
            ));
            aux.push(self.aux_at(v, i).into_owned());
        }
        AdaptiveTrajectory {
            stages,
            aux,
            terminal_state: self.state_at(v, n).into_owned(),
            simplicity: self.simplicity.clone(),
        }
    }

    /// Tracking objective over the adaptive variables (equals the lifted
    /// complex cost; null-space deviations are zero under the lift).
    pub fn objective(&self, v: &DVector<f64>) -> f64 {
        let n = self.layout.n_horizon;
        let mut total = 0.0;
        for i in 0..n {
            let dx = self.state_at(v, i) - self.ref_state_at(i);
            let du = self.control_at(v, i) - self.ref_control_at(i);
            let (q, r) = match self.space_at(i) {
                Space::Complex => (self.pair.weight_q(), self.pair.weight_r()),
                Space::Simple => (&self.q_simple, &self.r_simple),
            };
            total += (dx.transpose() * q * &dx)[(0, 0)] + (du.transpose() * r * &du)[(0, 0)];
        }
        let dx = self.state_at(v, n) - &self.refs[n].state;
        total += (dx.transpose() * self.pair.weight_qt() * &dx)[(0, 0)];
        total
    }

    /// Gradient of the objective.
    pub fn gradient(&self, v: &DVector<f64>) -> DVector<f64> {
        let n = self.layout.n_horizon;
        let mut g = DVector::zeros(self.layout.total_vars);
        for i in 0..n {
            let dx = self.state_at(v, i) - self.ref_state_at(i);
            let du = self.control_at(v, i) - self.ref_control_at(i);
            g.rows_mut(self.layout.x_range(i).start, self.layout.x_dim(i))
                .copy_from(&(&self.hess_q[i] * dx));
            g.rows_mut(self.layout.u_range(i).start, self.layout.u_dim(i))
                .copy_from(&(&self.hess_r[i] * du));
        }
        let dx = self.state_at(v, n) - &self.refs[n].state;
        g.rows_mut(self.layout.x_range(n).start, self.layout.x_dim(n))
            .copy_from(&(&self.hess_q[n] * dx));
        g
    }

    /// Cost Hessian for block `i` (constant; zero on auxiliary variables).
    pub fn hessian_block(&self, i: usize) -> DMatrix<f64> {
        let dim = self.layout.block_dim(i);
        let mut h = DMatrix::zeros(dim, dim);
        let nx = self.layout.x_dim(i);
        h.view_mut((0, 0), (nx, nx)).copy_from(&self.hess_q[i]);
        if i < self.layout.n_horizon {
            let nu = self.layout.u_dim(i);
            h.view_mut((nx, nx), (nu, nu)).copy_from(&self.hess_r[i]);
        }
        h
    }

    /// Evaluate the dynamics defect for index `i -> i+1` and its Jacobians
    /// with respect to `(x_i, u_i)`.
    fn defect(
        &self,
        i: usize,
        v: &DVector<f64>,
    ) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
        let pair = self.pair.as_ref();
        let x = self.state_at(v, i).into_owned();
        let u = self.control_at(v, i).into_owned();
        let x_next = self.state_at(v, i + 1).into_owned();
        let here_simple = self.space_at(i) == Space::Simple;
        let next_simple = self.space_at(i + 1) == Space::Simple;

        let (pred, jx, ju) = match (here_simple, next_simple) {
            (false, false) => {
                let f = pair.complex_step(&x, &u)?;
                let (a, b) = pair.complex_step_jacobian(&x, &u)?;
                (f, a, b)
            }
            (false, true) => {
                let f = pair.complex_step(&x, &u)?;
                let (a, b) = pair.complex_step_jacobian(&x, &u)?;
                let p = pair.reduce_state_matrix();
                (pair.reduce_state(&f), &p * a, &p * b)
            }
            (true, false) => {
                let zl = crate::model::lift(
                    &StagePair::simple(x.clone(), u.clone()),
                    &self.refs[i],
                    pair,
                )?;
                let f = pair.complex_step(&zl.state, &zl.control)?;
                let (a, b) = pair.complex_step_jacobian(&zl.state, &zl.control)?;
                (
                    f,
                    a * pair.lift_state_matrix(),
                    b * pair.lift_control_matrix(),
                )
            }
            (true, true) => {
                let f = pair.simple_step(&x, &u, self.start + i)?;
                let (a, b) = pair.simple_step_jacobian(&x, &u, self.start + i)?;
                (f, a, b)
            }
        };
        Ok((pred - x_next, jx, ju))
    }

    /// Path constraint rows at index `i`, split into equality-kind and
    /// inequality-kind rows with Jacobians over the block variables.
    #[allow(clippy::type_complexity)]
    fn path_rows(
        &self,
        i: usize,
        v: &DVector<f64>,
    ) -> (DVector<f64>, DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
        let pair = self.pair.as_ref();
        let t = self.start + i;
        let x = self.state_at(v, i).into_owned();
        let u = self.control_at(v, i).into_owned();
        let dim = self.layout.block_dim(i);
        let nx = self.layout.x_dim(i);
        let nu = self.layout.u_dim(i);
        let na = self.layout.aux_dim(i);

        let (vals, jx, ju, ja, meta): (
            DVector<f64>,
            DMatrix<f64>,
            DMatrix<f64>,
            DMatrix<f64>,
            &[crate::model::RowMeta],
        ) = match self.space_at(i) {
            Space::Simple => {
                let vals = pair.simple_constraints(&x, &u, t);
                let (jx, ju) = pair.simple_constraint_jacobian(&x, &u, t);
                let m = vals.len();
                (
                    vals,
                    jx,
                    ju,
                    DMatrix::zeros(m, 0),
                    pair.simple_constraint_meta(t),
                )
            }
            Space::Complex if self.options.simple_constraints_only => {
                // Constraint-blind baseline: simple rows on the reduced
                // coordinates.
                let xs = pair.reduce_state(&x);
                let us = pair.reduce_control(&u, &x);
                let vals = pair.simple_constraints(&xs, &us, t);
                let (jxs, jus) = pair.simple_constraint_jacobian(&xs, &us, t);
                let m = vals.len();
                (
                    vals,
                    jxs * pair.reduce_state_matrix(),
                    jus * pair.reduce_control_matrix(),
                    DMatrix::zeros(m, 0),
                    pair.simple_constraint_meta(t),
                )
            }
            Space::Complex => {
                let aux = self.aux_at(v, i).into_owned();
                let vals = pair.complex_constraints(&x, &u, &aux, t);
                let (jx, ju, ja) = pair.complex_constraint_jacobian(&x, &u, &aux, t);
                (vals, jx, ju, ja, pair.complex_constraint_meta(t))
            }
        };
        debug_assert_eq!(vals.len(), meta.len());

        let mut eq_rows = Vec::new();
        let mut in_rows = Vec::new();
        for (r, m) in meta.iter().enumerate() {
            match m.kind {
                RowKind::Equality => eq_rows.push(r),
                RowKind::Inequality => in_rows.push(r),
            }
        }
        let pack = |rows: &[usize]| {
            let mut val = DVector::zeros(rows.len());
            let mut jac = DMatrix::zeros(rows.len(), dim);
            for (k, &r) in rows.iter().enumerate() {
                val[k] = vals[r];
                jac.view_mut((k, 0), (1, nx)).copy_from(&jx.row(r));
                jac.view_mut((k, nx), (1, nu)).copy_from(&ju.row(r));
                if na > 0 {
                    jac.view_mut((k, nx + nu), (1, na)).copy_from(&ja.row(r));
                }
            }
            (val, jac)
        };
        let (eq_val, eq_jac) = pack(&eq_rows);
        let (in_val, in_jac) = pack(&in_rows);
        (eq_val, eq_jac, in_val, in_jac)
    }

    /// Evaluate all constraint blocks at `v`.
    pub fn eval_blocks(&self, v: &DVector<f64>) -> Result<BlockEval> {
        let n = self.layout.n_horizon;
        let mut eq_res = Vec::with_capacity(n + 1);
        let mut eq_j_self = Vec::with_capacity(n + 1);
        let mut eq_j_prev = Vec::with_capacity(n + 1);
        let mut ineq_val = Vec::with_capacity(n + 1);
        let mut ineq_j_self = Vec::with_capacity(n + 1);

        for i in 0..=n {
            let dim = self.layout.block_dim(i);
            let dim_prev = if i > 0 { self.layout.block_dim(i - 1) } else { 0 };
            let nx = self.layout.x_dim(i);

            let mut eq_parts: Vec<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> = Vec::new();

            if i == 0 {
                // Initial-state pin: x_0 - x0 = 0.
                let r = self.state_at(v, 0).into_owned() - &self.x0;
                let mut j = DMatrix::zeros(nx, dim);
                j.view_mut((0, 0), (nx, nx))
                    .copy_from(&DMatrix::identity(nx, nx));
                eq_parts.push((r, j, DMatrix::zeros(nx, 0)));
            } else {
                // Dynamics defect (i-1) -> i.
                let (r, jx_prev, ju_prev) = self.defect(i - 1, v)?;
                let mut j_self = DMatrix::zeros(nx, dim);
                j_self
                    .view_mut((0, 0), (nx, nx))
                    .copy_from(&(-DMatrix::<f64>::identity(nx, nx)));
                let mut j_prev = DMatrix::zeros(nx, dim_prev);
                let nx_prev = self.layout.x_dim(i - 1);
                let nu_prev = self.layout.u_dim(i - 1);
                j_prev.view_mut((0, 0), (nx, nx_prev)).copy_from(&jx_prev);
                j_prev
                    .view_mut((0, nx_prev), (nx, nu_prev))
                    .copy_from(&ju_prev);
                eq_parts.push((r, j_self, j_prev));
            }

            if i < n {
                // Auxiliary defining rows.
                if self.layout.aux_dim(i) > 0 {
                    let x = self.state_at(v, i).into_owned();
                    let u = self.control_at(v, i).into_owned();
                    let aux = self.aux_at(v, i).into_owned();
                    let t = self.start + i;
                    let r = self.pair.aux_residual(&x, &u, &aux, t)?;
                    let (jx, ju, ja) = self.pair.aux_jacobian(&x, &u, &aux, t)?;
                    let m = r.len();
                    let mut j = DMatrix::zeros(m, dim);
                    let nu = self.layout.u_dim(i);
                    let na = self.layout.aux_dim(i);
                    j.view_mut((0, 0), (m, nx)).copy_from(&jx);
                    j.view_mut((0, nx), (m, nu)).copy_from(&ju);
                    j.view_mut((0, nx + nu), (m, na)).copy_from(&ja);
                    eq_parts.push((r, j, DMatrix::zeros(m, 0)));
                }
                let (eq_val, eq_jac, in_val, in_jac) = self.path_rows(i, v);
                if eq_val.len() > 0 {
                    let m = eq_val.len();
                    eq_parts.push((eq_val, eq_jac, DMatrix::zeros(m, 0)));
                }
                ineq_val.push(in_val);
                ineq_j_self.push(in_jac);
            } else {
                // Terminal rows.
                let x = self.state_at(v, n).into_owned();
                let t = self.start + n;
                let val = self.pair.terminal_constraints(&x, t);
                let jac_x = self.pair.terminal_constraint_jacobian(&x, t);
                let mut jac = DMatrix::zeros(val.len(), dim);
                jac.view_mut((0, 0), (val.len(), nx)).copy_from(&jac_x);
                ineq_val.push(val);
                ineq_j_self.push(jac);
            }

            // Stack the equality parts for this index.
            let m_total: usize = eq_parts.iter().map(|(r, _, _)| r.len()).sum();
            let mut res = DVector::zeros(m_total);
            let mut j_self = DMatrix::zeros(m_total, dim);
            let mut j_prev = DMatrix::zeros(m_total, dim_prev);
            let mut row = 0;
            for (r, js, jp) in eq_parts {
                let m = r.len();
                res.rows_mut(row, m).copy_from(&r);
                j_self.view_mut((row, 0), (m, dim)).copy_from(&js);
                if jp.ncols() > 0 {
                    j_prev.view_mut((row, 0), (m, dim_prev)).copy_from(&jp);
                }
                row += m;
            }
            eq_res.push(res);
            eq_j_self.push(j_self);
            eq_j_prev.push(j_prev);
        }

        Ok(BlockEval {
            eq_res,
            eq_j_self,
            eq_j_prev,
            ineq_val,
            ineq_j_self,
        })
    }

    /// Dynamics defect residual for index `i -> i+1` without Jacobians.
    fn defect_residual(&self, i: usize, v: &DVector<f64>) -> Result<DVector<f64>> {
        let pair = self.pair.as_ref();
        let x = self.state_at(v, i).into_owned();
        let u = self.control_at(v, i).into_owned();
        let x_next = self.state_at(v, i + 1).into_owned();
        let here_simple = self.space_at(i) == Space::Simple;
        let next_simple = self.space_at(i + 1) == Space::Simple;
        let pred = match (here_simple, next_simple) {
            (false, false) => pair.complex_step(&x, &u)?,
            (false, true) => pair.reduce_state(&pair.complex_step(&x, &u)?),
            (true, false) => {
                let zl =
                    crate::model::lift(&StagePair::simple(x, u), &self.refs[i], pair)?;
                pair.complex_step(&zl.state, &zl.control)?
            }
            (true, true) => pair.simple_step(&x, &u, self.start + i)?,
        };
        Ok(pred - x_next)
    }

    /// Path constraint values at index `i` without Jacobians, in evaluator
    /// row order, with the matching metadata.
    fn path_values(&self, i: usize, v: &DVector<f64>) -> (DVector<f64>, &[crate::model::RowMeta]) {
        let pair = self.pair.as_ref();
        let t = self.start + i;
        let x = self.state_at(v, i).into_owned();
        let u = self.control_at(v, i).into_owned();
        match self.space_at(i) {
            Space::Simple => (
                pair.simple_constraints(&x, &u, t),
                pair.simple_constraint_meta(t),
            ),
            Space::Complex if self.options.simple_constraints_only => {
                let xs = pair.reduce_state(&x);
                let us = pair.reduce_control(&u, &x);
                (
                    pair.simple_constraints(&xs, &us, t),
                    pair.simple_constraint_meta(t),
                )
            }
            Space::Complex => {
                let aux = self.aux_at(v, i).into_owned();
                (
                    pair.complex_constraints(&x, &u, &aux, t),
                    pair.complex_constraint_meta(t),
                )
            }
        }
    }

    /// L1 norms of the constraint residuals at `v` (equality absolute sum,
    /// positive-part inequality sum) plus their maxima. Cheaper than
    /// [`OcpProblem::eval_blocks`]; used by the merit line search.
    pub fn residual_norms(&self, v: &DVector<f64>) -> Result<ResidualNorms> {
        let n = self.layout.n_horizon;
        let mut out = ResidualNorms::default();
        let pin = self.state_at(v, 0).into_owned() - &self.x0;
        out.absorb_eq(&pin);
        for i in 0..n {
            let d = self.defect_residual(i, v)?;
            out.absorb_eq(&d);
            if self.layout.aux_dim(i) > 0 {
                let x = self.state_at(v, i).into_owned();
                let u = self.control_at(v, i).into_owned();
                let aux = self.aux_at(v, i).into_owned();
                let r = self.pair.aux_residual(&x, &u, &aux, self.start + i)?;
                out.absorb_eq(&r);
            }
            let (vals, meta) = self.path_values(i, v);
            for (r, m) in meta.iter().enumerate() {
                match m.kind {
                    RowKind::Equality => {
                        out.eq_l1 += vals[r].abs();
                        out.eq_max = out.eq_max.max(vals[r].abs());
                    }
                    RowKind::Inequality => {
                        out.ineq_l1 += vals[r].max(0.0);
                        out.ineq_max = out.ineq_max.max(vals[r]);
                    }
                }
            }
        }
        let term = self
            .pair
            .terminal_constraints(&self.state_at(v, n).into_owned(), self.start + n);
        for &x in term.iter() {
            out.ineq_l1 += x.max(0.0);
            out.ineq_max = out.ineq_max.max(x);
        }
        Ok(out)
    }

    /// Structured text dump of dimensions, sparsity and row counts, for
    /// cross-implementation diffing.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let n = self.layout.n_horizon;
        s.push_str(&format!(
            "ocp horizon={} start={} vars={} mask={}\n",
            n,
            self.start,
            self.layout.total_vars,
            self.simplicity.mask_string()
        ));
        let guess = self
            .initial_guess_from_reference()
            .unwrap_or_else(|_| DVector::zeros(self.layout.total_vars));
        if let Ok(blocks) = self.eval_blocks(&guess) {
            for i in 0..=n {
                s.push_str(&format!(
                    "index {i}: x={} u={} aux={} eq_rows={} ineq_rows={}\n",
                    self.layout.x_dim(i),
                    self.layout.u_dim(i),
                    self.layout.aux_dim(i),
                    blocks.eq_res[i].len(),
                    blocks.ineq_val[i].len()
                ));
            }
        }
        s
    }
}

/// Lift an adaptive trajectory to the complex space against its reference
/// window.
pub fn lift_solution(
    traj: &AdaptiveTrajectory,
    refs: &[StagePair],
    start: usize,
    pair: &dyn ModelPair,
) -> Result<LiftedTrajectory> {
    if refs.len() != traj.stages.len() + 1 {
        return Err(Error::contract(
            "reference window length must be horizon + 1",
        ));
    }
    let mut stages = Vec::with_capacity(traj.stages.len());
    for (i, z) in traj.stages.iter().enumerate() {
        match z.space {
            Space::Complex => stages.push(z.clone()),
            Space::Simple => stages.push(crate::model::lift(z, &refs[i], pair)?),
        }
    }
    Ok(LiftedTrajectory {
        start,
        stages,
        terminal_state: traj.terminal_state.clone(),
        refs: refs.to_vec(),
    })
}

/// Reduce an adaptive trajectory to the simple space.
pub fn reduce_solution(traj: &AdaptiveTrajectory, pair: &dyn ModelPair) -> Result<Vec<StagePair>> {
    traj.stages
        .iter()
        .map(|z| match z.space {
            Space::Simple => Ok(z.clone()),
            Space::Complex => crate::model::reduce(z, pair),
        })
        .collect()
}

/// Shift a converged solve one index forward as the initial guess for the
/// successor problem.
///
/// The vacated terminal index is filled with the terminal policy applied to
/// the previous predicted terminal state; indices whose space changed
/// between the two simplicity sets are lifted or reduced; duals move with
/// their rows where the row structure matches and start at zero elsewhere.
/// Returns `None` when the previous solve did not converge, in which case
/// the caller falls back to reference initialization.
pub fn shift_warm_start(
    prev: &crate::sqp::SolverResult,
    prev_problem: &OcpProblem,
    next_problem: &OcpProblem,
) -> Option<crate::sqp::WarmStart> {
    if !prev.converged() {
        return None;
    }
    shift_warm_start_relaxed(prev, prev_problem, next_problem)
}

/// Shift any structurally intact result, converged or not. Receding-horizon
/// continuation of partially converged solves: the shifted iterate carries
/// the progress made so far into the next solve.
pub fn shift_warm_start_relaxed(
    prev: &crate::sqp::SolverResult,
    prev_problem: &OcpProblem,
    next_problem: &OcpProblem,
) -> Option<crate::sqp::WarmStart> {
    if prev.primal.len() != prev_problem.layout().total_vars
        || prev.primal.iter().any(|v| !v.is_finite())
    {
        return None;
    }
    let pair = next_problem.pair().as_ref();
    let n = next_problem.layout().n_horizon;
    if prev_problem.layout().n_horizon != n {
        return None;
    }
    let prev_traj = prev_problem.unpack(&prev.primal);
    let layout = next_problem.layout();
    let mut v = DVector::zeros(layout.total_vars);

    // Synthesize the new terminal stage from the terminal policy.
    let x_hat = prev_traj.terminal_state.clone();
    let term_ref = &next_problem.refs()[n - 1];
    let u_t = pair.terminal_policy(&x_hat, term_ref);
    let filled = StagePair::complex(x_hat, u_t);
    let term_state = pair
        .complex_step(&filled.state, &filled.control)
        .unwrap_or_else(|_| next_problem.refs()[n].state.clone());

    for i in 0..n {
        let src: StagePair = if i + 1 < n {
            prev_traj.stages[i + 1].clone()
        } else {
            filled.clone()
        };
        let target_space = next_problem.space_at(i);
        let converted = match (src.space, target_space) {
            (a, b) if a == b => src.clone(),
            (Space::Complex, Space::Simple) => crate::model::reduce(&src, pair).ok()?,
            (Space::Simple, Space::Complex) => {
                crate::model::lift(&src, &next_problem.refs()[i], pair).ok()?
            }
            _ => unreachable!(),
        };
        v.rows_mut(layout.x_range(i).start, layout.x_dim(i))
            .copy_from(&converted.state);
        v.rows_mut(layout.u_range(i).start, layout.u_dim(i))
            .copy_from(&converted.control);
        if layout.aux_dim(i) > 0 {
            let prev_aux = if i + 1 < n {
                let a = &prev_traj.aux[i + 1];
                (a.len() == layout.aux_dim(i)).then(|| a.clone())
            } else {
                None
            };
            let aux = match prev_aux {
                Some(a) => a,
                // Newly complex index: initialize from the reference stage's
                // inverse kinematics.
                None => pair.resolve_aux_guess(
                    &next_problem.refs()[i].state,
                    &next_problem.refs()[i].control,
                    next_problem.start() + i,
                ),
            };
            v.rows_mut(layout.aux_range(i).start, layout.aux_dim(i))
                .copy_from(&aux);
        }
    }
    // Pin the measured state and fill the terminal block.
    v.rows_mut(layout.x_range(0).start, layout.x_dim(0))
        .copy_from(next_problem.x0());
    v.rows_mut(layout.x_range(n).start, layout.x_dim(n))
        .copy_from(&term_state);

    // Shift duals and active sets where the row structure matches.
    let mut eq_duals = Vec::with_capacity(n + 1);
    let mut ineq_duals = Vec::with_capacity(n + 1);
    let mut active = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let m_eq = next_problem.eq_row_count(i);
        let m_in = next_problem.ineq_row_count(i);
        let src_idx = if i == n {
            Some(n)
        } else if i >= 1 {
            Some(i + 1)
        } else {
            None
        };
        let (src_eq, src_in, src_act) = match src_idx {
            Some(j) if prev.eq_duals.len() == n + 1 => (
                prev.eq_duals.get(j),
                prev.ineq_duals.get(j),
                prev.active.get(j),
            ),
            _ => (None, None, None),
        };
        eq_duals.push(match src_eq {
            Some(d) if d.len() == m_eq => d.clone(),
            _ => DVector::zeros(m_eq),
        });
        ineq_duals.push(match src_in {
            Some(d) if d.len() == m_in => d.clone(),
            _ => DVector::zeros(m_in),
        });
        active.push(match src_act {
            Some(a) if a.len() == m_in => a.clone(),
            _ => vec![false; m_in],
        });
    }

    Some(crate::sqp::WarmStart {
        primal: v,
        eq_duals,
        ineq_duals,
        active,
    })
}

/// Complex tracking cost of a lifted trajectory: the sum of stage costs about
/// the reference window plus the terminal cost.
pub fn lifted_cost(lifted: &LiftedTrajectory, pair: &dyn ModelPair) -> f64 {
    let mut total = 0.0;
    for (z, r) in lifted.stages.iter().zip(&lifted.refs) {
        total += pair.stage_cost(z, r);
    }
    total
        + pair.terminal_cost(
            &lifted.terminal_state,
            &lifted.refs[lifted.stages.len()].state,
        )
}
