//! An exactly-anchored linear model pair plus brute-force oracles.
//!
//! The complex state is `(p, v, w)`: a double integrator `(p, v)` driven by
//! `u_s`, plus one stable off-manifold mode `w` with `w+ = a_w w + b_w u_w`.
//! The simple system keeps `(p, v)` and `u_s`; the lift restores `w = 0`,
//! `u_w = 0`. Anchoring is exact precisely on the `w = 0, u_w = 0` manifold,
//! which makes every admissibility condition computable in closed form and
//! the feasibility/stability properties checkable by brute force.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{validate_pair, ModelPair, RowMeta};
use crate::space::{Dims, StagePair};

/// Fixture parameters for the linear testbed.
#[derive(Debug, Clone)]
pub struct TestbedParams {
    pub dt: f64,
    /// Off-manifold pole; must be strictly inside the unit circle.
    pub a_w: f64,
    pub b_w: f64,
    /// Box bounds on (p, v, w).
    pub state_bounds: [f64; 3],
    /// Box bounds on (u_s, u_w).
    pub control_bounds: [f64; 2],
    pub q_diag: [f64; 3],
    pub r_diag: [f64; 2],
    /// Edge of the seed cube from which the terminal polytope is grown.
    pub terminal_seed: f64,
    /// Number of closed-loop powers used to build the terminal polytope.
    pub terminal_powers: usize,
    /// Grid resolution per axis for the construction-time terminal check.
    pub grid_check_n: usize,
}

impl Default for TestbedParams {
    fn default() -> Self {
        TestbedParams {
            dt: 0.1,
            a_w: 0.8,
            b_w: 1.0,
            state_bounds: [5.0, 2.0, 1.0],
            control_bounds: [1.0, 1.0],
            q_diag: [10.0, 2.0, 2.0],
            r_diag: [1.0, 1.0],
            terminal_seed: 0.1,
            terminal_powers: 30,
            grid_check_n: 9,
        }
    }
}

/// The linear testbed model pair. See [`make_testbed`].
pub struct TestbedPair {
    params: TestbedParams,
    a_c: DMatrix<f64>,
    b_c: DMatrix<f64>,
    a_s: DMatrix<f64>,
    b_s: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    /// Terminal weight: solution of the discrete Riccati equation.
    p_term: DMatrix<f64>,
    /// Terminal gain with `u_t(x) = K x`.
    k_gain: DMatrix<f64>,
    /// Terminal polytope rows `G x <= h`.
    term_rows: DMatrix<f64>,
    term_rhs: DVector<f64>,
    retained_state: [usize; 2],
    retained_control: [usize; 1],
    complex_meta: Vec<RowMeta>,
    simple_meta: Vec<RowMeta>,
}

impl TestbedPair {
    pub fn params(&self) -> &TestbedParams {
        &self.params
    }

    pub fn terminal_gain(&self) -> &DMatrix<f64> {
        &self.k_gain
    }

    pub fn riccati_weight(&self) -> &DMatrix<f64> {
        &self.p_term
    }

    pub fn complex_matrices(&self) -> (&DMatrix<f64>, &DMatrix<f64>) {
        (&self.a_c, &self.b_c)
    }

    pub fn terminal_polytope(&self) -> (&DMatrix<f64>, &DVector<f64>) {
        (&self.term_rows, &self.term_rhs)
    }

    /// Membership in the terminal set.
    pub fn in_terminal_set(&self, x: &DVector<f64>, tol: f64) -> bool {
        let v = &self.term_rows * x - &self.term_rhs;
        v.iter().all(|&r| r <= tol)
    }
}

fn box_rows(values: &mut Vec<f64>, x: &DVector<f64>, bounds: &[f64]) {
    for (i, &b) in bounds.iter().enumerate() {
        values.push(x[i] - b);
        values.push(-x[i] - b);
    }
}

impl ModelPair for TestbedPair {
    fn name(&self) -> &'static str {
        "linear-testbed"
    }

    fn dims(&self) -> Dims {
        Dims {
            n_xc: 3,
            n_uc: 2,
            n_xs: 2,
            n_us: 1,
        }
    }

    fn dt(&self) -> f64 {
        self.params.dt
    }

    fn retained_state(&self) -> &[usize] {
        &self.retained_state
    }

    fn retained_control(&self) -> &[usize] {
        &self.retained_control
    }

    fn complex_step(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.a_c * x + &self.b_c * u)
    }

    fn complex_step_jacobian(
        &self,
        _x: &DVector<f64>,
        _u: &DVector<f64>,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        Ok((self.a_c.clone(), self.b_c.clone()))
    }

    fn simple_step(&self, x: &DVector<f64>, u: &DVector<f64>, _t: usize) -> Result<DVector<f64>> {
        Ok(&self.a_s * x + &self.b_s * u)
    }

    fn simple_step_jacobian(
        &self,
        _x: &DVector<f64>,
        _u: &DVector<f64>,
        _t: usize,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        Ok((self.a_s.clone(), self.b_s.clone()))
    }

    fn complex_constraints(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        _aux: &DVector<f64>,
        _t: usize,
    ) -> DVector<f64> {
        let mut v = Vec::with_capacity(10);
        box_rows(&mut v, x, &self.params.state_bounds);
        box_rows(&mut v, u, &self.params.control_bounds);
        DVector::from_vec(v)
    }

    fn complex_constraint_jacobian(
        &self,
        _x: &DVector<f64>,
        _u: &DVector<f64>,
        _aux: &DVector<f64>,
        _t: usize,
    ) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let mut jx = DMatrix::zeros(10, 3);
        let mut ju = DMatrix::zeros(10, 2);
        for i in 0..3 {
            jx[(2 * i, i)] = 1.0;
            jx[(2 * i + 1, i)] = -1.0;
        }
        for i in 0..2 {
            ju[(6 + 2 * i, i)] = 1.0;
            ju[(6 + 2 * i + 1, i)] = -1.0;
        }
        (jx, ju, DMatrix::zeros(10, 0))
    }

    fn complex_constraint_meta(&self, _t: usize) -> &[RowMeta] {
        &self.complex_meta
    }

    fn simple_constraints(&self, x: &DVector<f64>, u: &DVector<f64>, _t: usize) -> DVector<f64> {
        let mut v = Vec::with_capacity(6);
        box_rows(&mut v, x, &self.params.state_bounds[..2]);
        box_rows(&mut v, u, &self.params.control_bounds[..1]);
        DVector::from_vec(v)
    }

    fn simple_constraint_jacobian(
        &self,
        _x: &DVector<f64>,
        _u: &DVector<f64>,
        _t: usize,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut jx = DMatrix::zeros(6, 2);
        let mut ju = DMatrix::zeros(6, 1);
        for i in 0..2 {
            jx[(2 * i, i)] = 1.0;
            jx[(2 * i + 1, i)] = -1.0;
        }
        ju[(4, 0)] = 1.0;
        ju[(5, 0)] = -1.0;
        (jx, ju)
    }

    fn simple_constraint_meta(&self, _t: usize) -> &[RowMeta] {
        &self.simple_meta
    }

    fn terminal_constraints(&self, x: &DVector<f64>, _t: usize) -> DVector<f64> {
        &self.term_rows * x - &self.term_rhs
    }

    fn terminal_constraint_jacobian(&self, _x: &DVector<f64>, _t: usize) -> DMatrix<f64> {
        self.term_rows.clone()
    }

    fn weight_q(&self) -> &DMatrix<f64> {
        &self.q
    }

    fn weight_r(&self) -> &DMatrix<f64> {
        &self.r
    }

    fn weight_qt(&self) -> &DMatrix<f64> {
        &self.p_term
    }

    fn terminal_policy(&self, x: &DVector<f64>, ref_stage: &StagePair) -> DVector<f64> {
        &ref_stage.control + &self.k_gain * (x - &ref_stage.state)
    }
}

/// Solve the discrete algebraic Riccati equation by fixed-point iteration
/// and return `(P, K)` with `u = K x` stabilizing.
pub fn discrete_lqr(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let mut p = q.clone();
    for _ in 0..10_000 {
        let s = r + b.transpose() * &p * b;
        let s_inv = s
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::numeric("singular R + B'PB in Riccati iteration"))?;
        let next = q + a.transpose() * &p * a
            - a.transpose() * &p * b * &s_inv * b.transpose() * &p * a;
        let delta = (&next - &p).amax();
        p = next;
        if delta < 1e-13 {
            let s = r + b.transpose() * &p * b;
            let s_inv = s
                .try_inverse()
                .ok_or_else(|| Error::numeric("singular R + B'PB"))?;
            let k = -(&s_inv * b.transpose() * &p * a);
            return Ok((p, k));
        }
    }
    Err(Error::numeric("Riccati iteration did not converge"))
}

/// Build the linear testbed pair, verifying the terminal ingredients at
/// construction: the terminal polytope is forward invariant under the
/// terminal gain and the terminal cost decreases by at least the stage cost
/// on a sampled grid of the terminal set.
pub fn make_testbed(params: &TestbedParams) -> Result<Arc<TestbedPair>> {
    if params.a_w.abs() >= 1.0 {
        return Err(Error::construction(format!(
            "off-manifold pole a_w = {} must satisfy |a_w| < 1",
            params.a_w
        )));
    }
    if params.dt <= 0.0 {
        return Err(Error::construction("dt must be positive"));
    }
    let dt = params.dt;
    let a_c = DMatrix::from_row_slice(
        3,
        3,
        &[1.0, dt, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, params.a_w],
    );
    let b_c = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, dt, 0.0, 0.0, params.b_w]);
    let a_s = DMatrix::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]);
    let b_s = DMatrix::from_row_slice(2, 1, &[0.0, dt]);
    let q = DMatrix::from_diagonal(&DVector::from_row_slice(&params.q_diag));
    let r = DMatrix::from_diagonal(&DVector::from_row_slice(&params.r_diag));

    let (p_term, k_gain) = discrete_lqr(&a_c, &b_c, &q, &r)?;
    let a_cl = &a_c + &b_c * &k_gain;

    // Terminal polytope: seed-cube and control rows propagated through
    // closed-loop powers. Far powers are nearly redundant; the grid check
    // below verifies invariance of the truncated polytope.
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    let mut a_pow = DMatrix::<f64>::identity(3, 3);
    for _ in 0..=params.terminal_powers {
        for i in 0..3 {
            rows.push(a_pow.row(i).into_owned());
            rhs.push(params.terminal_seed);
            rows.push(-a_pow.row(i).into_owned());
            rhs.push(params.terminal_seed);
        }
        let k_pow = &k_gain * &a_pow;
        for i in 0..2 {
            rows.push(k_pow.row(i).into_owned());
            rhs.push(params.control_bounds[i]);
            rows.push(-k_pow.row(i).into_owned());
            rhs.push(params.control_bounds[i]);
        }
        a_pow = &a_cl * a_pow;
    }
    let term_rows = DMatrix::from_rows(&rows);
    let term_rhs = DVector::from_vec(rhs);

    let pair = TestbedPair {
        params: params.clone(),
        a_c,
        b_c,
        a_s,
        b_s,
        q: q.clone(),
        r: r.clone(),
        p_term: p_term.clone(),
        k_gain: k_gain.clone(),
        term_rows,
        term_rhs,
        retained_state: [0, 1],
        retained_control: [0],
        complex_meta: vec![
            RowMeta::ineq("p_max"),
            RowMeta::ineq("p_min"),
            RowMeta::ineq("v_max"),
            RowMeta::ineq("v_min"),
            RowMeta::ineq("w_max"),
            RowMeta::ineq("w_min"),
            RowMeta::ineq("u_s_max"),
            RowMeta::ineq("u_s_min"),
            RowMeta::ineq("u_w_max"),
            RowMeta::ineq("u_w_min"),
        ],
        simple_meta: vec![
            RowMeta::ineq("p_max"),
            RowMeta::ineq("p_min"),
            RowMeta::ineq("v_max"),
            RowMeta::ineq("v_min"),
            RowMeta::ineq("u_s_max"),
            RowMeta::ineq("u_s_min"),
        ],
    };
    validate_pair(&pair)?;

    // Construction-time grid verification of the terminal ingredients.
    let n = params.grid_check_n.max(3);
    let seed = params.terminal_seed;
    let axis: Vec<f64> = (0..n)
        .map(|i| -seed + 2.0 * seed * i as f64 / (n - 1) as f64)
        .collect();
    let l_cl = &q + k_gain.transpose() * &r * &k_gain;
    let mut checked = 0usize;
    for &p0 in &axis {
        for &v0 in &axis {
            for &w0 in &axis {
                let x = DVector::from_row_slice(&[p0, v0, w0]);
                if !pair.in_terminal_set(&x, 1e-12) {
                    continue;
                }
                checked += 1;
                let scale = 1.0 + seed;
                let u = &k_gain * &x;
                for i in 0..2 {
                    if u[i].abs() > params.control_bounds[i] + 1e-9 * scale {
                        return Err(Error::construction(
                            "terminal gain violates control bounds on the terminal set",
                        ));
                    }
                }
                for i in 0..3 {
                    if x[i].abs() > params.state_bounds[i] + 1e-9 * scale {
                        return Err(Error::construction(
                            "terminal set is not contained in the state bounds",
                        ));
                    }
                }
                let x_next = &a_cl * &x;
                if !pair.in_terminal_set(&x_next, 1e-9 * scale) {
                    return Err(Error::construction(
                        "terminal set is not forward invariant under the terminal gain",
                    ));
                }
                let v_now = (x.transpose() * &p_term * &x)[(0, 0)];
                let v_next = (x_next.transpose() * &p_term * &x_next)[(0, 0)];
                let stage = (x.transpose() * &l_cl * &x)[(0, 0)];
                if v_next - v_now > -stage + 1e-9 * (1.0 + v_now.abs()) {
                    return Err(Error::construction(
                        "terminal cost does not decrease by the stage cost on the grid",
                    ));
                }
            }
        }
    }
    if checked == 0 {
        return Err(Error::construction(
            "terminal-set grid check sampled no interior points",
        ));
    }

    Ok(Arc::new(pair))
}

/// Outcome of one brute-force feasibility probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridOutcome {
    Feasible,
    Infeasible,
    /// The solver neither converged nor proved infeasibility; recorded
    /// separately so nesting checks can treat it conservatively.
    SolverFailed,
}

/// Brute-force feasibility mask over a state lattice for one horizon length.
#[derive(Debug, Clone)]
pub struct FeasibilityMask {
    pub n_horizon: usize,
    pub axes: [Vec<f64>; 3],
    outcomes: Vec<GridOutcome>,
}

impl FeasibilityMask {
    fn flat(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.axes[1].len() + j) * self.axes[2].len() + k
    }

    pub fn outcome(&self, i: usize, j: usize, k: usize) -> GridOutcome {
        self.outcomes[self.flat(i, j, k)]
    }

    pub fn is_feasible(&self, i: usize, j: usize, k: usize) -> bool {
        self.outcome(i, j, k) == GridOutcome::Feasible
    }

    pub fn count_feasible(&self) -> usize {
        self.outcomes
            .iter()
            .filter(|&&o| o == GridOutcome::Feasible)
            .count()
    }

    /// `p,v,w,n,feasible` rows for plotting.
    pub fn csv(&self) -> String {
        let mut out = String::from("# schema: basin-mask-v1\np,v,w,n,outcome\n");
        for (i, &p) in self.axes[0].iter().enumerate() {
            for (j, &v) in self.axes[1].iter().enumerate() {
                for (k, &w) in self.axes[2].iter().enumerate() {
                    let o = match self.outcome(i, j, k) {
                        GridOutcome::Feasible => 1,
                        GridOutcome::Infeasible => 0,
                        GridOutcome::SolverFailed => -1,
                    };
                    out.push_str(&format!("{p},{v},{w},{},{o}\n", self.n_horizon));
                }
            }
        }
        out
    }
}

/// Uniformly spaced axis over `[-bound, bound]`.
pub fn grid_axis(bound: f64, points: usize) -> Vec<f64> {
    (0..points)
        .map(|i| -bound + 2.0 * bound * i as f64 / (points - 1) as f64)
        .collect()
}

/// Solve the all-complex OCP at every lattice point and record solvability.
/// This is the horizon-`n` basin oracle; points where the solver fails are
/// flagged distinctly rather than being counted infeasible.
pub fn brute_force_feasible_set(
    pair: &Arc<TestbedPair>,
    axes: &[Vec<f64>; 3],
    n_horizon: usize,
) -> FeasibilityMask {
    use rayon::prelude::*;
    let refs = vec![
        crate::space::StagePair::complex(DVector::zeros(3), DVector::zeros(2));
        n_horizon + 1
    ];
    let empty = crate::simplicity::SimplicitySet::empty(n_horizon);
    let points: Vec<(usize, usize, usize)> = (0..axes[0].len())
        .flat_map(|i| {
            (0..axes[1].len()).flat_map(move |j| (0..axes[2].len()).map(move |k| (i, j, k)))
        })
        .collect();
    let outcomes: Vec<GridOutcome> = points
        .par_iter()
        .map(|&(i, j, k)| {
            let x0 = DVector::from_row_slice(&[axes[0][i], axes[1][j], axes[2][k]]);
            let problem = match crate::ocp::assemble(
                pair.clone() as Arc<dyn ModelPair>,
                &empty,
                &x0,
                &refs,
                0,
                crate::ocp::AssembleOptions::default(),
            ) {
                Ok(p) => p,
                Err(_) => return GridOutcome::SolverFailed,
            };
            let solver = crate::sqp::SqpSolver::new(crate::sqp::SqpSettings::testbed());
            let res = solver.solve(&problem, None);
            match res.status {
                crate::sqp::SolveStatus::Converged => GridOutcome::Feasible,
                crate::sqp::SolveStatus::Infeasible => GridOutcome::Infeasible,
                _ if res.feas_residual <= 1e-8 => GridOutcome::Feasible,
                _ => GridOutcome::SolverFailed,
            }
        })
        .collect();
    FeasibilityMask {
        n_horizon,
        axes: axes.clone(),
        outcomes,
    }
}

/// The shifted candidate built from a solved trajectory: previous controls
/// one step forward, terminated by the terminal policy, rolled from the
/// measured successor state.
#[derive(Debug, Clone)]
pub struct SuccessorCandidate {
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub stage_feasible: Vec<bool>,
    pub worst_violation: f64,
    pub terminal_in_set: bool,
    pub cost: f64,
}

impl SuccessorCandidate {
    pub fn feasible(&self) -> bool {
        self.stage_feasible.iter().all(|&f| f) && self.terminal_in_set
    }
}

/// Build and evaluate the successor candidate for a lifted solution of the
/// testbed problem.
pub fn successor_candidate(
    lifted: &crate::model::LiftedTrajectory,
    pair: &TestbedPair,
    feas_tol: f64,
) -> crate::error::Result<SuccessorCandidate> {
    let n = lifted.horizon();
    let x_hat = &lifted.terminal_state;
    let term_ref = &lifted.refs[n];
    let u_t = pair.terminal_policy(x_hat, term_ref);

    let mut controls = Vec::with_capacity(n);
    for z in lifted.stages.iter().skip(1) {
        controls.push(z.control.clone());
    }
    controls.push(u_t);

    // Measured successor state under the first lifted control.
    let x1 = pair.complex_step(&lifted.stages[0].state, &lifted.stages[0].control)?;
    let mut states = vec![x1];
    let mut stage_feasible = Vec::with_capacity(n);
    let mut worst = 0.0_f64;
    let mut cost = 0.0;
    for (i, u) in controls.iter().enumerate() {
        let x = states[i].clone();
        let z = crate::space::StagePair::complex(x.clone(), u.clone());
        let rep = crate::model::check_feasible(&z, pair, lifted.start + 1 + i, feas_tol);
        worst = worst.max(rep.max_violation());
        stage_feasible.push(rep.feasible());
        let ref_stage = &lifted.refs[(i + 1).min(n)];
        cost += pair.stage_cost(&z, ref_stage);
        states.push(pair.complex_step(&x, u)?);
    }
    let terminal = states[n].clone();
    cost += pair.terminal_cost(&terminal, &lifted.refs[n].state);
    Ok(SuccessorCandidate {
        terminal_in_set: pair.in_terminal_set(&terminal, feas_tol),
        states,
        controls,
        stage_feasible,
        worst_violation: worst,
        cost,
    })
}
