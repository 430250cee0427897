//! Sequential quadratic programming over the assembled OCP.
//!
//! Each iteration linearizes the constraint blocks, solves a convex QP with
//! the (exact, since the costs are quadratic) Gauss-Newton Hessian, and
//! globalizes with a backtracking line search on an L1 merit function.
//! Infeasible subproblems fall back to an elastic relaxation with growing
//! penalty. Warm starts carry the primal, the duals and the QP active set.

pub mod kkt;
pub mod qp;

use std::time::Instant;

use nalgebra::DVector;

use crate::error::Result;
use crate::ocp::OcpProblem;
pub use qp::{
    elastic_relaxation, qp_solve, QpBlock, QpSettings, QpSolution, QpStatus, QpSubproblem,
};

/// Hessian handling; the tracking costs are quadratic, so the Gauss-Newton
/// Hessian is the exact cost Hessian. The regularized mode adds unconditional
/// Levenberg damping for problems with strongly nonlinear constraint rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HessianMode {
    GaussNewton,
    ExactRegularized,
}

#[derive(Debug, Clone)]
pub struct SqpSettings {
    pub kkt_tol: f64,
    pub feas_tol: f64,
    pub max_iter: usize,
    pub hessian: HessianMode,
    /// Added to zero cost-Hessian diagonal entries (and to all entries in
    /// the regularized mode).
    pub reg_min: f64,
    pub merit_penalty_growth: f64,
    pub ls_backtrack: f64,
    pub ls_min_step: f64,
    pub qp: QpSettings,
    /// Record the per-iteration log.
    pub verbose: bool,
}

impl Default for SqpSettings {
    fn default() -> Self {
        SqpSettings {
            kkt_tol: 1e-6,
            feas_tol: 1e-6,
            max_iter: 50,
            hessian: HessianMode::GaussNewton,
            reg_min: 1e-8,
            merit_penalty_growth: 10.0,
            ls_backtrack: 0.5,
            ls_min_step: 1e-12,
            qp: QpSettings::default(),
            verbose: false,
        }
    }
}

impl SqpSettings {
    /// Tight tolerances used on the linear testbed, where every problem is a
    /// convex QP.
    pub fn testbed() -> Self {
        SqpSettings {
            kkt_tol: 1e-8,
            feas_tol: 1e-8,
            ..SqpSettings::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    MaxIter,
    Infeasible,
    NumericFailure,
}

/// One line of the iteration log.
#[derive(Debug, Clone)]
pub struct IterRecord {
    pub iteration: usize,
    pub objective: f64,
    pub merit: f64,
    pub step_length: f64,
    pub kkt_residual: f64,
    pub feas_residual: f64,
    pub qp_iterations: usize,
}

/// Outcome of one NLP solve.
#[derive(Debug, Clone)]
pub struct SolverResult {
    pub primal: DVector<f64>,
    pub eq_duals: Vec<DVector<f64>>,
    pub ineq_duals: Vec<DVector<f64>>,
    pub active: Vec<Vec<bool>>,
    pub status: SolveStatus,
    pub kkt_residual: f64,
    pub feas_residual: f64,
    pub objective: f64,
    pub iterations: usize,
    pub wall_time: f64,
    pub elastic_activations: usize,
    pub failure: Option<String>,
    pub iter_log: Vec<IterRecord>,
}

impl SolverResult {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

/// Primal/dual warm start for [`SqpSolver::solve`].
#[derive(Debug, Clone)]
pub struct WarmStart {
    pub primal: DVector<f64>,
    pub eq_duals: Vec<DVector<f64>>,
    pub ineq_duals: Vec<DVector<f64>>,
    pub active: Vec<Vec<bool>>,
}

/// The SQP solver. One instance per concurrent solve stream.
pub struct SqpSolver {
    pub settings: SqpSettings,
}

impl SqpSolver {
    pub fn new(settings: SqpSettings) -> Self {
        SqpSolver { settings }
    }

    pub fn solve(&self, problem: &OcpProblem, warm: Option<&WarmStart>) -> SolverResult {
        let t0 = Instant::now();
        match self.solve_inner(problem, warm, t0) {
            Ok(res) => res,
            Err(e) => SolverResult {
                primal: DVector::zeros(problem.layout().total_vars),
                eq_duals: Vec::new(),
                ineq_duals: Vec::new(),
                active: Vec::new(),
                status: SolveStatus::NumericFailure,
                kkt_residual: f64::INFINITY,
                feas_residual: f64::INFINITY,
                objective: f64::INFINITY,
                iterations: 0,
                wall_time: t0.elapsed().as_secs_f64(),
                elastic_activations: 0,
                failure: Some(e.to_string()),
                iter_log: Vec::new(),
            },
        }
    }

    fn solve_inner(
        &self,
        problem: &OcpProblem,
        warm: Option<&WarmStart>,
        t0: Instant,
    ) -> Result<SolverResult> {
        let s = &self.settings;
        let layout = problem.layout();
        let n_blocks = layout.n_horizon + 1;

        // A shifted warm start can be much worse than the reference guess
        // when new indices enter a difficult region; start from whichever
        // is closer to feasibility.
        let ref_guess = problem.initial_guess_from_reference()?;
        let mut use_warm = false;
        let mut v = match warm {
            Some(w) if w.primal.len() == layout.total_vars => {
                let warm_viol = problem.residual_norms(&w.primal).map(|n| n.max());
                let ref_viol = problem.residual_norms(&ref_guess).map(|n| n.max());
                match (warm_viol, ref_viol) {
                    (Ok(wv), Ok(rv)) if wv <= rv.max(1e-6) * 20.0 => {
                        use_warm = true;
                        w.primal.clone()
                    }
                    (Ok(_), Ok(_)) => ref_guess.clone(),
                    (Err(_), _) => ref_guess.clone(),
                    (_, Err(_)) => {
                        use_warm = true;
                        w.primal.clone()
                    }
                }
            }
            _ => ref_guess.clone(),
        };
        let eq_sizes: Vec<usize> = (0..n_blocks).map(|i| problem.eq_row_count(i)).collect();
        let in_sizes: Vec<usize> = (0..n_blocks).map(|i| problem.ineq_row_count(i)).collect();
        let mut eq_duals: Vec<DVector<f64>> = match warm {
            Some(w)
                if use_warm
                    && w.eq_duals.len() == n_blocks
                    && w.eq_duals.iter().map(|d| d.len()).eq(eq_sizes.iter().copied()) =>
            {
                w.eq_duals.clone()
            }
            _ => eq_sizes.iter().map(|&m| DVector::zeros(m)).collect(),
        };
        let mut ineq_duals: Vec<DVector<f64>> = match warm {
            Some(w)
                if use_warm
                    && w.ineq_duals.len() == n_blocks
                    && w.ineq_duals.iter().map(|d| d.len()).eq(in_sizes.iter().copied()) =>
            {
                w.ineq_duals.clone()
            }
            _ => in_sizes.iter().map(|&m| DVector::zeros(m)).collect(),
        };
        let mut active: Vec<Vec<bool>> = match warm {
            Some(w)
                if use_warm
                    && w.active.len() == n_blocks
                    && w.active.iter().map(|a| a.len()).eq(in_sizes.iter().copied()) =>
            {
                w.active.clone()
            }
            _ => in_sizes.iter().map(|&m| vec![false; m]).collect(),
        };

        let mut nu = 1.0_f64;
        let mut elastic_activations = 0usize;
        let mut iter_log = Vec::new();
        let mut result_status = SolveStatus::MaxIter;
        let mut iterations = 0usize;
        let mut last_kkt = f64::INFINITY;
        let mut last_feas = f64::INFINITY;

        for iter in 0..=s.max_iter {
            let blocks = problem.eval_blocks(&v)?;
            let g = problem.gradient(&v);
            let f = problem.objective(&v);
            if !f.is_finite() || g.iter().any(|x| !x.is_finite()) {
                return Ok(self.failed(problem, v, t0, "non-finite objective or gradient"));
            }

            // Stationarity of the Lagrangian with the current duals.
            let mut stat = g.clone();
            for i in 0..n_blocks {
                let br = layout.block_range(i);
                if eq_duals[i].len() > 0 {
                    let contrib = blocks.eq_j_self[i].transpose() * &eq_duals[i];
                    for (k, idx) in br.clone().enumerate() {
                        stat[idx] += contrib[k];
                    }
                    if i > 0 && blocks.eq_j_prev[i].ncols() > 0 {
                        let contrib = blocks.eq_j_prev[i].transpose() * &eq_duals[i];
                        for (k, idx) in layout.block_range(i - 1).enumerate() {
                            stat[idx] += contrib[k];
                        }
                    }
                }
                if ineq_duals[i].len() > 0 {
                    let contrib = blocks.ineq_j_self[i].transpose() * &ineq_duals[i];
                    for (k, idx) in br.enumerate() {
                        stat[idx] += contrib[k];
                    }
                }
            }
            let kkt_res = stat.amax();
            let feas = blocks
                .max_eq_violation()
                .max(blocks.max_ineq_violation());
            last_kkt = kkt_res;
            last_feas = feas;
            let debug_solve = std::env::var("ACMPC_DEBUG_SOLVE").is_ok();
            if debug_solve {
                eprintln!(
                    "  sqp iter {iter}: f={f:.4e} kkt={kkt_res:.3e} feas={feas:.3e} nu={nu:.1e}"
                );
            }

            if kkt_res <= s.kkt_tol && feas <= s.feas_tol {
                result_status = SolveStatus::Converged;
                iterations = iter;
                break;
            }
            if iter == s.max_iter {
                result_status = SolveStatus::MaxIter;
                iterations = iter;
                break;
            }

            // QP subproblem about the current iterate.
            let qp_blocks: Vec<QpBlock> = (0..n_blocks)
                .map(|i| {
                    let br = layout.block_range(i);
                    let mut h = problem.hessian_block(i);
                    match s.hessian {
                        HessianMode::GaussNewton => {
                            for j in 0..h.nrows() {
                                if h[(j, j)] == 0.0 {
                                    h[(j, j)] = s.reg_min;
                                }
                            }
                        }
                        HessianMode::ExactRegularized => {
                            for j in 0..h.nrows() {
                                h[(j, j)] += s.reg_min;
                            }
                        }
                    }
                    QpBlock {
                        h,
                        g: g.rows(br.start, br.len()).into_owned(),
                        eq_self: blocks.eq_j_self[i].clone(),
                        eq_prev: blocks.eq_j_prev[i].clone(),
                        eq_rhs: -&blocks.eq_res[i],
                        ineq: blocks.ineq_j_self[i].clone(),
                        ineq_ub: -&blocks.ineq_val[i],
                        // Dynamics defect / initial pin rows stay hard under
                        // elastic relaxation.
                        n_eq_hard: layout.x_dim(i),
                    }
                })
                .collect();
            let qp = QpSubproblem { blocks: qp_blocks };

            let mut sol = qp_solve(&qp, Some(&active), &s.qp)?;
            if debug_solve && sol.status != QpStatus::Optimal {
                eprintln!(
                    "    qp {:?} after {} its, {} changes, kkt {:.2e}",
                    sol.status, sol.iterations, sol.active_set_changes, sol.kkt_residual
                );
            }
            if sol.status != QpStatus::Optimal {
                // Elastic fallback with growing penalty.
                elastic_activations += 1;
                let mut rho = 10.0 * (1.0 + g.amax());
                let mut best: Option<(QpSolution, f64)> = None;
                for _ in 0..4 {
                    let relaxed = elastic_relaxation(&qp, rho, s.reg_min.max(1e-8));
                    let esol = qp_solve(&relaxed, None, &s.qp)?;
                    if debug_solve {
                        eprintln!(
                            "    elastic rho {rho:.1e}: {:?} after {} its",
                            esol.status, esol.iterations
                        );
                    }
                    if esol.status == QpStatus::Optimal {
                        let max_slack = (0..n_blocks)
                            .map(|i| {
                                let dim = qp.blocks[i].dim();
                                let n_slack = esol.primal[i].len() - dim;
                                if n_slack == 0 {
                                    0.0
                                } else {
                                    esol.primal[i].rows(dim, n_slack).amax()
                                }
                            })
                            .fold(0.0_f64, f64::max);
                        // Restrict back to the original variables and rows.
                        let restricted = QpSolution {
                            primal: (0..n_blocks)
                                .map(|i| esol.primal[i].rows(0, qp.blocks[i].dim()).into_owned())
                                .collect(),
                            eq_duals: esol.eq_duals.clone(),
                            ineq_duals: (0..n_blocks)
                                .map(|i| {
                                    esol.ineq_duals[i].rows(0, qp.blocks[i].n_ineq()).into_owned()
                                })
                                .collect(),
                            active: (0..n_blocks)
                                .map(|i| esol.active[i][..qp.blocks[i].n_ineq()].to_vec())
                                .collect(),
                            status: QpStatus::Optimal,
                            kkt_residual: esol.kkt_residual,
                            iterations: esol.iterations,
                            active_set_changes: esol.active_set_changes,
                        };
                        let done = max_slack <= s.feas_tol.max(1e-7);
                        if best.as_ref().map_or(true, |(_, sl)| max_slack < *sl) {
                            best = Some((restricted, max_slack));
                        }
                        if done {
                            break;
                        }
                    }
                    rho *= s.merit_penalty_growth;
                }
                match best {
                    // Residual slack can be an artifact of the local
                    // linearization; keep iterating on the relaxed step and
                    // let the merit loop judge progress.
                    Some((restricted, _)) => {
                        sol = restricted;
                    }
                    None => {
                        result_status = SolveStatus::Infeasible;
                        iterations = iter;
                        break;
                    }
                }
            }

            let mut d = DVector::zeros(layout.total_vars);
            for i in 0..n_blocks {
                let br = layout.block_range(i);
                d.rows_mut(br.start, br.len()).copy_from(&sol.primal[i]);
            }
            if d.iter().any(|x| !x.is_finite()) {
                return Ok(self.failed(problem, v, t0, "non-finite QP step"));
            }

            // L1 merit line search.
            let dual_inf = sol
                .eq_duals
                .iter()
                .chain(sol.ineq_duals.iter())
                .filter(|x| x.len() > 0)
                .map(|x| x.amax())
                .fold(0.0_f64, f64::max);
            nu = nu.max(2.0 * dual_inf + 1.0);
            let norms0 = problem.residual_norms(&v)?;
            let phi0 = f + nu * norms0.l1();
            let dphi = g.dot(&d) - nu * norms0.l1();
            let mut alpha = 1.0_f64;
            let mut accepted = false;
            let mut v_try = v.clone();
            let mut merit_try = f64::INFINITY;
            while alpha >= s.ls_min_step {
                v_try = &v + alpha * &d;
                let f_try = problem.objective(&v_try);
                let merit = match problem.residual_norms(&v_try) {
                    Ok(nrm) if f_try.is_finite() => f_try + nu * nrm.l1(),
                    _ => f64::INFINITY,
                };
                merit_try = merit;
                if merit <= phi0 + 1e-4 * alpha * dphi {
                    accepted = true;
                    break;
                }
                alpha *= s.ls_backtrack;
            }
            if !accepted {
                // A failed line search on a descent direction means the
                // subproblem no longer reflects the nonlinearity; stop with
                // the best iterate rather than looping.
                result_status = if feas <= s.feas_tol {
                    SolveStatus::MaxIter
                } else {
                    SolveStatus::NumericFailure
                };
                iterations = iter;
                break;
            }

            if s.verbose {
                iter_log.push(IterRecord {
                    iteration: iter,
                    objective: f,
                    merit: merit_try,
                    step_length: alpha,
                    kkt_residual: kkt_res,
                    feas_residual: feas,
                    qp_iterations: sol.iterations,
                });
            }

            v = v_try;
            eq_duals = sol.eq_duals;
            ineq_duals = sol.ineq_duals;
            active = sol.active;
            iterations = iter + 1;
        }

        Ok(SolverResult {
            objective: problem.objective(&v),
            primal: v,
            eq_duals,
            ineq_duals,
            active,
            status: result_status,
            kkt_residual: last_kkt,
            feas_residual: last_feas,
            iterations,
            wall_time: t0.elapsed().as_secs_f64(),
            elastic_activations,
            failure: None,
            iter_log,
        })
    }

    fn failed(
        &self,
        _problem: &OcpProblem,
        v: DVector<f64>,
        t0: Instant,
        why: &str,
    ) -> SolverResult {
        SolverResult {
            objective: f64::INFINITY,
            primal: v,
            eq_duals: Vec::new(),
            ineq_duals: Vec::new(),
            active: Vec::new(),
            status: SolveStatus::NumericFailure,
            kkt_residual: f64::INFINITY,
            feas_residual: f64::INFINITY,
            iterations: 0,
            wall_time: t0.elapsed().as_secs_f64(),
            elastic_activations: 0,
            failure: Some(why.to_string()),
            iter_log: Vec::new(),
        }
    }
}

/// Compare the analytic constraint Jacobians and cost gradient against
/// central finite differences at `point`; returns the worst relative error.
pub fn check_derivatives(problem: &OcpProblem, point: &DVector<f64>, h: f64) -> Result<f64> {
    let layout = problem.layout();
    let n_blocks = layout.n_horizon + 1;
    let blocks = problem.eval_blocks(point)?;
    let g = problem.gradient(point);

    let stack = |b: &crate::ocp::BlockEval| -> DVector<f64> {
        let total: usize = b.eq_res.iter().map(|r| r.len()).sum::<usize>()
            + b.ineq_val.iter().map(|r| r.len()).sum::<usize>();
        let mut out = DVector::zeros(total);
        let mut row = 0;
        for r in b.eq_res.iter().chain(b.ineq_val.iter()) {
            out.rows_mut(row, r.len()).copy_from(r);
            row += r.len();
        }
        out
    };

    // Dense analytic Jacobian of the stacked residuals.
    let m_eq: usize = blocks.eq_res.iter().map(|r| r.len()).sum();
    let m_in: usize = blocks.ineq_val.iter().map(|r| r.len()).sum();
    let mut jac = nalgebra::DMatrix::<f64>::zeros(m_eq + m_in, layout.total_vars);
    let mut row = 0;
    for i in 0..n_blocks {
        let m = blocks.eq_res[i].len();
        let br = layout.block_range(i);
        jac.view_mut((row, br.start), (m, br.len()))
            .copy_from(&blocks.eq_j_self[i]);
        if i > 0 && blocks.eq_j_prev[i].ncols() > 0 {
            let bp = layout.block_range(i - 1);
            jac.view_mut((row, bp.start), (m, bp.len()))
                .copy_from(&blocks.eq_j_prev[i]);
        }
        row += m;
    }
    for i in 0..n_blocks {
        let m = blocks.ineq_val[i].len();
        let br = layout.block_range(i);
        jac.view_mut((row, br.start), (m, br.len()))
            .copy_from(&blocks.ineq_j_self[i]);
        row += m;
    }

    let mut worst = 0.0_f64;
    for j in 0..layout.total_vars {
        let mut vp = point.clone();
        let mut vm = point.clone();
        vp[j] += h;
        vm[j] -= h;
        let rp = stack(&problem.eval_blocks(&vp)?);
        let rm = stack(&problem.eval_blocks(&vm)?);
        let fd = (rp - rm) / (2.0 * h);
        for r in 0..fd.len() {
            let a = jac[(r, j)];
            let err = (a - fd[r]).abs() / a.abs().max(fd[r].abs()).max(1.0);
            worst = worst.max(err);
        }
        let fp = problem.objective(&vp);
        let fm = problem.objective(&vm);
        let fd_g = (fp - fm) / (2.0 * h);
        let err = (g[j] - fd_g).abs() / g[j].abs().max(fd_g.abs()).max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelPair;
    use crate::ocp::{assemble, AssembleOptions};
    use crate::simplicity::SimplicitySet;
    use crate::space::StagePair;
    use crate::testbed::{make_testbed, TestbedParams};
    use nalgebra::{dvector, DMatrix};

    fn origin_refs(n: usize) -> Vec<StagePair> {
        vec![StagePair::complex(dvector![0.0, 0.0, 0.0], dvector![0.0, 0.0]); n + 1]
    }

    #[test]
    fn testbed_regulation_converges_in_one_iteration() {
        let pair = make_testbed(&TestbedParams::default()).unwrap();
        let problem = assemble(
            pair,
            &SimplicitySet::empty(8),
            &dvector![0.08, -0.02, 0.2],
            &origin_refs(8),
            0,
            AssembleOptions::default(),
        )
        .unwrap();
        let solver = SqpSolver::new(SqpSettings::testbed());
        let res = solver.solve(&problem, None);
        assert_eq!(res.status, SolveStatus::Converged, "{:?}", res.failure);
        // The problem is a convex QP: one accepted SQP step suffices.
        assert!(res.iterations <= 1, "iterations {}", res.iterations);
        assert!(res.kkt_residual <= 1e-8);
        assert!(res.feas_residual <= 1e-8);
    }

    #[test]
    fn unconstrained_double_integrator_matches_riccati_recursion() {
        // Bounds far away: effectively unconstrained regulation.
        let params = TestbedParams {
            state_bounds: [1e6, 1e6, 1e6],
            control_bounds: [1e6, 1e6],
            terminal_seed: 1e6,
            ..TestbedParams::default()
        };
        let pair = make_testbed(&params).unwrap();
        let n = 10;
        let x0 = dvector![2.0, -1.0, 0.5];
        let problem = assemble(
            pair.clone(),
            &SimplicitySet::empty(n),
            &x0,
            &origin_refs(n),
            0,
            AssembleOptions::default(),
        )
        .unwrap();
        let solver = SqpSolver::new(SqpSettings::testbed());
        let res = solver.solve(&problem, None);
        assert_eq!(res.status, SolveStatus::Converged);

        // Finite-horizon LQR recursion as an independent oracle.
        let (a, b) = pair.complex_matrices();
        let q = pair.weight_q();
        let r = pair.weight_r();
        let mut p = pair.weight_qt().clone();
        let mut gains: Vec<DMatrix<f64>> = Vec::new();
        for _ in 0..n {
            let s = r + b.transpose() * &p * b;
            let k = s.clone().try_inverse().unwrap() * b.transpose() * &p * a;
            p = q + a.transpose() * &p * a - a.transpose() * &p * b * &k;
            gains.push(k);
        }
        gains.reverse();
        let mut x = x0.clone();
        let traj = problem.unpack(&res.primal);
        for i in 0..n {
            let u = -&gains[i] * &x;
            assert!(
                (&traj.stages[i].control - &u).amax() < 1e-6,
                "control mismatch at {i}"
            );
            assert!((&traj.stages[i].state - &x).amax() < 1e-6);
            x = a * &x + b * &u;
        }
        assert!((&traj.terminal_state - &x).amax() < 1e-6);
    }

    #[test]
    fn adaptive_mask_solves_and_respects_bounds() {
        let pair = make_testbed(&TestbedParams::default()).unwrap();
        let problem = assemble(
            pair,
            &SimplicitySet::range(8, 2, 6),
            &dvector![0.05, 0.15, 0.3],
            &origin_refs(8),
            0,
            AssembleOptions::default(),
        )
        .unwrap();
        let solver = SqpSolver::new(SqpSettings::testbed());
        let res = solver.solve(&problem, None);
        assert_eq!(res.status, SolveStatus::Converged, "{:?}", res.failure);
        let traj = problem.unpack(&res.primal);
        for z in &traj.stages {
            assert!(z.control[0].abs() <= 1.0 + 1e-8);
        }
    }

    #[test]
    fn identical_solves_are_bitwise_identical() {
        let pair = make_testbed(&TestbedParams::default()).unwrap();
        let problem = assemble(
            pair,
            &SimplicitySet::range(8, 2, 6),
            &dvector![0.1, -0.05, 0.4],
            &origin_refs(8),
            0,
            AssembleOptions::default(),
        )
        .unwrap();
        let solver = SqpSolver::new(SqpSettings::testbed());
        let a = solver.solve(&problem, None);
        let b = solver.solve(&problem, None);
        assert_eq!(a.primal, b.primal);
        assert_eq!(a.iterations, b.iterations);
    }

    #[test]
    fn derivative_check_is_exact_on_linear_rows() {
        let pair = make_testbed(&TestbedParams::default()).unwrap();
        let problem = assemble(
            pair,
            &SimplicitySet::range(6, 2, 4),
            &dvector![0.5, 0.1, 0.2],
            &origin_refs(6),
            0,
            AssembleOptions::default(),
        )
        .unwrap();
        let v = problem.initial_guess_from_reference().unwrap();
        let err = check_derivatives(&problem, &v, 1e-6).unwrap();
        assert!(err < 1e-9, "derivative error {err}");
    }

    #[test]
    fn merit_is_monotone_over_accepted_steps() {
        let pair = make_testbed(&TestbedParams::default()).unwrap();
        let problem = assemble(
            pair,
            &SimplicitySet::empty(8),
            &dvector![0.05, 0.12, 0.5],
            &origin_refs(8),
            0,
            AssembleOptions::default(),
        )
        .unwrap();
        let mut settings = SqpSettings::testbed();
        settings.verbose = true;
        let solver = SqpSolver::new(settings);
        let res = solver.solve(&problem, None);
        assert_eq!(res.status, SolveStatus::Converged);
        for w in res.iter_log.windows(2) {
            assert!(w[1].merit <= w[0].merit + 1e-9);
        }
    }

    #[test]
    fn converged_solution_is_feasible_per_stage() {
        let pair = make_testbed(&TestbedParams::default()).unwrap();
        let problem = assemble(
            pair.clone(),
            &SimplicitySet::range(8, 2, 6),
            &dvector![0.06, 0.1, 0.45],
            &origin_refs(8),
            0,
            AssembleOptions::default(),
        )
        .unwrap();
        let solver = SqpSolver::new(SqpSettings::testbed());
        let res = solver.solve(&problem, None);
        assert_eq!(res.status, SolveStatus::Converged);
        let traj = problem.unpack(&res.primal);
        let lifted =
            crate::ocp::lift_solution(&traj, problem.refs(), 0, pair.as_ref()).unwrap();
        for (i, z) in lifted.stages.iter().enumerate() {
            let rep = crate::model::check_feasible(z, pair.as_ref(), i, 1e-6);
            assert!(rep.feasible(), "stage {i}: {:?}", rep.violated_rows());
        }
    }
}
