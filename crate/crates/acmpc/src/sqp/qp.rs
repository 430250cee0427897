//! Convex QP subproblems on the block-tridiagonal structure, solved by a
//! primal-dual active-set iteration.
//!
//! Each iteration guesses the active set, solves the corresponding equality
//! KKT system, then updates the guess from the signs of the inequality
//! slacks and multipliers. The KKT chain is maintained incrementally: only
//! blocks whose active rows changed are rebuilt, and the sequential block
//! factorization restarts from the first changed block. Warm-started
//! re-solves of a nearby QP typically change the active set very little, so
//! the method settles in a handful of partial factorizations. A repeated
//! active set triggers a conservative single-exchange mode that breaks
//! cycles.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// One per-index block of a QP subproblem.
///
/// Primal variables `d_i` carry cost `1/2 d' H d + g' d`, equality rows
/// `eq_self d_i + eq_prev d_{i-1} = eq_rhs`, and one-sided inequality rows
/// `ineq d_i <= ineq_ub` (two-sided rows enter as row pairs).
#[derive(Debug, Clone)]
pub struct QpBlock {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub eq_self: DMatrix<f64>,
    pub eq_prev: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub ineq: DMatrix<f64>,
    pub ineq_ub: DVector<f64>,
    /// The first `n_eq_hard` equality rows are structural (dynamics
    /// defects, initial pin) and stay hard under elastic relaxation.
    pub n_eq_hard: usize,
}

impl QpBlock {
    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn n_eq(&self) -> usize {
        self.eq_rhs.len()
    }

    pub fn n_ineq(&self) -> usize {
        self.ineq_ub.len()
    }
}

/// A QP subproblem as a chain of coupled blocks. The Hessian must be
/// positive semidefinite after the caller's regularization.
#[derive(Debug, Clone)]
pub struct QpSubproblem {
    pub blocks: Vec<QpBlock>,
}

impl QpSubproblem {
    /// A single-block QP over dense data (used for small standalone QPs).
    pub fn dense(
        h: DMatrix<f64>,
        g: DVector<f64>,
        a: DMatrix<f64>,
        b: DVector<f64>,
        c: DMatrix<f64>,
        ub: DVector<f64>,
    ) -> Self {
        let n_eq_hard = b.len();
        QpSubproblem {
            blocks: vec![QpBlock {
                h,
                g,
                eq_self: a,
                eq_prev: DMatrix::zeros(b.len(), 0),
                eq_rhs: b,
                ineq: c,
                ineq_ub: ub,
                n_eq_hard,
            }],
        }
    }

    pub fn total_vars(&self) -> usize {
        self.blocks.iter().map(|b| b.dim()).sum()
    }

    pub fn total_ineq(&self) -> usize {
        self.blocks.iter().map(|b| b.n_ineq()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

/// Solution of a QP subproblem. Inactive inequality rows carry zero duals.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub primal: Vec<DVector<f64>>,
    pub eq_duals: Vec<DVector<f64>>,
    pub ineq_duals: Vec<DVector<f64>>,
    pub active: Vec<Vec<bool>>,
    pub status: QpStatus,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub active_set_changes: usize,
}

#[derive(Debug, Clone)]
pub struct QpSettings {
    pub max_iter: usize,
    pub reg_primal: f64,
    pub reg_dual: f64,
    /// Activation / deactivation tolerance on slacks and multipliers.
    pub act_tol: f64,
    pub refine_steps: usize,
    /// Most-violated-first cap on activations per iteration; keeps the
    /// iteration stable when a poor linearization violates everything at
    /// once.
    pub max_adds_per_iter: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        QpSettings {
            max_iter: 200,
            reg_primal: 1e-9,
            reg_dual: 1e-9,
            act_tol: 1e-8,
            refine_steps: 2,
            max_adds_per_iter: 48,
        }
    }
}

/// Incrementally maintained KKT chain for one QP and an evolving active set.
/// Per block the unknowns are `[d_i, lambda_i, mu_act_i]`; the only
/// inter-block coupling is `eq_prev` against the previous primal variables.
struct KktChain<'a> {
    qp: &'a QpSubproblem,
    reg_primal: f64,
    reg_dual: f64,
    act_rows: Vec<Vec<usize>>,
    diag_reg: Vec<DMatrix<f64>>,
    diag_exact: Vec<DMatrix<f64>>,
    lus: Vec<Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>>,
    /// Blocks `< valid` have up-to-date factors.
    valid: usize,
}

impl<'a> KktChain<'a> {
    fn new(qp: &'a QpSubproblem, active: &[Vec<bool>], reg_primal: f64, reg_dual: f64) -> Self {
        let n = qp.blocks.len();
        let mut chain = KktChain {
            qp,
            reg_primal,
            reg_dual,
            act_rows: vec![Vec::new(); n],
            diag_reg: vec![DMatrix::zeros(0, 0); n],
            diag_exact: vec![DMatrix::zeros(0, 0); n],
            lus: std::iter::repeat_with(|| None).take(n).collect(),
            valid: 0,
        };
        for i in 0..n {
            chain.rebuild_block(i, &active[i]);
        }
        chain
    }

    fn super_dim(&self, i: usize) -> usize {
        let blk = &self.qp.blocks[i];
        blk.dim() + blk.n_eq() + self.act_rows[i].len()
    }

    /// Rebuild block `i` for a new active-row set; invalidates factors from
    /// `i` on.
    fn rebuild_block(&mut self, i: usize, active: &[bool]) {
        let blk = &self.qp.blocks[i];
        let dim = blk.dim();
        let m_eq = blk.n_eq();
        let rows: Vec<usize> = active
            .iter()
            .enumerate()
            .filter(|(_, &a)| a)
            .map(|(r, _)| r)
            .collect();
        let sd = dim + m_eq + rows.len();
        let mut k = DMatrix::zeros(sd, sd);
        k.view_mut((0, 0), (dim, dim)).copy_from(&blk.h);
        k.view_mut((dim, 0), (m_eq, dim)).copy_from(&blk.eq_self);
        k.view_mut((0, dim), (dim, m_eq))
            .copy_from(&blk.eq_self.transpose());
        for (r, &row) in rows.iter().enumerate() {
            for c in 0..dim {
                k[(dim + m_eq + r, c)] = blk.ineq[(row, c)];
                k[(c, dim + m_eq + r)] = blk.ineq[(row, c)];
            }
        }
        let mut k_reg = k.clone();
        for j in 0..dim {
            k_reg[(j, j)] += self.reg_primal;
        }
        for j in dim..sd {
            k_reg[(j, j)] = -self.reg_dual;
        }
        self.act_rows[i] = rows;
        self.diag_reg[i] = k_reg;
        self.diag_exact[i] = k;
        self.valid = self.valid.min(i);
    }

    /// Factor the chain from the first invalid block.
    fn refactor(&mut self) -> Result<()> {
        let n = self.qp.blocks.len();
        for i in self.valid..n {
            let mut d = self.diag_reg[i].clone();
            if i > 0 {
                let blk = &self.qp.blocks[i];
                let m_eq = blk.n_eq();
                if blk.eq_prev.ncols() > 0 && m_eq > 0 {
                    // Schur correction: eq_prev rows couple to the previous
                    // block's primal columns only.
                    let sd_prev = self.super_dim(i - 1);
                    let dim_prev = self.qp.blocks[i - 1].dim();
                    let mut rhs = DMatrix::zeros(sd_prev, m_eq);
                    rhs.view_mut((0, 0), (dim_prev, m_eq))
                        .copy_from(&blk.eq_prev.transpose());
                    let w = self.lus[i - 1]
                        .as_ref()
                        .expect("previous factor valid")
                        .solve(&rhs)
                        .ok_or_else(|| Error::numeric("singular KKT block"))?;
                    let corr = &blk.eq_prev * w.view((0, 0), (dim_prev, m_eq));
                    let dim = blk.dim();
                    let mut sub = d.view_mut((dim, dim), (m_eq, m_eq));
                    sub -= corr;
                }
            }
            let lu = d.lu();
            // Exact zero pivots mean hard singularity; determinant checks
            // under/overflow at these block sizes.
            if lu.u().diagonal().iter().any(|&p| p == 0.0 || !p.is_finite()) {
                return Err(Error::numeric("singular KKT block"));
            }
            self.lus[i] = Some(lu);
            self.valid = i + 1;
        }
        Ok(())
    }

    /// Solve `K x = rhs` with the current factors.
    fn solve_once(&self, rhs: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        let n = self.qp.blocks.len();
        let mut y: Vec<DVector<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            let mut yi = rhs[i].clone();
            if i > 0 {
                let blk = &self.qp.blocks[i];
                let m_eq = blk.n_eq();
                if blk.eq_prev.ncols() > 0 && m_eq > 0 {
                    let w = self.lus[i - 1]
                        .as_ref()
                        .unwrap()
                        .solve(&y[i - 1])
                        .ok_or_else(|| Error::numeric("singular KKT block"))?;
                    let dim_prev = self.qp.blocks[i - 1].dim();
                    let contrib = &blk.eq_prev * w.rows(0, dim_prev);
                    let dim = blk.dim();
                    let mut seg = yi.rows_mut(dim, m_eq);
                    seg -= contrib;
                }
            }
            y.push(yi);
        }
        let mut x = vec![DVector::zeros(0); n];
        for i in (0..n).rev() {
            let mut b = y[i].clone();
            if i + 1 < n {
                let nxt = &self.qp.blocks[i + 1];
                let m_eq = nxt.n_eq();
                if nxt.eq_prev.ncols() > 0 && m_eq > 0 {
                    let dim_nxt = nxt.dim();
                    let lam = x[i + 1].rows(dim_nxt, m_eq);
                    let contrib = nxt.eq_prev.transpose() * lam;
                    let dim_prev = self.qp.blocks[i].dim();
                    let mut seg = b.rows_mut(0, dim_prev);
                    seg -= contrib;
                }
            }
            x[i] = self.lus[i]
                .as_ref()
                .unwrap()
                .solve(&b)
                .ok_or_else(|| Error::numeric("singular KKT block"))?;
        }
        Ok(x)
    }

    /// y = K_exact x (for iterative refinement).
    fn matvec_exact(&self, x: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let n = self.qp.blocks.len();
        let mut y: Vec<DVector<f64>> = (0..n).map(|i| &self.diag_exact[i] * &x[i]).collect();
        for i in 1..n {
            let blk = &self.qp.blocks[i];
            let m_eq = blk.n_eq();
            if blk.eq_prev.ncols() > 0 && m_eq > 0 {
                let dim = blk.dim();
                let dim_prev = self.qp.blocks[i - 1].dim();
                let contrib = &blk.eq_prev * x[i - 1].rows(0, dim_prev);
                let mut seg = y[i].rows_mut(dim, m_eq);
                seg += contrib;
                let lam = x[i].rows(dim, m_eq);
                let back = blk.eq_prev.transpose() * lam;
                let mut seg = y[i - 1].rows_mut(0, dim_prev);
                seg += back;
            }
        }
        y
    }

    fn solve_refined(&self, rhs: &[DVector<f64>], steps: usize) -> Result<Vec<DVector<f64>>> {
        let mut x = self.solve_once(rhs)?;
        for _ in 0..steps {
            let kx = self.matvec_exact(&x);
            let r: Vec<DVector<f64>> = rhs.iter().zip(&kx).map(|(b, a)| b - a).collect();
            let dx = self.solve_once(&r)?;
            for (xi, di) in x.iter_mut().zip(&dx) {
                *xi += di;
            }
        }
        Ok(x)
    }

    fn rhs(&self) -> Vec<DVector<f64>> {
        self.qp
            .blocks
            .iter()
            .enumerate()
            .map(|(i, blk)| {
                let sd = self.super_dim(i);
                let dim = blk.dim();
                let m_eq = blk.n_eq();
                let mut b = DVector::zeros(sd);
                b.rows_mut(0, dim).copy_from(&(-&blk.g));
                b.rows_mut(dim, m_eq).copy_from(&blk.eq_rhs);
                for (r, &row) in self.act_rows[i].iter().enumerate() {
                    b[dim + m_eq + r] = blk.ineq_ub[row];
                }
                b
            })
            .collect()
    }

    fn extract(&self, x: &[DVector<f64>]) -> KktOut {
        let n = self.qp.blocks.len();
        let mut d = Vec::with_capacity(n);
        let mut lam = Vec::with_capacity(n);
        let mut mu = Vec::with_capacity(n);
        for (i, blk) in self.qp.blocks.iter().enumerate() {
            let dim = blk.dim();
            let m_eq = blk.n_eq();
            d.push(x[i].rows(0, dim).into_owned());
            lam.push(x[i].rows(dim, m_eq).into_owned());
            let mut mu_full = DVector::zeros(blk.n_ineq());
            for (r, &row) in self.act_rows[i].iter().enumerate() {
                mu_full[row] = x[i][dim + m_eq + r];
            }
            mu.push(mu_full);
        }
        KktOut { d, lam, mu }
    }
}

struct KktOut {
    d: Vec<DVector<f64>>,
    lam: Vec<DVector<f64>>,
    mu: Vec<DVector<f64>>,
}

fn kkt_residual(qp: &QpSubproblem, out: &KktOut) -> f64 {
    let n = qp.blocks.len();
    let mut worst = 0.0_f64;
    for (i, blk) in qp.blocks.iter().enumerate() {
        // Stationarity.
        let mut s = &blk.h * &out.d[i] + &blk.g + blk.eq_self.transpose() * &out.lam[i];
        if blk.n_ineq() > 0 {
            s += blk.ineq.transpose() * &out.mu[i];
        }
        if i + 1 < n {
            let nxt = &qp.blocks[i + 1];
            if nxt.eq_prev.ncols() > 0 {
                s += nxt.eq_prev.transpose() * &out.lam[i + 1];
            }
        }
        if s.len() > 0 {
            worst = worst.max(s.amax());
        }
        // Primal feasibility.
        let mut eq = &blk.eq_self * &out.d[i] - &blk.eq_rhs;
        if i > 0 && blk.eq_prev.ncols() > 0 {
            eq += &blk.eq_prev * &out.d[i - 1];
        }
        if eq.len() > 0 {
            worst = worst.max(eq.amax());
        }
        if blk.n_ineq() > 0 {
            let slack = &blk.ineq * &out.d[i] - &blk.ineq_ub;
            for (r, &sv) in slack.iter().enumerate() {
                worst = worst.max(sv.max(0.0));
                // Complementarity.
                worst = worst.max((out.mu[i][r] * sv).abs().min(out.mu[i][r].abs()));
            }
        }
    }
    worst
}

fn active_mask_hash(active: &[Vec<bool>]) -> u64 {
    use std::hash::{Hash, Hasher};
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for blk in active {
        for &a in blk {
            a.hash(&mut h);
        }
    }
    h.finish()
}

/// Solve a convex QP by primal-dual active-set iteration, optionally warm
/// started from a previous active set.
pub fn qp_solve(
    qp: &QpSubproblem,
    warm_active: Option<&[Vec<bool>]>,
    settings: &QpSettings,
) -> Result<QpSolution> {
    let n = qp.blocks.len();
    let mut active: Vec<Vec<bool>> = match warm_active {
        Some(w) if w.len() == n && w.iter().zip(&qp.blocks).all(|(a, b)| a.len() == b.n_ineq()) => {
            w.to_vec()
        }
        _ => qp.blocks.iter().map(|b| vec![false; b.n_ineq()]).collect(),
    };

    let mut chain = KktChain::new(qp, &active, settings.reg_primal, settings.reg_dual);
    let mut strong_reg = false;
    // Activation tolerance scaled by the gradient magnitude: huge elastic
    // penalties otherwise chatter forever against an absolute tolerance.
    let scale = 1.0
        + qp.blocks
            .iter()
            .filter(|b| b.g.len() > 0)
            .map(|b| b.g.amax())
            .fold(0.0_f64, f64::max);
    let act_tol = settings.act_tol * scale;

    let mut seen = HashSet::new();
    let mut single_move = false;
    let mut changes_total = 0usize;
    let mut last: Option<KktOut> = None;

    for it in 1..=settings.max_iter {
        if chain.refactor().is_err() {
            // Singular KKT: typically rank-deficient active rows. Retry the
            // whole chain once with stronger regularization, else report
            // infeasible so the caller can go elastic.
            if strong_reg {
                return Ok(infeasible_solution(qp, active, it, changes_total));
            }
            strong_reg = true;
            chain = KktChain::new(
                qp,
                &active,
                settings.reg_primal.max(1e-6),
                settings.reg_dual.max(1e-6),
            );
            if chain.refactor().is_err() {
                return Ok(infeasible_solution(qp, active, it, changes_total));
            }
        }
        let rhs = chain.rhs();
        let out = match chain.solve_refined(&rhs, settings.refine_steps) {
            Ok(x) => chain.extract(&x),
            Err(_) => return Ok(infeasible_solution(qp, active, it, changes_total)),
        };

        if out.d.iter().any(|d| d.iter().any(|v| !v.is_finite())) {
            return Ok(infeasible_solution(qp, active, it, changes_total));
        }

        // Candidate activations (violated inactive rows) and deactivations
        // (negative multipliers on active rows).
        let mut adds: Vec<(usize, usize, f64)> = Vec::new();
        let mut drops: Vec<(usize, usize, f64)> = Vec::new();
        for (i, blk) in qp.blocks.iter().enumerate() {
            if blk.n_ineq() == 0 {
                continue;
            }
            let slack = &blk.ineq * &out.d[i] - &blk.ineq_ub;
            for r in 0..blk.n_ineq() {
                if active[i][r] {
                    if out.mu[i][r] < -act_tol {
                        drops.push((i, r, -out.mu[i][r]));
                    }
                } else if slack[r] > act_tol {
                    adds.push((i, r, slack[r]));
                }
            }
        }

        if adds.is_empty() && drops.is_empty() {
            let res = kkt_residual(qp, &out);
            return Ok(QpSolution {
                primal: out.d,
                eq_duals: out.lam,
                ineq_duals: out.mu,
                active,
                status: QpStatus::Optimal,
                kkt_residual: res,
                iterations: it,
                active_set_changes: changes_total,
            });
        }

        let mut changed_blocks: Vec<usize> = Vec::new();
        if single_move {
            // Conservative exchange: one change per iteration, worst first.
            let best_add = adds
                .iter()
                .cloned()
                .max_by(|a, b| a.2.partial_cmp(&b.2).unwrap());
            let best_drop = drops
                .iter()
                .cloned()
                .max_by(|a, b| a.2.partial_cmp(&b.2).unwrap());
            let (bi, br, on) = match (best_add, best_drop) {
                (Some(a), Some(d)) => {
                    if a.2 >= d.2 {
                        (a.0, a.1, true)
                    } else {
                        (d.0, d.1, false)
                    }
                }
                (Some(a), None) => (a.0, a.1, true),
                (None, Some(d)) => (d.0, d.1, false),
                (None, None) => unreachable!(),
            };
            active[bi][br] = on;
            changed_blocks.push(bi);
            changes_total += 1;
        } else {
            if adds.len() > settings.max_adds_per_iter {
                adds.sort_unstable_by(|a, b| b.2.partial_cmp(&a.2).unwrap());
                adds.truncate(settings.max_adds_per_iter);
            }
            changes_total += adds.len() + drops.len();
            for (i, r, _) in adds {
                active[i][r] = true;
                changed_blocks.push(i);
            }
            for (i, r, _) in drops {
                active[i][r] = false;
                changed_blocks.push(i);
            }
            if !seen.insert(active_mask_hash(&active)) {
                single_move = true;
            }
        }
        changed_blocks.sort_unstable();
        changed_blocks.dedup();
        for &i in &changed_blocks {
            chain.rebuild_block(i, &active[i]);
        }
        last = Some(out);
    }

    let out = last.expect("at least one KKT solve");
    let res = kkt_residual(qp, &out);
    Ok(QpSolution {
        primal: out.d,
        eq_duals: out.lam,
        ineq_duals: out.mu,
        active,
        status: QpStatus::MaxIter,
        kkt_residual: res,
        iterations: settings.max_iter,
        active_set_changes: changes_total,
    })
}

fn infeasible_solution(
    qp: &QpSubproblem,
    active: Vec<Vec<bool>>,
    it: usize,
    changes: usize,
) -> QpSolution {
    QpSolution {
        primal: qp.blocks.iter().map(|b| DVector::zeros(b.dim())).collect(),
        eq_duals: qp.blocks.iter().map(|b| DVector::zeros(b.n_eq())).collect(),
        ineq_duals: qp
            .blocks
            .iter()
            .map(|b| DVector::zeros(b.n_ineq()))
            .collect(),
        active,
        status: QpStatus::Infeasible,
        kkt_residual: f64::INFINITY,
        iterations: it,
        active_set_changes: changes,
    }
}

/// Build the elastic relaxation of a QP: every inequality row gains a
/// nonnegative slack and every non-structural equality row a signed slack
/// pair, penalized linearly with weight `rho`.
pub fn elastic_relaxation(qp: &QpSubproblem, rho: f64, slack_reg: f64) -> QpSubproblem {
    let blocks = qp
        .blocks
        .iter()
        .enumerate()
        .map(|(i, blk)| {
            let dim = blk.dim();
            let m_in = blk.n_ineq();
            let m_eq = blk.n_eq();
            let hard = blk.n_eq_hard.min(m_eq);
            let m_soft = m_eq - hard;
            // Variables: [d, s_in, s_plus, s_minus].
            let dim_new = dim + m_in + 2 * m_soft;
            let mut h = DMatrix::zeros(dim_new, dim_new);
            h.view_mut((0, 0), (dim, dim)).copy_from(&blk.h);
            for j in dim..dim_new {
                h[(j, j)] = slack_reg;
            }
            let mut g = DVector::zeros(dim_new);
            g.rows_mut(0, dim).copy_from(&blk.g);
            for j in dim..dim_new {
                g[j] = rho;
            }
            let mut eq_self = DMatrix::zeros(m_eq, dim_new);
            eq_self
                .view_mut((0, 0), (m_eq, dim))
                .copy_from(&blk.eq_self);
            for r in 0..m_soft {
                eq_self[(hard + r, dim + m_in + r)] = 1.0;
                eq_self[(hard + r, dim + m_in + m_soft + r)] = -1.0;
            }
            let prev_cols = if i > 0 {
                let p = &qp.blocks[i - 1];
                p.dim() + p.n_ineq() + 2 * (p.n_eq() - p.n_eq_hard.min(p.n_eq()))
            } else {
                0
            };
            let mut eq_prev = DMatrix::zeros(m_eq, prev_cols);
            if i > 0 && blk.eq_prev.ncols() > 0 {
                eq_prev
                    .view_mut((0, 0), (m_eq, blk.eq_prev.ncols()))
                    .copy_from(&blk.eq_prev);
            }
            // Rows: C d - s_in <= ub, then slack nonnegativity.
            let n_slack = m_in + 2 * m_soft;
            let mut ineq = DMatrix::zeros(m_in + n_slack, dim_new);
            let mut ub = DVector::zeros(m_in + n_slack);
            ineq.view_mut((0, 0), (m_in, dim)).copy_from(&blk.ineq);
            for r in 0..m_in {
                ineq[(r, dim + r)] = -1.0;
                ub[r] = blk.ineq_ub[r];
            }
            for r in 0..n_slack {
                ineq[(m_in + r, dim + r)] = -1.0;
                ub[m_in + r] = 0.0;
            }
            QpBlock {
                h,
                g,
                eq_self,
                eq_prev,
                eq_rhs: blk.eq_rhs.clone(),
                ineq,
                ineq_ub: ub,
                n_eq_hard: blk.n_eq_hard,
            }
        })
        .collect();
    QpSubproblem { blocks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn hand_checked_box_qp() {
        // min (x - 2)^2 s.t. x <= 1  ->  x = 1, dual = 2.
        let qp = QpSubproblem::dense(
            dmatrix![2.0],
            dvector![-4.0],
            DMatrix::zeros(0, 1),
            dvector![],
            dmatrix![1.0],
            dvector![1.0],
        );
        let sol = qp_solve(&qp, None, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.primal[0][0] - 1.0).abs() < 1e-9);
        assert!((sol.ineq_duals[0][0] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn equality_qp_matches_dense_kkt_solve() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 6;
        let m = 2;
        let a0 = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let h = &a0 * a0.transpose() + DMatrix::identity(n, n);
        let g = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let b = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        let qp = QpSubproblem::dense(
            h.clone(),
            g.clone(),
            a.clone(),
            b.clone(),
            DMatrix::zeros(0, n),
            dvector![],
        );
        let sol = qp_solve(&qp, None, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);

        let mut kkt = DMatrix::zeros(n + m, n + m);
        kkt.view_mut((0, 0), (n, n)).copy_from(&h);
        kkt.view_mut((n, 0), (m, n)).copy_from(&a);
        kkt.view_mut((0, n), (n, m)).copy_from(&a.transpose());
        let mut rhs = DVector::zeros(n + m);
        rhs.rows_mut(0, n).copy_from(&(-&g));
        rhs.rows_mut(n, m).copy_from(&b);
        let x = kkt.lu().solve(&rhs).unwrap();
        assert!((&sol.primal[0] - x.rows(0, n)).amax() < 1e-10);
        assert!(sol.kkt_residual < 1e-9);
    }

    #[test]
    fn warm_started_resolve_takes_one_iteration() {
        let qp = QpSubproblem::dense(
            dmatrix![2.0, 0.0; 0.0, 2.0],
            dvector![-2.0, -6.0],
            DMatrix::zeros(0, 2),
            dvector![],
            dmatrix![1.0, 1.0; -1.0, 2.0; 2.0, 1.0],
            dvector![2.0, 2.0, 3.0],
        );
        let first = qp_solve(&qp, None, &QpSettings::default()).unwrap();
        assert_eq!(first.status, QpStatus::Optimal);
        let second = qp_solve(&qp, Some(&first.active), &QpSettings::default()).unwrap();
        assert_eq!(second.status, QpStatus::Optimal);
        assert_eq!(second.iterations, 1);
        assert_eq!(second.active_set_changes, 0);
        assert!((&first.primal[0] - &second.primal[0]).amax() < 1e-12);
    }

    #[test]
    fn infeasible_rows_are_flagged_through_elastic() {
        // x <= -1 and -x <= -2 (x >= 2) conflict.
        let qp = QpSubproblem::dense(
            dmatrix![2.0],
            dvector![0.0],
            DMatrix::zeros(0, 1),
            dvector![],
            dmatrix![1.0; -1.0],
            dvector![-1.0, -2.0],
        );
        let sol = qp_solve(&qp, None, &QpSettings::default()).unwrap();
        // The active-set iteration cannot settle; the elastic relaxation
        // must report the violation through its slacks.
        let relaxed = elastic_relaxation(&qp, 1e4, 1e-8);
        let rsol = qp_solve(&relaxed, None, &QpSettings::default()).unwrap();
        assert_eq!(rsol.status, QpStatus::Optimal);
        let max_slack = rsol.primal[0].rows(1, 2).amax();
        assert!(max_slack > 0.5, "slack {max_slack}");
        assert!(sol.status != QpStatus::Optimal || sol.kkt_residual > 1e-9);
    }

    #[test]
    fn block_chain_matches_flattened_dense() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        // Three blocks with coupling equalities and a few boxes.
        let dims = [3usize, 4, 2];
        let mut blocks = Vec::new();
        for (i, &d) in dims.iter().enumerate() {
            let a0 = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
            let h = &a0 * a0.transpose() + DMatrix::identity(d, d) * 2.0;
            let g = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
            let m_eq = if i > 0 { 2 } else { 1 };
            let eq_self = DMatrix::from_fn(m_eq, d, |_, _| rng.random_range(-1.0..1.0));
            let eq_prev = if i > 0 {
                DMatrix::from_fn(m_eq, dims[i - 1], |_, _| rng.random_range(-1.0..1.0))
            } else {
                DMatrix::zeros(m_eq, 0)
            };
            let eq_rhs = DVector::from_fn(m_eq, |_, _| rng.random_range(-0.5..0.5));
            let ineq = DMatrix::identity(d, d);
            let ineq_ub = DVector::from_element(d, 0.4);
            blocks.push(QpBlock {
                h,
                g,
                eq_self,
                eq_prev,
                eq_rhs,
                ineq,
                ineq_ub,
                n_eq_hard: m_eq,
            });
        }
        let qp = QpSubproblem { blocks };
        let sol = qp_solve(&qp, None, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!(sol.kkt_residual < 1e-9, "kkt {}", sol.kkt_residual);
        // Spot-check feasibility and the box bound.
        for (i, blk) in qp.blocks.iter().enumerate() {
            let mut eq = &blk.eq_self * &sol.primal[i] - &blk.eq_rhs;
            if i > 0 && blk.eq_prev.ncols() > 0 {
                eq += &blk.eq_prev * &sol.primal[i - 1];
            }
            assert!(eq.amax() < 1e-9);
            assert!(sol.primal[i].max() <= 0.4 + 1e-9);
        }
    }

    #[test]
    fn incremental_refactor_matches_cold_solve() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        // A chain whose active set changes mid-solve must produce the same
        // solution as solving with the final set cold.
        let dims = [4usize, 4, 4, 4];
        let mut blocks = Vec::new();
        for (i, &d) in dims.iter().enumerate() {
            let a0 = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
            blocks.push(QpBlock {
                h: &a0 * a0.transpose() + DMatrix::identity(d, d) * 3.0,
                g: DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0)),
                eq_self: DMatrix::from_fn(1, d, |_, _| rng.random_range(-1.0..1.0)),
                eq_prev: if i > 0 {
                    DMatrix::from_fn(1, dims[i - 1], |_, _| rng.random_range(-1.0..1.0))
                } else {
                    DMatrix::zeros(1, 0)
                },
                eq_rhs: DVector::from_fn(1, |_, _| rng.random_range(-0.2..0.2)),
                ineq: DMatrix::identity(d, d),
                ineq_ub: DVector::from_element(d, 0.3),
                n_eq_hard: 1,
            });
        }
        let qp = QpSubproblem { blocks };
        let cold = qp_solve(&qp, None, &QpSettings::default()).unwrap();
        assert_eq!(cold.status, QpStatus::Optimal);
        let warm = qp_solve(&qp, Some(&cold.active), &QpSettings::default()).unwrap();
        for i in 0..4 {
            assert!((&cold.primal[i] - &warm.primal[i]).amax() < 1e-10);
        }
    }
}
