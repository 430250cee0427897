//! The model-pair abstraction every other module consumes.
//!
//! A [`ModelPair`] bundles a complex (anchor) model and a simple (template)
//! model: discrete dynamics for both, the reduction map between them, the
//! reference-parameterized lift back, constraint evaluators for both spaces,
//! quadratic tracking costs, and the terminal ingredients.
//!
//! Both shipped pairs use coordinate-selection maps: the simple state/control
//! are a fixed subset of the complex coordinates. The reduction drops the
//! remaining (null-space) coordinates and the lift restores them by copying
//! from a per-index reference stage, so reduce-after-lift is the identity
//! exactly, with no arithmetic.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::space::{Dims, Space, StagePair};

/// Whether a constraint row is an inequality (`value <= 0` feasible) or an
/// equality (`|value| <= tol` feasible).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Inequality,
    Equality,
}

/// Metadata for one constraint row of a constraint evaluator.
#[derive(Debug, Clone)]
pub struct RowMeta {
    pub name: &'static str,
    pub kind: RowKind,
}

impl RowMeta {
    pub const fn ineq(name: &'static str) -> Self {
        RowMeta {
            name,
            kind: RowKind::Inequality,
        }
    }

    pub const fn eq(name: &'static str) -> Self {
        RowMeta {
            name,
            kind: RowKind::Equality,
        }
    }
}

/// A complex/simple model pair.
///
/// Constraint evaluators return signed violation vectors (positive means
/// violated) so the solver and the admissibility checker share one code
/// path. Evaluators take an absolute time index `t` so instances with
/// time-varying constraint data (contact schedules) can look it up; the
/// dynamics themselves are time-invariant.
///
/// `aux` denotes per-index auxiliary decision variables carried only at
/// complex horizon indices (the legged pair uses them for joint angles,
/// velocities and torques, tied to the stage by equality rows). A pair with
/// `aux_dim() == 0` ignores every `aux` argument.
pub trait ModelPair: Send + Sync {
    fn name(&self) -> &'static str;
    fn dims(&self) -> Dims;
    fn dt(&self) -> f64;

    /// Indices of the complex state coordinates retained by the reduction,
    /// in simple-state order.
    fn retained_state(&self) -> &[usize];
    /// Indices of the complex control coordinates retained by the reduction.
    fn retained_control(&self) -> &[usize];

    /// Discrete complex dynamics `f^c` (autonomous).
    fn complex_step(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>>;
    /// Jacobians of `f^c` with respect to state and control.
    fn complex_step_jacobian(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)>;

    /// Discrete simple dynamics `f^s` at absolute time `t`. The template may
    /// be reference-parameterized (the legged torque map reads the reference
    /// foot positions at `t`), so the time index is part of the signature;
    /// time-invariant templates ignore it.
    fn simple_step(&self, x: &DVector<f64>, u: &DVector<f64>, t: usize) -> Result<DVector<f64>>;
    fn simple_step_jacobian(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        t: usize,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)>;

    /// Dimension of the auxiliary variable block at complex indices.
    fn aux_dim(&self) -> usize {
        0
    }

    /// Residuals of the equality rows defining the auxiliary variables.
    fn aux_residual(
        &self,
        _x: &DVector<f64>,
        _u: &DVector<f64>,
        _aux: &DVector<f64>,
        _t: usize,
    ) -> Result<DVector<f64>> {
        Ok(DVector::zeros(0))
    }

    /// Jacobians of [`ModelPair::aux_residual`] with respect to (x, u, aux).
    fn aux_jacobian(
        &self,
        _x: &DVector<f64>,
        _u: &DVector<f64>,
        _aux: &DVector<f64>,
        _t: usize,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
        let d = self.dims();
        Ok((
            DMatrix::zeros(0, d.n_xc),
            DMatrix::zeros(0, d.n_uc),
            DMatrix::zeros(0, 0),
        ))
    }

    /// Solve the auxiliary equality rows for `aux` given a stage. Used for
    /// initialization and for stage-level feasibility checks; the OCP keeps
    /// `aux` as decision variables. Fails when no exact solution exists
    /// (e.g. a foot target out of reach).
    fn resolve_aux(&self, _x: &DVector<f64>, _u: &DVector<f64>, _t: usize) -> Result<DVector<f64>> {
        Ok(DVector::zeros(0))
    }

    /// Infallible variant for initialization: where no exact solution
    /// exists, return the nearest usable guess (the solver then treats the
    /// defining rows as violated constraints to work off).
    fn resolve_aux_guess(&self, x: &DVector<f64>, u: &DVector<f64>, t: usize) -> DVector<f64> {
        self.resolve_aux(x, u, t)
            .unwrap_or_else(|_| DVector::zeros(self.aux_dim()))
    }

    /// Signed violations of the complex constraint set `Z^c` at time `t`.
    fn complex_constraints(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        aux: &DVector<f64>,
        t: usize,
    ) -> DVector<f64>;
    fn complex_constraint_jacobian(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        aux: &DVector<f64>,
        t: usize,
    ) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>);
    /// Row metadata for the complex constraint set at time `t` (contact
    /// schedules make the row population time-dependent).
    fn complex_constraint_meta(&self, t: usize) -> &[RowMeta];

    /// Signed violations of the simple constraint set `Z^s` at time `t`.
    fn simple_constraints(&self, x: &DVector<f64>, u: &DVector<f64>, t: usize) -> DVector<f64>;
    fn simple_constraint_jacobian(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        t: usize,
    ) -> (DMatrix<f64>, DMatrix<f64>);
    fn simple_constraint_meta(&self, t: usize) -> &[RowMeta];

    /// Signed violations of the terminal-set rows. Empty when the pair
    /// substitutes a heavy terminal cost for a hard terminal set.
    fn terminal_constraints(&self, _x: &DVector<f64>, _t: usize) -> DVector<f64> {
        DVector::zeros(0)
    }
    fn terminal_constraint_jacobian(&self, _x: &DVector<f64>, _t: usize) -> DMatrix<f64> {
        DMatrix::zeros(0, self.dims().n_xc)
    }

    /// Stage cost weights on the complex space (symmetric positive definite).
    fn weight_q(&self) -> &DMatrix<f64>;
    fn weight_r(&self) -> &DMatrix<f64>;
    /// Terminal cost weight on the complex state.
    fn weight_qt(&self) -> &DMatrix<f64>;

    /// Terminal control law `u_t(x)` used to extend shifted plans; the
    /// reference stage supplies whatever the policy does not determine.
    fn terminal_policy(&self, x: &DVector<f64>, ref_stage: &StagePair) -> DVector<f64>;

    /// Stage cost `L^c(z)` as quadratic tracking error about a reference
    /// stage.
    fn stage_cost(&self, z: &StagePair, ref_stage: &StagePair) -> f64 {
        let dx = &z.state - &ref_stage.state;
        let du = &z.control - &ref_stage.control;
        (dx.transpose() * self.weight_q() * &dx)[(0, 0)]
            + (du.transpose() * self.weight_r() * &du)[(0, 0)]
    }

    /// Terminal cost `V_t(x)` about a reference state.
    fn terminal_cost(&self, x: &DVector<f64>, ref_state: &DVector<f64>) -> f64 {
        let dx = x - ref_state;
        (dx.transpose() * self.weight_qt() * &dx)[(0, 0)]
    }

    /// Reduce a complex state: retained coordinates in simple order.
    fn reduce_state(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.retained_state().len(),
            self.retained_state().iter().map(|&j| x[j]),
        )
    }

    /// Reduce a complex control. The complex state is formally part of the
    /// control reduction's signature; selection-based instances ignore it.
    fn reduce_control(&self, u: &DVector<f64>, _x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.retained_control().len(),
            self.retained_control().iter().map(|&j| u[j]),
        )
    }

    /// Lift a simple state, copying null-space coordinates from `ref_state`.
    fn lift_state(&self, xs: &DVector<f64>, ref_state: &DVector<f64>) -> DVector<f64> {
        let mut x = ref_state.clone();
        for (row, &j) in self.retained_state().iter().enumerate() {
            x[j] = xs[row];
        }
        x
    }

    /// Lift a simple control, copying null-space coordinates from `ref_control`.
    fn lift_control(&self, us: &DVector<f64>, ref_control: &DVector<f64>) -> DVector<f64> {
        let mut u = ref_control.clone();
        for (row, &j) in self.retained_control().iter().enumerate() {
            u[j] = us[row];
        }
        u
    }

    /// Selection matrix `P_x` with `x^s = P_x x^c`.
    fn reduce_state_matrix(&self) -> DMatrix<f64> {
        selection_matrix(self.retained_state(), self.dims().n_xc)
    }

    /// Selection matrix `P_u` with `u^s = P_u u^c`.
    fn reduce_control_matrix(&self) -> DMatrix<f64> {
        selection_matrix(self.retained_control(), self.dims().n_uc)
    }

    /// Injection matrix `E_x = P_x^T`: the Jacobian of the lift with respect
    /// to the simple state.
    fn lift_state_matrix(&self) -> DMatrix<f64> {
        selection_matrix(self.retained_state(), self.dims().n_xc).transpose()
    }

    fn lift_control_matrix(&self) -> DMatrix<f64> {
        selection_matrix(self.retained_control(), self.dims().n_uc).transpose()
    }
}

fn selection_matrix(retained: &[usize], n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(retained.len(), n);
    for (row, &j) in retained.iter().enumerate() {
        m[(row, j)] = 1.0;
    }
    m
}

/// Validate the structural invariants of a model pair. Instances call this
/// at construction.
pub fn validate_pair(pair: &dyn ModelPair) -> Result<()> {
    let d = pair.dims();
    if d.n_xs >= d.n_xc {
        return Err(Error::construction(format!(
            "simple state dim {} must be strictly below complex state dim {}",
            d.n_xs, d.n_xc
        )));
    }
    if pair.retained_state().len() != d.n_xs || pair.retained_control().len() != d.n_us {
        return Err(Error::construction(
            "retained index lists do not match declared simple dims".to_string(),
        ));
    }
    for &j in pair.retained_state() {
        if j >= d.n_xc {
            return Err(Error::construction(format!(
                "retained state index {j} out of range"
            )));
        }
    }
    for &j in pair.retained_control() {
        if j >= d.n_uc {
            return Err(Error::construction(format!(
                "retained control index {j} out of range"
            )));
        }
    }
    for (name, m, n) in [
        ("Q", pair.weight_q(), d.n_xc),
        ("R", pair.weight_r(), d.n_uc),
        ("Q_t", pair.weight_qt(), d.n_xc),
    ] {
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::construction(format!("{name} has wrong shape")));
        }
        if (m - m.transpose()).amax() > 1e-12 {
            return Err(Error::construction(format!("{name} is not symmetric")));
        }
        // Positive definiteness via Cholesky.
        if nalgebra::Cholesky::new(m.clone()).is_none() {
            return Err(Error::construction(format!(
                "{name} is not positive definite"
            )));
        }
    }
    Ok(())
}

/// Reduce a complex stage pair to the simple space: `psi(z)`.
pub fn reduce(z: &StagePair, pair: &dyn ModelPair) -> Result<StagePair> {
    z.expect_space(Space::Complex)?;
    z.check_dims(&pair.dims())?;
    Ok(StagePair::simple(
        pair.reduce_state(&z.state),
        pair.reduce_control(&z.control, &z.state),
    ))
}

/// Lift a simple stage pair to the complex space: `psi^dagger(z)`. The
/// reference stage supplies the null-space coordinates for this index.
pub fn lift(z: &StagePair, ref_stage: &StagePair, pair: &dyn ModelPair) -> Result<StagePair> {
    z.expect_space(Space::Simple)?;
    z.check_dims(&pair.dims())?;
    ref_stage
        .expect_space(Space::Complex)
        .map_err(|_| Error::contract("lift requires a complex-space reference stage"))?;
    ref_stage.check_dims(&pair.dims())?;
    Ok(StagePair::complex(
        pair.lift_state(&z.state, &ref_stage.state),
        pair.lift_control(&z.control, &ref_stage.control),
    ))
}

/// Advance one step in the stage pair's own space; `t` is the absolute time
/// index (ignored by time-invariant templates).
pub fn step(z: &StagePair, pair: &dyn ModelPair, t: usize) -> Result<DVector<f64>> {
    z.check_dims(&pair.dims())?;
    if !z.is_finite() {
        return Err(Error::numeric("non-finite stage pair".to_string()));
    }
    match z.space {
        Space::Complex => pair.complex_step(&z.state, &z.control),
        Space::Simple => pair.simple_step(&z.state, &z.control, t),
    }
}

/// Per-constraint feasibility report for one stage pair.
#[derive(Debug, Clone)]
pub struct FeasibilityReport {
    pub violations: DVector<f64>,
    pub names: Vec<&'static str>,
    pub tol: f64,
}

impl FeasibilityReport {
    pub fn max_violation(&self) -> f64 {
        self.violations.iter().fold(0.0_f64, |a, &v| a.max(v))
    }

    pub fn feasible(&self) -> bool {
        self.max_violation() <= self.tol
    }

    /// Names of the rows violated beyond the tolerance.
    pub fn violated_rows(&self) -> Vec<(&'static str, f64)> {
        self.names
            .iter()
            .zip(self.violations.iter())
            .filter(|(_, &v)| v > self.tol)
            .map(|(&n, &v)| (n, v))
            .collect()
    }
}

/// Evaluate membership of a stage pair in its space's constraint set at
/// absolute time `t`. Reports, never fails, for finite inputs: equality-kind
/// rows contribute their absolute value.
pub fn check_feasible(z: &StagePair, pair: &dyn ModelPair, t: usize, tol: f64) -> FeasibilityReport {
    let (raw, meta): (DVector<f64>, &[RowMeta]) = match z.space {
        Space::Complex => {
            let aux = pair
                .resolve_aux(&z.state, &z.control, t)
                .unwrap_or_else(|_| DVector::from_element(pair.aux_dim(), f64::NAN));
            let mut v = pair.complex_constraints(&z.state, &z.control, &aux, t);
            // A stage whose auxiliary variables cannot be resolved (e.g. an
            // unreachable foot position) is infeasible, not an error.
            if v.iter().any(|x| !x.is_finite()) {
                v = v.map(|x| if x.is_finite() { x } else { f64::INFINITY });
            }
            (v, pair.complex_constraint_meta(t))
        }
        Space::Simple => (
            pair.simple_constraints(&z.state, &z.control, t),
            pair.simple_constraint_meta(t),
        ),
    };
    let mut violations = raw;
    let mut names = Vec::with_capacity(violations.len());
    for (i, m) in meta.iter().enumerate() {
        if m.kind == RowKind::Equality {
            violations[i] = violations[i].abs();
        }
        names.push(m.name);
    }
    FeasibilityReport {
        violations,
        names,
        tol,
    }
}

/// A reference trajectory in the complex space, indexed by absolute time.
///
/// The stages must be dynamically consistent: stepping the complex model from
/// stage `k` reproduces the state of stage `k+1` to within `eps_ref`.
#[derive(Debug, Clone)]
pub struct ReferenceTrajectory {
    stages: Vec<StagePair>,
    eps_ref: f64,
}

impl ReferenceTrajectory {
    pub fn new(stages: Vec<StagePair>, pair: &dyn ModelPair, eps_ref: f64) -> Result<Self> {
        if stages.len() < 2 {
            return Err(Error::contract(
                "a reference trajectory needs at least two stages".to_string(),
            ));
        }
        for s in &stages {
            s.expect_space(Space::Complex)?;
            s.check_dims(&pair.dims())?;
        }
        let traj = ReferenceTrajectory { stages, eps_ref };
        let defect = traj.max_defect(pair)?;
        if defect > eps_ref {
            return Err(Error::construction(format!(
                "reference is not dynamically consistent: max defect {defect:.3e} > eps_ref {eps_ref:.1e}"
            )));
        }
        Ok(traj)
    }

    /// Build without the consistency check (for callers that construct by
    /// rollout, where consistency is exact by definition).
    pub fn from_rollout(stages: Vec<StagePair>, eps_ref: f64) -> Self {
        ReferenceTrajectory { stages, eps_ref }
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn eps_ref(&self) -> f64 {
        self.eps_ref
    }

    pub fn stage(&self, k: usize) -> &StagePair {
        &self.stages[k]
    }

    pub fn stages(&self) -> &[StagePair] {
        &self.stages
    }

    /// Extract the horizon window `[start, start + len)`.
    pub fn window(&self, start: usize, len: usize) -> Result<&[StagePair]> {
        if start + len > self.stages.len() {
            return Err(Error::contract(format!(
                "reference window [{start}, {}) exceeds reference length {}",
                start + len,
                self.stages.len()
            )));
        }
        Ok(&self.stages[start..start + len])
    }

    /// Largest one-step dynamics defect along the reference.
    pub fn max_defect(&self, pair: &dyn ModelPair) -> Result<f64> {
        let mut worst = 0.0_f64;
        for k in 0..self.stages.len() - 1 {
            let next = pair.complex_step(&self.stages[k].state, &self.stages[k].control)?;
            worst = worst.max((&next - &self.stages[k + 1].state).amax());
        }
        Ok(worst)
    }
}

/// A lifted solution of the adaptive OCP: all stages in the complex space,
/// together with the reference window they were lifted against.
///
/// `refs` has one more entry than `stages`; the last reference stage belongs
/// to the terminal state. `start` is the absolute time of horizon index 0,
/// used by constraint evaluators with time-varying data.
#[derive(Debug, Clone)]
pub struct LiftedTrajectory {
    pub start: usize,
    pub stages: Vec<StagePair>,
    pub terminal_state: DVector<f64>,
    pub refs: Vec<StagePair>,
}

impl LiftedTrajectory {
    pub fn horizon(&self) -> usize {
        self.stages.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testbed::{make_testbed, TestbedParams};
    use nalgebra::dvector;

    #[test]
    fn reduce_rejects_wrong_tag() {
        let pair = make_testbed(&TestbedParams::default()).unwrap();
        let z = StagePair::simple(dvector![0.0, 0.0], dvector![0.0]);
        assert!(reduce(&z, pair.as_ref()).is_err());
    }

    #[test]
    fn reduce_projects_first_coordinates() {
        let pair = make_testbed(&TestbedParams::default()).unwrap();
        let z = StagePair::complex(dvector![1.0, 2.0, 3.0], dvector![4.0, 5.0]);
        let zs = reduce(&z, pair.as_ref()).unwrap();
        assert_eq!(zs.state, dvector![1.0, 2.0]);
        assert_eq!(zs.control, dvector![4.0]);
    }

    #[test]
    fn lift_fills_null_space_from_reference() {
        let pair = make_testbed(&TestbedParams::default()).unwrap();
        let origin = StagePair::complex(dvector![0.0, 0.0, 0.0], dvector![0.0, 0.0]);
        let zs = StagePair::simple(dvector![1.0, 2.0], dvector![4.0]);
        let z = lift(&zs, &origin, pair.as_ref()).unwrap();
        assert_eq!(z.state, dvector![1.0, 2.0, 0.0]);
        assert_eq!(z.control, dvector![4.0, 0.0]);
    }

    #[test]
    fn roundtrip_is_exact_on_random_pairs() {
        use rand::{Rng, SeedableRng};
        let pair = make_testbed(&TestbedParams::default()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let ref_stage = StagePair::complex(dvector![0.3, -0.4, 0.9], dvector![-0.2, 0.5]);
        for _ in 0..100 {
            let zs = StagePair::simple(
                DVector::from_fn(2, |_, _| rng.random_range(-5.0..5.0)),
                DVector::from_fn(1, |_, _| rng.random_range(-5.0..5.0)),
            );
            let z = lift(&zs, &ref_stage, pair.as_ref()).unwrap();
            let back = reduce(&z, pair.as_ref()).unwrap();
            assert_eq!(back.state, zs.state);
            assert_eq!(back.control, zs.control);
        }
    }

    #[test]
    fn reference_stage_reduce_lift_is_identity() {
        let pair = make_testbed(&TestbedParams::default()).unwrap();
        let ref_stage = StagePair::complex(dvector![0.3, -0.4, 0.9], dvector![-0.2, 0.5]);
        let zs = reduce(&ref_stage, pair.as_ref()).unwrap();
        let back = lift(&zs, &ref_stage, pair.as_ref()).unwrap();
        assert_eq!(back.state, ref_stage.state);
        assert_eq!(back.control, ref_stage.control);
    }

    #[test]
    fn origin_is_equilibrium() {
        let pair = make_testbed(&TestbedParams::default()).unwrap();
        let zc = StagePair::complex(dvector![0.0, 0.0, 0.0], dvector![0.0, 0.0]);
        assert_eq!(step(&zc, pair.as_ref(), 0).unwrap(), dvector![0.0, 0.0, 0.0]);
        let zs = StagePair::simple(dvector![0.0, 0.0], dvector![0.0]);
        assert_eq!(step(&zs, pair.as_ref(), 0).unwrap(), dvector![0.0, 0.0]);
    }

    #[test]
    fn step_rejects_non_finite() {
        let pair = make_testbed(&TestbedParams::default()).unwrap();
        let z = StagePair::complex(dvector![f64::NAN, 0.0, 0.0], dvector![0.0, 0.0]);
        assert!(step(&z, pair.as_ref(), 0).is_err());
    }

    #[test]
    fn origin_is_feasible_and_bounds_are_closed() {
        let pair = make_testbed(&TestbedParams::default()).unwrap();
        let z = StagePair::complex(dvector![0.0, 0.0, 0.0], dvector![0.0, 0.0]);
        assert!(check_feasible(&z, pair.as_ref(), 0, 0.0).feasible());
        // Exactly on a bound: feasible at tol = 0 (closed sets).
        let z = StagePair::complex(dvector![5.0, 2.0, 1.0], dvector![1.0, 1.0]);
        let rep = check_feasible(&z, pair.as_ref(), 0, 0.0);
        assert!(rep.feasible(), "violations: {:?}", rep.violated_rows());
    }

    #[test]
    fn cost_is_positive_away_from_reference() {
        use rand::{Rng, SeedableRng};
        let pair = make_testbed(&TestbedParams::default()).unwrap();
        let origin = StagePair::complex(dvector![0.0, 0.0, 0.0], dvector![0.0, 0.0]);
        assert_eq!(pair.stage_cost(&origin, &origin), 0.0);
        assert_eq!(pair.terminal_cost(&origin.state, &origin.state), 0.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let z = StagePair::complex(
                DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0)),
                DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0)),
            );
            if z.state.amax() > 1e-12 || z.control.amax() > 1e-12 {
                assert!(pair.stage_cost(&z, &origin) > 0.0);
            }
            if z.state.amax() > 1e-12 {
                assert!(pair.terminal_cost(&z.state, &origin.state) > 0.0);
            }
        }
    }

    #[test]
    fn reference_window_bounds_checked() {
        let pair = make_testbed(&TestbedParams::default()).unwrap();
        let stages = vec![StagePair::complex(dvector![0.0, 0.0, 0.0], dvector![0.0, 0.0]); 10];
        let traj = ReferenceTrajectory::new(stages, pair.as_ref(), 1e-8).unwrap();
        assert!(traj.window(0, 10).is_ok());
        assert!(traj.window(5, 6).is_err());
    }
}
