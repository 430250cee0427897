//! Simplicity sets over the horizon and the admissibility conditions that
//! gate membership.
//!
//! A simplicity set `S` lists the horizon indices solved with the simple
//! model. An index is admissible when four conditions hold on the lifted
//! solution: it is interior to the horizon, the reduce-then-lift roundtrip of
//! its stage stays feasible in the complex space, the simple dynamics exactly
//! anchor the complex dynamics at the stage, and the complex dynamics from
//! the previous stage land on the manifold. The update used between MPC
//! iterations keeps only indices whose conditions held on the latest
//! solution, shifts them back one step, and re-admits fixed-set indices whose
//! conditions newly hold.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::model::{check_feasible, lift, reduce, LiftedTrajectory, ModelPair};

/// A sorted set of horizon indices designated simple, over horizon `N`.
///
/// Construction accepts indices in `[0, N]`; whether they satisfy the
/// interior-range condition is part of the admissibility report, so that
/// degenerate sets can be represented and diagnosed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimplicitySet {
    horizon: usize,
    indices: BTreeSet<usize>,
}

impl SimplicitySet {
    pub fn new(horizon: usize, indices: impl IntoIterator<Item = usize>) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::contract("horizon must be positive"));
        }
        let indices: BTreeSet<usize> = indices.into_iter().collect();
        if let Some(&max) = indices.iter().next_back() {
            if max > horizon {
                return Err(Error::contract(format!(
                    "index {max} outside [0, {horizon}]"
                )));
            }
        }
        Ok(SimplicitySet { horizon, indices })
    }

    /// The empty set, admissible by vacuity.
    pub fn empty(horizon: usize) -> Self {
        SimplicitySet {
            horizon,
            indices: BTreeSet::new(),
        }
    }

    /// Every interior index `{1, ..., N-1}`.
    pub fn full_interior(horizon: usize) -> Self {
        SimplicitySet {
            horizon,
            indices: (1..horizon).collect(),
        }
    }

    /// Contiguous range clamped to `[0, N]`.
    pub fn range(horizon: usize, lo: usize, hi_inclusive: usize) -> Self {
        SimplicitySet {
            horizon,
            indices: (lo..=hi_inclusive.min(horizon)).collect(),
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.contains(&i)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices.iter().copied()
    }

    /// True when every index satisfies the interior-range condition.
    pub fn respects_range(&self) -> bool {
        self.indices
            .iter()
            .all(|&i| i >= 1 && i + 1 <= self.horizon)
    }

    pub fn insert(&mut self, i: usize) {
        self.indices.insert(i);
    }

    pub fn remove(&mut self, i: usize) {
        self.indices.remove(&i);
    }

    /// Fraction of the `N` horizon elements solved with the simple model.
    pub fn fraction_simplified(&self) -> f64 {
        self.indices.len() as f64 / self.horizon as f64
    }

    /// Compact mask string, one char per stage index: `s` simple, `c` complex.
    pub fn mask_string(&self) -> String {
        (0..self.horizon)
            .map(|i| if self.contains(i) { 's' } else { 'c' })
            .collect()
    }
}

/// Per-index evidence from an admissibility check.
#[derive(Debug, Clone)]
pub struct IndexAdmissibility {
    pub index: usize,
    /// Interior-range condition.
    pub in_range: bool,
    /// Feasibility of the reduce-then-lift roundtrip in the complex space.
    pub feasible_after_roundtrip: bool,
    pub roundtrip_violation: f64,
    /// Exact-anchoring residual (infinity norm).
    pub anchor_residual: f64,
    /// Manifold-entry residual for the predecessor dynamics (infinity norm).
    pub manifold_residual: f64,
    pub passed: bool,
}

/// Result of checking a simplicity set against a lifted trajectory.
#[derive(Debug, Clone)]
pub struct AdmissibilityReport {
    pub horizon: usize,
    pub eps_adm: f64,
    pub feas_tol: f64,
    pub entries: Vec<IndexAdmissibility>,
    pub overall: bool,
}

impl AdmissibilityReport {
    pub fn entry(&self, index: usize) -> Option<&IndexAdmissibility> {
        self.entries.iter().find(|e| e.index == index)
    }

    pub fn passing_indices(&self) -> Vec<usize> {
        self.entries
            .iter()
            .filter(|e| e.passed)
            .map(|e| e.index)
            .collect()
    }

    /// CSV rows `step,index,in_range,feasible,anchor_ok,manifold_ok,roundtrip_violation,anchor_residual,manifold_residual`.
    pub fn csv_rows(&self, step: usize) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{},{},{},{:.3e},{:.3e},{:.3e}\n",
                step,
                e.index,
                e.in_range as u8,
                e.feasible_after_roundtrip as u8,
                (e.anchor_residual <= self.eps_adm) as u8,
                (e.manifold_residual <= self.eps_adm) as u8,
                e.roundtrip_violation,
                e.anchor_residual,
                e.manifold_residual
            ));
        }
        out
    }
}

/// Evaluate the four admissibility conditions for one index of a lifted
/// trajectory.
fn check_index(
    i: usize,
    lifted: &LiftedTrajectory,
    pair: &dyn ModelPair,
    eps_adm: f64,
    feas_tol: f64,
) -> Result<IndexAdmissibility> {
    let horizon = lifted.horizon();
    let in_range = i >= 1 && i + 1 <= horizon;
    if !in_range {
        return Ok(IndexAdmissibility {
            index: i,
            in_range,
            feasible_after_roundtrip: false,
            roundtrip_violation: f64::INFINITY,
            anchor_residual: f64::INFINITY,
            manifold_residual: f64::INFINITY,
            passed: false,
        });
    }
    let z = &lifted.stages[i];
    let ref_i = &lifted.refs[i];
    let ref_next = &lifted.refs[i + 1];

    // Feasibility of the roundtrip: null-space coordinates replaced by the
    // reference, then checked against the complex constraint set.
    let roundtrip = lift(&reduce(z, pair)?, ref_i, pair)?;
    let feas = check_feasible(&roundtrip, pair, lifted.start + i, feas_tol);

    // Exact anchoring: lift of the simple successor matches the complex
    // successor.
    let zs = reduce(z, pair)?;
    let xs_next = pair.simple_step(&zs.state, &zs.control, lifted.start + i)?;
    let lhs = pair.lift_state(&xs_next, &ref_next.state);
    let rhs = pair.complex_step(&z.state, &z.control)?;
    let anchor_residual = (&lhs - &rhs).amax();

    // Manifold entry: the predecessor's complex successor already lies on
    // the manifold.
    let prev = &lifted.stages[i - 1];
    let x_i = pair.complex_step(&prev.state, &prev.control)?;
    let projected = pair.lift_state(&pair.reduce_state(&x_i), &ref_i.state);
    let manifold_residual = (&projected - &x_i).amax();

    let passed = feas.feasible() && anchor_residual <= eps_adm && manifold_residual <= eps_adm;
    Ok(IndexAdmissibility {
        index: i,
        in_range,
        feasible_after_roundtrip: feas.feasible(),
        roundtrip_violation: feas.max_violation(),
        anchor_residual,
        manifold_residual,
        passed,
    })
}

/// Check every index of `set` against a lifted trajectory. The empty set is
/// vacuously admissible.
pub fn check_admissible(
    set: &SimplicitySet,
    lifted: &LiftedTrajectory,
    pair: &dyn ModelPair,
    eps_adm: f64,
    feas_tol: f64,
) -> Result<AdmissibilityReport> {
    if set.horizon() != lifted.horizon() {
        return Err(Error::contract(format!(
            "set horizon {} does not match lifted trajectory horizon {}",
            set.horizon(),
            lifted.horizon()
        )));
    }
    if lifted.refs.len() != lifted.stages.len() + 1 {
        return Err(Error::contract(
            "lifted trajectory must carry one reference stage per index plus the terminal",
        ));
    }
    let mut entries = Vec::with_capacity(set.len());
    let mut overall = true;
    for i in set.iter() {
        let e = check_index(i, lifted, pair, eps_adm, feas_tol)?;
        overall &= e.passed;
        entries.push(e);
    }
    Ok(AdmissibilityReport {
        horizon: set.horizon(),
        eps_adm,
        feas_tol,
        entries,
        overall,
    })
}

/// The shift-and-filter update applied to the adaptive set after a solve:
/// keep indices whose admissibility conditions held on the lifted solution,
/// shift them back one step, and drop anything falling below index 1.
pub fn update_adaptive_set(
    s_a: &SimplicitySet,
    lifted: &LiftedTrajectory,
    pair: &dyn ModelPair,
    eps_adm: f64,
    feas_tol: f64,
) -> Result<SimplicitySet> {
    let report = check_admissible(s_a, lifted, pair, eps_adm, feas_tol)?;
    let mut next = SimplicitySet::empty(s_a.horizon());
    for e in &report.entries {
        if e.passed && e.index >= 2 {
            next.insert(e.index - 1);
        }
    }
    Ok(next)
}

/// Intersection of the adaptive set with the fixed set.
pub fn effective_set(s_a: &SimplicitySet, s_f: &SimplicitySet) -> Result<SimplicitySet> {
    if s_a.horizon() != s_f.horizon() {
        return Err(Error::contract(format!(
            "horizon mismatch: {} vs {}",
            s_a.horizon(),
            s_f.horizon()
        )));
    }
    let mut out = SimplicitySet::empty(s_a.horizon());
    for i in s_a.iter() {
        if s_f.contains(i) {
            out.insert(i);
        }
    }
    Ok(out)
}

/// Re-admit indices of the fixed set that are not yet simple but whose
/// admissibility conditions hold on the latest converged solution. Applied
/// between MPC iterations so complexity is recovered after difficult regions
/// pass.
pub fn grow_candidates(
    set: &SimplicitySet,
    s_f: &SimplicitySet,
    lifted: &LiftedTrajectory,
    pair: &dyn ModelPair,
    eps_adm: f64,
    feas_tol: f64,
) -> Result<SimplicitySet> {
    if set.horizon() != s_f.horizon() || set.horizon() != lifted.horizon() {
        return Err(Error::contract("horizon mismatch in grow_candidates"));
    }
    let mut out = set.clone();
    for i in s_f.iter() {
        if out.contains(i) {
            continue;
        }
        let e = check_index(i, lifted, pair, eps_adm, feas_tol)?;
        if e.passed {
            out.insert(i);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LiftedTrajectory;
    use crate::space::StagePair;
    use crate::testbed::{make_testbed, TestbedParams};
    use nalgebra::dvector;
    use std::sync::Arc;

    fn origin_stage() -> StagePair {
        StagePair::complex(dvector![0.0, 0.0, 0.0], dvector![0.0, 0.0])
    }

    /// A lifted trajectory sitting at the origin except for chosen stages.
    fn lifted_at_origin(n: usize, overrides: &[(usize, StagePair)]) -> LiftedTrajectory {
        let mut stages = vec![origin_stage(); n];
        for (i, s) in overrides {
            stages[*i] = s.clone();
        }
        LiftedTrajectory {
            start: 0,
            stages,
            terminal_state: dvector![0.0, 0.0, 0.0],
            refs: vec![origin_stage(); n + 1],
        }
    }

    fn pair() -> Arc<dyn crate::model::ModelPair> {
        make_testbed(&TestbedParams::default()).unwrap()
    }

    #[test]
    fn empty_set_vacuously_admissible() {
        let pair = pair();
        let lifted = lifted_at_origin(8, &[]);
        let rep = check_admissible(
            &SimplicitySet::empty(8),
            &lifted,
            pair.as_ref(),
            1e-6,
            1e-6,
        )
        .unwrap();
        assert!(rep.overall);
        assert!(rep.entries.is_empty());
    }

    #[test]
    fn on_manifold_index_is_admissible() {
        let pair = pair();
        let lifted = lifted_at_origin(8, &[]);
        let set = SimplicitySet::new(8, [3]).unwrap();
        let rep = check_admissible(&set, &lifted, pair.as_ref(), 1e-6, 1e-6).unwrap();
        assert!(rep.overall);
        let e = rep.entry(3).unwrap();
        assert_eq!(e.anchor_residual, 0.0);
        assert_eq!(e.manifold_residual, 0.0);
    }

    #[test]
    fn off_manifold_mode_fails_anchoring_with_predicted_residual() {
        let pair = pair();
        // w = 0.1 at index 3: the anchoring residual is |a_w * 0.1| = 0.08
        // with the default off-manifold pole a_w = 0.8.
        let z = StagePair::complex(dvector![0.0, 0.0, 0.1], dvector![0.0, 0.0]);
        let lifted = lifted_at_origin(8, &[(3, z)]);
        let set = SimplicitySet::new(8, [3]).unwrap();
        let rep = check_admissible(&set, &lifted, pair.as_ref(), 1e-6, 1e-6).unwrap();
        let e = rep.entry(3).unwrap();
        assert!(!e.passed);
        assert!((e.anchor_residual - 0.08).abs() < 1e-12);
    }

    #[test]
    fn boundary_indices_fail_range_condition() {
        let pair = pair();
        let lifted = lifted_at_origin(8, &[]);
        for bad in [0usize, 8] {
            let set = SimplicitySet::new(8, [bad]).unwrap();
            let rep = check_admissible(&set, &lifted, pair.as_ref(), 1e-6, 1e-6).unwrap();
            let e = rep.entry(bad).unwrap();
            assert!(!e.in_range);
            assert!(!e.passed);
        }
    }

    #[test]
    fn update_shifts_and_filters() {
        let pair = pair();
        let lifted = lifted_at_origin(8, &[]);
        let s_a = SimplicitySet::new(8, [3, 4, 5]).unwrap();
        let next = update_adaptive_set(&s_a, &lifted, pair.as_ref(), 1e-6, 1e-6).unwrap();
        assert_eq!(next.iter().collect::<Vec<_>>(), vec![2, 3, 4]);

        // Index 4 fails the roundtrip feasibility via an out-of-bounds stage.
        let bad = StagePair::complex(dvector![7.0, 0.0, 0.0], dvector![0.0, 0.0]);
        let lifted = lifted_at_origin(8, &[(4, bad)]);
        let next = update_adaptive_set(&s_a, &lifted, pair.as_ref(), 1e-6, 1e-6).unwrap();
        assert_eq!(next.iter().collect::<Vec<_>>(), vec![2, 4]);

        // An index shifting to 0 is dropped by the range condition.
        let s_a = SimplicitySet::new(8, [1]).unwrap();
        let lifted = lifted_at_origin(8, &[]);
        let next = update_adaptive_set(&s_a, &lifted, pair.as_ref(), 1e-6, 1e-6).unwrap();
        assert!(next.is_empty());
    }

    #[test]
    fn effective_set_intersects() {
        let s_a = SimplicitySet::full_interior(24);
        let s_f = SimplicitySet::range(24, 2, 22);
        let s = effective_set(&s_a, &s_f).unwrap();
        assert_eq!(s.iter().collect::<Vec<_>>(), (2..=22).collect::<Vec<_>>());

        let empty = SimplicitySet::empty(24);
        assert!(effective_set(&empty, &s_f).unwrap().is_empty());

        let single = SimplicitySet::new(24, [5]).unwrap();
        assert_eq!(
            effective_set(&single, &s_f).unwrap().iter().collect::<Vec<_>>(),
            vec![5]
        );

        let other = SimplicitySet::empty(12);
        assert!(effective_set(&s_a, &other).is_err());
    }

    #[test]
    fn grow_reaches_fixed_set_and_is_idempotent() {
        let pair = pair();
        let lifted = lifted_at_origin(24, &[]);
        let s_f = SimplicitySet::range(24, 2, 22);
        let grown = grow_candidates(
            &SimplicitySet::empty(24),
            &s_f,
            &lifted,
            pair.as_ref(),
            1e-6,
            1e-6,
        )
        .unwrap();
        assert_eq!(grown, s_f);
        let again =
            grow_candidates(&grown, &s_f, &lifted, pair.as_ref(), 1e-6, 1e-6).unwrap();
        assert_eq!(again, grown);
    }

    #[test]
    fn checker_is_pure() {
        let pair = pair();
        let z = StagePair::complex(dvector![0.4, -0.2, 0.05], dvector![0.1, 0.02]);
        let lifted = lifted_at_origin(8, &[(2, z)]);
        let set = SimplicitySet::new(8, [2, 3]).unwrap();
        let a = check_admissible(&set, &lifted, pair.as_ref(), 1e-6, 1e-6).unwrap();
        let b = check_admissible(&set, &lifted, pair.as_ref(), 1e-6, 1e-6).unwrap();
        assert_eq!(a.overall, b.overall);
        for (ea, eb) in a.entries.iter().zip(&b.entries) {
            assert_eq!(ea.anchor_residual, eb.anchor_residual);
            assert_eq!(ea.manifold_residual, eb.manifold_residual);
            assert_eq!(ea.roundtrip_violation, eb.roundtrip_violation);
        }
    }

    #[test]
    fn removing_elements_preserves_admissibility() {
        use rand::{Rng, SeedableRng};
        let pair = pair();
        let lifted = lifted_at_origin(16, &[]);
        let full = SimplicitySet::full_interior(16);
        let rep = check_admissible(&full, &lifted, pair.as_ref(), 1e-6, 1e-6).unwrap();
        assert!(rep.overall);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let subset: Vec<usize> = full.iter().filter(|_| rng.random_bool(0.5)).collect();
            let set = SimplicitySet::new(16, subset).unwrap();
            let rep = check_admissible(&set, &lifted, pair.as_ref(), 1e-6, 1e-6).unwrap();
            assert!(rep.overall);
        }
    }
}
