//! Specialized admissibility conditions for the quadruped pair.
//!
//! For this model the generic admissibility residuals have a closed form:
//! every body row of the anchoring condition cancels except the angular
//! acceleration, whose mismatch is the torque-map difference between actual
//! and reference feet, and the foot rows reduce to reference-consistency
//! differences. Computing them directly gives a second algebraic route to
//! the same numbers the generic checker composes from the maps, which the
//! test suites compare index by index.

use nalgebra::Vector3;

use super::kinematics::body_rotation;
use super::{LeggedModelPair, LeggedParams, N_LEGS, OMEGA, Q_ANG, Q_FOOT, Q_LIN, V_FOOT};
use crate::error::Result;
use crate::model::check_feasible;
use crate::space::StagePair;

/// Evidence from the specialized per-stage check.
#[derive(Debug, Clone)]
pub struct LeggedAdmissibility {
    /// Worst foot-position deviation from the reference.
    pub foot_pos_err: f64,
    /// Worst foot-velocity deviation from the reference.
    pub foot_vel_err: f64,
    /// Worst swing-force deviation from the reference.
    pub foot_force_err: f64,
    /// Closed-form anchoring residual (the generic exact-anchoring residual
    /// computed without composing the maps).
    pub anchor_residual: f64,
    /// Worst complex-constraint violation of the on-reference roundtrip.
    pub constraint_violation: f64,
    pub feasible: bool,
    pub admissible: bool,
}

/// Angular acceleration of the body under forces `u_body` applied at `feet`.
fn angular_accel(
    q_lin: &Vector3<f64>,
    q_ang: &Vector3<f64>,
    omega: &Vector3<f64>,
    feet: &[f64],
    u_body: &[f64],
    p: &LeggedParams,
) -> Vector3<f64> {
    let r = body_rotation(q_ang);
    let mut torque = Vector3::zeros();
    for l in 0..N_LEGS {
        let pj = Vector3::new(feet[3 * l], feet[3 * l + 1], feet[3 * l + 2]);
        let fj = Vector3::new(u_body[3 * l], u_body[3 * l + 1], u_body[3 * l + 2]);
        torque += (pj - q_lin).cross(&fj);
    }
    p.inertia.try_inverse().unwrap()
        * (r.transpose() * torque - omega.cross(&(p.inertia * omega)))
}

/// Closed-form anchoring residual of one lifted stage: the torque-map
/// difference on the angular rows plus the reference-consistency differences
/// on the foot rows, each scaled as the discrete step sees them.
pub fn anchor_residual_closed_form(
    z: &StagePair,
    ref_i: &StagePair,
    ref_next: &StagePair,
    pair: &LeggedModelPair,
) -> f64 {
    let p = pair.params();
    let x = &z.state;
    let q_lin = Vector3::from(x.fixed_rows::<3>(Q_LIN.start));
    let q_ang = Vector3::from(x.fixed_rows::<3>(Q_ANG.start));
    let omega = Vector3::from(x.fixed_rows::<3>(OMEGA.start));

    let w_actual = angular_accel(
        &q_lin,
        &q_ang,
        &omega,
        &x.as_slice()[Q_FOOT],
        &z.control.as_slice()[0..12],
        p,
    );
    let w_ref = angular_accel(
        &q_lin,
        &q_ang,
        &omega,
        &ref_i.state.as_slice()[Q_FOOT],
        &z.control.as_slice()[0..12],
        p,
    );
    let mut worst = (p.dt * (w_ref - w_actual)).amax();

    for k in 0..12 {
        let pos_pred = x[Q_FOOT.start + k] + p.dt * x[V_FOOT.start + k];
        let vel_pred = x[V_FOOT.start + k] + p.dt * z.control[12 + k];
        worst = worst.max((ref_next.state[Q_FOOT.start + k] - pos_pred).abs());
        worst = worst.max((ref_next.state[V_FOOT.start + k] - vel_pred).abs());
    }
    worst
}

/// Closed-form manifold-entry residual: whether the previous stage's foot
/// dynamics land on the reference at the current index. Body rows project
/// to themselves and never contribute.
pub fn legged_manifold_entry(
    prev: &StagePair,
    ref_i: &StagePair,
    pair: &LeggedModelPair,
) -> f64 {
    let p = pair.params();
    let mut worst = 0.0_f64;
    for k in 0..12 {
        let pos = prev.state[Q_FOOT.start + k] + p.dt * prev.state[V_FOOT.start + k];
        let vel = prev.state[V_FOOT.start + k] + p.dt * prev.control[12 + k];
        worst = worst.max((pos - ref_i.state[Q_FOOT.start + k]).abs());
        worst = worst.max((vel - ref_i.state[V_FOOT.start + k]).abs());
    }
    worst
}

/// Per-stage specialized admissibility: the null-space components lie on the
/// reference (within `eps`) and the on-reference roundtrip of the stage
/// satisfies the complex constraints.
pub fn legged_admissibility(
    z: &StagePair,
    ref_i: &StagePair,
    ref_next: &StagePair,
    pair: &LeggedModelPair,
    t: usize,
    eps: f64,
    feas_tol: f64,
) -> Result<LeggedAdmissibility> {
    let mut foot_pos_err = 0.0_f64;
    let mut foot_vel_err = 0.0_f64;
    let mut foot_force_err = 0.0_f64;
    for k in 0..12 {
        foot_pos_err = foot_pos_err
            .max((z.state[Q_FOOT.start + k] - ref_i.state[Q_FOOT.start + k]).abs());
        foot_vel_err = foot_vel_err
            .max((z.state[V_FOOT.start + k] - ref_i.state[V_FOOT.start + k]).abs());
        foot_force_err =
            foot_force_err.max((z.control[12 + k] - ref_i.control[12 + k]).abs());
    }

    // Feasibility of the stage with null-space components replaced by the
    // reference (the roundtrip the generic condition checks).
    let roundtrip = crate::model::lift(
        &crate::model::reduce(z, pair)?,
        ref_i,
        pair,
    )?;
    let rep = check_feasible(&roundtrip, pair, t, feas_tol);

    let anchor = anchor_residual_closed_form(z, ref_i, ref_next, pair);
    let on_reference = foot_pos_err <= eps && foot_vel_err <= eps && foot_force_err <= eps;
    Ok(LeggedAdmissibility {
        foot_pos_err,
        foot_vel_err,
        foot_force_err,
        anchor_residual: anchor,
        constraint_violation: rep.max_violation(),
        feasible: rep.feasible(),
        admissible: on_reference && rep.feasible() && anchor <= eps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::legged::{
        hover_control, make_legged_pair, stand_state, ContactSchedule, LeggedParams, Terrain, NU,
        NX,
    };
    use crate::model::{LiftedTrajectory, ModelPair};
    use crate::simplicity::{check_admissible, SimplicitySet};
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use std::sync::Arc;

    fn pair() -> Arc<LeggedModelPair> {
        make_legged_pair(
            &LeggedParams::default(),
            ContactSchedule::standing(10),
            Terrain::flat(0.0),
        )
        .unwrap()
    }

    /// A random on-reference stage: body parts random, null-space parts
    /// copied from a reference built by one exact model step. Returns the
    /// pair re-anchored to that reference's foot track (indices 0..=2 map to
    /// the reference at i, i and i+1).
    fn on_reference_stage(
        base: &Arc<LeggedModelPair>,
        rng: &mut impl Rng,
    ) -> (Arc<LeggedModelPair>, StagePair, StagePair, StagePair) {
        let p = base.params().clone();
        let mut ref_x = stand_state(&p, 0.0, 0.0, 0.0);
        for k in 0..12 {
            ref_x[Q_FOOT.start + k] += rng.random_range(-0.03..0.03);
            ref_x[V_FOOT.start + k] = rng.random_range(-0.5..0.5);
        }
        let mut ref_u = hover_control(&p, 15);
        for k in 0..12 {
            ref_u[12 + k] = rng.random_range(-2.0..2.0);
        }
        let ref_next_x = base.complex_step(&ref_x, &ref_u).unwrap();
        let mut feet_i = [0.0; 12];
        feet_i.copy_from_slice(ref_x.rows(Q_FOOT.start, 12).as_slice());
        let mut feet_next = [0.0; 12];
        feet_next.copy_from_slice(ref_next_x.rows(Q_FOOT.start, 12).as_slice());
        let pair = base.clone().with_ref_feet(vec![feet_i, feet_i, feet_next]);

        let ref_i = StagePair::complex(ref_x.clone(), ref_u.clone());
        let ref_next = StagePair::complex(ref_next_x, ref_u.clone());

        let mut x = ref_x;
        for i in 0..6 {
            x[i] += rng.random_range(-0.1..0.1);
        }
        for i in V_LIN_RANGE {
            x[i] += rng.random_range(-0.5..0.5);
        }
        let mut u = ref_u;
        for k in 0..12 {
            u[k] += rng.random_range(-10.0..10.0);
        }
        (pair, StagePair::complex(x, u), ref_i, ref_next)
    }

    const V_LIN_RANGE: std::ops::Range<usize> = 18..24;

    #[test]
    fn anchoring_is_exact_on_reference_stages() {
        let base = pair();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        for _ in 0..1000 {
            let (pair, mut z, ref_i, ref_next) = on_reference_stage(&base, &mut rng);
            // Pin the null-space components exactly onto the reference.
            for k in 0..12 {
                z.state[Q_FOOT.start + k] = ref_i.state[Q_FOOT.start + k];
                z.state[V_FOOT.start + k] = ref_i.state[V_FOOT.start + k];
                z.control[12 + k] = ref_i.control[12 + k];
            }
            // Generic route: lift of the template successor vs the complex
            // successor.
            let zs = crate::model::reduce(&z, pair.as_ref()).unwrap();
            let xs_next = pair.simple_step(&zs.state, &zs.control, 0).unwrap();
            let lhs = pair.lift_state(&xs_next, &ref_next.state);
            let rhs = pair.complex_step(&z.state, &z.control).unwrap();
            assert_eq!((lhs - rhs).amax(), 0.0);
            // Closed-form route agrees.
            let cf = anchor_residual_closed_form(&z, &ref_i, &ref_next, pair.as_ref());
            assert_eq!(cf, 0.0);
        }
    }

    #[test]
    fn specialized_and_generic_checkers_agree() {
        let base = pair();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let eps = 1e-6;
        for trial in 0..200 {
            let (pair, mut z, ref_i, ref_next) = on_reference_stage(&base, &mut rng);
            // Perturb some trials off the reference feet.
            if trial % 3 == 0 {
                z.state[Q_FOOT.start + rng.random_range(0..12)] += 0.001;
            }
            if trial % 5 == 0 {
                z.control[12 + rng.random_range(0..12)] += 0.01;
            }
            let lifted = LiftedTrajectory {
                start: 0,
                stages: vec![z.clone(), z.clone()],
                terminal_state: ref_next.state.clone(),
                refs: vec![ref_i.clone(), ref_i.clone(), ref_next.clone()],
            };
            let set = SimplicitySet::new(2, [1]).unwrap();
            let generic = check_admissible(&set, &lifted, pair.as_ref(), eps, eps).unwrap();
            let ge = generic.entry(1).unwrap();

            // The generic 13c residual evaluates the anchoring of stage 1,
            // whose reference successor is refs[2] = ref_next.
            let special =
                legged_admissibility(&z, &ref_i, &ref_next, pair.as_ref(), 0, eps, eps).unwrap();
            assert!(
                (ge.anchor_residual - special.anchor_residual).abs() <= 1e-12,
                "anchor residual routes disagree: {} vs {}",
                ge.anchor_residual,
                special.anchor_residual
            );
            assert_eq!(
                ge.feasible_after_roundtrip, special.feasible,
                "feasibility routes disagree on trial {trial}"
            );
        }
    }

    #[test]
    fn foot_offset_breaks_admissibility() {
        let base = pair();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let (pair, mut z, ref_i, ref_next) = on_reference_stage(&base, &mut rng);
        z.state[Q_FOOT.start] += 0.001; // 1 mm off the reference
        let rep =
            legged_admissibility(&z, &ref_i, &ref_next, pair.as_ref(), 0, 1e-6, 1e-6).unwrap();
        assert!(!rep.admissible);
        assert!(rep.foot_pos_err > 1e-6);
        assert!(rep.anchor_residual > 1e-6);
    }

    #[test]
    fn joint_bound_violation_breaks_admissibility() {
        let pair = pair();
        let p = LeggedParams::default();
        // Feet directly under the hips but body far too low: knees fold
        // beyond their bound while the feet stay reachable.
        let mut x = stand_state(&p, 0.0, 0.0, 0.0);
        x[2] = 0.07;
        let u = hover_control(&p, 15);
        let z = StagePair::complex(x.clone(), u.clone());
        let ref_i = z.clone();
        let ref_next = StagePair::complex(pair.complex_step(&x, &u).unwrap(), u);
        let rep =
            legged_admissibility(&z, &ref_i, &ref_next, pair.as_ref(), 0, 1e-6, 1e-6).unwrap();
        assert!(!rep.feasible, "violation {}", rep.constraint_violation);
        assert!(!rep.admissible);

        // The generic route sees the same infeasibility.
        let lifted = LiftedTrajectory {
            start: 0,
            stages: vec![z.clone(), z.clone()],
            terminal_state: ref_next.state.clone(),
            refs: vec![ref_i.clone(), ref_i.clone(), ref_next.clone()],
        };
        let set = SimplicitySet::new(2, [1]).unwrap();
        let generic = check_admissible(&set, &lifted, pair.as_ref(), 1e-6, 1e-6).unwrap();
        assert!(!generic.entry(1).unwrap().feasible_after_roundtrip);
    }

    #[test]
    fn manifold_entry_residual_matches_generic_route() {
        let base = pair();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for _ in 0..100 {
            let (pair, z, ref_i, _) = on_reference_stage(&base, &mut rng);
            let mut prev = z.clone();
            for k in 0..12 {
                prev.state[Q_FOOT.start + k] += rng.random_range(-0.01..0.01);
            }
            // Generic route: project the predecessor's successor onto the
            // manifold at the reference and compare.
            let x_i = pair.complex_step(&prev.state, &prev.control).unwrap();
            let projected = pair.lift_state(&pair.reduce_state(&x_i), &ref_i.state);
            let generic = (projected - &x_i).amax();
            let special = legged_manifold_entry(&prev, &ref_i, pair.as_ref());
            assert!(
                (generic - special).abs() <= 1e-12,
                "{generic} vs {special}"
            );
        }
    }

    #[test]
    fn random_states_stay_finite_dimensional() {
        // Guard: the stage dimensions used across this module agree with the
        // pair's declared dimensions.
        let pair = pair();
        assert_eq!(pair.dims().n_xc, NX);
        assert_eq!(pair.dims().n_uc, NU);
        let z = StagePair::complex(DVector::zeros(NX), DVector::zeros(NU));
        assert!(z.check_dims(&pair.dims()).is_ok());
    }
}
