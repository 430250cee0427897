//! Complex legged dynamics: single rigid body driven by ground reaction
//! forces at the feet, plus double-integrator feet driven by swing forces.
//! The legs are massless for the body dynamics; joint data enters the
//! optimization through the auxiliary kinematic rows, not here.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use super::kinematics::{
    body_rotation, body_rotation_derivatives, euler_rate_map, euler_rate_map_derivatives,
};
use super::{LeggedParams, N_LEGS, OMEGA, Q_ANG, Q_FOOT, Q_LIN, V_FOOT, V_LIN};
use crate::error::{Error, Result};

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0)
}

pub fn check_guard(x: &DVector<f64>, p: &LeggedParams) -> Result<()> {
    let pitch = x[Q_ANG.start + 1];
    if pitch.abs() >= p.pitch_guard {
        return Err(Error::numeric(format!(
            "pitch {pitch:.3} rad at the Euler-rate map singularity guard ({:.3})",
            p.pitch_guard
        )));
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::numeric("non-finite state"));
    }
    Ok(())
}

/// Continuous dynamics of the complex system.
pub fn continuous_dynamics(
    x: &DVector<f64>,
    u: &DVector<f64>,
    p: &LeggedParams,
) -> Result<DVector<f64>> {
    check_guard(x, p)?;
    let q_lin = Vector3::from(x.fixed_rows::<3>(Q_LIN.start));
    let q_ang = Vector3::from(x.fixed_rows::<3>(Q_ANG.start));
    let v_lin = Vector3::from(x.fixed_rows::<3>(V_LIN.start));
    let omega = Vector3::from(x.fixed_rows::<3>(OMEGA.start));

    let r = body_rotation(&q_ang);
    let e = euler_rate_map(&q_ang);

    let mut f = DVector::zeros(x.len());
    f.fixed_rows_mut::<3>(Q_LIN.start).copy_from(&v_lin);
    f.fixed_rows_mut::<3>(Q_ANG.start).copy_from(&(e * omega));
    // Foot positions integrate foot velocities.
    for l in 0..N_LEGS {
        let vf = Vector3::from(x.fixed_rows::<3>(V_FOOT.start + 3 * l));
        f.fixed_rows_mut::<3>(Q_FOOT.start + 3 * l).copy_from(&vf);
    }

    let mut force = Vector3::zeros();
    let mut torque_world = Vector3::zeros();
    for l in 0..N_LEGS {
        let fj = Vector3::from(u.fixed_rows::<3>(3 * l));
        let pj = Vector3::from(x.fixed_rows::<3>(Q_FOOT.start + 3 * l));
        force += fj;
        torque_world += (pj - q_lin).cross(&fj);
    }
    let accel = force / p.mass - Vector3::new(0.0, 0.0, p.gravity);
    f.fixed_rows_mut::<3>(V_LIN.start).copy_from(&accel);

    let i_inv = p
        .inertia
        .try_inverse()
        .ok_or_else(|| Error::numeric("singular inertia"))?;
    let w = i_inv * (r.transpose() * torque_world - omega.cross(&(p.inertia * omega)));
    f.fixed_rows_mut::<3>(OMEGA.start).copy_from(&w);

    for l in 0..N_LEGS {
        let uf = Vector3::from(u.fixed_rows::<3>(12 + 3 * l));
        f.fixed_rows_mut::<3>(V_FOOT.start + 3 * l).copy_from(&uf);
    }
    Ok(f)
}

/// Forward-Euler discrete step.
pub fn discrete_step(x: &DVector<f64>, u: &DVector<f64>, p: &LeggedParams) -> Result<DVector<f64>> {
    let f = continuous_dynamics(x, u, p)?;
    Ok(x + p.dt * f)
}

/// Jacobians of the forward-Euler step with respect to state and control.
pub fn discrete_step_jacobian(
    x: &DVector<f64>,
    u: &DVector<f64>,
    p: &LeggedParams,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_guard(x, p)?;
    let nx = x.len();
    let nu = u.len();
    let q_lin = Vector3::from(x.fixed_rows::<3>(Q_LIN.start));
    let q_ang = Vector3::from(x.fixed_rows::<3>(Q_ANG.start));
    let omega = Vector3::from(x.fixed_rows::<3>(OMEGA.start));

    let r = body_rotation(&q_ang);
    let dr = body_rotation_derivatives(&q_ang);
    let e = euler_rate_map(&q_ang);
    let (de_roll, de_pitch) = euler_rate_map_derivatives(&q_ang);
    let i_inv = p
        .inertia
        .try_inverse()
        .ok_or_else(|| Error::numeric("singular inertia"))?;

    let mut fx = DMatrix::zeros(nx, nx);
    let mut fu = DMatrix::zeros(nx, nu);

    // d(q_lin)/dt = v_lin.
    fx.view_mut((Q_LIN.start, V_LIN.start), (3, 3))
        .copy_from(&Matrix3::identity());
    // d(q_ang)/dt = E(roll, pitch) omega.
    fx.view_mut((Q_ANG.start, Q_ANG.start), (3, 1))
        .copy_from(&(de_roll * omega));
    fx.view_mut((Q_ANG.start, Q_ANG.start + 1), (3, 1))
        .copy_from(&(de_pitch * omega));
    fx.view_mut((Q_ANG.start, OMEGA.start), (3, 3)).copy_from(&e);
    // d(q_foot)/dt = v_foot.
    for l in 0..N_LEGS {
        fx.view_mut((Q_FOOT.start + 3 * l, V_FOOT.start + 3 * l), (3, 3))
            .copy_from(&Matrix3::identity());
    }
    // Linear acceleration.
    for l in 0..N_LEGS {
        fu.view_mut((V_LIN.start, 3 * l), (3, 3))
            .copy_from(&(Matrix3::identity() / p.mass));
    }
    // Angular acceleration W.
    let mut torque_world = Vector3::zeros();
    let mut sum_skew_u = Matrix3::zeros();
    for l in 0..N_LEGS {
        let fj = Vector3::from(u.fixed_rows::<3>(3 * l));
        let pj = Vector3::from(x.fixed_rows::<3>(Q_FOOT.start + 3 * l));
        torque_world += (pj - q_lin).cross(&fj);
        sum_skew_u += skew(&fj);
        // dW/d p_j = Iinv R' (-skew(u_j)).
        let block = i_inv * r.transpose() * (-skew(&fj));
        fx.view_mut((OMEGA.start, Q_FOOT.start + 3 * l), (3, 3))
            .copy_from(&block);
        // dW/d u_j = Iinv R' skew(p_j - q_lin).
        let block = i_inv * r.transpose() * skew(&(pj - q_lin));
        fu.view_mut((OMEGA.start, 3 * l), (3, 3)).copy_from(&block);
    }
    // dW/d q_lin = Iinv R' sum_j skew(u_j).
    fx.view_mut((OMEGA.start, Q_LIN.start), (3, 3))
        .copy_from(&(i_inv * r.transpose() * sum_skew_u));
    // dW/d q_ang via dR'/d angle.
    for i in 0..3 {
        let col = i_inv * dr[i].transpose() * torque_world;
        fx.view_mut((OMEGA.start, Q_ANG.start + i), (3, 1))
            .copy_from(&col);
    }
    // dW/d omega = Iinv (skew(I w) - skew(w) I).
    let gyro = i_inv * (skew(&(p.inertia * omega)) - skew(&omega) * p.inertia);
    fx.view_mut((OMEGA.start, OMEGA.start), (3, 3))
        .copy_from(&gyro);
    // Foot accelerations.
    for l in 0..N_LEGS {
        fu.view_mut((V_FOOT.start + 3 * l, 12 + 3 * l), (3, 3))
            .copy_from(&Matrix3::identity());
    }

    let a = DMatrix::identity(nx, nx) + p.dt * fx;
    let b = p.dt * fu;
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::legged::{stand_state, LeggedParams};

    fn hover_control(p: &LeggedParams) -> DVector<f64> {
        let mut u = DVector::zeros(24);
        for l in 0..4 {
            u[3 * l + 2] = p.mass * p.gravity / 4.0;
        }
        u
    }

    #[test]
    fn static_stand_is_equilibrium() {
        let p = LeggedParams::default();
        let x = stand_state(&p, 0.0, 0.0, 0.0);
        let u = hover_control(&p);
        let f = continuous_dynamics(&x, &u, &p).unwrap();
        assert!(f.amax() < 1e-12, "residual {}", f.amax());
        let next = discrete_step(&x, &u, &p).unwrap();
        assert!((next - &x).amax() < 1e-12);
    }

    #[test]
    fn offset_force_torque_matches_hand_cross_product() {
        let p = LeggedParams::default();
        let mut x = stand_state(&p, 0.0, 0.0, 0.0);
        // Attitude level: R = identity; push one foot with a pure vertical
        // force and compare against the hand-computed lever arm.
        let mut u = DVector::zeros(24);
        u[2] = 50.0;
        let f = continuous_dynamics(&x, &u, &p).unwrap();
        let foot = Vector3::from(x.fixed_rows::<3>(Q_FOOT.start));
        let q = Vector3::from(x.fixed_rows::<3>(Q_LIN.start));
        let torque = (foot - q).cross(&Vector3::new(0.0, 0.0, 50.0));
        let w_expected = p.inertia.try_inverse().unwrap() * torque;
        let w = Vector3::from(f.fixed_rows::<3>(OMEGA.start));
        assert!((w - w_expected).norm() < 1e-12);

        // Forces through the body origin contribute no torque.
        for l in 0..4 {
            x.fixed_rows_mut::<3>(Q_FOOT.start + 3 * l).copy_from(&q);
        }
        let f = continuous_dynamics(&x, &u, &p).unwrap();
        assert!(f.fixed_rows::<3>(OMEGA.start).amax() < 1e-12);
    }

    #[test]
    fn flight_momentum_change_is_exactly_gravity() {
        let p = LeggedParams::default();
        let mut x = stand_state(&p, 0.0, 0.0, 0.0);
        x[V_LIN.start] = 1.2;
        x[OMEGA.start + 1] = 0.4;
        let u = DVector::zeros(24);
        let next = discrete_step(&x, &u, &p).unwrap();
        let dv = next.fixed_rows::<3>(V_LIN.start) - x.fixed_rows::<3>(V_LIN.start);
        assert_eq!(dv[0], 0.0);
        assert_eq!(dv[1], 0.0);
        assert_eq!(p.mass * dv[2], p.mass * (-p.gravity * p.dt));
    }

    #[test]
    fn euler_guard_rejects_high_pitch() {
        let p = LeggedParams::default();
        let mut x = stand_state(&p, 0.0, 0.0, 0.0);
        x[Q_ANG.start + 1] = std::f64::consts::FRAC_PI_2 - 0.05;
        assert!(continuous_dynamics(&x, &DVector::zeros(24), &p).is_err());
    }

    #[test]
    fn step_jacobian_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let p = LeggedParams::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        for _ in 0..5 {
            let mut x = stand_state(&p, 0.0, 0.0, 0.0);
            for i in 0..x.len() {
                x[i] += rng.random_range(-0.2..0.2);
            }
            let u = DVector::from_fn(24, |_, _| rng.random_range(-30.0..30.0));
            let (a, b) = discrete_step_jacobian(&x, &u, &p).unwrap();
            let h = 1e-6;
            for j in 0..x.len() {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                let fd =
                    (discrete_step(&xp, &u, &p).unwrap() - discrete_step(&xm, &u, &p).unwrap())
                        / (2.0 * h);
                assert!(
                    (&fd - a.column(j)).amax() < 1e-6 * (1.0 + fd.amax()),
                    "state col {j}"
                );
            }
            for j in 0..24 {
                let mut up = u.clone();
                let mut um = u.clone();
                up[j] += h;
                um[j] -= h;
                let fd =
                    (discrete_step(&x, &up, &p).unwrap() - discrete_step(&x, &um, &p).unwrap())
                        / (2.0 * h);
                assert!((fd - b.column(j)).amax() < 1e-6, "control col {j}");
            }
        }
    }
}
