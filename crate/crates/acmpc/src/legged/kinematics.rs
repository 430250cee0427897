//! Closed-form kinematics for a 3-DOF leg: abduction roll, hip pitch, knee
//! pitch. Forward kinematics, geometric Jacobians, their joint derivatives,
//! and the closed-form inverse used for initialization.

use nalgebra::{Matrix3, Vector3};

use super::LeggedParams;
use crate::error::{Error, Result};

pub fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// World-from-body rotation for ZYX Euler angles `(roll, pitch, yaw)`.
pub fn body_rotation(q_ang: &Vector3<f64>) -> Matrix3<f64> {
    rot_z(q_ang[2]) * rot_y(q_ang[1]) * rot_x(q_ang[0])
}

/// Derivatives of the body rotation with respect to each Euler angle.
pub fn body_rotation_derivatives(q_ang: &Vector3<f64>) -> [Matrix3<f64>; 3] {
    let (s0, c0) = q_ang[0].sin_cos();
    let (s1, c1) = q_ang[1].sin_cos();
    let drx = Matrix3::new(0.0, 0.0, 0.0, 0.0, -s0, -c0, 0.0, c0, -s0);
    let dry = Matrix3::new(-s1, 0.0, c1, 0.0, 0.0, 0.0, -c1, 0.0, -s1);
    let (s2, c2) = q_ang[2].sin_cos();
    let drz = Matrix3::new(-s2, -c2, 0.0, c2, -s2, 0.0, 0.0, 0.0, 0.0);
    let rx = rot_x(q_ang[0]);
    let ry = rot_y(q_ang[1]);
    let rz = rot_z(q_ang[2]);
    [&rz * &ry * drx, &rz * dry * rx, drz * ry * rx]
}

/// ZYX Euler-rate map `d(q_ang)/dt = E(roll, pitch) * omega_body`.
pub fn euler_rate_map(q_ang: &Vector3<f64>) -> Matrix3<f64> {
    let (s0, c0) = q_ang[0].sin_cos();
    let (s1, c1) = q_ang[1].sin_cos();
    let t1 = s1 / c1;
    Matrix3::new(
        1.0,
        s0 * t1,
        c0 * t1,
        0.0,
        c0,
        -s0,
        0.0,
        s0 / c1,
        c0 / c1,
    )
}

/// Derivatives of the Euler-rate map with respect to roll and pitch.
pub fn euler_rate_map_derivatives(q_ang: &Vector3<f64>) -> (Matrix3<f64>, Matrix3<f64>) {
    let (s0, c0) = q_ang[0].sin_cos();
    let (s1, c1) = q_ang[1].sin_cos();
    let t1 = s1 / c1;
    let d_roll = Matrix3::new(
        0.0,
        c0 * t1,
        -s0 * t1,
        0.0,
        -s0,
        -c0,
        0.0,
        c0 / c1,
        -s0 / c1,
    );
    let sec2 = 1.0 / (c1 * c1);
    let d_pitch = Matrix3::new(
        0.0,
        s0 * sec2,
        c0 * sec2,
        0.0,
        0.0,
        0.0,
        0.0,
        s0 * t1 / c1,
        c0 * t1 / c1,
    );
    (d_roll, d_pitch)
}

/// Per-leg kinematic chain evaluated at a joint configuration, in the body
/// frame: axis directions, axis points, foot position, and the geometric
/// Jacobian.
#[derive(Debug, Clone)]
pub struct LegChain {
    pub foot: Vector3<f64>,
    pub axes: [Vector3<f64>; 3],
    pub points: [Vector3<f64>; 3],
    pub jac: Matrix3<f64>,
}

/// Evaluate the chain of leg `leg` at joints `th = (abduction, hip, knee)`.
pub fn leg_chain(p: &LeggedParams, leg: usize, th: &[f64]) -> LegChain {
    let hip = p.hip_offsets[leg];
    let side = p.side_sign(leg);
    let r1 = rot_x(th[0]);
    let r12 = &r1 * rot_y(th[1]);
    let r123 = &r12 * rot_y(th[2]);
    let o_y = Vector3::new(0.0, side * p.link_lengths[0], 0.0);
    let upper = Vector3::new(0.0, 0.0, -p.link_lengths[1]);
    let lower = Vector3::new(0.0, 0.0, -p.link_lengths[2]);

    let c1 = hip;
    let c2 = hip + &r1 * o_y;
    let c3 = c2 + &r12 * upper;
    let foot = c3 + &r123 * lower;

    let axes = [
        Vector3::x(),
        &r1 * Vector3::y(),
        &r12 * Vector3::y(),
    ];
    let points = [c1, c2, c3];
    let mut jac = Matrix3::zeros();
    for k in 0..3 {
        jac.set_column(k, &axes[k].cross(&(foot - points[k])));
    }
    LegChain {
        foot,
        axes,
        points,
        jac,
    }
}

impl LegChain {
    /// `d jac / d theta_m` for each joint `m`.
    pub fn jac_derivatives(&self) -> [Matrix3<f64>; 3] {
        let mut out = [Matrix3::zeros(); 3];
        for m in 0..3 {
            for k in 0..3 {
                let jm: Vector3<f64> = self.jac.column(m).into();
                let mut col = self.axes[k].cross(&jm);
                if m < k {
                    let dw = self.axes[m].cross(&self.axes[k]);
                    col += dw.cross(&(self.foot - self.points[k]));
                    let dc = self.axes[m].cross(&(self.points[k] - self.points[m]));
                    col -= self.axes[k].cross(&dc);
                }
                out[m].set_column(k, &col);
            }
        }
        out
    }
}

/// Closed-form inverse kinematics for one leg: body-frame foot target
/// relative to the body origin. Fails when the target is out of reach.
pub fn leg_ik(p: &LeggedParams, leg: usize, target_body: &Vector3<f64>) -> Result<Vector3<f64>> {
    let rel = target_body - p.hip_offsets[leg];
    let side = p.side_sign(leg);
    let (l_abd, l_up, l_lo) = (p.link_lengths[0], p.link_lengths[1], p.link_lengths[2]);

    let rho2 = rel[1] * rel[1] + rel[2] * rel[2];
    let az2 = rho2 - l_abd * l_abd;
    if az2 < 1e-12 {
        return Err(Error::numeric(format!(
            "leg {leg}: foot target too close to the abduction axis"
        )));
    }
    let az = -az2.sqrt();
    let b = side * l_abd;
    let th1 = rel[2].atan2(rel[1]) - az.atan2(b);

    let ax = rel[0];
    let l2 = ax * ax + az * az;
    let cos_knee = (l2 - l_up * l_up - l_lo * l_lo) / (2.0 * l_up * l_lo);
    if !(-1.0..=1.0).contains(&cos_knee) {
        return Err(Error::numeric(format!(
            "leg {leg}: foot target out of reach (cos knee {cos_knee:.3})"
        )));
    }
    let th3 = -cos_knee.acos();
    let th2 = (-ax).atan2(-az) - (l_lo * th3.sin()).atan2(l_up + l_lo * th3.cos());

    // Normalize th1 into (-pi, pi].
    let th1 = th1.rem_euclid(2.0 * std::f64::consts::PI);
    let th1 = if th1 > std::f64::consts::PI {
        th1 - 2.0 * std::f64::consts::PI
    } else {
        th1
    };
    Ok(Vector3::new(th1, th2, th3))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::legged::LeggedParams;
    use rand::{Rng, SeedableRng};

    #[test]
    fn fk_matches_hand_geometry_at_stand() {
        let p = LeggedParams::default();
        // Straight-down stand: abduction zero, hip/knee from the planar
        // two-link triangle at the standing height.
        let th = leg_ik(
            &p,
            0,
            &(p.hip_offsets[0]
                + Vector3::new(0.0, p.side_sign(0) * p.link_lengths[0], -p.stand_height)),
        )
        .unwrap();
        let chain = leg_chain(&p, 0, th.as_slice());
        let expect = p.hip_offsets[0]
            + Vector3::new(0.0, p.side_sign(0) * p.link_lengths[0], -p.stand_height);
        assert!((chain.foot - expect).norm() < 1e-10);
        assert!(th[0].abs() < 1e-10);

        // Hand geometry: knee interior angle from the law of cosines.
        let l = p.stand_height;
        let cos_knee =
            (l * l - p.link_lengths[1].powi(2) - p.link_lengths[2].powi(2))
                / (2.0 * p.link_lengths[1] * p.link_lengths[2]);
        assert!((th[2] + cos_knee.acos()).abs() < 1e-10);
    }

    #[test]
    fn ik_inverts_fk_on_random_configurations() {
        let p = LeggedParams::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let leg = rng.random_range(0..4usize);
            let th = [
                rng.random_range(-0.5..0.5),
                rng.random_range(-1.0..1.4),
                rng.random_range(-2.4..-0.5),
            ];
            let chain = leg_chain(&p, leg, &th);
            let back = leg_ik(&p, leg, &chain.foot).unwrap();
            let again = leg_chain(&p, leg, back.as_slice());
            assert!(
                (again.foot - chain.foot).norm() < 1e-9,
                "leg {leg} th {th:?} -> {back:?}"
            );
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let p = LeggedParams::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let leg = rng.random_range(0..4usize);
            let th = [
                rng.random_range(-0.5..0.5),
                rng.random_range(-1.0..1.4),
                rng.random_range(-2.4..-0.5),
            ];
            let chain = leg_chain(&p, leg, &th);
            let h = 1e-7;
            for k in 0..3 {
                let mut tp = th;
                let mut tm = th;
                tp[k] += h;
                tm[k] -= h;
                let fd = (leg_chain(&p, leg, &tp).foot - leg_chain(&p, leg, &tm).foot)
                    / (2.0 * h);
                let col: Vector3<f64> = chain.jac.column(k).into();
                assert!((fd - col).norm() < 1e-6, "leg {leg} joint {k}");
            }
        }
    }

    #[test]
    fn jacobian_derivatives_match_finite_differences() {
        let p = LeggedParams::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let leg = rng.random_range(0..4usize);
            let th = [
                rng.random_range(-0.5..0.5),
                rng.random_range(-1.0..1.4),
                rng.random_range(-2.4..-0.5),
            ];
            let chain = leg_chain(&p, leg, &th);
            let dj = chain.jac_derivatives();
            let h = 1e-6;
            for m in 0..3 {
                let mut tp = th;
                let mut tm = th;
                tp[m] += h;
                tm[m] -= h;
                let fd = (leg_chain(&p, leg, &tp).jac - leg_chain(&p, leg, &tm).jac)
                    / (2.0 * h);
                assert!(
                    (fd - dj[m]).norm() < 1e-5,
                    "leg {leg} dm {m}: {}",
                    (fd - dj[m]).norm()
                );
            }
        }
    }

    #[test]
    fn extended_leg_jacobian_is_singular() {
        let p = LeggedParams::default();
        // Knee fully extended: the leg cannot change its length.
        let chain = leg_chain(&p, 0, &[0.0, 0.4, 0.0]);
        let svd = chain.jac.svd(false, false);
        let cond = svd.singular_values[0] / svd.singular_values[2].max(1e-300);
        assert!(cond > 1e6, "condition number {cond}");
    }

    #[test]
    fn euler_maps_match_finite_differences() {
        let q = Vector3::new(0.3, -0.4, 0.9);
        let h = 1e-7;
        let dr = body_rotation_derivatives(&q);
        for i in 0..3 {
            let mut qp = q;
            let mut qm = q;
            qp[i] += h;
            qm[i] -= h;
            let fd = (body_rotation(&qp) - body_rotation(&qm)) / (2.0 * h);
            assert!((fd - dr[i]).norm() < 1e-6);
        }
        let (d0, d1) = euler_rate_map_derivatives(&q);
        for (i, d) in [(0usize, d0), (1usize, d1)] {
            let mut qp = q;
            let mut qm = q;
            qp[i] += h;
            qm[i] -= h;
            let fd = (euler_rate_map(&qp) - euler_rate_map(&qm)) / (2.0 * h);
            assert!((fd - d).norm() < 1e-6);
        }
    }
}
