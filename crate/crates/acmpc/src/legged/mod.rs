//! The quadruped model pair.
//!
//! The complex system is a single rigid body with four massless legs: body
//! pose and rates plus world-frame foot positions and velocities (36 states),
//! driven by per-foot ground reaction forces and swing-foot accelerations
//! (24 controls). Joint angles, velocities and torques enter the OCP as
//! auxiliary variables tied to the stage by kinematic equality rows. The
//! simple system keeps only the body states and the ground reaction forces;
//! its torque map reads foot positions from the reference, which is exactly
//! what makes the anchoring identity hold on the reference.

pub mod admissibility;
pub mod constraints;
pub mod dynamics;
pub mod kinematics;
pub mod schedule;
pub mod terrain;

use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

pub use admissibility::{legged_admissibility, legged_manifold_entry, LeggedAdmissibility};
pub use schedule::{ContactPhase, ContactSchedule};
pub use terrain::Terrain;

use crate::error::{Error, Result};
use crate::model::{validate_pair, ModelPair, RowMeta};
use crate::space::{Dims, StagePair};

pub const N_LEGS: usize = 4;
pub const NX: usize = 36;
pub const NU: usize = 24;
pub const NXS: usize = 12;
pub const NUS: usize = 12;
pub const N_AUX: usize = 36;

pub const Q_LIN: Range<usize> = 0..3;
pub const Q_ANG: Range<usize> = 3..6;
pub const Q_FOOT: Range<usize> = 6..18;
pub const V_LIN: Range<usize> = 18..21;
pub const OMEGA: Range<usize> = 21..24;
pub const V_FOOT: Range<usize> = 24..36;

const RETAINED_STATE: [usize; 12] = [0, 1, 2, 3, 4, 5, 18, 19, 20, 21, 22, 23];
const RETAINED_CONTROL: [usize; 12] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11];

/// Physical and bound parameters of the quadruped.
#[derive(Debug, Clone)]
pub struct LeggedParams {
    pub mass: f64,
    pub inertia: Matrix3<f64>,
    /// Hip positions in the body frame; legs ordered LF, RF, LH, RH.
    pub hip_offsets: [Vector3<f64>; 4],
    /// `(l_abduction, l_upper, l_lower)` link lengths.
    pub link_lengths: [f64; 3],
    /// Joint angle bounds per joint type (abduction, hip, knee).
    pub theta_min: [f64; 3],
    pub theta_max: [f64; 3],
    pub dtheta_max: f64,
    pub tau_max: f64,
    pub mu: f64,
    pub grf_z_max: f64,
    pub grf_tangential_max: f64,
    /// Optimistic widening of the force bounds in the simple system.
    pub simple_grf_factor: f64,
    pub gravity: f64,
    pub dt: f64,
    pub stand_height: f64,
    pub pitch_guard: f64,
    pub q_weights: [f64; NX],
    pub r_weights: [f64; NU],
    pub terminal_scale: f64,
}

impl Default for LeggedParams {
    fn default() -> Self {
        let mut q = [0.0; NX];
        for i in Q_LIN {
            q[i] = 40.0;
        }
        q[Q_LIN.start + 2] = 120.0;
        for i in Q_ANG {
            q[i] = 60.0;
        }
        q[Q_ANG.start + 2] = 30.0;
        for i in Q_FOOT {
            q[i] = 30.0;
        }
        for i in V_LIN {
            q[i] = 8.0;
        }
        q[V_LIN.start + 2] = 12.0;
        for i in OMEGA {
            q[i] = 2.0;
        }
        for i in V_FOOT {
            q[i] = 1.5;
        }
        let mut r = [1e-3; NU];
        for (i, ri) in r.iter_mut().enumerate().take(12) {
            let _ = i;
            *ri = 2e-3;
        }
        LeggedParams {
            mass: 12.0,
            inertia: Matrix3::from_diagonal(&Vector3::new(0.06, 0.15, 0.18)),
            hip_offsets: [
                Vector3::new(0.2, 0.055, 0.0),
                Vector3::new(0.2, -0.055, 0.0),
                Vector3::new(-0.2, 0.055, 0.0),
                Vector3::new(-0.2, -0.055, 0.0),
            ],
            link_lengths: [0.06, 0.2, 0.2],
            theta_min: [-0.6, -1.6, -2.7],
            theta_max: [0.6, 2.0, -0.35],
            dtheta_max: 18.0,
            tau_max: 34.0,
            mu: 0.7,
            grf_z_max: 180.0,
            grf_tangential_max: 100.0,
            simple_grf_factor: 1.6,
            gravity: 9.81,
            dt: 0.03,
            stand_height: 0.27,
            pitch_guard: std::f64::consts::FRAC_PI_2 - 0.1,
            q_weights: q,
            r_weights: r,
            terminal_scale: 10.0,
        }
    }
}

impl LeggedParams {
    /// Lateral sign of a leg: +1 for left legs, -1 for right legs.
    pub fn side_sign(&self, leg: usize) -> f64 {
        if leg % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Body length implied by the hip offsets.
    pub fn body_length(&self) -> f64 {
        (self.hip_offsets[0][0] - self.hip_offsets[2][0]).abs()
    }

    /// Nominal body-frame foot position under leg `leg` when standing.
    pub fn nominal_foot_body(&self, leg: usize) -> Vector3<f64> {
        self.hip_offsets[leg]
            + Vector3::new(
                0.0,
                self.side_sign(leg) * self.link_lengths[0],
                -self.stand_height,
            )
    }

    pub fn validate(&self) -> Result<()> {
        if self.mass <= 0.0 || self.gravity <= 0.0 || self.dt <= 0.0 {
            return Err(Error::construction("mass, gravity and dt must be positive"));
        }
        if (self.inertia - self.inertia.transpose()).norm() > 1e-12
            || self.inertia.symmetric_eigenvalues().min() <= 0.0
        {
            return Err(Error::construction(
                "inertia must be symmetric positive definite",
            ));
        }
        for j in 0..3 {
            if self.theta_min[j] >= self.theta_max[j] {
                return Err(Error::construction("joint bounds must satisfy min < max"));
            }
        }
        if self.tau_max <= 0.0 || self.dtheta_max <= 0.0 || self.mu <= 0.0 {
            return Err(Error::construction(
                "torque, joint-rate and friction bounds must be positive",
            ));
        }
        if self.grf_z_max <= 0.0 || self.grf_tangential_max <= 0.0 || self.simple_grf_factor < 1.0
        {
            return Err(Error::construction("force bounds must be positive"));
        }
        Ok(())
    }
}

/// Standing state: body at `(x, y)` over flat ground at the terrain height
/// `ground_z`, level attitude, feet at their nominal offsets on the ground.
pub fn stand_state_on(p: &LeggedParams, x: f64, y: f64, ground_z: f64) -> DVector<f64> {
    let mut s = DVector::zeros(NX);
    s[0] = x;
    s[1] = y;
    s[2] = ground_z + p.stand_height;
    for l in 0..N_LEGS {
        let nf = p.nominal_foot_body(l);
        s[Q_FOOT.start + 3 * l] = x + nf[0];
        s[Q_FOOT.start + 3 * l + 1] = y + nf[1];
        s[Q_FOOT.start + 3 * l + 2] = ground_z;
    }
    s
}

/// Standing state over ground height zero.
pub fn stand_state(p: &LeggedParams, x: f64, y: f64, _yaw: f64) -> DVector<f64> {
    stand_state_on(p, x, y, 0.0)
}

/// Hover control: weight shared across the stance feet, zero swing forces.
pub fn hover_control(p: &LeggedParams, stance_mask: usize) -> DVector<f64> {
    let n_st = stance_mask.count_ones().max(1) as f64;
    let mut u = DVector::zeros(NU);
    for l in 0..N_LEGS {
        if stance_mask & (1 << l) != 0 {
            u[3 * l + 2] = p.mass * p.gravity / n_st;
        }
    }
    u
}

/// The quadruped model pair. Holds the contact schedule, terrain and the
/// reference foot track its template dynamics read from.
pub struct LeggedModelPair {
    params: LeggedParams,
    schedule: ContactSchedule,
    terrain: Terrain,
    /// Reference foot positions per absolute time (clamped lookup), read by
    /// the simple-system torque map.
    ref_feet: Vec<[f64; 12]>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    qt: DMatrix<f64>,
    meta_complex: Vec<Vec<RowMeta>>,
    meta_simple: Vec<Vec<RowMeta>>,
}

impl LeggedModelPair {
    pub fn params(&self) -> &LeggedParams {
        &self.params
    }

    pub fn schedule(&self) -> &ContactSchedule {
        &self.schedule
    }

    pub fn terrain(&self) -> &Terrain {
        &self.terrain
    }

    pub fn stance_mask(&self, t: usize) -> usize {
        self.schedule.stance_mask(t)
    }

    pub fn ref_feet_at(&self, t: usize) -> &[f64; 12] {
        &self.ref_feet[t.min(self.ref_feet.len() - 1)]
    }

    /// Replace the reference foot track (used after the reference generator
    /// has produced the final nominal trajectory).
    pub fn with_ref_feet(mut self: Arc<Self>, feet: Vec<[f64; 12]>) -> Arc<Self> {
        assert!(!feet.is_empty());
        Arc::make_mut(&mut self).ref_feet = feet;
        self
    }

    /// Lift a simple state onto the reference feet at time `t` (foot
    /// velocities zeroed; the body rows of the dynamics never read them).
    fn lift_for_template(&self, xs: &DVector<f64>, t: usize) -> DVector<f64> {
        let mut x = DVector::zeros(NX);
        for (row, &j) in RETAINED_STATE.iter().enumerate() {
            x[j] = xs[row];
        }
        let feet = self.ref_feet_at(t);
        for k in 0..12 {
            x[Q_FOOT.start + k] = feet[k];
        }
        x
    }
}

impl Clone for LeggedModelPair {
    fn clone(&self) -> Self {
        LeggedModelPair {
            params: self.params.clone(),
            schedule: self.schedule.clone(),
            terrain: self.terrain.clone(),
            ref_feet: self.ref_feet.clone(),
            q: self.q.clone(),
            r: self.r.clone(),
            qt: self.qt.clone(),
            meta_complex: self.meta_complex.clone(),
            meta_simple: self.meta_simple.clone(),
        }
    }
}

/// Build the quadruped pair for a schedule and terrain. The reference foot
/// track defaults to the nominal stand; environments override it once the
/// reference trajectory exists.
pub fn make_legged_pair(
    params: &LeggedParams,
    schedule: ContactSchedule,
    terrain: Terrain,
) -> Result<Arc<LeggedModelPair>> {
    params.validate()?;
    let q = DMatrix::from_diagonal(&DVector::from_row_slice(&params.q_weights));
    let r = DMatrix::from_diagonal(&DVector::from_row_slice(&params.r_weights));
    let qt = params.terminal_scale * &q;
    let meta_complex = (0..16).map(constraints::complex_meta).collect();
    let meta_simple = (0..16).map(constraints::simple_meta).collect();
    let stand = stand_state(params, 0.0, 0.0, 0.0);
    let mut feet = [0.0; 12];
    feet.copy_from_slice(stand.rows(Q_FOOT.start, 12).as_slice());
    let pair = LeggedModelPair {
        params: params.clone(),
        schedule,
        terrain,
        ref_feet: vec![feet],
        q,
        r,
        qt,
        meta_complex,
        meta_simple,
    };
    validate_pair(&pair)?;
    Ok(Arc::new(pair))
}

impl ModelPair for LeggedModelPair {
    fn name(&self) -> &'static str {
        "legged-quadruped"
    }

    fn dims(&self) -> Dims {
        Dims {
            n_xc: NX,
            n_uc: NU,
            n_xs: NXS,
            n_us: NUS,
        }
    }

    fn dt(&self) -> f64 {
        self.params.dt
    }

    fn retained_state(&self) -> &[usize] {
        &RETAINED_STATE
    }

    fn retained_control(&self) -> &[usize] {
        &RETAINED_CONTROL
    }

    fn complex_step(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        dynamics::discrete_step(x, u, &self.params)
    }

    fn complex_step_jacobian(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        dynamics::discrete_step_jacobian(x, u, &self.params)
    }

    fn simple_step(&self, x: &DVector<f64>, u: &DVector<f64>, t: usize) -> Result<DVector<f64>> {
        let xl = self.lift_for_template(x, t);
        let mut ul = DVector::zeros(NU);
        for (row, &j) in RETAINED_CONTROL.iter().enumerate() {
            ul[j] = u[row];
        }
        let next = dynamics::discrete_step(&xl, &ul, &self.params)?;
        Ok(DVector::from_iterator(
            NXS,
            RETAINED_STATE.iter().map(|&j| next[j]),
        ))
    }

    fn simple_step_jacobian(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        t: usize,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let xl = self.lift_for_template(x, t);
        let mut ul = DVector::zeros(NU);
        for (row, &j) in RETAINED_CONTROL.iter().enumerate() {
            ul[j] = u[row];
        }
        let (a, b) = dynamics::discrete_step_jacobian(&xl, &ul, &self.params)?;
        let a_s = a
            .select_rows(RETAINED_STATE.as_slice())
            .select_columns(RETAINED_STATE.as_slice());
        let b_s = b
            .select_rows(RETAINED_STATE.as_slice())
            .select_columns(RETAINED_CONTROL.as_slice());
        Ok((a_s, b_s))
    }

    fn aux_dim(&self) -> usize {
        N_AUX
    }

    fn aux_residual(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        aux: &DVector<f64>,
        _t: usize,
    ) -> Result<DVector<f64>> {
        let q_lin = Vector3::from(x.fixed_rows::<3>(Q_LIN.start));
        let q_ang = Vector3::from(x.fixed_rows::<3>(Q_ANG.start));
        let v_lin = Vector3::from(x.fixed_rows::<3>(V_LIN.start));
        let omega = Vector3::from(x.fixed_rows::<3>(OMEGA.start));
        let rot = kinematics::body_rotation(&q_ang);
        let mut r = DVector::zeros(N_AUX);
        for l in 0..N_LEGS {
            let th = &aux.as_slice()[3 * l..3 * l + 3];
            let dth = Vector3::new(aux[12 + 3 * l], aux[12 + 3 * l + 1], aux[12 + 3 * l + 2]);
            let tau = Vector3::new(aux[24 + 3 * l], aux[24 + 3 * l + 1], aux[24 + 3 * l + 2]);
            let chain = kinematics::leg_chain(&self.params, l, th);
            let p_foot = Vector3::from(x.fixed_rows::<3>(Q_FOOT.start + 3 * l));
            let v_foot = Vector3::from(x.fixed_rows::<3>(V_FOOT.start + 3 * l));
            let grf = Vector3::from(u.fixed_rows::<3>(3 * l));

            let r_pos = q_lin + rot * chain.foot - p_foot;
            let r_vel = v_lin + rot * (omega.cross(&chain.foot) + chain.jac * dth) - v_foot;
            let r_tau = tau + (rot * chain.jac).transpose() * grf;
            r.fixed_rows_mut::<3>(3 * l).copy_from(&r_pos);
            r.fixed_rows_mut::<3>(12 + 3 * l).copy_from(&r_vel);
            r.fixed_rows_mut::<3>(24 + 3 * l).copy_from(&r_tau);
        }
        Ok(r)
    }

    fn aux_jacobian(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        aux: &DVector<f64>,
        _t: usize,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
        let q_ang = Vector3::from(x.fixed_rows::<3>(Q_ANG.start));
        let omega = Vector3::from(x.fixed_rows::<3>(OMEGA.start));
        let rot = kinematics::body_rotation(&q_ang);
        let drot = kinematics::body_rotation_derivatives(&q_ang);
        let mut jx = DMatrix::zeros(N_AUX, NX);
        let mut ju = DMatrix::zeros(N_AUX, NU);
        let mut ja = DMatrix::zeros(N_AUX, N_AUX);
        for l in 0..N_LEGS {
            let th = &aux.as_slice()[3 * l..3 * l + 3];
            let dth = Vector3::new(aux[12 + 3 * l], aux[12 + 3 * l + 1], aux[12 + 3 * l + 2]);
            let grf = Vector3::from(u.fixed_rows::<3>(3 * l));
            let chain = kinematics::leg_chain(&self.params, l, th);
            let djac = chain.jac_derivatives();

            let rp = 3 * l;
            let rv = 12 + 3 * l;
            let rt = 24 + 3 * l;

            // Position rows.
            jx.view_mut((rp, Q_LIN.start), (3, 3))
                .copy_from(&Matrix3::identity());
            for i in 0..3 {
                jx.view_mut((rp, Q_ANG.start + i), (3, 1))
                    .copy_from(&(drot[i] * chain.foot));
            }
            jx.view_mut((rp, Q_FOOT.start + 3 * l), (3, 3))
                .copy_from(&(-Matrix3::identity()));
            ja.view_mut((rp, 3 * l), (3, 3)).copy_from(&(rot * chain.jac));

            // Velocity rows.
            jx.view_mut((rv, V_LIN.start), (3, 3))
                .copy_from(&Matrix3::identity());
            let body_vel = omega.cross(&chain.foot) + chain.jac * dth;
            for i in 0..3 {
                jx.view_mut((rv, Q_ANG.start + i), (3, 1))
                    .copy_from(&(drot[i] * body_vel));
            }
            // d/d omega of omega x p = -skew(p).
            let skew_p = Matrix3::new(
                0.0,
                -chain.foot[2],
                chain.foot[1],
                chain.foot[2],
                0.0,
                -chain.foot[0],
                -chain.foot[1],
                chain.foot[0],
                0.0,
            );
            jx.view_mut((rv, OMEGA.start), (3, 3))
                .copy_from(&(-(rot * skew_p)));
            jx.view_mut((rv, V_FOOT.start + 3 * l), (3, 3))
                .copy_from(&(-Matrix3::identity()));
            for m in 0..3 {
                let jm: Vector3<f64> = chain.jac.column(m).into();
                let col = rot * (omega.cross(&jm) + djac[m] * dth);
                ja.view_mut((rv, 3 * l + m), (3, 1)).copy_from(&col);
            }
            ja.view_mut((rv, 12 + 3 * l), (3, 3))
                .copy_from(&(rot * chain.jac));

            // Torque rows.
            ja.view_mut((rt, 24 + 3 * l), (3, 3))
                .copy_from(&Matrix3::identity());
            ju.view_mut((rt, 3 * l), (3, 3))
                .copy_from(&(rot * chain.jac).transpose());
            for i in 0..3 {
                jx.view_mut((rt, Q_ANG.start + i), (3, 1))
                    .copy_from(&((drot[i] * chain.jac).transpose() * grf));
            }
            for m in 0..3 {
                let col = (rot * djac[m]).transpose() * grf;
                ja.view_mut((rt, 3 * l + m), (3, 1)).copy_from(&col);
            }
        }
        Ok((jx, ju, ja))
    }

    fn resolve_aux(&self, x: &DVector<f64>, u: &DVector<f64>, _t: usize) -> Result<DVector<f64>> {
        let q_lin = Vector3::from(x.fixed_rows::<3>(Q_LIN.start));
        let q_ang = Vector3::from(x.fixed_rows::<3>(Q_ANG.start));
        let v_lin = Vector3::from(x.fixed_rows::<3>(V_LIN.start));
        let omega = Vector3::from(x.fixed_rows::<3>(OMEGA.start));
        let rot = kinematics::body_rotation(&q_ang);
        let mut aux = DVector::zeros(N_AUX);
        for l in 0..N_LEGS {
            let p_foot = Vector3::from(x.fixed_rows::<3>(Q_FOOT.start + 3 * l));
            let v_foot = Vector3::from(x.fixed_rows::<3>(V_FOOT.start + 3 * l));
            let grf = Vector3::from(u.fixed_rows::<3>(3 * l));
            let target_body = rot.transpose() * (p_foot - q_lin);
            let th = kinematics::leg_ik(&self.params, l, &target_body)?;
            let chain = kinematics::leg_chain(&self.params, l, th.as_slice());
            let rhs = rot.transpose() * (v_foot - v_lin) - omega.cross(&chain.foot);
            let dth = chain
                .jac
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::numeric(format!("leg {l}: singular jacobian in ik")))?;
            let tau = -(rot * chain.jac).transpose() * grf;
            aux.fixed_rows_mut::<3>(3 * l).copy_from(&th);
            aux.fixed_rows_mut::<3>(12 + 3 * l).copy_from(&dth);
            aux.fixed_rows_mut::<3>(24 + 3 * l).copy_from(&tau);
        }
        Ok(aux)
    }

    fn resolve_aux_guess(&self, x: &DVector<f64>, u: &DVector<f64>, _t: usize) -> DVector<f64> {
        let q_lin = Vector3::from(x.fixed_rows::<3>(Q_LIN.start));
        let q_ang = Vector3::from(x.fixed_rows::<3>(Q_ANG.start));
        let v_lin = Vector3::from(x.fixed_rows::<3>(V_LIN.start));
        let omega = Vector3::from(x.fixed_rows::<3>(OMEGA.start));
        let rot = kinematics::body_rotation(&q_ang);
        let mut aux = DVector::zeros(N_AUX);
        for l in 0..N_LEGS {
            let p_foot = Vector3::from(x.fixed_rows::<3>(Q_FOOT.start + 3 * l));
            let v_foot = Vector3::from(x.fixed_rows::<3>(V_FOOT.start + 3 * l));
            let grf = Vector3::from(u.fixed_rows::<3>(3 * l));
            let mut target = rot.transpose() * (p_foot - q_lin);
            // Pull unreachable targets toward the nominal stand posture
            // until the closed-form inverse succeeds.
            let nominal = self.params.nominal_foot_body(l);
            let mut th = kinematics::leg_ik(&self.params, l, &target);
            let mut blend = 0.0;
            while th.is_err() && blend < 1.0 {
                blend += 0.2;
                let mixed = target * (1.0 - blend) + nominal * blend;
                th = kinematics::leg_ik(&self.params, l, &mixed);
                target = mixed;
            }
            let th = th.unwrap_or_else(|_| {
                kinematics::leg_ik(&self.params, l, &nominal).expect("nominal stand reachable")
            });
            let chain = kinematics::leg_chain(&self.params, l, th.as_slice());
            let rhs = rot.transpose() * (v_foot - v_lin) - omega.cross(&chain.foot);
            // Heavily damped near singular extension: a small guess beats a
            // huge one here, and the bound rows must not start violated by
            // orders of magnitude.
            let jt = chain.jac.transpose();
            let mut dth = (&jt * chain.jac + Matrix3::identity() * 1e-3)
                .lu()
                .solve(&(jt * rhs))
                .unwrap_or_else(Vector3::zeros);
            for v in dth.iter_mut() {
                *v = v.clamp(-self.params.dtheta_max, self.params.dtheta_max);
            }
            let mut tau = -(rot * chain.jac).transpose() * grf;
            for v in tau.iter_mut() {
                *v = v.clamp(-2.0 * self.params.tau_max, 2.0 * self.params.tau_max);
            }
            aux.fixed_rows_mut::<3>(3 * l).copy_from(&th);
            aux.fixed_rows_mut::<3>(12 + 3 * l).copy_from(&dth);
            aux.fixed_rows_mut::<3>(24 + 3 * l).copy_from(&tau);
        }
        aux
    }

    fn complex_constraints(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        aux: &DVector<f64>,
        t: usize,
    ) -> DVector<f64> {
        constraints::complex_values(x, u, aux, self.stance_mask(t), &self.terrain, &self.params)
    }

    fn complex_constraint_jacobian(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        aux: &DVector<f64>,
        t: usize,
    ) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        constraints::complex_jacobian(x, u, aux, self.stance_mask(t), &self.terrain, &self.params)
    }

    fn complex_constraint_meta(&self, t: usize) -> &[RowMeta] {
        &self.meta_complex[self.stance_mask(t)]
    }

    fn simple_constraints(&self, _x: &DVector<f64>, u: &DVector<f64>, t: usize) -> DVector<f64> {
        constraints::simple_values(u, self.stance_mask(t), &self.params)
    }

    fn simple_constraint_jacobian(
        &self,
        _x: &DVector<f64>,
        _u: &DVector<f64>,
        t: usize,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        constraints::simple_jacobian(NXS, self.stance_mask(t), &self.params)
    }

    fn simple_constraint_meta(&self, t: usize) -> &[RowMeta] {
        &self.meta_simple[self.stance_mask(t)]
    }

    fn weight_q(&self) -> &DMatrix<f64> {
        &self.q
    }

    fn weight_r(&self) -> &DMatrix<f64> {
        &self.r
    }

    fn weight_qt(&self) -> &DMatrix<f64> {
        &self.qt
    }

    /// No hard terminal set: the pair substitutes a heavy terminal cost, so
    /// the plan is steered by the reference stage here.
    fn terminal_policy(&self, _x: &DVector<f64>, ref_stage: &StagePair) -> DVector<f64> {
        ref_stage.control.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{check_feasible, lift, reduce};
    use rand::{Rng, SeedableRng};

    fn test_pair() -> Arc<LeggedModelPair> {
        make_legged_pair(
            &LeggedParams::default(),
            ContactSchedule::standing(10),
            Terrain::flat(0.0),
        )
        .unwrap()
    }

    #[test]
    fn roundtrip_identity_on_random_states() {
        let pair = test_pair();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let p = LeggedParams::default();
        let ref_stage = StagePair::complex(stand_state(&p, 0.0, 0.0, 0.0), hover_control(&p, 15));
        for _ in 0..100 {
            let zs = StagePair::simple(
                DVector::from_fn(12, |_, _| rng.random_range(-1.0..1.0)),
                DVector::from_fn(12, |_, _| rng.random_range(-50.0..50.0)),
            );
            let zc = lift(&zs, &ref_stage, pair.as_ref()).unwrap();
            let back = reduce(&zc, pair.as_ref()).unwrap();
            assert_eq!(back.state, zs.state);
            assert_eq!(back.control, zs.control);
        }
    }

    #[test]
    fn lift_restores_reference_feet_exactly() {
        let pair = test_pair();
        let p = LeggedParams::default();
        let ref_stage = StagePair::complex(stand_state(&p, 0.3, 0.1, 0.0), hover_control(&p, 15));
        let zs = reduce(&ref_stage, pair.as_ref()).unwrap();
        let z = lift(&zs, &ref_stage, pair.as_ref()).unwrap();
        assert_eq!(z.state, ref_stage.state);
        assert_eq!(z.control, ref_stage.control);
    }

    #[test]
    fn hover_is_feasible_and_in_bounds() {
        let pair = test_pair();
        let p = LeggedParams::default();
        let z = StagePair::complex(stand_state(&p, 0.0, 0.0, 0.0), hover_control(&p, 15));
        let rep = check_feasible(&z, pair.as_ref(), 0, 1e-9);
        assert!(rep.feasible(), "violations: {:?}", rep.violated_rows());
    }

    #[test]
    fn unreachable_feet_make_stage_infeasible() {
        let pair = test_pair();
        let p = LeggedParams::default();
        let mut x = stand_state(&p, 0.0, 0.0, 0.0);
        x[Q_FOOT.start + 2] = -1.5; // foot 1.5 m below the hip: out of reach
        let z = StagePair::complex(x, hover_control(&p, 15));
        let rep = check_feasible(&z, pair.as_ref(), 0, 1e-6);
        assert!(!rep.feasible());
    }

    #[test]
    fn aux_jacobian_matches_finite_differences() {
        let pair = test_pair();
        let p = LeggedParams::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(33);
        let mut x = stand_state(&p, 0.0, 0.0, 0.0);
        for i in 0..NX {
            x[i] += rng.random_range(-0.05..0.05);
        }
        let u = DVector::from_fn(NU, |_, _| rng.random_range(-30.0..30.0));
        let aux = pair.resolve_aux(&x, &u, 0).unwrap();
        let (jx, ju, ja) = pair.aux_jacobian(&x, &u, &aux, 0).unwrap();
        let h = 1e-6;
        for j in 0..NX {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let fd = (pair.aux_residual(&xp, &u, &aux, 0).unwrap()
                - pair.aux_residual(&xm, &u, &aux, 0).unwrap())
                / (2.0 * h);
            assert!((&fd - jx.column(j)).amax() < 1e-5, "x col {j}");
        }
        for j in 0..NU {
            let mut up = u.clone();
            let mut um = u.clone();
            up[j] += h;
            um[j] -= h;
            let fd = (pair.aux_residual(&x, &up, &aux, 0).unwrap()
                - pair.aux_residual(&x, &um, &aux, 0).unwrap())
                / (2.0 * h);
            assert!((&fd - ju.column(j)).amax() < 1e-6, "u col {j}");
        }
        for j in 0..N_AUX {
            let mut ap = aux.clone();
            let mut am = aux.clone();
            ap[j] += h;
            am[j] -= h;
            let fd = (pair.aux_residual(&x, &u, &ap, 0).unwrap()
                - pair.aux_residual(&x, &u, &am, 0).unwrap())
                / (2.0 * h);
            assert!((&fd - ja.column(j)).amax() < 1e-5, "aux col {j}");
        }
    }

    #[test]
    fn resolved_aux_zeroes_the_kinematic_rows() {
        let pair = test_pair();
        let p = LeggedParams::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(14);
        for _ in 0..20 {
            let mut x = stand_state(&p, 0.0, 0.0, 0.0);
            for i in 0..NX {
                x[i] += rng.random_range(-0.04..0.04);
            }
            let u = DVector::from_fn(NU, |_, _| rng.random_range(-20.0..20.0));
            let aux = pair.resolve_aux(&x, &u, 0).unwrap();
            let r = pair.aux_residual(&x, &u, &aux, 0).unwrap();
            assert!(r.amax() < 1e-9, "residual {}", r.amax());
        }
    }

    #[test]
    fn simple_step_is_anchored_on_reference_feet() {
        let pair = test_pair();
        let p = LeggedParams::default();
        let x = stand_state(&p, 0.0, 0.0, 0.0);
        let u = hover_control(&p, 15);
        // On the reference feet the template reproduces the body rows of the
        // complex step bit-for-bit.
        let xs = pair.reduce_state(&x);
        let us = pair.reduce_control(&u, &x);
        let simple_next = pair.simple_step(&xs, &us, 0).unwrap();
        let complex_next = pair.complex_step(&x, &u).unwrap();
        let complex_body = pair.reduce_state(&complex_next);
        assert_eq!(simple_next, complex_body);
    }
}
