//! Environments: terrain, contact schedule, goal, and the in-repo reference
//! generator.
//!
//! The reference is produced by a deliberately naive planner: a trapezoidal
//! body-velocity profile toward the goal, Raibert-style footholds projected
//! onto valid terrain, swing interpolation with a parabolic apex, and a
//! wrench PD rolled out through the complex dynamics with per-foot force
//! clamping. Rolling out makes the reference dynamically consistent by
//! construction; it does not make it constraint-feasible everywhere, and the
//! step and gap fixtures intentionally leave the hard sections to the
//! controller.

use std::sync::Arc;

use nalgebra::{DVector, Matrix3, Matrix6, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::legged::{
    dynamics, kinematics, make_legged_pair, ContactPhase, ContactSchedule,
    LeggedModelPair, LeggedParams, Terrain, N_LEGS, OMEGA, Q_ANG, Q_FOOT, Q_LIN, V_LIN,
};
use crate::model::ReferenceTrajectory;
use crate::space::StagePair;

/// The three benchmark environments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    Acceleration,
    Step,
    Gap,
}

impl std::fmt::Display for EnvKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EnvKind::Acceleration => write!(f, "acceleration"),
            EnvKind::Step => write!(f, "step"),
            EnvKind::Gap => write!(f, "gap"),
        }
    }
}

/// Scale knobs of an environment fixture.
#[derive(Debug, Clone)]
pub struct EnvScale {
    /// Course length to the goal (m).
    pub course: f64,
    /// Step rise (m); used by the step environment.
    pub step_height: f64,
    /// Gap width (m); used by the gap environment.
    pub gap_width: f64,
    /// Cruise speed of the naive body plan (m/s).
    pub cruise: f64,
    /// Plan acceleration (m/s^2).
    pub accel: f64,
}

impl EnvScale {
    pub fn defaults(kind: EnvKind) -> Self {
        match kind {
            EnvKind::Acceleration => EnvScale {
                course: 3.0,
                step_height: 0.0,
                gap_width: 0.0,
                cruise: 1.0,
                accel: 1.6,
            },
            EnvKind::Step => EnvScale {
                course: 3.0,
                step_height: 0.2,
                gap_width: 0.0,
                cruise: 0.7,
                accel: 1.2,
            },
            EnvKind::Gap => EnvScale {
                course: 3.0,
                step_height: 0.0,
                gap_width: 0.4,
                cruise: 1.0,
                accel: 1.6,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.course <= 0.0 || self.cruise <= 0.0 || self.accel <= 0.0 {
            return Err(Error::contract("environment scale must be positive"));
        }
        Ok(())
    }
}

/// Plant-side physical consistency options.
#[derive(Debug, Clone)]
pub struct PlantOptions {
    /// Ground reaction forces apply only at feet touching the terrain.
    pub contact_gating: bool,
    /// Ground reaction forces apply only at feet within leg reach of their
    /// hip.
    pub reach_gating: bool,
    pub contact_tol: f64,
    pub reach_limit: f64,
}

impl Default for PlantOptions {
    fn default() -> Self {
        PlantOptions {
            contact_gating: false,
            reach_gating: false,
            contact_tol: 0.03,
            reach_limit: 0.50,
        }
    }
}

/// A runnable scenario: terrain, schedule, reference, model pair, goal and
/// success tolerances.
pub struct Environment {
    pub kind: EnvKind,
    pub scale: EnvScale,
    pub terrain: Terrain,
    pub schedule: ContactSchedule,
    pub reference: ReferenceTrajectory,
    pub pair: Arc<LeggedModelPair>,
    pub start_state: DVector<f64>,
    pub goal_x: f64,
    pub goal_tol: f64,
    pub speed_tol: f64,
    /// Minimum body height above the terrain under the body.
    pub body_clearance: f64,
    /// Absolute floor below which the body counts as fallen.
    pub body_min_z: f64,
    pub run_steps: usize,
    pub plant: PlantOptions,
    /// Warnings emitted by the generator (infeasible geometry is a warning,
    /// not an error: failure is a valid experimental outcome).
    pub warnings: Vec<String>,
}

struct BodyPlan {
    x: Vec<f64>,
    v: Vec<f64>,
    z: Vec<f64>,
    /// Flight window [start, end) in steps, when present.
    flight: Option<(usize, usize)>,
}

const TROT_HALF: usize = 6;
const STAND_PRE: usize = 16;
/// In-place trot cycles before the velocity ramp, so the gait limit cycle
/// settles before the body moves.
const TROT_WARMUP: usize = 24;
const STAND_POST: usize = 70;
const FLIGHT_STEPS: usize = 8;
const STAGGER: usize = 2;
/// All-stance gather window before the takeoff stagger and after landing.
const GATHER: usize = 6;
/// All-stance window after the landing stagger.
const RECOVERY: usize = 16;
const EDGE_MARGIN: f64 = 0.03;

/// Trapezoidal velocity profile sampled at the model timestep, with the step
/// environment's height ramp and the gap environment's flight window.
fn body_plan(kind: EnvKind, scale: &EnvScale, p: &LeggedParams, terrain: &Terrain) -> BodyPlan {
    let dt = p.dt;
    let mut x = vec![0.0; STAND_PRE + TROT_WARMUP];
    let mut v = vec![0.0; STAND_PRE + TROT_WARMUP];
    let mut flight = None;

    let gap_start = gap_start_x(scale);
    let takeoff_x = gap_start - 0.18;

    let mut xc = 0.0;
    let mut vc = 0.0;
    let mut k = STAND_PRE + TROT_WARMUP;
    // Accelerate, cruise, decelerate toward the goal; freeze the plan during
    // the gap flight window (ballistics take over in the rollout).
    while xc < scale.course && k < 4000 {
        let braking_dist = vc * vc / (2.0 * scale.accel);
        let accel = if scale.course - xc <= braking_dist + 1e-9 {
            -scale.accel
        } else if vc < scale.cruise {
            scale.accel
        } else {
            0.0
        };
        if kind == EnvKind::Gap && flight.is_none() && xc >= takeoff_x {
            flight = Some((k, k + FLIGHT_STEPS));
            // The naive plan carries the current velocity through the window.
            for _ in 0..FLIGHT_STEPS {
                xc += vc * dt;
                x.push(xc);
                v.push(vc);
                k += 1;
            }
            continue;
        }
        // Ease off approaching the takeoff so the gather happens over the
        // feet rather than walking past them.
        let target = if kind == EnvKind::Gap && flight.is_none() && xc >= takeoff_x - 0.30 {
            0.65 * scale.cruise
        } else {
            scale.cruise
        };
        vc = if vc > target {
            (vc - scale.accel * dt).max(target)
        } else {
            (vc + accel * dt).clamp(0.0, target)
        };
        xc += vc * dt;
        x.push(xc);
        v.push(vc);
        k += 1;
        if vc <= 1e-9 && scale.course - xc <= 0.05 {
            break;
        }
    }
    for _ in 0..STAND_POST {
        x.push(xc);
        v.push(0.0);
    }

    let mut z: Vec<f64> = x
        .iter()
        .map(|&xi| terrain_plan_height(kind, scale, terrain, xi) + p.stand_height)
        .collect();
    // The naive planner knows projectile basics in z: build the vertical
    // push during the all-stance gather window, keep rising through the
    // takeoff stagger, fly a ballistic arc, and settle after landing. The x
    // channel keeps the cruise speed, which is the plan's deliberate blind
    // spot.
    if let Some((fs, fe)) = flight {
        let t_f = (fe - fs) as f64 * dt;
        let vz0 = 0.5 * 9.81 * t_f;
        let push_end = fs.saturating_sub(STAGGER);
        let push_start = push_end.saturating_sub(GATHER);
        for (j, k) in (push_start..push_end).enumerate() {
            let tau = (j + 1) as f64 / GATHER as f64;
            // Quadratic ramp: slope reaches vz0 at the end of the gather.
            z[k] = z[push_start.saturating_sub(1)]
                + 0.5 * vz0 * (GATHER as f64 * dt) * tau * tau;
        }
        for k in push_end..fs {
            z[k] = z[k - 1] + vz0 * dt;
        }
        let z_to = z[fs - 1];
        for k in fs..fe.min(z.len()) {
            let tau = (k - fs + 1) as f64 * dt;
            z[k] = z_to + vz0 * tau - 0.5 * 9.81 * tau * tau;
        }
        // Settle back to the nominal height over the landing window.
        let settle = (fe + STAGGER + RECOVERY).min(z.len());
        let z_land = z[fe.min(z.len()) - 1];
        for (j, k) in (fe..settle).enumerate() {
            let tau = (j + 1) as f64 / (settle - fe) as f64;
            let base = terrain_plan_height(kind, scale, terrain, x[k]) + p.stand_height;
            z[k] = z_land + (base - z_land) * (tau * tau * (3.0 - 2.0 * tau));
        }
    }
    BodyPlan { x, v, z, flight }
}

/// The naive planner's body height target: the terrain height under the
/// body, ramped late across the step rise.
fn terrain_plan_height(kind: EnvKind, scale: &EnvScale, _terrain: &Terrain, x: f64) -> f64 {
    match kind {
        EnvKind::Step => {
            let x0 = step_x(scale);
            let ramp = 0.30;
            if x <= x0 {
                0.0
            } else if x >= x0 + ramp {
                scale.step_height
            } else {
                scale.step_height * (x - x0) / ramp
            }
        }
        _ => 0.0,
    }
}

pub fn step_x(scale: &EnvScale) -> f64 {
    scale.course * 0.5
}

pub fn gap_start_x(scale: &EnvScale) -> f64 {
    scale.course * 0.5 - scale.gap_width * 0.5
}

/// Trot schedule with the gap's staggered flight window spliced in.
fn build_schedule(kind: EnvKind, plan: &BodyPlan) -> ContactSchedule {
    use ContactPhase::{Stance as St, Swing as Sw};
    let len = plan.x.len();
    let mut phases = vec![[St; 4]; len];
    let move_start = STAND_PRE;
    let move_end = len.saturating_sub(STAND_POST);
    // Diagonal pairs: A = {LF, RH} = legs {0, 3}; B = {RF, LH} = {1, 2}.
    for (k, ph) in phases.iter_mut().enumerate().take(move_end).skip(move_start) {
        let cycle_pos = (k - move_start) % (2 * TROT_HALF);
        if cycle_pos < TROT_HALF {
            ph[0] = Sw;
            ph[3] = Sw;
        } else {
            ph[1] = Sw;
            ph[2] = Sw;
        }
    }
    if kind == EnvKind::Gap {
        if let Some((fs, fe)) = plan.flight {
            // Gather (all stance), front pair leaves, full flight, front
            // pair lands, recovery (all stance).
            let gather_start = fs.saturating_sub(STAGGER + GATHER);
            for ph in phases.iter_mut().take(fs - STAGGER).skip(gather_start) {
                *ph = [St; 4];
            }
            for ph in phases.iter_mut().take(fs).skip(fs - STAGGER) {
                *ph = [Sw, Sw, St, St];
            }
            for ph in phases.iter_mut().take(fe).skip(fs) {
                *ph = [Sw; 4];
            }
            let land_end = (fe + STAGGER).min(len);
            for ph in phases.iter_mut().take(land_end).skip(fe) {
                *ph = [St, St, Sw, Sw];
            }
            // Extended all-stance recovery: the landing arrives low and
            // short, and two-leg stances cannot balance pitch until the
            // height is back.
            let recover_end = (fe + STAGGER + RECOVERY).min(len);
            for ph in phases.iter_mut().take(recover_end).skip(land_end) {
                *ph = [St; 4];
            }
        }
    }
    ContactSchedule::new(phases)
}

/// Valid foothold: cell height, pushed away from height discontinuities and
/// out of the gap interior.
fn project_foothold(kind: EnvKind, scale: &EnvScale, terrain: &Terrain, x: f64, y: f64) -> Vector3<f64> {
    let mut px = x;
    if kind == EnvKind::Gap {
        let gs = gap_start_x(scale);
        let ge = gs + scale.gap_width;
        if px > gs - EDGE_MARGIN && px < ge + EDGE_MARGIN {
            px = if px < (gs + ge) * 0.5 {
                gs - EDGE_MARGIN
            } else {
                ge + EDGE_MARGIN
            };
        }
    } else if let Some(d) = terrain.distance_to_edge(px) {
        if d < EDGE_MARGIN {
            let h_here = terrain.cell_height(px);
            // Move away from the edge on the side the foot already is.
            let left = terrain.cell_height(px - 2.0 * EDGE_MARGIN);
            px += if (h_here - left).abs() < 1e-12 {
                -EDGE_MARGIN
            } else {
                EDGE_MARGIN
            };
        }
    }
    Vector3::new(px, y, terrain.cell_height(px))
}

/// Per-leg foot plan: positions at every step, from footholds and parabolic
/// swing interpolation.
fn foot_plan(
    kind: EnvKind,
    scale: &EnvScale,
    p: &LeggedParams,
    terrain: &Terrain,
    schedule: &ContactSchedule,
    plan: &BodyPlan,
) -> Vec<[Vector3<f64>; N_LEGS]> {
    let len = plan.x.len();
    let mut feet = vec![[Vector3::zeros(); N_LEGS]; len];
    for leg in 0..N_LEGS {
        let nominal = p.nominal_foot_body(leg);
        let mut hold = project_foothold(kind, scale, terrain, plan.x[0] + nominal[0], nominal[1]);
        let mut k = 0usize;
        while k < len {
            if schedule.is_stance(k, leg) {
                feet[k][leg] = hold;
                k += 1;
                continue;
            }
            // Swing segment [k, td).
            let mut td = k;
            while td < len && !schedule.is_stance(td, leg) {
                td += 1;
            }
            let target = if td < len {
                // Raibert-style placement with the actual upcoming stance
                // duration, so prolonged takeoff/landing stances still
                // average the foot under the hip.
                let mut stance_end = td;
                while stance_end < len && schedule.is_stance(stance_end, leg) {
                    stance_end += 1;
                }
                // Weighted toward the late-stance position so prolonged
                // takeoff stances keep the feet near the hips at push time.
                let t_half = ((stance_end - td) as f64 * p.dt * 0.65).min(0.4);
                let hip_x = plan.x[td] + nominal[0];
                let raibert = hip_x + plan.v[td] * t_half;
                project_foothold(kind, scale, terrain, raibert, nominal[1])
            } else {
                hold
            };
            let dur = (td - k).max(1) as f64;
            let apex = 0.07 + 0.5 * (target[2] - hold[2]).abs();
            for (j, foot_k) in feet.iter_mut().enumerate().take(td).skip(k) {
                let s = (j - k) as f64 / dur;
                let sm = s * s * (3.0 - 2.0 * s);
                let mut pos = hold + (target - hold) * sm;
                pos[2] = hold[2] + (target[2] - hold[2]) * sm + 4.0 * apex * s * (1.0 - s);
                foot_k[leg] = pos;
            }
            hold = target;
            k = td;
        }
    }
    feet
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0)
}

/// Roll the naive plan through the complex dynamics: wrench PD toward the
/// plan, least-squares force distribution over the stance feet, per-foot
/// friction clamping, exact second-difference swing forces. The rolled
/// states and controls are the reference; consistency is by construction.
#[allow(clippy::too_many_arguments)]
fn rollout_reference(
    p: &LeggedParams,
    schedule: &ContactSchedule,
    plan: &BodyPlan,
    feet_plan: &[[Vector3<f64>; N_LEGS]],
    warnings: &mut Vec<String>,
) -> Result<Vec<StagePair>> {
    let len = plan.x.len();
    let dt = p.dt;
    // Foot velocities and accelerations as exact finite differences of the
    // sampled plan, so the foot rows integrate consistently.
    let mut foot_vel = vec![[Vector3::zeros(); N_LEGS]; len];
    let mut foot_acc = vec![[Vector3::zeros(); N_LEGS]; len];
    for k in 0..len - 1 {
        for l in 0..N_LEGS {
            foot_vel[k][l] = (feet_plan[k + 1][l] - feet_plan[k][l]) / dt;
        }
    }
    for k in 0..len - 1 {
        for l in 0..N_LEGS {
            foot_acc[k][l] = (foot_vel[k + 1][l] - foot_vel[k][l]) / dt;
        }
    }

    let mut x = DVector::zeros(crate::legged::NX);
    x[0] = plan.x[0];
    x[2] = plan.z[0];
    for l in 0..N_LEGS {
        x.fixed_rows_mut::<3>(Q_FOOT.start + 3 * l)
            .copy_from(&feet_plan[0][l]);
    }

    let (kp, kd) = (30.0, 9.0);
    let (kp_a, kd_a) = (90.0, 18.0);
    let mut stages = Vec::with_capacity(len);
    let mut clamped_steps = 0usize;
    for k in 0..len - 1 {
        let q_lin = Vector3::from(x.fixed_rows::<3>(Q_LIN.start));
        let q_ang = Vector3::from(x.fixed_rows::<3>(Q_ANG.start));
        let v_lin = Vector3::from(x.fixed_rows::<3>(V_LIN.start));
        let omega = Vector3::from(x.fixed_rows::<3>(OMEGA.start));

        let stance: Vec<usize> = (0..N_LEGS).filter(|&l| schedule.is_stance(k, l)).collect();
        let mut u = DVector::zeros(crate::legged::NU);
        if !stance.is_empty() {
            let a_ff = Vector3::new((plan.v[k + 1] - plan.v[k]) / dt, 0.0, 0.0);
            let target = Vector3::new(plan.x[k], 0.0, plan.z[k]);
            // Clamp the position error so a lagging rollout does not demand
            // unbounded forces.
            let mut err = target - q_lin;
            for e in err.iter_mut() {
                *e = e.clamp(-0.25, 0.25);
            }
            let v_target = Vector3::new(plan.v[k], 0.0, (plan.z[k + 1] - plan.z[k]) / dt);
            let a_des = a_ff + kp * err + kd * (v_target - v_lin);
            let f_des = p.mass * (a_des + Vector3::new(0.0, 0.0, p.gravity));
            // Nose-up bias into the leap: the rear-pair push necessarily
            // rotates the body, so aim to cross level mid-flight.
            let pitch_target = match plan.flight {
                Some((fs, _)) if k + GATHER + STAGGER >= fs && k < fs => -0.18,
                _ => 0.0,
            };
            let ang_target = Vector3::new(0.0, pitch_target, 0.0);
            let ang_acc = kp_a * (ang_target - q_ang) - kd_a * omega;
            let r = kinematics::body_rotation(&q_ang);
            let t_des = r * (p.inertia * ang_acc);

            // Damped least-squares wrench distribution over the stance feet.
            // When every stance foot sits on one fore-aft side of the body
            // (takeoff and landing staggers), pitch balance and zero net
            // forward force are incompatible; free the forward-force row and
            // let the reference pick up or shed speed instead of tumbling.
            let one_sided = {
                let signs: Vec<f64> = stance
                    .iter()
                    .map(|&l| (x[Q_FOOT.start + 3 * l] - q_lin[0]).signum())
                    .collect();
                signs.windows(2).all(|s| s[0] == s[1])
            };
            let wx = if one_sided && stance.len() < 4 { 0.02 } else { 1.0 };
            let n_st = stance.len();
            let mut g = nalgebra::DMatrix::<f64>::zeros(6, 3 * n_st);
            for (c, &l) in stance.iter().enumerate() {
                let pj = Vector3::from(x.fixed_rows::<3>(Q_FOOT.start + 3 * l));
                g.view_mut((0, 3 * c), (3, 3)).copy_from(&Matrix3::identity());
                g.view_mut((3, 3 * c), (3, 3)).copy_from(&skew(&(pj - q_lin)));
            }
            for c in 0..3 * n_st {
                g[(0, c)] *= wx;
            }
            let w = Vector6::new(
                wx * f_des[0],
                f_des[1],
                f_des[2],
                t_des[0],
                t_des[1],
                t_des[2],
            );
            let ggt = &g * g.transpose() + Matrix6::identity() * 1e-4;
            if let Some(sol) = ggt.lu().solve(&w) {
                let forces = g.transpose() * sol;
                let mut clamped = false;
                for (c, &l) in stance.iter().enumerate() {
                    let mut f = Vector3::new(forces[3 * c], forces[3 * c + 1], forces[3 * c + 2]);
                    let fz = f[2].clamp(0.0, p.grf_z_max);
                    let cap = p.mu * fz;
                    let fx = f[0].clamp(-cap.min(p.grf_tangential_max), cap.min(p.grf_tangential_max));
                    let fy = f[1].clamp(-cap.min(p.grf_tangential_max), cap.min(p.grf_tangential_max));
                    if (fx - f[0]).abs() + (fy - f[1]).abs() + (fz - f[2]).abs() > 1e-9 {
                        clamped = true;
                    }
                    f = Vector3::new(fx, fy, fz);
                    u.fixed_rows_mut::<3>(3 * l).copy_from(&f);
                }
                if clamped {
                    clamped_steps += 1;
                }
            }
        }
        for l in 0..N_LEGS {
            u.fixed_rows_mut::<3>(12 + 3 * l).copy_from(&foot_acc[k][l]);
        }

        stages.push(StagePair::complex(x.clone(), u.clone()));
        x = dynamics::discrete_step(&x, &u, p).map_err(|e| {
            Error::construction(format!("reference rollout failed at step {k}: {e}"))
        })?;
    }
    stages.push(StagePair::complex(x, DVector::zeros(crate::legged::NU)));
    if clamped_steps > 0 {
        warnings.push(format!(
            "reference generator clamped stance forces on {clamped_steps} steps; \
             the reference may be infeasible in the hard sections"
        ));
    }
    Ok(stages)
}

/// Build one of the benchmark environments at its default scale.
pub fn make_environment(kind: EnvKind, params: &LeggedParams) -> Result<Environment> {
    make_environment_scaled(kind, EnvScale::defaults(kind), params)
}

/// Build an environment with explicit scale knobs.
pub fn make_environment_scaled(
    kind: EnvKind,
    scale: EnvScale,
    params: &LeggedParams,
) -> Result<Environment> {
    scale.validate()?;
    let mut warnings = Vec::new();
    let terrain = match kind {
        EnvKind::Acceleration => Terrain::flat(0.0),
        EnvKind::Step => Terrain::from_profile(0.0, &[(step_x(&scale), scale.step_height)], 0.02),
        EnvKind::Gap => {
            let gs = gap_start_x(&scale);
            Terrain::from_profile(0.0, &[(gs, -1.2), (gs + scale.gap_width, 0.0)], 0.02)
        }
    };
    if kind == EnvKind::Gap {
        // Reachability sanity: the leap distance demanded by the flight
        // window against a generous force-limited estimate.
        let t_f = FLIGHT_STEPS as f64 * params.dt;
        let needed = (scale.gap_width + 2.0 * EDGE_MARGIN) / t_f;
        let v_cap = 2.0 * params.mu * params.gravity; // coarse accel-limited bound
        if needed > v_cap {
            warnings.push(format!(
                "gap may be unreachable: needs {needed:.2} m/s takeoff, rough cap {v_cap:.2}"
            ));
        }
    }

    let plan = body_plan(kind, &scale, params, &terrain);
    let schedule = build_schedule(kind, &plan);
    let feet = foot_plan(kind, &scale, params, &terrain, &schedule, &plan);
    let stages = rollout_reference(params, &schedule, &plan, &feet, &mut warnings)?;

    // The reference is consistent by construction; assert it anyway.
    let pair = make_legged_pair(params, schedule.clone(), terrain.clone())?;
    let reference = ReferenceTrajectory::new(stages, pair.as_ref(), 1e-6)?;
    let ref_feet: Vec<[f64; 12]> = reference
        .stages()
        .iter()
        .map(|s| {
            let mut f = [0.0; 12];
            f.copy_from_slice(s.state.rows(Q_FOOT.start, 12).as_slice());
            f
        })
        .collect();
    let pair = pair.with_ref_feet(ref_feet);

    let start_state = reference.stage(0).state.clone();
    let run_steps = reference.len().saturating_sub(26);
    let plant = PlantOptions {
        contact_gating: kind != EnvKind::Acceleration,
        reach_gating: kind == EnvKind::Gap,
        ..PlantOptions::default()
    };
    Ok(Environment {
        kind,
        scale: scale.clone(),
        terrain,
        schedule,
        reference,
        pair,
        start_state,
        goal_x: scale.course,
        goal_tol: 0.2,
        speed_tol: 0.05,
        body_clearance: 0.06,
        body_min_z: -0.15,
        run_steps,
        plant,
        warnings,
    })
}

impl Environment {
    /// Shift the nominal start transversely; feet shift with the body.
    pub fn perturbed_start(&self, dx: f64, dy: f64) -> DVector<f64> {
        let mut x = self.start_state.clone();
        x[0] += dx;
        x[1] += dy;
        for l in 0..N_LEGS {
            x[Q_FOOT.start + 3 * l] += dx;
            x[Q_FOOT.start + 3 * l + 1] += dy;
        }
        x
    }

    /// Body-ground contact / fall detection for the success rule.
    pub fn body_grounded(&self, x: &DVector<f64>) -> bool {
        let h = self.terrain.height(x[0], x[1]);
        x[2] - h < self.body_clearance || x[2] < self.body_min_z
    }

    pub fn at_goal(&self, x: &DVector<f64>) -> bool {
        let dx = x[0] - self.goal_x;
        let speed = (x[18] * x[18] + x[19] * x[19] + x[20] * x[20]).sqrt();
        dx.abs() <= self.goal_tol && speed <= self.speed_tol
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn acceleration_env_reaches_three_meters_flat() {
        let p = LeggedParams::default();
        let env = make_environment(EnvKind::Acceleration, &p).unwrap();
        assert_eq!(env.goal_x, 3.0);
        assert_eq!(env.terrain.height(1.5, 0.0), 0.0);
        let last = env.reference.stage(env.reference.len() - 1);
        assert!((last.state[0] - 3.0).abs() < 0.25, "plan end {}", last.state[0]);
    }

    #[test]
    fn step_env_has_single_rise_at_midcourse() {
        let p = LeggedParams::default();
        let env = make_environment(EnvKind::Step, &p).unwrap();
        assert_eq!(env.terrain.height(0.5, 0.0), 0.0);
        assert_eq!(env.terrain.height(2.5, 0.0), 0.2);
    }

    #[test]
    fn gap_env_excludes_footholds_from_the_gap() {
        let p = LeggedParams::default();
        let env = make_environment(EnvKind::Gap, &p).unwrap();
        let gs = gap_start_x(&env.scale);
        let ge = gs + env.scale.gap_width;
        assert!((ge - gs - 0.4).abs() < 1e-12);
        for s in env.reference.stages() {
            for l in 0..N_LEGS {
                let fx = s.state[Q_FOOT.start + 3 * l];
                let fz = s.state[Q_FOOT.start + 3 * l + 2];
                // Feet at ground level must sit outside the open gap.
                if fz.abs() < 1e-9 {
                    assert!(
                        fx <= gs - EDGE_MARGIN + 1e-9 || fx >= ge + EDGE_MARGIN - 1e-9,
                        "foothold {fx} inside gap [{gs}, {ge}]"
                    );
                }
            }
        }
    }

    #[test]
    fn reference_is_dynamically_consistent() {
        let p = LeggedParams::default();
        for kind in [EnvKind::Acceleration, EnvKind::Step, EnvKind::Gap] {
            let env = make_environment(kind, &p).unwrap();
            let defect = env.reference.max_defect(env.pair.as_ref()).unwrap();
            assert!(defect <= 1e-6, "{kind}: defect {defect}");
        }
    }

    #[test]
    fn schedule_has_flight_window_only_for_gap() {
        let p = LeggedParams::default();
        let gap = make_environment(EnvKind::Gap, &p).unwrap();
        let any_flight = (0..gap.schedule.len()).any(|t| gap.schedule.stance_mask(t) == 0);
        assert!(any_flight);
        let step = make_environment(EnvKind::Step, &p).unwrap();
        let any_flight = (0..step.schedule.len()).any(|t| step.schedule.stance_mask(t) == 0);
        assert!(!any_flight);
    }

    #[test]
    fn perturbed_start_shifts_feet_with_body() {
        let p = LeggedParams::default();
        let env = make_environment(EnvKind::Acceleration, &p).unwrap();
        let x = env.perturbed_start(0.1, -0.05);
        assert!((x[0] - env.start_state[0] - 0.1).abs() < 1e-12);
        for l in 0..N_LEGS {
            assert!(
                (x[Q_FOOT.start + 3 * l] - env.start_state[Q_FOOT.start + 3 * l] - 0.1).abs()
                    < 1e-12
            );
        }
    }
}
