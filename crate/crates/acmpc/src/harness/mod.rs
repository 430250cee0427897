//! Closed-loop simulation of the adaptive-complexity control loop.
//!
//! One run executes the main loop against the discrete complex model as the
//! plant: combine the adaptive and fixed simplicity sets, assemble and solve
//! the OCP, lift the solution, apply the first lifted control, then update
//! the adaptive set by checking admissibility on the lifted solution (filter
//! and shift, then re-admit fixed-set indices whose conditions newly hold).
//! Trials perturb the initial transverse position with a seeded generator
//! and aggregate into the benchmark table schema.

pub mod environment;
pub mod logging;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use environment::{
    make_environment, make_environment_scaled, EnvKind, EnvScale, Environment, PlantOptions,
};

use crate::error::{Error, Result};
use crate::legged::{Q_FOOT, V_LIN};
use crate::model::ModelPair;
use crate::ocp::{assemble, lift_solution, shift_warm_start, AssembleOptions, OcpProblem};
use crate::simplicity::{
    check_admissible, effective_set, grow_candidates, update_adaptive_set, SimplicitySet,
};
use crate::sqp::{SolveStatus, SqpSettings, SqpSolver, SolverResult};

/// The four controller configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Simple,
    Complex,
    Mixed,
    Adaptive,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::Simple => write!(f, "simple"),
            Mode::Complex => write!(f, "complex"),
            Mode::Mixed => write!(f, "mixed"),
            Mode::Adaptive => write!(f, "adaptive"),
        }
    }
}

impl Mode {
    pub fn parse(s: &str) -> Result<Mode> {
        match s.to_ascii_lowercase().as_str() {
            "simple" => Ok(Mode::Simple),
            "complex" => Ok(Mode::Complex),
            "mixed" => Ok(Mode::Mixed),
            "adaptive" => Ok(Mode::Adaptive),
            other => Err(Error::contract(format!("unknown mode '{other}'"))),
        }
    }
}

/// Controller configuration for one run.
#[derive(Debug, Clone)]
pub struct ControllerConfig {
    pub mode: Mode,
    pub n_horizon: usize,
    /// Fixed simplicity set; the first and last interior indices stay
    /// complex.
    pub s_fixed: SimplicitySet,
    pub eps_adm: f64,
    pub sqp: SqpSettings,
    /// Solve budget in multiples of the model timestep.
    pub solve_budget_dt: f64,
    /// Apply the previous plan's next control when a solve exceeds the
    /// budget. Off by default: it makes runs wall-clock dependent.
    pub slow_solve_fallback: bool,
    /// Record per-index admissibility evidence in the run log.
    pub log_admissibility: bool,
}

impl ControllerConfig {
    pub fn new(mode: Mode, n_horizon: usize) -> Self {
        ControllerConfig {
            mode,
            n_horizon,
            s_fixed: SimplicitySet::range(n_horizon, 2, n_horizon.saturating_sub(2)),
            eps_adm: 1e-6,
            sqp: SqpSettings::default(),
            solve_budget_dt: 4.0,
            slow_solve_fallback: false,
            log_admissibility: false,
        }
    }

    /// Configuration for the legged benchmark scenarios. The admissibility
    /// tolerance is desk-scale: solved stages hover near the reference
    /// manifold at millimeter scale rather than at solver tolerance, while
    /// genuine maneuvers sit two orders of magnitude above this gate.
    pub fn legged_scenario(mode: Mode, n_horizon: usize) -> Self {
        let mut cfg = ControllerConfig::new(mode, n_horizon);
        cfg.eps_adm = 5e-3;
        // Control-grade stationarity: feasibility stays tight, but chasing
        // 1e-6 stationarity through the bilinear rows costs several extra
        // linear-rate iterations per solve for no closed-loop benefit.
        cfg.sqp.kkt_tol = 1e-4;
        cfg
    }

    /// The simplicity set a fixed-complexity mode uses at every step.
    fn fixed_mode_set(&self) -> Option<SimplicitySet> {
        let n = self.n_horizon;
        match self.mode {
            Mode::Complex => Some(SimplicitySet::empty(n)),
            Mode::Simple => Some(SimplicitySet::full_interior(n)),
            Mode::Mixed => {
                // Complex prefix of one quarter of the horizon, simple tail.
                let prefix = n.div_ceil(4);
                Some(SimplicitySet::range(n, prefix, n - 1))
            }
            Mode::Adaptive => None,
        }
    }
}

/// One executed step of a run.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub step: usize,
    pub state: DVector<f64>,
    pub applied_control: DVector<f64>,
    pub predicted_next: DVector<f64>,
    pub simplicity_mask: String,
    pub n_simple: usize,
    pub pct_simplified: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    pub objective: f64,
    pub solve_ms: f64,
    pub slow: bool,
    pub used_fallback: bool,
    pub admissibility_csv: Option<String>,
}

/// Aggregates of one run.
#[derive(Debug, Clone)]
pub struct RunMetrics {
    pub mode: Mode,
    pub success: bool,
    pub failure_reason: Option<String>,
    pub steps: usize,
    pub completion_time: Option<f64>,
    pub max_velocity: f64,
    pub mean_total_grf: f64,
    pub mean_solve_ms: f64,
    pub slow_solve_rate: f64,
    pub mean_pct_simplified: f64,
    pub min_pct_simplified: f64,
    pub fallback_count: usize,
}

/// Full log of one run.
pub struct RunLog {
    pub records: Vec<StepRecord>,
    pub metrics: RunMetrics,
}

/// Apply the lifted control through the plant. The plant is the discrete
/// complex model; the physical-consistency gates zero forces at feet that
/// are not touching the terrain or are beyond leg reach.
fn plant_step(
    env: &Environment,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let mut u_applied = u.clone();
    let opts = &env.plant;
    if opts.contact_gating || opts.reach_gating {
        let p = env.pair.params();
        let rot = crate::legged::kinematics::body_rotation(&nalgebra::Vector3::new(
            x[3], x[4], x[5],
        ));
        for l in 0..4 {
            let fx = x[Q_FOOT.start + 3 * l];
            let fy = x[Q_FOOT.start + 3 * l + 1];
            let fz = x[Q_FOOT.start + 3 * l + 2];
            let mut gated = false;
            if opts.contact_gating {
                let h = env.terrain.height(fx, fy);
                if fz - h > opts.contact_tol {
                    gated = true;
                }
            }
            if opts.reach_gating && !gated {
                let hip_world = nalgebra::Vector3::new(x[0], x[1], x[2])
                    + rot * p.hip_offsets[l];
                let d = (nalgebra::Vector3::new(fx, fy, fz) - hip_world).norm();
                if d > opts.reach_limit {
                    gated = true;
                }
            }
            if gated {
                u_applied[3 * l] = 0.0;
                u_applied[3 * l + 1] = 0.0;
                u_applied[3 * l + 2] = 0.0;
            }
        }
    }
    let next = env.pair.complex_step(x, &u_applied)?;
    Ok((next, u_applied))
}

/// Execute one closed-loop run from an optional perturbed start.
pub fn run_closed_loop(
    cfg: &ControllerConfig,
    env: &Environment,
    x0_override: Option<DVector<f64>>,
) -> Result<RunLog> {
    let n = cfg.n_horizon;
    let pair = env.pair.clone();
    if env.reference.len() < env.run_steps + n + 1 {
        return Err(Error::contract(
            "reference does not cover the run length plus the horizon",
        ));
    }
    let solver = SqpSolver::new(cfg.sqp.clone());
    let options = AssembleOptions {
        simple_constraints_only: cfg.mode == Mode::Simple,
    };

    let mut x = x0_override.unwrap_or_else(|| env.start_state.clone());
    let mut s_adaptive = SimplicitySet::empty(n);
    let mut prev: Option<(SolverResult, OcpProblem)> = None;
    let mut prev_plan: Option<(usize, Vec<DVector<f64>>)> = None;
    let mut consecutive_bad = 0usize;

    let mut records = Vec::with_capacity(env.run_steps);
    let mut success = false;
    let mut failure_reason = None;
    let mut completion_time = None;
    let dt = pair.params().dt;

    for step in 0..env.run_steps {
        let s_k = match cfg.fixed_mode_set() {
            Some(s) => s,
            None => effective_set(&s_adaptive, &cfg.s_fixed)?,
        };
        let window = env.reference.window(step, n + 1)?;
        let arc_pair: std::sync::Arc<dyn ModelPair> = pair.clone();
        let problem = assemble(arc_pair, &s_k, &x, window, step, options.clone())?;
        let warm = prev
            .as_ref()
            .and_then(|(res, prob)| crate::ocp::shift_warm_start_relaxed(res, prob, &problem));
        let res = solver.solve(&problem, warm.as_ref());
        let solve_ms = res.wall_time * 1e3;
        // A solve is trustworthy enough to apply when it converged or when
        // its best iterate has modest constraint violation; otherwise the
        // shifted previous plan covers this step while the partial iterate
        // keeps improving through the next warm start (receding-horizon
        // continuation). A persistent streak is a failed run.
        let intact = res.status != SolveStatus::NumericFailure
            && res.primal.iter().all(|v| v.is_finite());
        let plan_usable =
            intact && (res.converged() || res.feas_residual <= 0.05);
        let slow = !res.converged() || solve_ms > cfg.solve_budget_dt * dt * 1e3;

        let lifted = if intact {
            let traj = problem.unpack(&res.primal);
            Some(lift_solution(&traj, problem.refs(), step, pair.as_ref())?)
        } else {
            None
        };

        let mut used_fallback = false;
        let fallback_control = prev_plan.as_ref().and_then(|(origin, plan)| {
            plan.get(step - *origin).cloned()
        });
        let u_cmd = if plan_usable && !(cfg.slow_solve_fallback && slow && fallback_control.is_some())
        {
            lifted.as_ref().unwrap().stages[0].control.clone()
        } else if let Some(u) = fallback_control {
            used_fallback = true;
            u
        } else if let Some(l) = lifted.as_ref() {
            used_fallback = true;
            l.stages[0].control.clone()
        } else {
            failure_reason = Some(format!(
                "solver {:?} at step {step} with no fallback plan{}",
                res.status,
                res.failure
                    .as_deref()
                    .map(|f| format!(": {f}"))
                    .unwrap_or_default()
            ));
            break;
        };
        consecutive_bad = if plan_usable { 0 } else { consecutive_bad + 1 };
        if consecutive_bad > 8 {
            failure_reason = Some(format!(
                "solver failed to recover ({:?} at step {step})",
                res.status
            ));
            break;
        }

        let (x_next, u_applied) = match plant_step(env, &x, &u_cmd) {
            Ok(v) => v,
            Err(e) => {
                failure_reason = Some(format!("plant failure at step {step}: {e}"));
                break;
            }
        };
        let lifted = match lifted {
            Some(l) => l,
            None => {
                // Keep the log row and move on with the fallback plan.
                records.push(StepRecord {
                    step,
                    state: x.clone(),
                    applied_control: u_applied,
                    predicted_next: x_next.clone(),
                    simplicity_mask: s_k.mask_string(),
                    n_simple: s_k.len(),
                    pct_simplified: s_k.fraction_simplified(),
                    iterations: res.iterations,
                    status: res.status,
                    objective: res.objective,
                    solve_ms,
                    slow: true,
                    used_fallback,
                    admissibility_csv: None,
                });
                prev = None;
                x = x_next;
                continue;
            }
        };

        // Adaptive set update from the lifted evidence.
        let admissibility_csv = if cfg.mode == Mode::Adaptive {
            let report = if cfg.log_admissibility {
                Some(check_admissible(
                    &s_k,
                    &lifted,
                    pair.as_ref(),
                    cfg.eps_adm,
                    cfg.sqp.feas_tol,
                )?)
            } else {
                None
            };
            // Growth requires evidence from a converged solution; the
            // shift-filter may only remove indices and runs every step.
            let grown = if res.converged() {
                grow_candidates(
                    &s_k,
                    &cfg.s_fixed,
                    &lifted,
                    pair.as_ref(),
                    cfg.eps_adm,
                    cfg.sqp.feas_tol,
                )?
            } else {
                s_k.clone()
            };
            s_adaptive =
                update_adaptive_set(&grown, &lifted, pair.as_ref(), cfg.eps_adm, cfg.sqp.feas_tol)?;
            if std::env::var("ACMPC_DEBUG_SETS").is_ok() {
                let all = check_admissible(
                    &cfg.s_fixed,
                    &lifted,
                    pair.as_ref(),
                    cfg.eps_adm,
                    cfg.sqp.feas_tol,
                )?;
                let mut worst_anchor = 0.0_f64;
                let mut worst_manifold = 0.0_f64;
                let mut worst_viol = 0.0_f64;
                for e in &all.entries {
                    worst_anchor = worst_anchor.max(e.anchor_residual);
                    worst_manifold = worst_manifold.max(e.manifold_residual);
                    worst_viol = worst_viol.max(e.roundtrip_violation);
                }
                eprintln!(
                    "step {step}: s_k={} grown={} next_sa={} | worst anchor {:.2e} manifold {:.2e} viol {:.2e}",
                    s_k.len(),
                    grown.len(),
                    s_adaptive.len(),
                    worst_anchor,
                    worst_manifold,
                    worst_viol
                );
            }
            report.map(|r| r.csv_rows(step))
        } else {
            None
        };

        records.push(StepRecord {
            step,
            state: x.clone(),
            applied_control: u_applied,
            predicted_next: lifted.stages.get(1).map(|z| z.state.clone()).unwrap_or_else(|| lifted.terminal_state.clone()),
            simplicity_mask: s_k.mask_string(),
            n_simple: s_k.len(),
            pct_simplified: s_k.fraction_simplified(),
            iterations: res.iterations,
            status: res.status,
            objective: res.objective,
            solve_ms,
            slow,
            used_fallback,
            admissibility_csv,
        });

        prev_plan = Some((
            step + 1,
            lifted.stages.iter().skip(1).map(|z| z.control.clone()).collect(),
        ));
        prev = Some((res, problem));
        x = x_next;

        if env.body_grounded(&x) {
            failure_reason = Some(format!("body contacted the ground at step {}", step + 1));
            break;
        }
        if env.at_goal(&x) {
            success = true;
            completion_time = Some((step + 1) as f64 * dt);
            break;
        }
    }
    if !success && failure_reason.is_none() {
        failure_reason = Some("goal not reached within the step limit".to_string());
    }

    let metrics = summarize(cfg.mode, &records, success, failure_reason, completion_time);
    Ok(RunLog { records, metrics })
}

fn summarize(
    mode: Mode,
    records: &[StepRecord],
    success: bool,
    failure_reason: Option<String>,
    completion_time: Option<f64>,
) -> RunMetrics {
    let steps = records.len();
    let mut max_velocity = 0.0_f64;
    let mut grf_sum = 0.0;
    let mut solve_sum = 0.0;
    let mut slow_count = 0usize;
    let mut pct_sum = 0.0;
    let mut pct_min = f64::INFINITY;
    let mut fallback_count = 0usize;
    for r in records {
        let v = (r.state[V_LIN.start].powi(2)
            + r.state[V_LIN.start + 1].powi(2)
            + r.state[V_LIN.start + 2].powi(2))
        .sqrt();
        max_velocity = max_velocity.max(v);
        let mut total = nalgebra::Vector3::zeros();
        for l in 0..4 {
            total += nalgebra::Vector3::new(
                r.applied_control[3 * l],
                r.applied_control[3 * l + 1],
                r.applied_control[3 * l + 2],
            );
        }
        grf_sum += total.norm();
        solve_sum += r.solve_ms;
        slow_count += r.slow as usize;
        pct_sum += r.pct_simplified;
        pct_min = pct_min.min(r.pct_simplified);
        fallback_count += r.used_fallback as usize;
    }
    let denom = steps.max(1) as f64;
    RunMetrics {
        mode,
        success,
        failure_reason,
        steps,
        completion_time,
        max_velocity,
        mean_total_grf: grf_sum / denom,
        mean_solve_ms: solve_sum / denom,
        slow_solve_rate: slow_count as f64 / denom,
        mean_pct_simplified: pct_sum / denom,
        min_pct_simplified: if pct_min.is_finite() { pct_min } else { 0.0 },
        fallback_count,
    }
}

/// Aggregate of a batch of seeded trials, matching the benchmark table
/// schema.
#[derive(Debug, Clone)]
pub struct TrialAggregate {
    pub mode: Mode,
    pub trials: usize,
    pub successes: usize,
    pub mean_completion_time: Option<f64>,
    pub mean_max_velocity: f64,
    pub mean_solve_ms: f64,
    pub slow_solve_rate: f64,
    pub mean_control: f64,
    pub mean_pct_simplified: f64,
}

impl TrialAggregate {
    pub fn success_rate(&self) -> f64 {
        self.successes as f64 / self.trials.max(1) as f64
    }
}

/// Run `trials` seeded repetitions with transverse start perturbations
/// within plus/minus half a body length, and aggregate.
pub fn run_trials(
    cfg: &ControllerConfig,
    env: &Environment,
    trials: usize,
    seed: u64,
) -> Result<(TrialAggregate, Vec<RunLog>)> {
    if trials == 0 {
        return Err(Error::contract("at least one trial required"));
    }
    let half_body = env.pair.params().body_length() * 0.5;
    let mut logs = Vec::with_capacity(trials);
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(trial as u64));
        let dx = rng.random_range(-half_body..half_body);
        let dy = rng.random_range(-half_body..half_body);
        let x0 = env.perturbed_start(dx, dy);
        logs.push(run_closed_loop(cfg, env, Some(x0))?);
    }
    let agg = aggregate(cfg.mode, &logs, trials);
    Ok((agg, logs))
}

fn aggregate(mode: Mode, logs: &[RunLog], trials: usize) -> TrialAggregate {
    let successes = logs.iter().filter(|l| l.metrics.success).count();
    let over = |f: &dyn Fn(&RunMetrics) -> f64, only_success: bool| -> f64 {
        let vals: Vec<f64> = logs
            .iter()
            .filter(|l| !only_success || l.metrics.success)
            .map(|l| f(&l.metrics))
            .collect();
        if vals.is_empty() {
            f64::NAN
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    };
    let mean_completion = {
        let vals: Vec<f64> = logs
            .iter()
            .filter_map(|l| l.metrics.completion_time)
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    };
    TrialAggregate {
        mode,
        trials,
        successes,
        mean_completion_time: mean_completion,
        mean_max_velocity: over(&|m| m.max_velocity, true),
        mean_solve_ms: over(&|m| m.mean_solve_ms, false),
        slow_solve_rate: over(&|m| m.slow_solve_rate, false),
        mean_control: over(&|m| m.mean_total_grf, true),
        mean_pct_simplified: over(&|m| m.mean_pct_simplified, false),
    }
}
