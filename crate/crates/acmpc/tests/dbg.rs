#[test]
fn debug_grow_step0() {
    use acmpc::harness::{make_environment, EnvKind};
    use acmpc::legged::LeggedParams;
    use acmpc::ocp::{assemble, lift_solution, AssembleOptions};
    use acmpc::simplicity::{check_admissible, SimplicitySet};
    use acmpc::sqp::{SqpSettings, SqpSolver};
    use std::sync::Arc;
    use acmpc::model::ModelPair;
    let p = LeggedParams::default();
    let env = make_environment(EnvKind::Acceleration, &p).unwrap();
    let n = 24;
    let start = 0;
    let window = env.reference.window(start, n + 1).unwrap();
    let x0 = env.start_state.clone();
    let problem = assemble(
        env.pair.clone() as Arc<dyn ModelPair>,
        &SimplicitySet::empty(n),
        &x0, window, start, AssembleOptions::default(),
    ).unwrap();
    let mut settings = SqpSettings::default();
    settings.verbose = true;
    let solver = SqpSolver::new(settings);
    let res = solver.solve(&problem, None);
    println!("status {:?} iters {} kkt {:.2e} feas {:.2e} obj {:.3e}",
        res.status, res.iterations, res.kkt_residual, res.feas_residual, res.objective);
    let traj = problem.unpack(&res.primal);
    let lifted = lift_solution(&traj, problem.refs(), start, env.pair.as_ref()).unwrap();
    // Compare solution stages against the reference window.
    for i in [1usize, 5, 10, 20] {
        let dz = (&lifted.stages[i].state - &window[i].state).amax();
        let du = (&lifted.stages[i].control - &window[i].control).amax();
        println!("  i={i}: |dx|={dz:.2e} |du|={du:.2e}");
    }
    let set = SimplicitySet::range(n, 2, 22);
    let rep = check_admissible(&set, &lifted, env.pair.as_ref(), 1e-6, 1e-6).unwrap();
    for e in rep.entries.iter().step_by(4) {
        println!("  i={} pass={} feas={} viol={:.2e} anchor={:.2e} manifold={:.2e}",
            e.index, e.passed, e.feasible_after_roundtrip, e.roundtrip_violation,
            e.anchor_residual, e.manifold_residual);
    }
}
#[test]
fn debug_guess_kkt() {
    use acmpc::harness::{make_environment, EnvKind};
    use acmpc::legged::LeggedParams;
    use acmpc::ocp::{assemble, AssembleOptions};
    use acmpc::simplicity::SimplicitySet;
    use std::sync::Arc;
    use acmpc::model::ModelPair;
    let p = LeggedParams::default();
    let env = make_environment(EnvKind::Acceleration, &p).unwrap();
    let n = 24;
    let window = env.reference.window(0, n + 1).unwrap();
    let x0 = env.start_state.clone();
    let problem = assemble(
        env.pair.clone() as Arc<dyn ModelPair>,
        &SimplicitySet::empty(n),
        &x0, window, 0, AssembleOptions::default(),
    ).unwrap();
    let v = problem.initial_guess_from_reference().unwrap();
    let g = problem.gradient(&v);
    let blocks = problem.eval_blocks(&v).unwrap();
    println!("guess: objective {:.3e} grad_inf {:.3e} eq_max {:.3e} ineq_max {:.3e}",
        problem.objective(&v), g.amax(), blocks.max_eq_violation(), blocks.max_ineq_violation());
}
