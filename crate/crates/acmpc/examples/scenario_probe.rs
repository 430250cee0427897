//! Quick scenario driver: run one mode on one environment and print the
//! per-step trace. Useful for tuning fixtures.
//!
//! Usage: scenario_probe <acceleration|step|gap> <simple|complex|mixed|adaptive> [dx] [dy]

use acmpc::harness::{make_environment, run_closed_loop, ControllerConfig, EnvKind, Mode};
use acmpc::legged::LeggedParams;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let kind = match args.get(1).map(|s| s.as_str()) {
        Some("step") => EnvKind::Step,
        Some("gap") => EnvKind::Gap,
        _ => EnvKind::Acceleration,
    };
    let mode = Mode::parse(args.get(2).map(|s| s.as_str()).unwrap_or("adaptive")).unwrap();
    let dx: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.0);
    let dy: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0.0);

    let params = LeggedParams::default();
    let env = make_environment(kind, &params).expect("environment");
    for w in &env.warnings {
        println!("warning: {w}");
    }
    let cfg = ControllerConfig::legged_scenario(mode, 24);
    let x0 = env.perturbed_start(dx, dy);
    let t0 = std::time::Instant::now();
    let log = run_closed_loop(&cfg, &env, Some(x0)).expect("run");
    let wall = t0.elapsed().as_secs_f64();

    for r in log.records.iter().step_by(5) {
        println!(
            "k={:3} x={:6.3} z={:6.3} pitch={:6.3} vx={:6.3} pct={:4.2} it={} {:?} {:5.1}ms",
            r.step,
            r.state[0],
            r.state[2],
            r.state[4],
            r.state[18],
            r.pct_simplified,
            r.iterations,
            r.status,
            r.solve_ms
        );
    }
    let m = &log.metrics;
    println!(
        "== {} on {}: success={} steps={} reason={:?}",
        m.mode, kind, m.success, m.steps, m.failure_reason
    );
    println!(
        "   mean_solve={:.1}ms slow_rate={:.2} pct_simplified mean={:.3} min={:.3} maxv={:.2} wall={:.1}s",
        m.mean_solve_ms,
        m.slow_solve_rate,
        m.mean_pct_simplified,
        m.min_pct_simplified,
        m.max_velocity,
        wall
    );
}
