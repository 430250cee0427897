//! CSV and summary writers for run logs.
//!
//! The trajectory log deliberately excludes wall-clock columns so that
//! seeded runs are byte-reproducible; solve times go to a separate timing
//! file and into the aggregate table. Every CSV starts with a schema tag
//! comment.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{RunLog, TrialAggregate};
use crate::error::Result;

/// Deterministic per-step trajectory log.
pub fn runlog_csv(log: &RunLog) -> String {
    let mut out = String::from("# schema: runlog-v1\n");
    out.push_str("step,");
    let nx = log
        .records
        .first()
        .map(|r| r.state.len())
        .unwrap_or(0);
    for i in 0..nx {
        let _ = write!(out, "x{i},");
    }
    let nu = log
        .records
        .first()
        .map(|r| r.applied_control.len())
        .unwrap_or(0);
    for i in 0..nu {
        let _ = write!(out, "u{i},");
    }
    out.push_str("mask,n_simple,pct_simplified,iterations,status\n");
    for r in &log.records {
        let _ = write!(out, "{},", r.step);
        for v in r.state.iter() {
            let _ = write!(out, "{v:.9e},");
        }
        for v in r.applied_control.iter() {
            let _ = write!(out, "{v:.9e},");
        }
        let _ = writeln!(
            out,
            "{},{},{:.6},{},{:?}",
            r.simplicity_mask, r.n_simple, r.pct_simplified, r.iterations, r.status
        );
    }
    out
}

/// Wall-clock timing log (excluded from the byte-reproducibility guarantee).
pub fn timing_csv(log: &RunLog) -> String {
    let mut out = String::from("# schema: timing-v1\nstep,solve_ms,slow,used_fallback\n");
    for r in &log.records {
        let _ = writeln!(
            out,
            "{},{:.3},{},{}",
            r.step, r.solve_ms, r.slow as u8, r.used_fallback as u8
        );
    }
    out
}

/// Per-step, per-index admissibility evidence (adaptive runs with logging
/// enabled).
pub fn admissibility_csv(log: &RunLog) -> String {
    let mut out = String::from(
        "# schema: admissibility-v1\nstep,index,in_range,feasible,anchor_ok,manifold_ok,roundtrip_violation,anchor_residual,manifold_residual\n",
    );
    for r in &log.records {
        if let Some(rows) = &r.admissibility_csv {
            out.push_str(rows);
        }
    }
    out
}

/// Aggregate table over configurations, matching the benchmark schema.
pub fn aggregate_csv(rows: &[TrialAggregate]) -> String {
    let mut out = String::from(
        "# schema: aggregate-v1\nconfig,success_rate,successes,trials,pct_horizon_simplified,completion_time_s,max_velocity_mps,mean_solve_ms,slow_solve_rate_pct,mean_control_n\n",
    );
    for a in rows {
        let _ = writeln!(
            out,
            "{},{:.3},{},{},{:.1},{},{},{:.3},{:.3},{}",
            a.mode,
            a.success_rate(),
            a.successes,
            a.trials,
            100.0 * a.mean_pct_simplified,
            a.mean_completion_time
                .map(|t| format!("{t:.3}"))
                .unwrap_or_else(|| "-".to_string()),
            if a.mean_max_velocity.is_nan() {
                "-".to_string()
            } else {
                format!("{:.3}", a.mean_max_velocity)
            },
            a.mean_solve_ms,
            100.0 * a.slow_solve_rate,
            if a.mean_control.is_nan() {
                "-".to_string()
            } else {
                format!("{:.2}", a.mean_control)
            },
        );
    }
    out
}

/// Human-readable run summary with the output-file manifest.
pub fn run_summary(
    name: &str,
    rows: &[TrialAggregate],
    files: &[&str],
    warnings: &[String],
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "scenario: {name}");
    for a in rows {
        let _ = writeln!(
            out,
            "config {}: {}/{} succeeded, {:.1}% simplified, mean solve {:.2} ms",
            a.mode,
            a.successes,
            a.trials,
            100.0 * a.mean_pct_simplified,
            a.mean_solve_ms
        );
    }
    for w in warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    for f in files {
        let _ = writeln!(out, "file: {f}");
    }
    out
}

/// Write all artifacts of a batch of runs into `dir`.
pub fn write_outputs(
    dir: &Path,
    name: &str,
    rows: &[TrialAggregate],
    logs: &[(String, &RunLog)],
    warnings: &[String],
) -> Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    for (tag, log) in logs {
        let f = format!("runlog_{tag}.csv");
        fs::write(dir.join(&f), runlog_csv(log))?;
        files.push(f);
        let f = format!("timing_{tag}.csv");
        fs::write(dir.join(&f), timing_csv(log))?;
        files.push(f);
        let adm = admissibility_csv(log);
        if adm.lines().count() > 2 {
            let f = format!("admissibility_{tag}.csv");
            fs::write(dir.join(&f), adm)?;
            files.push(f);
        }
    }
    fs::write(dir.join("aggregate.csv"), aggregate_csv(rows))?;
    files.push("aggregate.csv".to_string());
    let refs: Vec<&str> = files.iter().map(|s| s.as_str()).collect();
    let summary = run_summary(name, rows, &refs, warnings);
    fs::write(dir.join("summary.txt"), summary)?;
    files.push("summary.txt".to_string());
    Ok(files)
}
