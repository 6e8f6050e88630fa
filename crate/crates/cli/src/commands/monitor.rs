use std::fmt::Write as _;

use blindmon::monitor::{
    monitor_trajectory, BootstrapConfig, Decision, MonitorConfig, MonitorPoint, Schedule, StartRule,
};
use serde::Serialize;

use super::{cell, resolve_target, Target};
use crate::cli::{Format, MonitorArgs, ScheduleKind};
use crate::error::{CliError, CliResult};
use crate::run::{csv_bytes, write_to, Run};

#[derive(Serialize)]
struct Config<'a> {
    target: &'a Target,
    monitor: &'a MonitorConfig,
}

/// Trajectory CSV row; `ci_lo`/`ci_hi` bound the predicted power.
#[derive(Serialize)]
struct Row {
    s: f64,
    #[serde(rename = "L")]
    l: usize,
    n: usize,
    v2_blind: String,
    power: String,
    ci_lo: String,
    ci_hi: String,
    crossed: bool,
}

/// Monitoring outcome with times in the user's unit.
#[derive(Debug, Serialize)]
pub struct DecisionRecord {
    stopped: bool,
    stop_time: Option<f64>,
    stop_l: Option<usize>,
    n_enrolled: Option<usize>,
    v2_blind: Option<f64>,
    predicted_power: Option<f64>,
    v2_target: f64,
    last_time: Option<f64>,
    horizon: f64,
    evaluations: usize,
}

#[derive(Serialize)]
struct PointOut {
    s: f64,
    #[serde(rename = "L")]
    l: usize,
    n: usize,
    v2_blind: Option<f64>,
    predicted_power: Option<f64>,
    ci: Option<blindmon::monitor::BootstrapCi>,
    crossed: bool,
}

pub fn run(mut run: Run, args: MonitorArgs) -> CliResult<()> {
    let format = run.format_or(Format::Csv, &[Format::Json, Format::Csv, Format::Text])?;
    let target = resolve_target(&mut run, &args.target)?;
    let data = run.load_dataset(&args.data)?;

    let mut cfg = MonitorConfig::new(target.v2_target, schedule(&run, &args));
    if args.start_events.is_some() || args.start_time.is_some() {
        cfg.start_rule = StartRule {
            min_elapsed: args.start_time.map(|t| run.to_years(t)),
            min_events: args.start_events,
        };
    }
    if let Some(h) = args.horizon {
        cfg.max_horizon = run.to_years(h);
    }
    if let Some(replicates) = args.bootstrap {
        cfg.bootstrap = Some(BootstrapConfig {
            replicates,
            level: args.level,
            seed: run.seed.unwrap_or(0),
        });
    }
    cfg.stop_at_crossing = !args.full;

    let traj = monitor_trajectory(&data.blinded(), &cfg, &target.reference)?;
    let record = decision_record(&run, &traj.decision, &traj.points, &cfg);
    let config = Config {
        target: &target,
        monitor: &cfg,
    };

    if let Some(path) = &args.decision {
        let doc = serde_json::json!({ "manifest": run.manifest(&config), "result": &record });
        let mut body =
            serde_json::to_vec_pretty(&doc).map_err(|e| CliError::runtime(e.to_string()))?;
        body.push(b'\n');
        write_to(Some(path), &body)?;
    }

    match format {
        Format::Csv => {
            let rows = traj.points.iter().map(|p| csv_row(&run, p));
            run.emit_with_sidecar(&config, &csv_bytes(rows)?)?;
            if args.decision.is_none() {
                eprintln!("decision: {}", summary_line(&run, &record));
            }
            Ok(())
        }
        Format::Json => {
            let points: Vec<PointOut> = traj
                .points
                .iter()
                .map(|p| PointOut {
                    s: run.to_unit(p.s),
                    l: p.events,
                    n: p.n_enrolled,
                    v2_blind: p.v2_blind,
                    predicted_power: p.predicted_power,
                    ci: p.ci,
                    crossed: p.crossed,
                })
                .collect();
            let result = serde_json::json!({ "decision": &record, "trajectory": points });
            run.emit_json(&config, &result)
        }
        Format::Text => {
            let mut s = String::new();
            let _ = writeln!(s, "{}", summary_line(&run, &record));
            let _ = writeln!(s, "evaluations: {}", record.evaluations);
            run.emit_with_sidecar(&config, s.as_bytes())
        }
    }
}

fn schedule(run: &Run, args: &MonitorArgs) -> Schedule {
    if let Some(times) = &args.times {
        return Schedule::Custom(times.iter().map(|&t| run.to_years(t)).collect());
    }
    match args.schedule {
        ScheduleKind::Continuous => Schedule::Continuous,
        ScheduleKind::Daily => Schedule::Daily,
        ScheduleKind::Weekly => Schedule::Weekly,
        ScheduleKind::Monthly => Schedule::Monthly,
    }
}

fn csv_row(run: &Run, p: &MonitorPoint) -> Row {
    Row {
        s: run.to_unit(p.s),
        l: p.events,
        n: p.n_enrolled,
        v2_blind: cell(p.v2_blind),
        power: cell(p.predicted_power),
        ci_lo: cell(p.ci.map(|c| c.power_lo)),
        ci_hi: cell(p.ci.map(|c| c.power_hi)),
        crossed: p.crossed,
    }
}

fn decision_record(
    run: &Run,
    d: &Decision,
    points: &[MonitorPoint],
    cfg: &MonitorConfig,
) -> DecisionRecord {
    let evaluations = points.len();
    let v2_target = cfg.v2_target;
    let horizon = run.to_unit(cfg.max_horizon);
    let last_time = points.last().map(|p| run.to_unit(p.s));
    match *d {
        Decision::Stopped {
            stop_time,
            stop_l,
            n_enrolled,
            v2_blind,
            predicted_power,
        } => DecisionRecord {
            stopped: true,
            stop_time: Some(run.to_unit(stop_time)),
            stop_l: Some(stop_l),
            n_enrolled: Some(n_enrolled),
            v2_blind: Some(v2_blind),
            predicted_power: Some(predicted_power),
            v2_target,
            last_time,
            horizon,
            evaluations,
        },
        Decision::NotReached { .. } => DecisionRecord {
            stopped: false,
            stop_time: None,
            stop_l: None,
            n_enrolled: None,
            v2_blind: None,
            predicted_power: None,
            v2_target,
            last_time,
            horizon,
            evaluations,
        },
    }
}

fn summary_line(run: &Run, r: &DecisionRecord) -> String {
    let unit = run.unit_name();
    match (r.stop_time, r.stop_l, r.v2_blind, r.predicted_power) {
        (Some(t), Some(l), Some(v2), Some(p)) => format!(
            "stop at {t} {unit} with L={l} events (v2_blind {v2:.6} <= target {:.6}, predicted power {p:.4})",
            r.v2_target
        ),
        _ => format!(
            "target {:.6} not reached; last evaluation {} {unit}",
            r.v2_target,
            r.last_time.map_or("none".to_string(), |t| t.to_string())
        ),
    }
}
