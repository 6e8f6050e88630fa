use std::fmt::Write as _;
use std::time::Instant;

use blindmon::harness::{
    run_scenario, DesignSummary, Designs, ExperimentConfig, ExperimentSummary, Outcome,
    ReplicateResult, ScenarioSummary,
};
use serde::Serialize;

use super::cell;
use crate::cli::{DesignChoice, ExperimentArgs, Format, Preset, Unit};
use crate::error::{CliError, CliResult};
use crate::run::{csv_bytes, write_to, Run};

/// One CSV row per scenario, in the layout of the operating-characteristics
/// tables. Times are calendar years.
#[derive(Serialize)]
struct SummaryRow {
    scenario: usize,
    label: String,
    nu: f64,
    theta: f64,
    tau_a: f64,
    tau_f: f64,
    theta_assumed: String,
    nu_assumed: String,
    null_mode: bool,
    l_events: u64,
    n_subjects: u64,
    v2_target: f64,
    fixed_rate: String,
    fixed_time_q1: String,
    fixed_time_median: String,
    fixed_time_q3: String,
    fixed_non_stop: String,
    proposed_rate: String,
    proposed_time_q1: String,
    proposed_time_median: String,
    proposed_time_q3: String,
    proposed_events_q1: String,
    proposed_events_median: String,
    proposed_events_q3: String,
    proposed_non_stop: String,
}

#[derive(Serialize)]
struct LogRow<'a> {
    scenario: usize,
    replicate: usize,
    seed: u64,
    design: &'a str,
    status: &'a str,
    time: String,
    events: String,
    beta_hat: String,
    se_robust: String,
    z: String,
    reject: String,
    reason: String,
}

pub fn run(mut run: Run, args: ExperimentArgs) -> CliResult<()> {
    let format = run.format_or(Format::Json, &[Format::Json, Format::Csv, Format::Text])?;
    if run.unit == Unit::Days {
        return Err(CliError::validation(
            "experiment reports calendar years; drop --time-unit days",
        ));
    }
    let mut cfg: ExperimentConfig = match (&args.config, args.preset) {
        (Some(path), _) => run.load_config(path)?,
        (None, Some(Preset::Table2)) => ExperimentConfig::table2(),
        (None, Some(Preset::Table3)) => ExperimentConfig::table3(),
        (None, None) => return Err(CliError::validation("give --config or --preset")),
    };
    if let Some(r) = args.replicates {
        cfg.replicates = r;
    }
    if args.null {
        cfg.null_mode = true;
    }
    if let Some(d) = args.designs {
        cfg.designs = match d {
            DesignChoice::Fixed => Designs::Fixed,
            DesignChoice::Proposed => Designs::Proposed,
            DesignChoice::Both => Designs::Both,
        };
    }
    if let Some(seed) = run.seed {
        cfg.base_seed = seed;
    }
    run.seed = Some(cfg.base_seed);
    cfg.validate()?;

    let scenarios = cfg.all_scenarios();
    let mut summaries = Vec::with_capacity(scenarios.len());
    let mut log = Vec::new();
    for (i, scenario) in scenarios.iter().enumerate() {
        let started = Instant::now();
        let (summary, replicates) = run_scenario(&cfg, scenario)?;
        if args.progress {
            eprintln!(
                "[{}/{}] nu={} theta={} ({}, {}):{}{}{} in {:.1}s",
                i + 1,
                scenarios.len(),
                scenario.nu,
                scenario.theta,
                scenario.tau_a,
                scenario.tau_f,
                progress_part("fixed", summary.fixed.as_ref()),
                progress_part("proposed", summary.proposed.as_ref()),
                summary
                    .incomplete
                    .iter()
                    .map(|i| format!(" {} never completed", i.design))
                    .collect::<String>(),
                started.elapsed().as_secs_f64()
            );
        }
        if args.replicate_log.is_some() {
            log.extend(replicates.iter().flat_map(|r| log_rows(i + 1, r)));
        }
        summaries.push(summary);
    }
    if let Some(path) = &args.replicate_log {
        write_to(Some(path), &csv_bytes(&log)?)?;
    }
    let result = ExperimentSummary {
        replicates: cfg.replicates,
        base_seed: cfg.base_seed,
        scenarios: summaries,
    };
    match format {
        Format::Json => run.emit_json(&cfg, &result),
        Format::Csv => {
            let rows = result
                .scenarios
                .iter()
                .enumerate()
                .map(|(i, s)| summary_row(i + 1, s));
            run.emit_with_sidecar(&cfg, &csv_bytes(rows)?)
        }
        Format::Text => run.emit_with_sidecar(&cfg, text_table(&result).as_bytes()),
    }
}

fn progress_part(name: &str, s: Option<&DesignSummary>) -> String {
    s.map_or(String::new(), |s| {
        format!(
            " {name} rate {:.3} median time {:.2}",
            s.rejection_rate, s.analysis_time.median
        )
    })
}

/// Non-stop share for a design, including designs that never completed.
fn non_stop(s: &ScenarioSummary, design: &str, summary: Option<&DesignSummary>) -> Option<f64> {
    summary.map(|d| d.non_stop_fraction).or_else(|| {
        s.incomplete
            .iter()
            .find(|i| i.design == design)
            .map(|i| i.not_reached as f64 / (i.not_reached + i.failed) as f64)
    })
}

fn summary_row(index: usize, s: &ScenarioSummary) -> SummaryRow {
    let f = s.fixed.as_ref();
    let p = s.proposed.as_ref();
    SummaryRow {
        scenario: index,
        label: s.scenario.label.clone().unwrap_or_default(),
        nu: s.scenario.nu,
        theta: s.scenario.theta,
        tau_a: s.scenario.tau_a,
        tau_f: s.scenario.tau_f,
        theta_assumed: cell(s.scenario.theta_assumed),
        nu_assumed: cell(s.scenario.nu_assumed),
        null_mode: s.null_mode,
        l_events: s.design.l_events,
        n_subjects: s.design.n_subjects,
        v2_target: s.design.v2_target,
        fixed_rate: cell(f.map(|d| d.rejection_rate)),
        fixed_time_q1: cell(f.map(|d| d.analysis_time.q1)),
        fixed_time_median: cell(f.map(|d| d.analysis_time.median)),
        fixed_time_q3: cell(f.map(|d| d.analysis_time.q3)),
        fixed_non_stop: cell(non_stop(s, "fixed", f)),
        proposed_rate: cell(p.map(|d| d.rejection_rate)),
        proposed_time_q1: cell(p.map(|d| d.analysis_time.q1)),
        proposed_time_median: cell(p.map(|d| d.analysis_time.median)),
        proposed_time_q3: cell(p.map(|d| d.analysis_time.q3)),
        proposed_events_q1: cell(p.map(|d| d.events.q1)),
        proposed_events_median: cell(p.map(|d| d.events.median)),
        proposed_events_q3: cell(p.map(|d| d.events.q3)),
        proposed_non_stop: cell(non_stop(s, "proposed", p)),
    }
}

fn log_rows(scenario: usize, r: &ReplicateResult) -> Vec<LogRow<'static>> {
    [
        ("fixed", r.fixed.as_ref()),
        ("proposed", r.proposed.as_ref()),
    ]
    .into_iter()
    .filter_map(|(design, o)| o.map(|o| (design, o)))
    .map(|(design, o)| {
        let mut row = LogRow {
            scenario,
            replicate: r.replicate,
            seed: r.seed,
            design,
            status: "",
            time: String::new(),
            events: String::new(),
            beta_hat: String::new(),
            se_robust: String::new(),
            z: String::new(),
            reject: String::new(),
            reason: String::new(),
        };
        match o {
            Outcome::Analyzed {
                time,
                events,
                beta_hat,
                se_robust,
                z,
                reject,
            } => {
                row.status = "analyzed";
                row.time = time.to_string();
                row.events = events.to_string();
                row.beta_hat = beta_hat.to_string();
                row.se_robust = se_robust.to_string();
                row.z = z.to_string();
                row.reject = reject.to_string();
            }
            Outcome::NotReached => row.status = "not_reached",
            Outcome::Failed { reason } => {
                row.status = "failed";
                row.reason = reason.clone();
            }
        }
        row
    })
    .collect()
}

fn text_table(result: &ExperimentSummary) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{} replicates per scenario, base seed {}",
        result.replicates, result.base_seed
    );
    let _ = writeln!(
        s,
        "{:>4} {:>4} {:>5} {:>9} {:>6} {:>6} | {:>7} {:>6} | {:>7} {:>22} {:>22} {:>7}",
        "nu",
        "th",
        "",
        "(ta,tf)",
        "L",
        "n",
        "fixed",
        "time",
        "propsd",
        "time (q1, q3)",
        "events (q1, q3)",
        "nonstop"
    );
    for sc in &result.scenarios {
        let sp = &sc.scenario;
        let assumed = match (sp.theta_assumed, sp.nu_assumed) {
            (Some(t), _) => format!("th*{t}"),
            (None, Some(n)) => format!("nu*{n}"),
            (None, None) => String::new(),
        };
        let _ = write!(
            s,
            "{:>4} {:>4} {:>5} {:>9} {:>6} {:>6} |",
            sp.nu,
            sp.theta,
            assumed,
            format!("({},{})", sp.tau_a, sp.tau_f),
            sc.design.l_events,
            sc.design.n_subjects
        );
        match &sc.fixed {
            Some(f) => {
                let _ = write!(
                    s,
                    " {:>7.3} {:>6.2} |",
                    f.rejection_rate, f.analysis_time.median
                );
            }
            None => {
                let _ = write!(s, " {:>7} {:>6} |", "-", "-");
            }
        }
        match &sc.proposed {
            Some(p) => {
                let _ = writeln!(
                    s,
                    " {:>7.3} {:>22} {:>22} {:>7.3}",
                    p.rejection_rate,
                    format!(
                        "{:.2} ({:.2}, {:.2})",
                        p.analysis_time.median, p.analysis_time.q1, p.analysis_time.q3
                    ),
                    format!(
                        "{:.0} ({:.0}, {:.0})",
                        p.events.median, p.events.q1, p.events.q3
                    ),
                    p.non_stop_fraction
                );
            }
            None => {
                let _ = writeln!(s, " {:>7}", "-");
            }
        }
        for i in &sc.incomplete {
            let _ = writeln!(
                s,
                "      {} design never reached its analysis ({} not reached, {} failed)",
                i.design, i.not_reached, i.failed
            );
        }
    }
    s
}
