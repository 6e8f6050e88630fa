use std::fmt::Write as _;

use blindmon::counting::snapshot;
use blindmon::estimate::{fit_beta, wald_test, FitOptions};
use blindmon::Error;
use serde::Serialize;

use crate::cli::{FitArgs, Format};
use crate::error::{CliError, CliResult};
use crate::run::{csv_bytes, Run};

#[derive(Serialize)]
struct Config {
    analysis_time: f64,
    at_event: Option<usize>,
    alpha: f64,
    options: FitOptions,
}

#[derive(Debug, Serialize)]
struct FitReport {
    analysis_time: f64,
    subjects: usize,
    events: usize,
    beta_hat: f64,
    rate_ratio: f64,
    se_robust: f64,
    se_naive: f64,
    ci_lo: f64,
    ci_hi: f64,
    z: f64,
    p_value: f64,
    reject: bool,
    iterations: usize,
}

pub fn run(mut run: Run, args: FitArgs) -> CliResult<()> {
    let format = run.format_or(Format::Json, &[Format::Json, Format::Csv, Format::Text])?;
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(CliError::validation("--alpha must lie in (0, 1)"));
    }
    let data = run.load_dataset(&args.data)?;
    if data.total_events() == 0 {
        return Err(CliError::from(Error::NoEvents).context(args.data.display()));
    }
    let time = match (args.at, args.events) {
        (Some(t), _) => run.to_years(t),
        (None, Some(l)) => {
            let times = data.event_calendar_times();
            match l.checked_sub(1).and_then(|i| times.get(i)) {
                Some(&t) => t,
                None => {
                    return Err(CliError::validation(format!(
                        "--events {l} is out of range; the data hold {} events",
                        times.len()
                    )))
                }
            }
        }
        (None, None) => data
            .last_observation_time()
            .unwrap_or_else(|| data.event_calendar_times().last().copied().unwrap_or(0.0)),
    };
    let snap = snapshot(&data, time, false)?;
    let options = FitOptions::default();
    let fit = fit_beta(&snap, options)?;
    let test = wald_test(&fit, args.alpha);
    let (ci_lo, ci_hi) = fit.rate_ratio_ci(1.0 - args.alpha);
    let report = FitReport {
        analysis_time: run.to_unit(time),
        subjects: snap.n_enrolled,
        events: snap.total_events,
        beta_hat: fit.beta_hat,
        rate_ratio: fit.rate_ratio(),
        se_robust: fit.se_robust(),
        se_naive: fit.se_naive(),
        ci_lo,
        ci_hi,
        z: test.z,
        p_value: test.p_value,
        reject: test.reject,
        iterations: fit.iterations,
    };
    let config = Config {
        analysis_time: report.analysis_time,
        at_event: args.events,
        alpha: args.alpha,
        options,
    };
    match format {
        Format::Json => run.emit_json(&config, &report),
        Format::Csv => run.emit_with_sidecar(&config, &csv_bytes([&report])?),
        Format::Text => {
            let text = table_row(&report, args.alpha);
            run.emit_with_sidecar(&config, text.as_bytes())
        }
    }
}

fn table_row(r: &FitReport, alpha: f64) -> String {
    let level = format!("{}% CI", 100.0 * (1.0 - alpha));
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>10} {:>4} {:>5} {:>9} {:>8} {:>9} {:>9} {:>18} {:>8}",
        "time", "n", "L", "beta", "exp(b)", "SE(rob)", "SE(naive)", level, "p"
    );
    let _ = writeln!(
        s,
        "{:>10.3} {:>4} {:>5} {:>9.4} {:>8.4} {:>9.4} {:>9.4} {:>18} {:>8.4}",
        r.analysis_time,
        r.subjects,
        r.events,
        r.beta_hat,
        r.rate_ratio,
        r.se_robust,
        r.se_naive,
        format!("({:.3}, {:.3})", r.ci_lo, r.ci_hi),
        r.p_value
    );
    s
}
