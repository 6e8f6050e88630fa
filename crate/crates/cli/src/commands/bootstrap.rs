use std::fmt::Write as _;

use blindmon::counting::snapshot;
use blindmon::design::power_given_variance;
use blindmon::monitor::{blinded_variance, bootstrap_ci, BootstrapConfig};
use serde::Serialize;

use super::{resolve_target, Target};
use crate::cli::{BootstrapArgs, Format};
use crate::error::CliResult;
use crate::run::{csv_bytes, Run};

#[derive(Serialize)]
struct Config<'a> {
    target: &'a Target,
    at: f64,
    bootstrap: BootstrapConfig,
}

#[derive(Serialize)]
struct Report {
    s: f64,
    #[serde(rename = "L")]
    l: usize,
    n: usize,
    v2_blind: f64,
    predicted_power: f64,
    v2_lo: f64,
    v2_hi: f64,
    power_lo: f64,
    power_hi: f64,
    level: f64,
    replicates: usize,
    redraws: usize,
}

pub fn run(mut run: Run, args: BootstrapArgs) -> CliResult<()> {
    let format = run.format_or(Format::Json, &[Format::Json, Format::Csv, Format::Text])?;
    let target = resolve_target(&mut run, &args.target)?;
    let data = run.load_dataset(&args.data)?;
    let cfg = BootstrapConfig {
        replicates: args.replicates,
        level: args.level,
        seed: run.seed.unwrap_or(0),
    };
    cfg.validate()?;
    let s = run.to_years(args.at);
    let snap = snapshot(&data, s, true)?;
    let v2 = blinded_variance(&snap)?;
    let ci = bootstrap_ci(&snap, &cfg, target.beta0, target.alpha)?;
    let report = Report {
        s: args.at,
        l: snap.total_events,
        n: snap.n_enrolled,
        v2_blind: v2,
        predicted_power: power_given_variance(v2, target.beta0, target.alpha),
        v2_lo: ci.v2_lo,
        v2_hi: ci.v2_hi,
        power_lo: ci.power_lo,
        power_hi: ci.power_hi,
        level: cfg.level,
        replicates: cfg.replicates,
        redraws: ci.redraws,
    };
    let config = Config {
        target: &target,
        at: s,
        bootstrap: cfg,
    };
    match format {
        Format::Json => run.emit_json(&config, &report),
        Format::Csv => run.emit_with_sidecar(&config, &csv_bytes([&report])?),
        Format::Text => {
            let mut t = String::new();
            let pct = 100.0 * report.level;
            let _ = writeln!(
                t,
                "at {} {}: L={} n={} v2_blind {:.6} ({pct}% CI {:.6} to {:.6})",
                report.s,
                run.unit_name(),
                report.l,
                report.n,
                report.v2_blind,
                report.v2_lo,
                report.v2_hi
            );
            let _ = writeln!(
                t,
                "predicted power {:.4} ({pct}% CI {:.4} to {:.4}); {} resamples, {} redrawn",
                report.predicted_power,
                report.power_lo,
                report.power_hi,
                report.replicates,
                report.redraws
            );
            run.emit_with_sidecar(&config, t.as_bytes())
        }
    }
}
