use std::fmt::Write as _;

use blindmon::design::{plan, DesignOutput, DesignSpec, EventCountOptions, EventRounding};
use serde::Serialize;

use crate::cli::{DesignArgs, Format, Rounding};
use crate::error::CliResult;
use crate::run::{csv_bytes, Run};

#[derive(Serialize)]
struct Config<'a> {
    spec: &'a DesignSpec,
    options: EventCountOptions,
}

#[derive(Serialize)]
struct Row<'a> {
    #[serde(flatten)]
    out: &'a DesignOutput,
    rounding: EventRounding,
    cushion: u64,
}

pub fn run(mut run: Run, args: DesignArgs) -> CliResult<()> {
    let format = run.format_or(Format::Json, &[Format::Json, Format::Csv, Format::Text])?;
    let spec: DesignSpec = run.load_config(&args.spec)?;
    let options = EventCountOptions {
        rounding: match args.rounding {
            Rounding::Early => EventRounding::Early,
            Rounding::Late => EventRounding::Late,
        },
        cushion: args.cushion,
    };
    let out = plan(&spec, options)?;
    let config = Config {
        spec: &spec,
        options,
    };
    match format {
        Format::Json => run.emit_json(&config, &out),
        Format::Csv => {
            let row = Row {
                out: &out,
                rounding: options.rounding,
                cushion: options.cushion,
            };
            run.emit_with_sidecar(&config, &csv_bytes([row])?)
        }
        Format::Text => run.emit_with_sidecar(&config, report(&spec, options, &out).as_bytes()),
    }
}

fn report(spec: &DesignSpec, opts: EventCountOptions, out: &DesignOutput) -> String {
    let mut s = String::new();
    let rounding = match opts.rounding {
        EventRounding::Early => "base count rounded up before inflation",
        EventRounding::Late => "inflated once, then rounded up",
    };
    let _ = writeln!(s, "Recurrent-event design");
    let _ = writeln!(
        s,
        "  effect         beta0 = {:.4} (rate ratio {:.3}), two-sided alpha {}, power {}",
        spec.beta0,
        spec.beta0.exp(),
        spec.alpha,
        spec.power
    );
    let _ = writeln!(
        s,
        "  trial          accrual {} y, minimum follow-up {} y, P(treated) = {}",
        spec.tau_a, spec.tau_f, spec.pi
    );
    let _ = writeln!(
        s,
        "  baseline       mu0(t) = {} t^{}, frailty variance {}",
        spec.weibull.lambda, spec.weibull.nu, spec.theta
    );
    let _ = writeln!(s);
    let _ = writeln!(s, "  Poisson-type events        {:>12.3}", out.l_base);
    let _ = writeln!(s, "  mean baseline events       {:>12.4}", out.mu_bar);
    let _ = writeln!(
        s,
        "  inflation factor           {:>12.4}",
        out.inflation_factor
    );
    let _ = writeln!(s, "  target events L            {:>12}", out.l_events);
    let _ = writeln!(s, "  subjects n                 {:>12}", out.n_subjects);
    let _ = writeln!(s, "  target variance            {:>12.6}", out.v2_target);
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "  rounding: {rounding}; cushion {} event(s)",
        opts.cushion
    );
    s
}
