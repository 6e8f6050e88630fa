mod bootstrap;
mod design;
mod experiment;
mod fit;
mod monitor;
mod simulate;

use blindmon::design::{target_variance, DesignSpec, Weibull};
use blindmon::normal;
use serde::Serialize;

use crate::cli::{Cli, Command, TargetArgs};
use crate::error::{CliError, CliResult};
use crate::run::Run;

pub fn dispatch(cli: Cli) -> CliResult<()> {
    let g = &cli.global;
    match cli.command {
        Command::Design(a) => design::run(Run::new("design", g), a),
        Command::Simulate(a) => simulate::run(Run::new("simulate", g), a),
        Command::Fit(a) => fit::run(Run::new("fit", g), a),
        Command::Monitor(a) => monitor::run(Run::new("monitor", g), a),
        Command::Bootstrap(a) => bootstrap::run(Run::new("bootstrap", g), a),
        Command::Experiment(a) => experiment::run(Run::new("experiment", g), a),
    }
}

/// Monitoring target and the design quantities the power column refers to.
#[derive(Debug, Clone, Serialize)]
struct Target {
    v2_target: f64,
    beta0: f64,
    alpha: f64,
    power: f64,
    /// Design the target came from, when one was given.
    #[serde(skip_serializing_if = "Option::is_none")]
    spec: Option<DesignSpec>,
    #[serde(skip)]
    reference: DesignSpec,
}

fn resolve_target(run: &mut Run, args: &TargetArgs) -> CliResult<Target> {
    let check_target = |v: f64| {
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(CliError::validation(format!(
                "--target-v2 {v} must be positive"
            )))
        }
    };
    if let Some(path) = &args.spec {
        if args.beta0.is_some() {
            return Err(CliError::validation(
                "--beta0 conflicts with --spec; the design specification supplies beta0",
            ));
        }
        let spec: DesignSpec = run.load_config(path)?;
        spec.validate()?;
        let v2_target = match args.target_v2 {
            Some(v) => check_target(v)?,
            None => target_variance(spec.beta0, spec.alpha, spec.power)?,
        };
        return Ok(Target {
            v2_target,
            beta0: spec.beta0,
            alpha: spec.alpha,
            power: spec.power,
            reference: spec.clone(),
            spec: Some(spec),
        });
    }
    let Some(v2) = args.target_v2 else {
        return Err(CliError::validation("give --spec or --target-v2"));
    };
    let v2_target = check_target(v2)?;
    if !(args.alpha > 0.0 && args.alpha < 1.0 && args.power > 0.0 && args.power < 1.0) {
        return Err(CliError::validation(
            "--alpha and --power must lie in (0, 1)",
        ));
    }
    // the effect for which the target variance delivers the requested power
    let beta0 = args.beta0.unwrap_or_else(|| {
        -(normal::quantile(1.0 - args.alpha / 2.0) + normal::quantile(args.power))
            * v2_target.sqrt()
    });
    // only beta0, alpha and pi enter the monitoring computations
    let reference = DesignSpec {
        alpha: args.alpha,
        power: args.power,
        beta0,
        pi: 0.5,
        tau_a: 0.0,
        tau_f: 1.0,
        weibull: Weibull {
            lambda: 1.0,
            nu: 1.0,
        },
        theta: 0.0,
        mu_bar_override: None,
    };
    reference.validate()?;
    Ok(Target {
        v2_target,
        beta0,
        alpha: args.alpha,
        power: args.power,
        spec: None,
        reference,
    })
}

/// Shortest decimal rendering, with `None` as an empty cell.
fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
