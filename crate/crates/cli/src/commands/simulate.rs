use blindmon::counting::write_events_csv_in;
use blindmon::simulate::{simulate_trial, ScenarioParams};
use serde::Serialize;

use crate::cli::{Format, SimulateArgs};
use crate::error::{CliError, CliResult};
use crate::run::Run;

#[derive(Serialize)]
struct Config<'a> {
    params: &'a ScenarioParams,
    blinded: bool,
}

pub fn run(mut run: Run, args: SimulateArgs) -> CliResult<()> {
    run.format_or(Format::Csv, &[Format::Csv])?;
    let mut params: ScenarioParams = run.load_config(&args.params)?;
    if let Some(seed) = run.seed {
        params.seed = seed;
    }
    run.seed = Some(params.seed);
    let data = simulate_trial(&params)?;
    let mut body = Vec::new();
    write_events_csv_in(&data, &mut body, args.blinded, run.time_unit())
        .map_err(|e| CliError::runtime(e.to_string()))?;
    let config = Config {
        params: &params,
        blinded: args.blinded,
    };
    run.emit_with_sidecar(&config, &body)
}
