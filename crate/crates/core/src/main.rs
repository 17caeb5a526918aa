use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use pwmsim::config::{load_config, ModelKind};
use pwmsim::experiments::{run_experiment, ExperimentName, ExperimentSpec};

#[derive(Debug, Parser)]
#[command(name = "pwmsim", version, about = "PWM duty-cycle perceptron simulator")]
struct Cli {
    /// duty_sweep | freq_sweep | vdd_sweep_abs | vdd_sweep_rel | adder_table | power_sweep | single_run
    experiment: String,
    /// config file of `section.key = value` lines
    #[arg(long)]
    config: Option<PathBuf>,
    /// override one parameter, e.g. --set sim.freq=10MHz (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// device model, shorthand for --set model.kind=...
    #[arg(long)]
    model: Option<String>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// also write an SVG plot next to each CSV
    #[arg(long)]
    plot: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name: ExperimentName = match cli.experiment.parse() {
        Ok(n) => n,
        Err(e) => {
            eprintln!("pwmsim: {e}");
            return ExitCode::from(2);
        }
    };
    let mut overrides = cli.set.clone();
    if let Some(m) = &cli.model {
        if let Err(msg) = ModelKind::parse(m) {
            eprintln!("pwmsim: --model: {msg}");
            return ExitCode::from(2);
        }
        overrides.push(format!("model.kind={m}"));
    }
    if cli.plot {
        overrides.push("plot.enabled=true".into());
    }
    let params = match load_config(cli.config.as_deref(), &overrides) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("pwmsim: {e}");
            return ExitCode::from(2);
        }
    };
    let spec = ExperimentSpec { name, params, out_dir: cli.out };
    match run_experiment(&spec) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("pwmsim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
