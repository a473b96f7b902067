mod args;
mod commands;

use args::{Cli, Command};
use clap::Parser;
use commands::CliError;

fn run(cli: &Cli) -> Result<(), CliError> {
    let out = match &cli.command {
        Command::Fit(a) => commands::run_fit(a)?,
        Command::Predict(a) => commands::run_predict(a)?,
        Command::Simulate(a) => commands::run_simulate(a)?,
        Command::Benchmark(a) => commands::run_benchmark_cmd(a)?,
        Command::GibbsCheck(a) => commands::run_gibbs_check(a)?,
        Command::Standardize(a) => commands::run_standardize(a)?,
        Command::Check(a) => commands::run_check(a)?,
    };
    out.write()?;
    print!("{}", out.stdout);
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Some(t) = bayfactor::sim::env_threads() {
        // a second initialization attempt only fails if a pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    if let Err(e) = run(&cli) {
        eprintln!("bayfactor: {e}");
        std::process::exit(e.exit_code());
    }
}
