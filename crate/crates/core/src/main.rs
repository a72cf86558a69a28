use std::process::ExitCode;

use clap::Parser;
use gp_causal::cli::{cmd_fit, cmd_oracle, cmd_simulate, configure_workers, Cli, Command};
use gp_causal::Error;

fn run(cli: Cli) -> Result<ExitCode, Error> {
    configure_workers()?;
    match cli.command {
        Command::Fit(args) => {
            let m = cmd_fit(&args)?;
            let draws: usize = m.chains.len();
            println!("wrote {} ({draws} chains) in {:.1}s", args.out.display(), m.wall_time_secs);
        }
        Command::Simulate(args) => {
            let m = cmd_simulate(&args)?;
            println!("wrote {} in {:.1}s", args.out.display(), m.wall_time_secs);
        }
        Command::Oracle(args) => {
            let outcomes = cmd_oracle(&args)?;
            let mut failed = 0;
            for o in &outcomes {
                println!("{} {:<13} {:>8.2}s  {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.secs, o.detail);
                failed += usize::from(!o.passed);
            }
            if failed > 0 {
                eprintln!("{failed} of {} checks failed", outcomes.len());
                return Ok(ExitCode::from(3));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
