mod args;
mod commands;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

fn emit(report: &str, path: Option<&Path>) -> anyhow::Result<()> {
    match path {
        Some(p) => fs::write(p, report)?,
        None => std::io::stdout().write_all(report.as_bytes())?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };

    let (result, report_path) = match &cli.command {
        Command::RecoverTweak(a) => (commands::recover_tweak(a), a.report.as_deref()),
        Command::FindBridge(a) => (commands::find_bridge(a), a.report.as_deref()),
        Command::FindCc(a) => (commands::find_cc(a), a.report.as_deref()),
        Command::Inject(a) => (commands::inject(a), a.report.as_deref()),
        Command::Attack(a) => (commands::attack(a), a.report.as_deref()),
        Command::DemoMitigated(a) => (commands::demo_mitigated(a), a.report.as_deref()),
        Command::ProbeRandomness(a) => (commands::probe_randomness(a), a.report.as_deref()),
    };

    let outcome = match result.and_then(|o| emit(&o.report, report_path).map(|()| o)) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("memtweak: {e:#}");
            return ExitCode::from(2);
        }
    };
    if outcome.success {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
