use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use memtweak::Mode;

#[derive(Debug, Parser)]
#[command(
    name = "memtweak",
    version,
    about = "Tweaked memory-encryption simulator and attack toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Recover the tweak table from equal-ciphertext samples
    RecoverTweak(RecoverArgs),
    /// Locate the Bridge in a simulated guest
    FindBridge(RunArgs),
    /// Locate the Bridge, then the Characteristic Code
    FindCc(RunArgs),
    /// Run all stages and show the forged ciphertext written over the victim
    Inject(RunArgs),
    /// Run the end-to-end attack and report the outcome
    Attack(RunArgs),
    /// Show that the address-keyed engine defeats recovery and the attack
    DemoMitigated(RunArgs),
    /// Probe one address with a counter sequence and test the ciphertexts
    ProbeRandomness(ProbeArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Seed for every pseudorandom choice in the run
    #[arg(long)]
    pub seed: Option<u64>,
    /// Guest size in 4 KiB pages
    #[arg(long)]
    pub pages: Option<u64>,
    /// Engine flavor
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<Mode>,
    /// Tweak table known to the attacker (defaults to the bundled table)
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Scenario file; explicit flags override its values
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Write the report here instead of stdout
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Independent scenarios to run, seeded seed, seed+1, ...
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub trials: u64,
    /// Include wall-clock stage timings (makes reports non-reproducible)
    #[arg(long)]
    pub timings: bool,
}

#[derive(Debug, Args)]
pub struct RecoverArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_parser = parse_mode, default_value = "vulnerable")]
    pub mode: Mode,
    /// Number of sampled block addresses
    #[arg(long, default_value_t = memtweak::recovery::DEFAULT_SAMPLES)]
    pub samples: usize,
    /// Ground-truth table of the simulated engine (defaults to the bundled table)
    #[arg(long, conflicts_with = "random_table")]
    pub table: Option<PathBuf>,
    /// Use a table generated from the seed as ground truth
    #[arg(long)]
    pub random_table: bool,
    /// Write the recovered table here
    #[arg(long)]
    pub table_out: Option<PathBuf>,
    /// Write the engine's ground-truth table here
    #[arg(long)]
    pub truth_out: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_parser = parse_mode, default_value = "vulnerable")]
    pub mode: Mode,
    /// Number of counter plaintexts written
    #[arg(long, default_value_t = 1024)]
    pub blocks: usize,
    /// Probed physical address (block aligned)
    #[arg(long, value_parser = parse_u64, default_value = "0x1000")]
    pub address: u64,
    /// Addresses used for the equal-ciphertext follow-up
    #[arg(long, default_value_t = memtweak::recovery::DEFAULT_SAMPLES)]
    pub samples: usize,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse()
}

fn parse_u64(s: &str) -> Result<u64, String> {
    match s.strip_prefix("0x") {
        Some(h) => u64::from_str_radix(h, 16),
        None => s.parse(),
    }
    .map_err(|e| e.to_string())
}
