use std::path::PathBuf;

use clap::{Parser, Subcommand};
use hjb_cli::{run, Command, Options};

#[derive(Parser)]
#[command(name = "hjb", version, about = "Finite-horizon HJB solver, certificates and cross-checks")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Experiment file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Escalated solve; writes u.csv, controls.csv, truncation_trace.csv.
    Solve,
    /// Certificates for a stored value table; writes certificates.csv.
    Certify {
        /// Value table to certify [default: <out>/u.csv].
        #[arg(long)]
        u: Option<PathBuf>,
    },
    /// Monte Carlo and Cole-Hopf cross-checks; writes verify.csv, colehopf.csv.
    Verify,
    /// Gradient bound across the refinement and box ladder; writes ladder.csv.
    Ladder,
    /// Matrix inequality property suites; writes lemmas.csv.
    Lemmas,
}

fn main() {
    // Usage errors join the config code; clap's own code 2 means escalation here.
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            std::process::exit(if e.use_stderr() { hjb_cli::exit::CONFIG } else { 0 });
        }
    };
    let cmd = match cli.command {
        Cmd::Solve => Command::Solve,
        Cmd::Certify { u } => Command::Certify { u_csv: u },
        Cmd::Verify => Command::Verify,
        Cmd::Ladder => Command::Ladder,
        Cmd::Lemmas => Command::Lemmas,
    };
    let opts = Options {
        config: cli.config,
        out: cli.out,
        seed: cli.seed,
        quiet: cli.quiet,
    };
    std::process::exit(run(&cmd, &opts));
}
