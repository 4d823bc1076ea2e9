use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ergodic_bsde::commands::{run, Command, RunOptions};

#[derive(Parser, Debug)]
#[command(name = "ergodic-bsde", version, about = "Ergodic BSDE systems with regime switching")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Caps the worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Turn Monte Carlo warnings into exit code 5.
    #[arg(long, global = true)]
    strict: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Cmd {
    /// Vanishing-discount solve: profile, λ trace, diagnostics.
    SolveErgodic,
    /// Large-time residuals and exponential fit.
    LargeTime,
    /// Simulate factor, chain and wealth.
    Simulate,
    /// Paired martingale test of the forward performance process.
    MartingaleTest,
    /// Risk-sensitive long-run growth rate.
    GrowthRate,
    /// Random comparison-theorem instances.
    Compare,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Some(config) = cli.config else {
        eprintln!("{}", serde_json::json!({"exit_code": 2, "kind": "usage", "message": "--config is required"}));
        return ExitCode::from(2);
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("cannot configure thread pool: {e}");
        }
    }
    let command = match cli.command {
        Cmd::SolveErgodic => Command::SolveErgodic,
        Cmd::LargeTime => Command::LargeTime,
        Cmd::Simulate => Command::Simulate,
        Cmd::MartingaleTest => Command::MartingaleTest,
        Cmd::GrowthRate => Command::GrowthRate,
        Cmd::Compare => Command::Compare,
    };
    let opts = RunOptions { config, out: cli.out, seed: cli.seed, strict: cli.strict };
    match run(command, &opts) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let detail = e.to_json();
            if std::fs::create_dir_all(&opts.out).is_ok() {
                let _ = std::fs::write(opts.out.join("error.json"), format!("{detail:#}\n"));
            }
            eprintln!("{detail}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
