use std::path::PathBuf;
use std::process::ExitCode;

use adko::verify::{run_checks, Hooks, Level};
use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};

mod config;
mod exec;
mod report;
mod sweep;

/// Setting this makes `verify` use a deliberately wrong kernel (negative control).
const CORRUPT_KERNEL_ENV: &str = "ADKO_VERIFY_CORRUPT_KERNEL";

#[derive(Parser)]
#[command(name = "adko", version, about = "Decentralized multi-agent Bayesian optimization experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one configuration.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a parameter sweep and write summary.csv.
    Sweep {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Run the invariant suites.
    Verify {
        #[arg(long, value_enum, default_value_t = VerifyLevel::Fast)]
        level: VerifyLevel,
    },
    /// Summarize run logs found under a directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum VerifyLevel {
    Fast,
    Full,
}

fn cmd_run(config_path: &std::path::Path, out: &std::path::Path, seed: Option<u64>) -> Result<()> {
    let mut cfg = config::load_config(config_path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let mut resolved = cfg.clone();
    config::resolve_paths(&mut resolved, &config::base_dir(config_path));
    let (log, manifest) = exec::run_one(&cfg, &resolved, out)?;
    eprintln!(
        "{} seed {}: {} records, cumulative regret {:.6}, {:.2}s",
        manifest.method,
        manifest.seed,
        log.records.len(),
        log.cumulative_regret,
        manifest.wall_time_secs
    );
    Ok(())
}

fn corrupted_profile(r: f64) -> f64 {
    let s = 2.0 * r;
    (1.0 + s + 5.0 * r * r / 3.0) * (-s).exp()
}

fn cmd_verify(level: VerifyLevel) -> bool {
    let level = match level {
        VerifyLevel::Fast => Level::Fast,
        VerifyLevel::Full => Level::Full,
    };
    let mut hooks = Hooks::default();
    if std::env::var_os(CORRUPT_KERNEL_ENV).is_some() {
        hooks.kernel_profile = corrupted_profile;
    }
    let checks = run_checks(level, &hooks);
    for c in &checks {
        println!("{} {} ({})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    if !failed.is_empty() {
        eprintln!("invariant violated: {}", failed.join(", "));
    }
    failed.is_empty()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run { config, out, seed } => cmd_run(&config, &out, seed),
        Cmd::Sweep { spec, out, jobs } => sweep::cmd_sweep(&spec, &out, jobs),
        Cmd::Report { input, out } => report::cmd_report(&input, &out),
        Cmd::Verify { level } => return if cmd_verify(level) { ExitCode::SUCCESS } else { ExitCode::FAILURE },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
