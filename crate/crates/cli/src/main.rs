use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use risjrc_core::config::{load_config, Profile, ScenarioConfig};
use risjrc_core::par::Mode;
use risjrc_core::precoding::Strategy;
use risjrc_core::runner::{self, ResultRow};

#[derive(Parser)]
#[command(name = "risjrc", version, about = "RIS-integrated bistatic JRC simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Channel-estimation MSE vs pilot power for each N_RF.
    Fig2(Common),
    /// Worst-case PEB vs RCS for the SD, S and SE strategies.
    Fig3(Common),
    /// Worst-case PEB vs RCS for optimized, random and no-RIS receivers.
    Fig4(Common),
    /// One Algorithm-1 run; prints the iterate trace.
    Optimize(Common),
    /// Runs the invariant suite; exits non-zero if any check fails.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    /// JSON configuration file; keys absent from it keep the profile defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// First seed (`run.seed`).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "desk")]
    profile: Profile,
    /// Output CSV path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sensing strategy (`sensing.strategy`).
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Override any key by dotted path, e.g. `--set run.seeds=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Run without the thread pool.
    #[arg(long)]
    sequential: bool,
}

impl Common {
    fn config(&self) -> Result<ScenarioConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("run.seed={seed}"));
        }
        if let Some(s) = self.strategy {
            overrides.push(format!("sensing.strategy=\"{}\"", s.tag()));
        }
        load_config(self.config.as_deref(), self.profile, &overrides).context("loading configuration")
    }

    fn mode(&self) -> Mode {
        if self.sequential {
            Mode::Sequential
        } else {
            Mode::default()
        }
    }

    fn write(&self, rows: &[ResultRow]) -> Result<()> {
        if let Some(path) = &self.out {
            runner::persist(rows, path).with_context(|| format!("writing {}", path.display()))?;
            log::info!("wrote {} rows to {}", rows.len(), path.display());
        }
        Ok(())
    }
}

fn run(cli: Cli) -> Result<bool> {
    let (common, experiment): (&Common, fn(&ScenarioConfig, Mode) -> risjrc_core::Result<Vec<ResultRow>>) =
        match &cli.command {
            Command::Fig2(c) => (c, runner::run_fig2),
            Command::Fig3(c) => (c, runner::run_fig3),
            Command::Fig4(c) => (c, runner::run_fig4),
            Command::Optimize(c) => (c, runner::run_optimize),
            Command::Validate(c) => {
                let cfg = c.config()?;
                let checks = runner::run_validate(&cfg, c.mode())?;
                for ch in &checks {
                    let verdict = if ch.passed() { "PASS" } else { "FAIL" };
                    println!("{verdict} {:<22} {:>12.4e} (limit {:.1e})", ch.name, ch.value, ch.limit);
                }
                c.write(&runner::check_rows(&cfg, &checks))?;
                return Ok(checks.iter().all(|ch| ch.passed()));
            }
        };
    let cfg = common.config()?;
    let rows = experiment(&cfg, common.mode())?;
    print!("{}", runner::emit_summary(&rows));
    common.write(&rows)?;
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
