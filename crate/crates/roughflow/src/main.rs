use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use roughflow::cli;
use roughflow::config::Config;
use roughflow::manifest::RunManifest;
use roughflow::Error;

#[derive(Parser)]
#[command(name = "roughflow", version, about = "Rough divergence-free flows on the torus")]
struct Args {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its report, data files and manifest.
    Run {
        scenario: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Check the parameter hypotheses of a config.
    ValidateParams {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print the level schedule as JSON.
    DumpSchedule {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rerun a manifest and compare output digests.
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

const EXIT_FAIL: u8 = 1;
const EXIT_CONFIG: u8 = 2;

fn load(path: Option<&PathBuf>) -> roughflow::Result<Config> {
    path.map(|p| Config::load(p)).unwrap_or_else(|| Ok(Config::default()))
}

fn is_config_error(e: &anyhow::Error) -> bool {
    matches!(e.downcast_ref::<Error>(), Some(Error::Config(_) | Error::InvalidParam { .. }))
}

fn execute(args: Args) -> anyhow::Result<bool> {
    match args.command {
        Command::Run { scenario, config, seed, out } => {
            let mut cfg = load(config.as_ref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let m = cli::run_scenario(&scenario, &cfg, &out)?;
            for c in &m.checks {
                let tag = match (c.pass, c.enforced) {
                    (true, _) => "ok",
                    (false, true) => "FAIL",
                    (false, false) => "miss",
                };
                println!("{tag:>4}  {}  value={:.6e} bound={:.6e} {}", c.name, c.value, c.bound, c.note);
            }
            println!("manifest: {}", out.join("manifest.json").display());
            Ok(m.passed())
        }
        Command::ValidateParams { config } => {
            let cfg = load(config.as_ref())?;
            let report = cli::validate(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(report.pass)
        }
        Command::DumpSchedule { config, out } => {
            let cfg = load(config.as_ref())?;
            let json = cli::dump_schedule(&cfg)?;
            match out {
                Some(p) => std::fs::write(&p, json).with_context(|| format!("writing {}", p.display()))?,
                None => println!("{json}"),
            }
            Ok(true)
        }
        Command::Replay { manifest, out } => {
            let m = RunManifest::read(&manifest).with_context(|| format!("reading {}", manifest.display()))?;
            let dir = out.unwrap_or_else(|| cli::default_replay_dir(&manifest));
            let (_, diff) = cli::replay(&m, &dir)?;
            if diff.is_empty() {
                println!("all {} output digests reproduced", m.outputs.len());
            } else {
                for d in &diff {
                    println!("digest mismatch: {d}");
                }
            }
            Ok(diff.is_empty())
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Some(t) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    match execute(args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_FAIL),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_config_error(&e) { EXIT_CONFIG } else { EXIT_FAIL })
        }
    }
}
