//! Command-line driver: `pathwise <stage> --config run.toml [--out dir] [--seed s] [--levels k]`.
//!
//! Exit status: 0 when every check passes, 1 on a check failure, 2 on an
//! invalid configuration and 3 when a computation aborts.

mod config;
mod pipeline;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use sha2::{Digest, Sha256};

use config::RunConfig;
use pipeline::{summary, Run, Stage};

#[derive(Parser, Debug)]
#[command(name = "pathwise", version, about = "Pathwise viscosity solution experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build and validate the driving rough path.
    Lift(Flags),
    /// Integrate characteristics from grid nodes.
    Flow(Flags),
    /// Smooth solution operator, horizon and operator properties.
    Local(Flags),
    /// Solve the full problem on the grid.
    Solve(Flags),
    /// Sub/super-solutions, comparison and test-function checks.
    Verify(Flags),
    /// Every stage in order.
    All(Flags),
    /// Same as `all`.
    Run(Flags),
}

#[derive(Args, Debug)]
struct Flags {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Artifact directory; overrides `outputs.dir`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `numerics.levels`.
    #[arg(long)]
    levels: Option<usize>,
}

const EXIT_CHECK: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, flags, stages) = match &cli.command {
        Command::Lift(f) => ("lift", f, vec![Stage::Lift]),
        Command::Flow(f) => ("flow", f, vec![Stage::Flow]),
        Command::Local(f) => ("local", f, vec![Stage::Local]),
        Command::Solve(f) => ("solve", f, vec![Stage::Solve]),
        Command::Verify(f) => ("verify", f, vec![Stage::Verify]),
        Command::All(f) => ("all", f, ALL.to_vec()),
        Command::Run(f) => ("run", f, ALL.to_vec()),
    };
    match execute(name, flags, &stages) {
        Ok(code) => ExitCode::from(code),
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}

const ALL: [Stage; 5] = [Stage::Lift, Stage::Flow, Stage::Local, Stage::Solve, Stage::Verify];

fn execute(name: &str, flags: &Flags, stages: &[Stage]) -> Result<u8, (u8, String)> {
    let text = std::fs::read_to_string(&flags.config)
        .map_err(|e| (EXIT_CONFIG, format!("`--config`: {}: {e}", flags.config.display())))?;
    let mut cfg = RunConfig::parse(&text).map_err(|e| (EXIT_CONFIG, e.to_string()))?;
    if let Some(seed) = flags.seed {
        cfg.seed = seed;
    }
    if let Some(levels) = flags.levels {
        cfg.numerics.levels = levels;
    }
    let base = flags.config.parent().unwrap_or(Path::new("."));
    let setup = cfg.setup(base).map_err(|e| (EXIT_CONFIG, e.to_string()))?;
    let out = flags
        .out
        .clone()
        .or_else(|| cfg.outputs.dir.as_ref().map(|d| base.join(d)))
        .unwrap_or_else(|| PathBuf::from("out"));

    let mut run = Run::default();
    for &stage in stages {
        run.execute(&setup, stage).map_err(|e| (EXIT_NUMERIC, format!("{} aborted: {e}", stage.name())))?;
    }

    let table = summary(&run.checks);
    print!("{table}");
    run.artifacts.insert("summary.txt".into(), table.into_bytes());
    let hashes: serde_json::Map<String, serde_json::Value> = run
        .artifacts
        .iter()
        .map(|(k, v)| (k.clone(), json!(hex::encode(Sha256::digest(v)))))
        .collect();
    let manifest = json!({
        "tool": "pathwise",
        "version": env!("CARGO_PKG_VERSION"),
        "subcommand": name,
        "config_sha256": hex::encode(Sha256::digest(text.as_bytes())),
        "seed": cfg.seed,
        "levels": cfg.numerics.levels,
        "grid": { "lower": cfg.numerics.lower, "upper": cfg.numerics.upper, "dx": cfg.numerics.dx, "nodes": setup.grid.len() },
        "time": { "t_end": cfg.problem.t_end, "dt": cfg.numerics.dt, "outputs": setup.times },
        "records": run.records,
        "checks": run.checks,
        "artifacts": hashes,
        "passed": run.passed(),
    });
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("serializable");
    bytes.push(b'\n');
    run.artifacts.insert("manifest.json".into(), bytes);

    std::fs::create_dir_all(&out).map_err(|e| (EXIT_NUMERIC, format!("{}: {e}", out.display())))?;
    for (file, data) in &run.artifacts {
        std::fs::write(out.join(file), data).map_err(|e| (EXIT_NUMERIC, format!("{file}: {e}")))?;
    }
    Ok(if run.passed() { 0 } else { EXIT_CHECK })
}
