//! Config-driven runner for the hmlab verification suites.
//!
//! Exit codes: 0 when every assertion of the run held, 1 when one failed,
//! 2 when the config (or a file it names) is invalid.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod output;

use output::RunContext;

#[derive(Debug, Parser)]
#[command(name = "hmlab", version, about = "Verification suites for the lifted Hidden Matching problem")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON config for the subcommand; defaults are used when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed; overrides the config's `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Worker threads; all cores when absent.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Treat warnings as invalid-config errors.
    #[arg(long, global = true)]
    pub strict: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Exhaustive zero-error sweep of the quantum protocol.
    QuantumCheck,
    /// Monte Carlo extractor estimates on random cylinder intersections.
    Extractor,
    /// Simplification and information audits of a table protocol.
    ProtocolAudit,
    /// Randomized property suites for the information inequalities.
    PropertySuites,
    /// Success of the index baseline as the index set grows.
    BaselineSweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::QuantumCheck => "quantum-check",
            Command::Extractor => "extractor",
            Command::ProtocolAudit => "protocol-audit",
            Command::PropertySuites => "property-suites",
            Command::BaselineSweep => "baseline-sweep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Pass = 0,
    Fail = 1,
    Invalid = 2,
}

/// What a finished command reports back.
#[derive(Debug, Default)]
pub struct Outcome {
    pub pass: bool,
    pub warnings: Vec<String>,
}

pub fn run(cli: &Cli) -> Exit {
    match try_run(cli) {
        Ok(o) => {
            for w in &o.warnings {
                eprintln!("warning: {w}");
            }
            if cli.strict && !o.warnings.is_empty() {
                eprintln!("error: warnings are errors under --strict");
                Exit::Invalid
            } else if o.pass {
                Exit::Pass
            } else {
                Exit::Fail
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            Exit::Invalid
        }
    }
}

fn try_run(cli: &Cli) -> Result<Outcome> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        anyhow::ensure!(n > 0, "--threads must be positive");
        builder = builder.num_threads(n);
    }
    let pool = builder.build().context("starting worker threads")?;
    std::fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let base = |config_seed: Option<u64>, hash: String| RunContext {
        seed: cli.seed.or(config_seed).unwrap_or(config::DEFAULT_SEED),
        config_hash: hash,
        out: cli.out.clone(),
        strict: cli.strict,
    };
    let path = cli.config.as_deref();
    let name = cli.command.name();
    pool.install(|| match cli.command {
        Command::QuantumCheck => {
            let c: config::QuantumConfig = config::load(path)?;
            c.validate()?;
            let ctx = base(c.seed, config::config_hash(name, &c, b""));
            commands::quantum_check(&ctx, &c)
        }
        Command::Extractor => {
            let c: config::ExtractorConfig = config::load(path)?;
            c.validate()?;
            let ctx = base(c.seed, config::config_hash(name, &c, b""));
            commands::extractor(&ctx, &c)
        }
        Command::ProtocolAudit => {
            let mut c: config::AuditConfig = config::load(path)?;
            c.validate()?;
            // Hash the file path as written so reruns from another directory agree.
            let written = c.clone();
            c.resolve_paths(path);
            let loaded = commands::load_protocol(&c.protocol)?;
            let ctx = base(c.seed, config::config_hash(name, &written, &loaded.source_bytes));
            commands::protocol_audit(&ctx, &c, loaded.protocol)
        }
        Command::PropertySuites => {
            let c: config::SuitesConfig = config::load(path)?;
            c.validate()?;
            let ctx = base(c.seed, config::config_hash(name, &c, b""));
            commands::property_suites(&ctx, &c)
        }
        Command::BaselineSweep => {
            let c: config::BaselineConfig = config::load(path)?;
            c.validate()?;
            let ctx = base(c.seed, config::config_hash(name, &c, b""));
            commands::baseline_sweep(&ctx, &c)
        }
    })
}
