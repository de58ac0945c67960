//! `skinaug`: run the augmentation pipeline stage by stage or end to end.

mod config;
mod error;
mod layout;
mod stages;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use chrono::Utc;
use clap::{Parser, Subcommand};
use skinaug_core::curation::service::DEFAULT_ADDR;
use skinaug_core::fixture::{table1_manifest, write_smoke_fixture};
use skinaug_core::splitter::Experiment;

use crate::config::{Backend, ManifestFormat, Overrides, PipelineConfig};
use crate::error::Result;
use crate::layout::{digest_paths, is_current, write_record, RunLock, RunRecord};
use crate::stages::{Ctx, Touched};

#[derive(Debug, Parser)]
#[command(name = "skinaug", version, about = "Skin-type augmentation experiments: ingest, seed, generate, curate, train, evaluate")]
struct Cli {
    /// Pipeline config, `.toml` or `.json`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    rng_seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    backend: Option<Backend>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Input manifest; overrides `manifest_path`.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    manifest_format: Option<ManifestFormat>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load the input manifest, keep the configured conditions, print counts.
    Ingest,
    /// Draw seed images from the extreme skin-type groups.
    SampleSeeds,
    /// Request inpainted candidates for every seed.
    Generate,
    /// Serve the review API, or with `--auto-curate` accept the first four
    /// candidates per seed and finalize.
    CurateServe {
        #[arg(long)]
        auto_curate: bool,
        #[arg(long, default_value = DEFAULT_ADDR)]
        addr: SocketAddr,
        /// Built review UI to serve at `/`.
        #[arg(long)]
        ui_dir: Option<PathBuf>,
    },
    /// Build every train/test plan from seeds and finalized selections.
    Compose,
    /// Train one classifier per distinct training set.
    Train,
    /// Evaluate the augmentation-mode plans.
    Evaluate,
    /// Evaluate the dose-response plans.
    Dose,
    /// Evaluate the spillover plans.
    Spillover,
    /// Merge results into markdown, CSV and JSON tables.
    Report,
    /// Run every stage, resuming where a previous run stopped.
    All {
        /// Accept candidates automatically instead of pausing for review.
        #[arg(long)]
        auto_curate: bool,
    },
    /// Write a built-in dataset.
    Fixture {
        #[command(subcommand)]
        which: FixtureKind,
    },
}

#[derive(Debug, Subcommand)]
enum FixtureKind {
    /// The seven-condition count fixture as a manifest CSV (no images).
    Table1 {
        #[arg(long)]
        out: PathBuf,
    },
    /// Painted images, manifest and a stub-backend config.
    Smoke {
        #[arg(long)]
        out: PathBuf,
    },
}

const SMOKE_CONFIG: &str = r#"manifest_path = "manifest.csv"
backend = "stub"
rng_seed = 0
output_dir = "out"

[training]
epochs = 2
"#;

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    cfg.apply(&Overrides {
        rng_seed: cli.rng_seed,
        backend: cli.backend,
        output_dir: cli.output_dir.clone(),
        manifest: cli.manifest.clone(),
        manifest_format: cli.manifest_format,
    });
    cfg.validate()?;
    Ok(cfg)
}

/// Run one stage and write its run record.
fn run_stage(ctx: &Ctx, stage: &str, f: impl FnOnce(&Ctx) -> Result<Touched>) -> Result<()> {
    let started_at = Utc::now();
    let touched = f(ctx)?;
    let record = RunRecord {
        stage: stage.to_string(),
        config_digest: ctx.digest.clone(),
        rng_seed: ctx.cfg.rng_seed,
        inputs: digest_paths(&ctx.layout, &touched.inputs)?,
        outputs: digest_paths(&ctx.layout, &touched.outputs)?,
        started_at,
        finished_at: Utc::now(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    write_record(&ctx.layout, &record)
}

/// `run_stage`, skipped when the last record is still current.
fn resume_stage(ctx: &Ctx, stage: &str, f: impl FnOnce(&Ctx) -> Result<Touched>) -> Result<()> {
    if is_current(&ctx.layout, stage, &ctx.digest) {
        eprintln!("{stage}: up to date");
        return Ok(());
    }
    eprintln!("{stage}: running");
    run_stage(ctx, stage, f)
}

fn run_all(ctx: &Ctx, auto: bool) -> Result<()> {
    resume_stage(ctx, "ingest", stages::ingest)?;
    resume_stage(ctx, "sample-seeds", stages::sample_seeds_stage)?;
    resume_stage(ctx, "generate", stages::generate)?;
    if auto {
        resume_stage(ctx, "curate", stages::auto_curate)?;
    } else {
        let pending = stages::pending_selections(ctx)?;
        if !pending.is_empty() {
            eprintln!(
                "halted at curation: {} selection(s) not finalized; review with `skinaug curate-serve` and re-run `all`",
                pending.len()
            );
            for (c, g) in pending {
                eprintln!("  pending: {c} / {}", g.key());
            }
            return Ok(());
        }
    }
    resume_stage(ctx, "compose", stages::compose)?;
    resume_stage(ctx, "train", stages::train)?;
    resume_stage(ctx, "evaluate", |c| stages::evaluate(c, Experiment::Modes))?;
    resume_stage(ctx, "dose", |c| stages::evaluate(c, Experiment::Dose))?;
    resume_stage(ctx, "spillover", |c| stages::evaluate(c, Experiment::Spillover))?;
    resume_stage(ctx, "report", stages::report)
}

fn fixture(which: &FixtureKind) -> Result<()> {
    match which {
        FixtureKind::Table1 { out } => {
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            let m = table1_manifest();
            m.save(out)?;
            println!("wrote {} records to {}", m.len(), out.display());
        }
        FixtureKind::Smoke { out } => {
            let manifest = write_smoke_fixture(out)?;
            std::fs::write(out.join("config.toml"), SMOKE_CONFIG)?;
            println!("wrote {} and {}", manifest.display(), out.join("config.toml").display());
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Fixture { which } = &cli.command {
        return fixture(which);
    }
    let ctx = Ctx::new(load_config(&cli)?);
    let _lock = RunLock::acquire(&ctx.layout.root)?;
    match cli.command {
        Command::Ingest => run_stage(&ctx, "ingest", stages::ingest),
        Command::SampleSeeds => run_stage(&ctx, "sample-seeds", stages::sample_seeds_stage),
        Command::Generate => run_stage(&ctx, "generate", stages::generate),
        Command::CurateServe {
            auto_curate: true, ..
        } => run_stage(&ctx, "curate", stages::auto_curate),
        Command::CurateServe { addr, ui_dir, .. } => stages::serve(&ctx, addr, ui_dir),
        Command::Compose => run_stage(&ctx, "compose", stages::compose),
        Command::Train => run_stage(&ctx, "train", stages::train),
        Command::Evaluate => run_stage(&ctx, "evaluate", |c| stages::evaluate(c, Experiment::Modes)),
        Command::Dose => run_stage(&ctx, "dose", |c| stages::evaluate(c, Experiment::Dose)),
        Command::Spillover => run_stage(&ctx, "spillover", |c| stages::evaluate(c, Experiment::Spillover)),
        Command::Report => run_stage(&ctx, "report", stages::report),
        Command::All { auto_curate } => run_all(&ctx, auto_curate),
        Command::Fixture { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
