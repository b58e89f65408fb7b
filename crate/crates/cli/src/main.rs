//! `cogforge`: curate reasoning traces, build preference pairs, evaluate the
//! gap-aware loss, and run the built-in checks.
//!
//! Exit codes: 0 clean, 1 fatal error, 2 finished but some records were
//! discarded. Each subcommand prints a one-line JSON summary as its last line
//! of standard output.

mod config;

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use cogforge_core::gateway::{Gateway, HttpBackend, ScriptedBackend};
use cogforge_core::io::{read_jsonl, write_jsonl};
use cogforge_core::loss::{evaluate_joined, LogProbRecord};
use cogforge_core::pairs::{build_pairs, GapCounts};
use cogforge_core::pipeline::{Pipeline, PipelineError, RunControl};
use cogforge_core::prompts::TemplateSet;
use cogforge_core::selftest::{self, SelftestOptions};
use cogforge_core::{CoTRecord, PreferencePair, RecordFamily};

use config::{parse_schedule, AppConfig};

#[derive(Parser)]
#[command(
    name = "cogforge",
    version,
    about = "Reasoning-trace curation and gap-aware preference losses"
)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rate, rewrite and verify a dataset of reasoning traces.
    Curate(CurateArgs),
    /// Build gap-labelled preference pairs from record families.
    Pairs(PairsArgs),
    /// Evaluate the gap-aware loss over dumped log-probabilities.
    LossEval(LossEvalArgs),
    /// Gradient, reduction, stability and prompt checks.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct CurateArgs {
    /// Input records (JSONL).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Curated records (JSONL).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Discard log (JSONL).
    #[arg(long)]
    discards: Option<PathBuf>,
    /// Record families for pair building (JSONL).
    #[arg(long)]
    families: Option<PathBuf>,
    /// Per-record event traces (JSONL).
    #[arg(long)]
    traces: Option<PathBuf>,
    /// Resume from and write progress to this file.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Replay agent responses from a script instead of calling endpoints.
    #[arg(long)]
    mock_script: Option<PathBuf>,
    /// Prompt template directory (defaults to the built-in set).
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long)]
    retry_cap: Option<u32>,
    #[arg(long)]
    max_concurrency: Option<usize>,
    /// Stop after this many new records (needs --checkpoint to be useful).
    #[arg(long, hide = true)]
    halt_after: Option<usize>,
}

#[derive(Args)]
struct PairsArgs {
    #[arg(long)]
    families: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// β triple `small,medium,large`.
    #[arg(long)]
    schedule: Option<String>,
}

#[derive(Args)]
struct LossEvalArgs {
    #[arg(long)]
    pairs: Option<PathBuf>,
    #[arg(long)]
    logprobs: Option<PathBuf>,
    /// β triple `small,medium,large`.
    #[arg(long)]
    schedule: Option<String>,
    /// Full report (JSON) with the per-pair table.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SelftestArgs {
    /// Check templates in this directory instead of the built-in set.
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Corrupt one analytic gradient coordinate; the gradient row must fail.
    #[arg(long)]
    inject_gradient_fault: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn required(flag: Option<PathBuf>, file: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| file.clone())
        .ok_or_else(|| anyhow!("missing --{name} (or paths.{name} in the config file)"))
}

fn load_templates(dir: Option<&Path>) -> Result<TemplateSet> {
    match dir {
        Some(d) => TemplateSet::load_dir(d).with_context(|| format!("loading templates from {}", d.display())),
        None => Ok(TemplateSet::builtin()),
    }
}

fn curate(config: AppConfig, args: CurateArgs) -> Result<ExitCode> {
    let paths = &config.paths;
    let input = required(args.input, &paths.input, "input")?;
    let output = required(args.output, &paths.output, "output")?;
    let discards = required(args.discards, &paths.discards, "discards")?;
    let families = args.families.or_else(|| paths.families.clone());
    let traces = args.traces.or_else(|| paths.traces.clone());
    let templates = load_templates(args.templates.as_deref().or(paths.templates.as_deref()))?;

    let mut pipeline_config = config.pipeline.clone();
    pipeline_config.checkpoint = args.checkpoint.or_else(|| paths.checkpoint.clone());
    if let Some(cap) = args.retry_cap {
        pipeline_config.retry_cap = cap;
    }
    if let Some(n) = args.max_concurrency {
        pipeline_config.max_concurrency = n;
    }

    let records: Vec<CoTRecord> = read_jsonl(&input)?;

    let gateway = match &args.mock_script {
        Some(script) => {
            let file = File::open(script).with_context(|| format!("opening script {}", script.display()))?;
            Gateway::new(ScriptedBackend::from_jsonl(BufReader::new(file))?)
        }
        None => {
            if config.endpoints.is_empty() {
                bail!("no endpoints configured; add [endpoints.base] / [endpoints.large] or pass --mock-script");
            }
            let backend = HttpBackend::new(config.endpoints.clone(), config.request_timeout())
                .with_api_key(config.api_key.clone());
            Gateway::new(backend).with_retry(config.retry)
        }
    }
    .with_max_concurrency(pipeline_config.max_concurrency);

    let pipeline = Pipeline::new(&gateway, &templates, pipeline_config)?;
    let control = RunControl {
        halt_after: args.halt_after,
    };
    let out = match pipeline.run_with(&records, control) {
        Ok(out) => out,
        Err(PipelineError::Interrupted { completed, total }) => {
            bail!("interrupted after {completed} of {total} records; rerun with the same --checkpoint to resume")
        }
        Err(e) => return Err(e.into()),
    };

    write_jsonl(&output, &out.curated.records)?;
    write_jsonl(&discards, &out.discards)?;
    if let Some(path) = families {
        write_jsonl(&path, &out.families)?;
    }
    if let Some(path) = traces {
        write_jsonl(&path, &out.traces)?;
    }
    for d in &out.discards {
        log::info!("discarded {}: {} ({} attempts)", d.id, d.reason, d.attempts);
    }
    println!(
        "curated {} of {} records, {} discarded",
        out.curated.len(),
        records.len(),
        out.discards.len()
    );
    println!("{}", serde_json::to_string(&out.stats)?);
    Ok(if out.discards.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn pairs(config: AppConfig, args: PairsArgs) -> Result<ExitCode> {
    let families_path = required(args.families, &config.paths.families, "families")?;
    let output = required(args.output, &config.paths.pairs, "output")?;
    let schedule = match &args.schedule {
        Some(s) => parse_schedule(s, &config.schedule)?,
        None => config.schedule,
    };
    let families: Vec<RecordFamily> = read_jsonl(&families_path)?;

    let mut all: Vec<PreferencePair> = Vec::new();
    let mut skipped = 0;
    for family in &families {
        match build_pairs(family, &schedule) {
            Ok(p) => all.extend(p),
            Err(e) => {
                log::warn!("{e}; skipped");
                skipped += 1;
            }
        }
    }
    write_jsonl(&output, &all)?;
    let counts = GapCounts::of(&all);
    println!(
        "{} pairs from {} families (small {}, medium {}, large {})",
        all.len(),
        families.len(),
        counts.small,
        counts.medium,
        counts.large
    );
    println!(
        "{}",
        json!({"pairs": all.len(), "families": families.len(), "skipped": skipped, "counts": counts})
    );
    Ok(ExitCode::SUCCESS)
}

fn loss_eval(config: AppConfig, args: LossEvalArgs) -> Result<ExitCode> {
    let pairs_path = required(args.pairs, &config.paths.pairs, "pairs")?;
    let logprobs_path = required(args.logprobs, &config.paths.logprobs, "logprobs")?;
    let schedule = match &args.schedule {
        Some(s) => parse_schedule(s, &config.schedule)?,
        None => config.schedule,
    };
    let pairs: Vec<PreferencePair> = read_jsonl(&pairs_path)?;
    let logprobs: Vec<LogProbRecord> = read_jsonl(&logprobs_path)?;
    let eval = evaluate_joined(&pairs, &logprobs, &schedule).map_err(|e| {
        if e.is_join_error() {
            anyhow!("join error: {e}")
        } else {
            anyhow!(e)
        }
    })?;

    if let Some(path) = &args.output {
        let text = serde_json::to_string_pretty(&eval)?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    println!(
        "{:<24} {:>6} {:>6} {:>12} {:>12}",
        "id", "gap", "beta", "margin", "loss"
    );
    for row in &eval.rows {
        println!(
            "{:<24} {:>6} {:>6} {:>12.6} {:>12.6}",
            row.id,
            row.gap.to_string(),
            row.beta,
            row.margin,
            row.loss
        );
    }
    for (gap, m) in &eval.mean_margin_by_gap {
        println!("mean margin {gap}: {m:.6}");
    }
    println!("loss: {:.12}", eval.loss);
    println!(
        "{}",
        json!({"loss": eval.loss, "pairs": eval.pairs, "mean_margin_by_gap": eval.mean_margin_by_gap})
    );
    Ok(ExitCode::SUCCESS)
}

fn run_selftest(config: AppConfig, args: SelftestArgs) -> Result<ExitCode> {
    let rows = selftest::run(&SelftestOptions {
        templates_dir: args.templates.or(config.paths.templates),
        inject_gradient_fault: args.inject_gradient_fault,
        seed: args.seed,
    });
    for row in &rows {
        let status = if row.passed { "PASS" } else { "FAIL" };
        println!("{status:<5} {:<26} {}", row.name, row.detail);
    }
    let passed = rows.iter().all(|r| r.passed);
    println!("{}", json!({"passed": passed, "rows": rows}));
    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = AppConfig::load(cli.config.as_deref()).and_then(|config| match cli.command {
        Command::Curate(args) => curate(config, args),
        Command::Pairs(args) => pairs(config, args),
        Command::LossEval(args) => loss_eval(config, args),
        Command::Selftest(args) => run_selftest(config, args),
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
