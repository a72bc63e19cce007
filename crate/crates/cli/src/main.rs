use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use stylediff::dataset::load_manifest;
use stylediff::gateway::GatewayError;
use stylediff::harness::HarnessError;
use stylediff::report::{self, RunMetadata, DEFAULT_PROMPT_TOP};
use stylediff::{Pipeline, RunConfig};

const EXIT_VALIDATION: u8 = 1;
const EXIT_BACKEND: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(
    name = "stylediff",
    version,
    about = "Propose and rank stylistic differences between image groups"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a dataset manifest.
    Validate { manifest: PathBuf },
    /// Run every configured pair and write a report bundle.
    Run {
        config: PathBuf,
        /// Overrides `master_seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory name; defaults to a digest of config and time.
        #[arg(long)]
        run_id: Option<String>,
        /// Descriptions per group in prompts.txt.
        #[arg(long, default_value_t = DEFAULT_PROMPT_TOP)]
        prompt_top: usize,
    },
    /// Run a single pair and print its evaluations as TSV.
    Pair {
        config: PathBuf,
        #[arg(long)]
        a: String,
        #[arg(long)]
        b: String,
        /// Permit a == b even when the pair mode excludes self pairs.
        #[arg(long)]
        allow_self: bool,
        #[arg(long)]
        seed: Option<u64>,
        /// Candidate count; defaults to `k_candidates`.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Re-emit the data files of a stored run from its report.json.
    Report {
        run_dir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PROMPT_TOP)]
        prompt_top: usize,
    },
    /// Print text-to-image prompts from a stored run.
    Prompts {
        run_dir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PROMPT_TOP)]
        top: usize,
    },
}

/// An error with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let error = e.into();
        let code = match error.downcast_ref::<HarnessError>() {
            Some(HarnessError::Gateway(GatewayError::Config(_))) => EXIT_VALIDATION,
            Some(HarnessError::Gateway(_))
            | Some(HarnessError::Extract(_))
            | Some(HarnessError::Stats(_))
            | Some(HarnessError::AllPairsFailed(_)) => EXIT_BACKEND,
            _ => EXIT_VALIDATION,
        };
        Failure { code, error }
    }
}

fn fail(code: u8, error: anyhow::Error) -> Failure {
    Failure { code, error }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Validate { manifest } => validate(&manifest),
        Command::Run {
            config,
            seed,
            run_id,
            prompt_top,
        } => run(&config, seed, run_id, prompt_top),
        Command::Pair {
            config,
            a,
            b,
            allow_self,
            seed,
            k,
        } => pair(&config, &a, &b, allow_self, seed, k),
        Command::Report { run_dir, prompt_top } => reemit(&run_dir, prompt_top),
        Command::Prompts { run_dir, top } => prompts(&run_dir, top),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn validate(path: &Path) -> Result<ExitCode, Failure> {
    let manifest = load_manifest(path).with_context(|| format!("invalid manifest {}", path.display()))?;
    println!(
        "ok\t{} records\t{} groups",
        manifest.len(),
        manifest.group_names().len()
    );
    for (group, records) in manifest.groups() {
        println!("{group}\t{}", records.len());
    }
    Ok(ExitCode::SUCCESS)
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig, Failure> {
    let mut config = RunConfig::load(path)?;
    if let Some(seed) = seed {
        config.master_seed = seed;
    }
    Ok(config)
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn run(config_path: &Path, seed: Option<u64>, run_id: Option<String>, prompt_top: usize) -> Result<ExitCode, Failure> {
    let config = load_config(config_path, seed)?;
    let pipeline = Pipeline::from_config(config)?;
    let report = pipeline.run_all()?;

    let created_at = now();
    let run_id = run_id.unwrap_or_else(|| report::make_run_id(&pipeline.config().to_toml_string(), created_at));
    if run_id.is_empty() || run_id.contains(['/', '\\']) || run_id.starts_with('.') {
        return Err(fail(EXIT_USAGE, anyhow::anyhow!("invalid run id {run_id:?}")));
    }
    let dir = pipeline.config().runs_dir().join(&run_id);
    let gateway = pipeline.gateway();
    let meta = RunMetadata {
        run_id,
        created_at,
        backend_id: gateway.backend_id().to_string(),
        backend_calls: gateway.backend_calls(),
        cache_hits: gateway.cache_hits(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let bundle = report::write_bundle(&report, &dir, &meta, prompt_top)?;

    println!("run\t{}", bundle.run_id);
    println!("dir\t{}", dir.display());
    println!("pairs\t{}\tfailed\t{}", report.pairs.len(), report.failed_pairs.len());
    println!(
        "evaluations\t{}\tretained\t{}",
        report.total_evaluations,
        report.retained_total()
    );
    if let Some(rate) = report.significance_rate {
        println!("significance_rate\t{}", report::format_real(rate));
    }
    println!("backend_calls\t{}\tcache_hits\t{}", meta.backend_calls, meta.cache_hits);
    if report.has_backend_failures() {
        eprintln!("error: some pairs or descriptions failed; see pairs.tsv and report.json");
        return Ok(ExitCode::from(EXIT_BACKEND));
    }
    Ok(ExitCode::SUCCESS)
}

fn pair(
    config_path: &Path,
    a: &str,
    b: &str,
    allow_self: bool,
    seed: Option<u64>,
    k: Option<usize>,
) -> Result<ExitCode, Failure> {
    let config = load_config(config_path, seed)?;
    if a == b && !allow_self && !config.pair_mode.allows_self() {
        return Err(fail(
            EXIT_USAGE,
            anyhow::anyhow!("self pair {a} vs {a} needs --allow-self under the configured pair mode"),
        ));
    }
    if k == Some(0) {
        return Err(fail(EXIT_USAGE, anyhow::anyhow!("--k must be at least 1")));
    }
    let k = k.unwrap_or(config.k_candidates);
    let pipeline = Pipeline::from_config(config)?;
    let comparison = pipeline.run_pair(a, b, k)?;
    print!("{}", report::evaluations_table_for(std::slice::from_ref(&comparison)));
    for f in &comparison.failures {
        eprintln!("failed\t{}\t{}", f.description, f.error);
    }
    if comparison.failures.iter().any(|f| f.over_budget) {
        return Ok(ExitCode::from(EXIT_BACKEND));
    }
    Ok(ExitCode::SUCCESS)
}

fn reemit(run_dir: &Path, prompt_top: usize) -> Result<ExitCode, Failure> {
    let report = report::load_report(run_dir)?;
    let meta = report::load_run_metadata(run_dir)?;
    let bundle = report::write_bundle(&report, run_dir, &meta, prompt_top)?;
    println!("{}\t{} files", run_dir.display(), bundle.files.len());
    Ok(ExitCode::SUCCESS)
}

fn prompts(run_dir: &Path, top: usize) -> Result<ExitCode, Failure> {
    let report = report::load_report(run_dir)?;
    print!("{}", report::export_t2i_prompts(&report, top));
    Ok(ExitCode::SUCCESS)
}
