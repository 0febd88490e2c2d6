use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use promptjoule::corpus::{convert_upstream, load_corpus};
use promptjoule::energy::{MeterBackend, MeterConfig, DEFAULT_INTERVAL};
use promptjoule::metrics::{Normalization, ScoringConfig, DEFAULT_EXACT_THRESHOLD, DEFAULT_LENGTH_RATIO, DEFAULT_MAX_ANSWER_LINES};
use promptjoule::prompt::{ConfigId, Pet, TagSpacing};
use promptjoule::report::{emit_charts, emit_deltas, emit_summary, Format};
use promptjoule::runner::{load_manifest, rescore, resume, run_experiment, ExperimentPlan, PlanSettings, RunState};
use promptjoule::{EndpointConfig, RunManifest, RunOptions};

const ENDPOINT_ENV: &str = "PROMPTJOULE_ENDPOINT_URL";
const API_KEY_ENV: &str = "PROMPTJOULE_API_KEY";

/// Energy and accuracy benchmark for LLM code completion across prompting
/// techniques and prompt configurations.
#[derive(Parser)]
#[command(name = "promptjoule", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a new experiment into a fresh output directory.
    Run(RunArgs),
    /// Finish an interrupted or partially failed run.
    Resume {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        api_key: Option<String>,
        #[arg(long)]
        no_warmup: bool,
    },
    /// Write summary, deltas against a baseline configuration, and charts.
    Report {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "C0")]
        baseline: ConfigId,
        /// csv or json
        #[arg(long, default_value = "csv")]
        format: Format,
    },
    /// Re-score stored raw answers with different normalization rules.
    Score(ScoreArgs),
    /// Convert an upstream `{input, gt}` JSONL file into the corpus format.
    Convert {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Corpus in JSONL, one snippet per line.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 100)]
    snippets: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Comma-separated: zero_shot, one_shot, few_shot or few_shot:N.
    #[arg(long, value_delimiter = ',', default_value = "zero_shot,one_shot,few_shot")]
    pets: Vec<Pet>,
    #[arg(long, value_delimiter = ',', default_value = "C0,C1,C2,C3,C4")]
    configs: Vec<ConfigId>,
    #[arg(long, default_value_t = 5)]
    reps: u32,
    /// Seconds of idle time between runs.
    #[arg(long, default_value_t = 1.0)]
    pause: f64,
    /// Overridden by PROMPTJOULE_ENDPOINT_URL when that is set.
    #[arg(long)]
    endpoint_url: Option<String>,
    #[arg(long)]
    model: String,
    /// Overridden by PROMPTJOULE_API_KEY when that is set.
    #[arg(long)]
    api_key: Option<String>,
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    #[arg(long, default_value_t = 128)]
    max_tokens: u32,
    #[arg(long, default_value_t = 120.0)]
    timeout: f64,
    /// gpu, gpu:<index>, or simulated:<trace.csv>
    #[arg(long, default_value = "gpu")]
    meter: String,
    /// Trace to fall back to when the GPU cannot be read.
    #[arg(long)]
    fallback_trace: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_INTERVAL.as_millis() as u64)]
    interval_ms: u64,
    /// as-listed (default) or uniform tag spacing.
    #[arg(long, default_value = "as-listed")]
    tag_spacing: String,
    #[arg(long)]
    no_warmup: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_EXACT_THRESHOLD)]
    threshold: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_ANSWER_LINES)]
    max_lines: usize,
    #[arg(long, default_value_t = DEFAULT_LENGTH_RATIO)]
    length_ratio: f64,
    #[arg(long)]
    keep_fences: bool,
    /// Score the whole answer instead of its first line.
    #[arg(long)]
    all_lines: bool,
    #[arg(long)]
    no_trim: bool,
    #[arg(long)]
    keep_whitespace: bool,
    #[arg(long)]
    keep_quotes: bool,
}

impl ScoreArgs {
    fn scoring(&self) -> ScoringConfig {
        ScoringConfig {
            normalization: Normalization {
                strip_fences: !self.keep_fences,
                first_line: !self.all_lines,
                trim: !self.no_trim,
                collapse_whitespace: !self.keep_whitespace,
                strip_quotes: !self.keep_quotes,
            },
            exact_threshold: self.threshold,
            max_answer_lines: self.max_lines,
            length_ratio: self.length_ratio,
        }
    }
}

fn parse_meter(spec: &str) -> Result<MeterBackend> {
    let (kind, arg) = spec.split_once(':').unwrap_or((spec, ""));
    match kind {
        "gpu" if arg.is_empty() => Ok(MeterBackend::Gpu { device: 0, library: None }),
        "gpu" => Ok(MeterBackend::Gpu { device: arg.parse().context("gpu index")?, library: None }),
        "simulated" if !arg.is_empty() => Ok(MeterBackend::Simulated { trace: PathBuf::from(arg) }),
        _ => bail!("--meter must be gpu, gpu:<index> or simulated:<trace>, got {spec:?}"),
    }
}

/// The environment wins over the flag.
fn env_or(var: &str, flag: Option<String>) -> Option<String> {
    match (std::env::var(var).ok().filter(|v| !v.is_empty()), flag) {
        (Some(env), Some(flag)) if env != flag => {
            log::warn!("{var} overrides the command-line value");
            Some(env)
        }
        (Some(env), _) => Some(env),
        (None, flag) => flag,
    }
}

/// First Ctrl-C stops after the run in flight; a second one exits at once.
/// Either way the directory stays resumable.
fn cancel_flag() -> Arc<AtomicBool> {
    let flag = Arc::new(AtomicBool::new(false));
    let handler = flag.clone();
    let installed = ctrlc::set_handler(move || {
        if handler.swap(true, Ordering::SeqCst) {
            std::process::exit(130);
        }
        eprintln!("stopping after the current run; press Ctrl-C again to quit now");
    });
    if let Err(e) = installed {
        log::warn!("no Ctrl-C handler: {e}");
    }
    flag
}

fn print_outcome(out: &Path, m: &RunManifest) {
    println!(
        "{}: {:?}, {} ok, {} failed of {} planned",
        out.display(),
        m.status,
        m.ok_runs,
        m.failed_runs,
        m.planned_runs
    );
    if let Some(detail) = &m.status_detail {
        println!("  {detail}");
    }
    if m.status != RunState::Complete {
        println!("  continue with: promptjoule resume --out {}", out.display());
    }
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let url = env_or(ENDPOINT_ENV, a.endpoint_url)
        .with_context(|| format!("no endpoint: pass --endpoint-url or set {ENDPOINT_ENV}"))?;
    let mut endpoint = EndpointConfig::new(&url, a.model)?;
    endpoint.temperature = a.temperature;
    endpoint.max_output_tokens = a.max_tokens;
    endpoint.request_timeout = Duration::try_from_secs_f64(a.timeout).context("--timeout")?;
    endpoint.api_key = env_or(API_KEY_ENV, a.api_key);
    endpoint.validate()?;

    let mut meter = MeterConfig::simulated("");
    meter.backend = parse_meter(&a.meter)?;
    meter.fallback_trace = a.fallback_trace;
    meter.interval = Duration::from_millis(a.interval_ms);

    let tag_spacing = match a.tag_spacing.as_str() {
        "as-listed" | "as_listed" => TagSpacing::AsListed,
        "uniform" => TagSpacing::Uniform,
        other => bail!("--tag-spacing must be as-listed or uniform, got {other:?}"),
    };
    let corpus = load_corpus(&a.dataset)?;
    let plan = ExperimentPlan::from_corpus(
        &corpus,
        PlanSettings {
            n_snippets: a.snippets,
            seed: a.seed,
            pets: a.pets,
            configs: a.configs,
            repetitions: a.reps,
            pause: a.pause,
            endpoint,
            meter,
            tag_spacing,
        },
    )?;
    log::info!("{} runs planned into {}", plan.total_runs(), a.out.display());
    let opts = RunOptions { warmup: !a.no_warmup, cancel: Some(cancel_flag()), ..RunOptions::default() };
    let manifest = run_experiment(&plan, &a.out, &opts).with_context(|| format!("run into {}", a.out.display()))?;
    print_outcome(&a.out, &manifest);
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run(a) => cmd_run(a),
        Command::Resume { out, api_key, no_warmup } => {
            let opts = RunOptions { warmup: !no_warmup, cancel: Some(cancel_flag()), ..RunOptions::default() };
            let manifest = resume(&out, env_or(API_KEY_ENV, api_key), &opts)
                .with_context(|| format!("resume {}", out.display()))?;
            print_outcome(&out, &manifest);
            Ok(())
        }
        Command::Report { out, baseline, format } => {
            let manifest = load_manifest(&out)?;
            if manifest.status != RunState::Complete {
                log::warn!("run is {:?}; the report covers completed runs only", manifest.status);
            }
            println!("{}", emit_summary(&out, format)?.display());
            match emit_deltas(&out, baseline) {
                Ok(p) => println!("{}", p.display()),
                Err(e) => log::warn!("no deltas: {e}"),
            }
            for p in emit_charts(&out)? {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Score(a) => {
            let s = rescore(&a.out, &a.scoring())?;
            println!("rescored {} answers, {} changed", s.rescored, s.changed);
            Ok(())
        }
        Command::Convert { input, output } => {
            let n = convert_upstream(&input, &output)?;
            println!("wrote {n} snippets to {}", output.display());
            Ok(())
        }
    }
}
