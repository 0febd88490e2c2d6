//! Experiment orchestration and the on-disk run directory.
//!
//! ```text
//! <out>/manifest.json              plan, plan digest, environment, status
//! <out>/records/s00000.jsonl       one file per evaluated snippet
//! <out>/raw_answers/s00000_zero_shot_C0_r0.txt
//! ```
//!
//! Runs execute strictly one after another: snippet-major, then technique,
//! then configuration, then repetition. Every record file and the manifest
//! are replaced atomically after each run, so a crash loses at most the run
//! in flight.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::client::{ClientError, EndpointConfig, LlmClient};
use crate::corpus::{sample_eval_set, split_example_pool, CorpusError, Snippet};
use crate::energy::{EnergyMeter, Measurement, MeterConfig, MeterDescriptor, MeterError};
use crate::metrics::{score_answer, ScoredAnswer, ScoringConfig};
use crate::prompt::{render_prompt, ChatPrompt, ConfigId, Pet, PromptError, TagSpacing};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORDS_DIR: &str = "records";
pub const RAW_ANSWERS_DIR: &str = "raw_answers";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Corrupt { path: PathBuf, line: usize, reason: String },
    #[error("{0} already holds a run; use resume")]
    AlreadyExists(PathBuf),
    #[error("no manifest in {0}")]
    NoManifest(PathBuf),
    #[error("run directory does not match its plan: {0}")]
    PlanMismatch(String),
    #[error("endpoint went down, run aborted after {completed} of {planned} runs: {source}")]
    EndpointDown {
        completed: usize,
        planned: usize,
        #[source]
        source: ClientError,
    },
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Meter(#[from] MeterError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub snippets: Vec<Snippet>,
    pub example_pool: Vec<Snippet>,
    pub pets: Vec<Pet>,
    pub configs: Vec<ConfigId>,
    pub repetitions: u32,
    /// Seconds between consecutive recorded runs.
    pub pause: f64,
    pub endpoint: EndpointConfig,
    pub meter: MeterConfig,
    pub seed: u64,
    #[serde(default)]
    pub tag_spacing: TagSpacing,
}

/// Knobs for drawing a plan from a corpus.
#[derive(Debug, Clone)]
pub struct PlanSettings {
    pub n_snippets: usize,
    pub seed: u64,
    pub pets: Vec<Pet>,
    pub configs: Vec<ConfigId>,
    pub repetitions: u32,
    pub pause: f64,
    pub endpoint: EndpointConfig,
    pub meter: MeterConfig,
    pub tag_spacing: TagSpacing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub snippet_index: usize,
    pub pet: Pet,
    pub config: ConfigId,
    pub repetition: u32,
}

impl ExperimentPlan {
    pub fn from_corpus(corpus: &[Snippet], s: PlanSettings) -> Result<Self, RunError> {
        let snippets = sample_eval_set(corpus, s.n_snippets, s.seed)?;
        let k = s.pets.iter().map(Pet::shot_count).max().unwrap_or(0);
        let split = split_example_pool(corpus, &snippets, k, s.seed)?;
        let plan = ExperimentPlan {
            snippets: split.eval_set,
            example_pool: split.example_pool,
            pets: s.pets,
            configs: s.configs,
            repetitions: s.repetitions,
            pause: s.pause,
            endpoint: s.endpoint,
            meter: s.meter,
            seed: s.seed,
            tag_spacing: s.tag_spacing,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: String| Err(RunError::InvalidPlan(m));
        if self.repetitions < 1 {
            return bad("repetitions must be at least 1".into());
        }
        if !(self.pause >= 0.0 && self.pause.is_finite()) {
            return bad(format!("pause {} must be a non-negative number of seconds", self.pause));
        }
        if self.snippets.is_empty() || self.pets.is_empty() || self.configs.is_empty() {
            return bad("snippets, techniques and configurations must all be non-empty".into());
        }
        let kinds: HashSet<_> = self.pets.iter().map(|p| p.kind()).collect();
        if kinds.len() != self.pets.len() {
            return bad("each technique may appear once".into());
        }
        if self.configs.iter().collect::<HashSet<_>>().len() != self.configs.len() {
            return bad("each configuration may appear once".into());
        }
        let ids: HashSet<&str> = self.snippets.iter().map(|s| s.id.as_str()).collect();
        if ids.len() != self.snippets.len() {
            return bad("snippet ids must be unique".into());
        }
        if self.example_pool.iter().any(|s| ids.contains(s.id.as_str())) {
            return bad("example pool overlaps the evaluation set".into());
        }
        let needed = self.pets.iter().map(Pet::shot_count).max().unwrap_or(0);
        if self.example_pool.len() < needed {
            return bad(format!("example pool has {} snippets, {needed} needed", self.example_pool.len()));
        }
        self.endpoint.validate()?;
        Ok(())
    }

    pub fn total_runs(&self) -> usize {
        self.snippets.len() * self.pets.len() * self.configs.len() * self.repetitions as usize
    }

    /// Every planned run in execution order.
    pub fn cells(&self) -> Vec<CellKey> {
        let mut out = Vec::with_capacity(self.total_runs());
        for snippet_index in 0..self.snippets.len() {
            for &pet in &self.pets {
                for &config in &self.configs {
                    for repetition in 0..self.repetitions {
                        out.push(CellKey { snippet_index, pet, config, repetition });
                    }
                }
            }
        }
        out
    }

    pub fn render(&self, cell: &CellKey) -> Result<ChatPrompt, PromptError> {
        render_prompt(
            &self.snippets[cell.snippet_index],
            cell.pet,
            &cell.config.config(),
            &self.example_pool,
            self.tag_spacing,
        )
    }

    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("plan serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub snippet_id: String,
    pub pet: Pet,
    pub config: ConfigId,
    pub repetition: u32,
    pub question: ChatPrompt,
    pub answer: Option<String>,
    pub measurement: Option<Measurement>,
    pub scored: Option<ScoredAnswer>,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub latency: Option<f64>,
    #[serde(default)]
    pub prompt_tokens: Option<u64>,
    #[serde(default)]
    pub completion_tokens: Option<u64>,
    pub dispatched_at: DateTime<Utc>,
    pub completed_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunState {
    Running,
    Complete,
    Interrupted,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub harness_version: String,
    pub os: String,
    pub arch: String,
    pub model: serde_json::Value,
    pub meter: MeterDescriptor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub plan: ExperimentPlan,
    pub plan_digest: String,
    pub environment: Environment,
    pub scoring: ScoringConfig,
    pub warmup: String,
    pub status: RunState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status_detail: Option<String>,
    pub planned_runs: usize,
    pub ok_runs: usize,
    pub failed_runs: usize,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
}

/// Caller-side controls for a run.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub scoring: ScoringConfig,
    /// Issue one unrecorded completion before the first recorded run.
    pub warmup: bool,
    /// Checked before each run; when set the run stops as `interrupted`.
    pub cancel: Option<Arc<AtomicBool>>,
    /// Base delay of the client's retry backoff.
    pub retry_backoff: Option<Duration>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { scoring: ScoringConfig::default(), warmup: true, cancel: None, retry_backoff: None }
    }
}

pub fn records_file(out_dir: &Path, snippet_index: usize) -> PathBuf {
    out_dir.join(RECORDS_DIR).join(format!("s{snippet_index:05}.jsonl"))
}

pub fn raw_answer_file(out_dir: &Path, cell: &CellKey) -> PathBuf {
    out_dir.join(RAW_ANSWERS_DIR).join(format!(
        "s{:05}_{}_{}_r{}.txt",
        cell.snippet_index,
        cell.pet.to_string().replace(':', "-"),
        cell.config,
        cell.repetition
    ))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn load_manifest(out_dir: &Path) -> Result<RunManifest, RunError> {
    let path = out_dir.join(MANIFEST_FILE);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(RunError::NoManifest(out_dir.to_path_buf()))
        }
        Err(e) => return Err(io_err(&path)(e)),
    };
    serde_json::from_str(&text).map_err(|e| RunError::Corrupt { path, line: e.line(), reason: e.to_string() })
}

fn save_manifest(out_dir: &Path, manifest: &RunManifest) -> Result<(), RunError> {
    let bytes = serde_json::to_vec_pretty(manifest).expect("manifest serializes");
    write_atomic(&out_dir.join(MANIFEST_FILE), &bytes)
}

/// Reads every record file in `<out_dir>/records`, in file-name order.
pub fn load_records(out_dir: &Path) -> Result<Vec<RunRecord>, RunError> {
    let dir = out_dir.join(RECORDS_DIR);
    let mut files: Vec<PathBuf> = match fs::read_dir(&dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(&dir)(e)),
    };
    files.sort();
    let mut out = Vec::new();
    for path in files {
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let rec = serde_json::from_str(line).map_err(|e| RunError::Corrupt {
                path: path.clone(),
                line: i + 1,
                reason: e.to_string(),
            })?;
            out.push(rec);
        }
    }
    Ok(out)
}

/// Records of one run directory keyed by planned cell.
struct RecordStore {
    out_dir: PathBuf,
    by_cell: BTreeMap<CellKey, RunRecord>,
    order: HashMap<CellKey, usize>,
}

impl RecordStore {
    fn open(out_dir: &Path, plan: &ExperimentPlan) -> Result<Self, RunError> {
        let cells = plan.cells();
        let order: HashMap<CellKey, usize> = cells.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        let index_of: HashMap<&str, usize> =
            plan.snippets.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
        let mut by_cell = BTreeMap::new();
        for rec in load_records(out_dir)? {
            let snippet_index = *index_of
                .get(rec.snippet_id.as_str())
                .ok_or_else(|| RunError::PlanMismatch(format!("record for unplanned snippet {:?}", rec.snippet_id)))?;
            let key = CellKey { snippet_index, pet: rec.pet, config: rec.config, repetition: rec.repetition };
            if !order.contains_key(&key) {
                return Err(RunError::PlanMismatch(format!(
                    "record {} {} {} r{} is not in the plan",
                    rec.snippet_id, rec.pet, rec.config, rec.repetition
                )));
            }
            if plan.render(&key)? != rec.question {
                return Err(RunError::PlanMismatch(format!(
                    "stored question for {} {} {} r{} differs from the plan's prompt",
                    rec.snippet_id, rec.pet, rec.config, rec.repetition
                )));
            }
            if by_cell.insert(key, rec).is_some() {
                return Err(RunError::PlanMismatch(format!("duplicate record for {key:?}")));
            }
        }
        Ok(RecordStore { out_dir: out_dir.to_path_buf(), by_cell, order })
    }

    fn is_done(&self, cell: &CellKey) -> bool {
        self.by_cell.get(cell).is_some_and(|r| r.status == RunStatus::Ok)
    }

    fn counts(&self) -> (usize, usize) {
        let ok = self.by_cell.values().filter(|r| r.status == RunStatus::Ok).count();
        (ok, self.by_cell.len() - ok)
    }

    fn put(&mut self, cell: CellKey, rec: RunRecord) -> Result<(), RunError> {
        self.by_cell.insert(cell, rec);
        self.flush_snippet(cell.snippet_index)
    }

    fn flush_snippet(&self, snippet_index: usize) -> Result<(), RunError> {
        let mut recs: Vec<(&CellKey, &RunRecord)> =
            self.by_cell.iter().filter(|(k, _)| k.snippet_index == snippet_index).collect();
        recs.sort_by_key(|(k, _)| self.order[k]);
        let mut buf = Vec::new();
        for (_, r) in recs {
            serde_json::to_writer(&mut buf, r).expect("record serializes");
            buf.push(b'\n');
        }
        write_atomic(&records_file(&self.out_dir, snippet_index), &buf)
    }
}

fn environment(model: serde_json::Value, meter: &EnergyMeter) -> Environment {
    Environment {
        harness_version: env!("CARGO_PKG_VERSION").to_string(),
        os: std::env::consts::OS.to_string(),
        arch: std::env::consts::ARCH.to_string(),
        model,
        meter: meter.descriptor().clone(),
    }
}

/// Executes every planned run into a fresh `out_dir`.
pub fn run_experiment(plan: &ExperimentPlan, out_dir: &Path, opts: &RunOptions) -> Result<RunManifest, RunError> {
    plan.validate()?;
    if out_dir.join(MANIFEST_FILE).exists() {
        return Err(RunError::AlreadyExists(out_dir.to_path_buf()));
    }
    let mut client = LlmClient::new(&plan.endpoint)?;
    if let Some(b) = opts.retry_backoff {
        client = client.with_backoff(b);
    }
    let model = client.health_check(&plan.endpoint)?;
    let mut meter = EnergyMeter::new(&plan.meter)?;
    for dir in [RECORDS_DIR, RAW_ANSWERS_DIR] {
        let p = out_dir.join(dir);
        fs::create_dir_all(&p).map_err(io_err(&p))?;
    }
    let now = Utc::now();
    let mut manifest = RunManifest {
        format_version: FORMAT_VERSION,
        plan: plan.clone(),
        plan_digest: plan.digest(),
        environment: environment(model, &meter),
        scoring: opts.scoring,
        warmup: warmup_note(opts.warmup),
        status: RunState::Running,
        status_detail: None,
        planned_runs: plan.total_runs(),
        ok_runs: 0,
        failed_runs: 0,
        created_at: now,
        updated_at: now,
    };
    save_manifest(out_dir, &manifest)?;
    let mut store = RecordStore::open(out_dir, plan)?;
    execute(&mut manifest, &mut store, &client, &mut meter, opts)?;
    Ok(manifest)
}

/// Re-executes the runs that are missing or failed under the stored plan.
/// `api_key` is not persisted and must be supplied again when needed.
pub fn resume(out_dir: &Path, api_key: Option<String>, opts: &RunOptions) -> Result<RunManifest, RunError> {
    let mut manifest = load_manifest(out_dir)?;
    if manifest.plan.digest() != manifest.plan_digest {
        return Err(RunError::PlanMismatch("plan was modified after the run started".into()));
    }
    let mut store = RecordStore::open(out_dir, &manifest.plan)?;
    let pending = manifest.plan.cells().iter().filter(|c| !store.is_done(c)).count();
    if pending == 0 {
        if manifest.status != RunState::Complete {
            manifest.status = RunState::Complete;
            manifest.status_detail = None;
            manifest.updated_at = Utc::now();
            save_manifest(out_dir, &manifest)?;
        }
        return Ok(manifest);
    }
    log::info!("resuming {}: {pending} run(s) outstanding", out_dir.display());
    manifest.plan.endpoint.api_key = api_key;
    let plan = &manifest.plan;
    let mut client = LlmClient::new(&plan.endpoint)?;
    if let Some(b) = opts.retry_backoff {
        client = client.with_backoff(b);
    }
    let model = client.health_check(&plan.endpoint)?;
    let mut meter = EnergyMeter::new(&plan.meter)?;
    if manifest.environment.model != model || manifest.environment.meter != *meter.descriptor() {
        log::warn!("endpoint or meter differs from the original run; continuing with the stored plan");
    }
    manifest.status = RunState::Running;
    manifest.status_detail = None;
    save_manifest(out_dir, &manifest)?;
    execute(&mut manifest, &mut store, &client, &mut meter, opts)?;
    Ok(manifest)
}

fn warmup_note(enabled: bool) -> String {
    if enabled {
        "one unrecorded completion precedes the first recorded run of each session".into()
    } else {
        "disabled".into()
    }
}

fn cancelled(opts: &RunOptions) -> bool {
    opts.cancel.as_ref().is_some_and(|c| c.load(Ordering::SeqCst))
}

fn execute(
    manifest: &mut RunManifest,
    store: &mut RecordStore,
    client: &LlmClient,
    meter: &mut EnergyMeter,
    opts: &RunOptions,
) -> Result<(), RunError> {
    let plan = manifest.plan.clone();
    let pending: Vec<CellKey> = plan.cells().into_iter().filter(|c| !store.is_done(c)).collect();
    let pause = Duration::from_secs_f64(plan.pause);
    let total = plan.total_runs();

    if opts.warmup {
        if let Some(first) = pending.first() {
            match client.complete(&plan.render(first)?, &plan.endpoint) {
                Ok(_) => log::debug!("warm-up completion done"),
                Err(e) => log::warn!("warm-up completion failed: {e}"),
            }
            std::thread::sleep(pause);
        }
    }

    for (i, cell) in pending.iter().enumerate() {
        if i > 0 {
            std::thread::sleep(pause);
        }
        if cancelled(opts) {
            return finish(manifest, store, RunState::Interrupted, Some("cancelled".into()));
        }
        let snippet = &plan.snippets[cell.snippet_index];
        let question = plan.render(cell)?;

        let dispatched_at = Utc::now();
        let window = meter.start_window()?;
        let outcome = client.complete(&question, &plan.endpoint);
        let measured = meter.stop_window(window);
        let completed_at = Utc::now();

        let mut rec = RunRecord {
            snippet_id: snippet.id.clone(),
            pet: cell.pet,
            config: cell.config,
            repetition: cell.repetition,
            question,
            answer: None,
            measurement: None,
            scored: None,
            status: RunStatus::Failed,
            failure: None,
            latency: None,
            prompt_tokens: None,
            completion_tokens: None,
            dispatched_at,
            completed_at,
        };
        let mut network_failure = None;
        match (outcome, measured) {
            (Ok(res), Ok(m)) => {
                let path = raw_answer_file(&store.out_dir, cell);
                write_atomic(&path, res.text.as_bytes())?;
                rec.latency = Some(res.latency);
                rec.prompt_tokens = res.prompt_tokens;
                rec.completion_tokens = res.completion_tokens;
                if res.attempts > 1 {
                    rec.failure =
                        Some(format!("measurement discarded: window spans {} attempts", res.attempts));
                } else {
                    rec.scored = Some(score_answer(&res.text, &snippet.ground_truth, &manifest.scoring));
                    rec.measurement = Some(m);
                    rec.status = RunStatus::Ok;
                }
                rec.answer = Some(res.text);
            }
            (Ok(res), Err(e)) => {
                rec.answer = Some(res.text);
                rec.failure = Some(format!("meter: {e}"));
            }
            (Err(e), _) => {
                rec.failure = Some(e.to_string());
                if e.is_network() {
                    network_failure = Some(e);
                }
            }
        }
        let status = rec.status;
        let failure = rec.failure.clone();
        store.put(*cell, rec)?;
        let (ok, failed) = store.counts();
        manifest.ok_runs = ok;
        manifest.failed_runs = failed;
        manifest.updated_at = Utc::now();
        save_manifest(&store.out_dir, manifest)?;
        match status {
            RunStatus::Ok => log::info!(
                "[{}/{total}] {} {} {} r{} ok",
                ok + failed,
                snippet.id,
                cell.pet,
                cell.config,
                cell.repetition
            ),
            RunStatus::Failed => log::warn!(
                "{} {} {} r{} failed: {}",
                snippet.id,
                cell.pet,
                cell.config,
                cell.repetition,
                failure.unwrap_or_default()
            ),
        }

        if let Some(err) = network_failure {
            if let Err(health) = client.health_check(&plan.endpoint) {
                log::error!("endpoint is down ({health}); aborting");
                finish(manifest, store, RunState::Aborted, Some(err.to_string()))?;
                return Err(RunError::EndpointDown { completed: ok, planned: total, source: err });
            }
        }
    }
    let (ok, _) = store.counts();
    let state = if ok == total { RunState::Complete } else { RunState::Interrupted };
    let detail = (state != RunState::Complete).then(|| format!("{} run(s) failed; resume to retry", total - ok));
    finish(manifest, store, state, detail)
}

fn finish(
    manifest: &mut RunManifest,
    store: &RecordStore,
    state: RunState,
    detail: Option<String>,
) -> Result<(), RunError> {
    let (ok, failed) = store.counts();
    manifest.ok_runs = ok;
    manifest.failed_runs = failed;
    manifest.status = state;
    manifest.status_detail = detail;
    manifest.updated_at = Utc::now();
    save_manifest(&store.out_dir, manifest)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RescoreSummary {
    pub rescored: usize,
    pub changed: usize,
}

/// Re-scores every successful run from its verbatim answer file with new
/// scoring settings, rewriting records and the manifest.
pub fn rescore(out_dir: &Path, scoring: &ScoringConfig) -> Result<RescoreSummary, RunError> {
    let mut manifest = load_manifest(out_dir)?;
    let mut store = RecordStore::open(out_dir, &manifest.plan)?;
    let plan = manifest.plan.clone();
    let mut summary = RescoreSummary { rescored: 0, changed: 0 };
    let mut touched = HashSet::new();
    for (cell, rec) in store.by_cell.iter_mut() {
        if rec.status != RunStatus::Ok {
            continue;
        }
        let path = raw_answer_file(out_dir, cell);
        let raw = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(_) => rec.answer.clone().unwrap_or_default(),
        };
        let scored = score_answer(&raw, &plan.snippets[cell.snippet_index].ground_truth, scoring);
        summary.rescored += 1;
        if rec.scored.as_ref() != Some(&scored) {
            summary.changed += 1;
            rec.scored = Some(scored);
            touched.insert(cell.snippet_index);
        }
    }
    for idx in touched {
        store.flush_snippet(idx)?;
    }
    manifest.scoring = *scoring;
    manifest.updated_at = Utc::now();
    save_manifest(out_dir, &manifest)?;
    Ok(summary)
}
