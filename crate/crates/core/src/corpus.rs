//! Code-completion corpus: loading, seeded sampling and the shot-example pool.
//!
//! The on-disk format is one JSON object per line:
//!
//! ```text
//! {"id": "...", "context": "...", "incomplete": "...", "ground_truth": "..."}
//! ```
//!
//! Sampling is driven by `ChaCha8Rng::seed_from_u64(seed)` followed by a
//! partial Fisher-Yates shuffle over snippet indices. The example pool draws
//! from stream 1 of the same seed so it never correlates with the evaluation
//! sample.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus file {path} not found")]
    Missing { path: PathBuf },
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: duplicate snippet id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("requested {requested} snippets but only {available} are available")]
    Insufficient { requested: usize, available: usize },
}

/// One evaluation unit.
///
/// The original (already truncated) input is `context` followed by
/// `incomplete`, joined by a single space; see [`Snippet::source`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snippet {
    pub id: String,
    pub context: String,
    #[serde(default)]
    pub incomplete: String,
    pub ground_truth: String,
}

impl Snippet {
    /// The truncated input as the model should see it without tags.
    pub fn source(&self) -> String {
        match (self.context.is_empty(), self.incomplete.is_empty()) {
            (_, true) => self.context.clone(),
            (true, false) => self.incomplete.clone(),
            (false, false) => format!("{} {}", self.context, self.incomplete),
        }
    }

    fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.ground_truth.trim().is_empty() {
            return Err("ground_truth is empty".into());
        }
        if self.context.is_empty() && self.incomplete.is_empty() {
            return Err("both context and incomplete are empty".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub eval_set: Vec<Snippet>,
    pub example_pool: Vec<Snippet>,
}

// Every field is required on the wire; `Snippet` itself tolerates a missing
// `incomplete` only when deserialized from our own manifests.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireSnippet {
    id: String,
    context: String,
    incomplete: String,
    ground_truth: String,
}

pub fn load_corpus(path: &Path) -> Result<Vec<Snippet>, CorpusError> {
    let file = File::open(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            CorpusError::Missing { path: path.to_path_buf() }
        } else {
            CorpusError::Io { path: path.to_path_buf(), source }
        }
    })?;
    let snippets = parse_corpus(BufReader::new(file)).map_err(|e| match e {
        CorpusError::Io { source, .. } => CorpusError::Io { path: path.to_path_buf(), source },
        other => other,
    })?;
    log::info!("loaded {} snippets from {}", snippets.len(), path.display());
    Ok(snippets)
}

/// Parses line-delimited snippet records. Blank lines are skipped; line
/// numbers in errors are 1-based.
pub fn parse_corpus<R: BufRead>(reader: R) -> Result<Vec<Snippet>, CorpusError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| CorpusError::Io { path: PathBuf::new(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let wire: WireSnippet = serde_json::from_str(&line)
            .map_err(|e| CorpusError::Malformed { line: line_no, reason: e.to_string() })?;
        let snippet = Snippet {
            id: wire.id,
            context: wire.context,
            incomplete: wire.incomplete,
            ground_truth: wire.ground_truth,
        };
        snippet
            .validate()
            .map_err(|reason| CorpusError::Malformed { line: line_no, reason })?;
        if !seen.insert(snippet.id.clone()) {
            return Err(CorpusError::DuplicateId { line: line_no, id: snippet.id });
        }
        out.push(snippet);
    }
    Ok(out)
}

pub fn write_corpus(path: &Path, snippets: &[Snippet]) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io { path: path.to_path_buf(), source };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    for s in snippets {
        let line = serde_json::to_string(s).expect("snippet serializes");
        writeln!(w, "{line}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

fn sample_indices(len: usize, n: usize, seed: u64, stream: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut idx: Vec<usize> = (0..len).collect();
    let (chosen, _) = idx.partial_shuffle(&mut rng, n);
    chosen.to_vec()
}

/// Deterministic pseudo-random subset of `n` snippets, in draw order.
pub fn sample_eval_set(corpus: &[Snippet], n: usize, seed: u64) -> Result<Vec<Snippet>, CorpusError> {
    if n > corpus.len() {
        return Err(CorpusError::Insufficient { requested: n, available: corpus.len() });
    }
    Ok(sample_indices(corpus.len(), n, seed, 0)
        .into_iter()
        .map(|i| corpus[i].clone())
        .collect())
}

pub fn split_example_pool(
    corpus: &[Snippet],
    eval_set: &[Snippet],
    k: usize,
    seed: u64,
) -> Result<CorpusSplit, CorpusError> {
    let taken: HashSet<&str> = eval_set.iter().map(|s| s.id.as_str()).collect();
    let remaining: Vec<&Snippet> = corpus.iter().filter(|s| !taken.contains(s.id.as_str())).collect();
    if k > remaining.len() {
        return Err(CorpusError::Insufficient { requested: k, available: remaining.len() });
    }
    let example_pool = sample_indices(remaining.len(), k, seed, 1)
        .into_iter()
        .map(|i| remaining[i].clone())
        .collect();
    Ok(CorpusSplit { eval_set: eval_set.to_vec(), example_pool })
}

const EOL_MARKER: &str = "<EOL>";

/// Converts one record of the upstream line-level completion benchmark
/// (`{"input": "<s> ... <EOL> ...", "gt": "..."}`) into a [`Snippet`].
///
/// Rule: `<s>`/`</s>` markers are dropped. Everything before the last
/// `<EOL>` becomes `context` (inner `<EOL>` markers are deleted in place,
/// leaving their surrounding spaces, then the whole is trimmed). The text
/// after the last `<EOL>` is the partially typed line and becomes
/// `incomplete` (trimmed). Without any `<EOL>` the whole input is context.
pub fn split_upstream_input(id: String, input: &str, ground_truth: &str) -> Snippet {
    let body = input.replace("</s>", "").replace("<s>", "");
    let (context, incomplete) = match body.rfind(EOL_MARKER) {
        Some(pos) => (&body[..pos], &body[pos + EOL_MARKER.len()..]),
        None => (body.as_str(), ""),
    };
    Snippet {
        id,
        context: context.replace(EOL_MARKER, "").trim().to_string(),
        incomplete: incomplete.trim().to_string(),
        ground_truth: ground_truth.trim().to_string(),
    }
}

#[derive(Deserialize)]
struct UpstreamRecord {
    #[serde(default)]
    id: Option<String>,
    input: String,
    gt: String,
}

/// Reads an upstream line-level file and writes the normalized corpus.
/// Returns the number of snippets written.
pub fn convert_upstream(input: &Path, output: &Path) -> Result<usize, CorpusError> {
    let file = File::open(input).map_err(|source| CorpusError::Io { path: input.to_path_buf(), source })?;
    let mut snippets = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io { path: input.to_path_buf(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: UpstreamRecord = serde_json::from_str(&line)
            .map_err(|e| CorpusError::Malformed { line: idx + 1, reason: e.to_string() })?;
        let id = rec.id.unwrap_or_else(|| format!("line-{:06}", idx + 1));
        let snippet = split_upstream_input(id, &rec.input, &rec.gt);
        match snippet.validate() {
            Ok(()) => snippets.push(snippet),
            Err(reason) => log::warn!("skipping upstream line {}: {reason}", idx + 1),
        }
    }
    write_corpus(output, &snippets)?;
    Ok(snippets.len())
}
