//! Answer normalization, edit-distance scoring and per-cell aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::{ConfigId, PetKind};
use crate::runner::{RunRecord, RunStatus};

pub const DEFAULT_EXACT_THRESHOLD: usize = 2;
pub const DEFAULT_MAX_ANSWER_LINES: usize = 5;
pub const DEFAULT_LENGTH_RATIO: f64 = 4.0;

/// Normalization steps, applied in declaration order when enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Normalization {
    pub strip_fences: bool,
    pub first_line: bool,
    pub trim: bool,
    pub collapse_whitespace: bool,
    pub strip_quotes: bool,
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization {
            strip_fences: true,
            first_line: true,
            trim: true,
            collapse_whitespace: true,
            strip_quotes: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub normalization: Normalization,
    pub exact_threshold: usize,
    pub max_answer_lines: usize,
    pub length_ratio: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            normalization: Normalization::default(),
            exact_threshold: DEFAULT_EXACT_THRESHOLD,
            max_answer_lines: DEFAULT_MAX_ANSWER_LINES,
            length_ratio: DEFAULT_LENGTH_RATIO,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoredAnswer {
    pub raw: String,
    pub normalized: String,
    pub distance: usize,
    pub exact: bool,
    pub uncontrolled: bool,
}

pub fn normalize_answer(raw: &str) -> String {
    normalize_with(raw, &Normalization::default())
}

/// Applies the enabled steps until the text stops changing, so the result is
/// stable under re-normalization (quote stripping can expose a fence line).
pub fn normalize_with(raw: &str, steps: &Normalization) -> String {
    let mut text = normalize_once(raw, steps);
    loop {
        let next = normalize_once(&text, steps);
        if next == text {
            return text;
        }
        text = next;
    }
}

fn normalize_once(raw: &str, steps: &Normalization) -> String {
    let mut text: String = if steps.strip_fences {
        raw.lines()
            .filter(|l| !l.trim_start().starts_with("```"))
            .collect::<Vec<_>>()
            .join("\n")
    } else {
        raw.to_string()
    };
    if steps.first_line {
        text = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("").to_string();
    }
    if steps.trim {
        text = text.trim().to_string();
    }
    if steps.collapse_whitespace {
        text = text.split_whitespace().collect::<Vec<_>>().join(" ");
    }
    if steps.strip_quotes {
        while let Some(inner) = strip_enclosing_quotes(&text) {
            text = if steps.trim { inner.trim().to_string() } else { inner.to_string() };
        }
    }
    text
}

fn strip_enclosing_quotes(s: &str) -> Option<&str> {
    ['"', '\'', '`'].into_iter().find_map(|q| {
        (s.len() >= 2 && s.starts_with(q) && s.ends_with(q)).then(|| &s[1..s.len() - 1])
    })
}

/// Levenshtein distance over Unicode scalar values, unit costs.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn is_exact_match(distance: usize, threshold: usize) -> bool {
    distance <= threshold
}

/// True when the answer is code plus prose rather than a completion line.
/// Both caps are strict: an answer sitting exactly on a cap is controlled.
pub fn classify_uncontrolled(
    raw: &str,
    normalized: &str,
    ground_truth: &str,
    max_answer_lines: usize,
    length_ratio: f64,
) -> bool {
    let lines = raw.lines().filter(|l| !l.trim().is_empty()).count();
    let too_long = normalized.chars().count() as f64 > length_ratio * ground_truth.trim().chars().count() as f64;
    lines > max_answer_lines || too_long
}

pub fn score_answer(raw: &str, ground_truth: &str, cfg: &ScoringConfig) -> ScoredAnswer {
    let normalized = normalize_with(raw, &cfg.normalization);
    let distance = edit_distance(&normalized, ground_truth.trim());
    let uncontrolled = classify_uncontrolled(raw, &normalized, ground_truth, cfg.max_answer_lines, cfg.length_ratio);
    ScoredAnswer {
        raw: raw.to_string(),
        normalized,
        distance,
        exact: !uncontrolled && is_exact_match(distance, cfg.exact_threshold),
        uncontrolled,
    }
}

/// Aggregated statistics for one (technique, configuration) pair.
///
/// Energy and duration average every successful run, uncontrolled ones
/// included. Accuracy figures cover controlled runs only; when none remain
/// `mean_edit_distance` is `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryCell {
    pub pet: PetKind,
    pub config: ConfigId,
    pub n_runs: usize,
    pub n_failed: usize,
    pub n_excluded: usize,
    pub mean_gpu_energy: f64,
    pub mean_duration: f64,
    pub exact_matches: usize,
    pub mean_edit_distance: Option<f64>,
}

#[derive(Default)]
struct CellAcc {
    ok: usize,
    failed: usize,
    excluded: usize,
    energy: f64,
    duration: f64,
    exact: usize,
    distance: f64,
}

pub fn aggregate(records: &[RunRecord]) -> Vec<SummaryCell> {
    let mut cells: BTreeMap<(PetKind, ConfigId), CellAcc> = BTreeMap::new();
    for r in records {
        let acc = cells.entry((r.pet.kind(), r.config)).or_default();
        match (r.status, &r.measurement, &r.scored) {
            (RunStatus::Ok, Some(m), Some(s)) => {
                acc.ok += 1;
                acc.energy += m.gpu_energy;
                acc.duration += m.duration;
                if s.uncontrolled {
                    acc.excluded += 1;
                } else {
                    acc.distance += s.distance as f64;
                    acc.exact += usize::from(s.exact);
                }
            }
            _ => acc.failed += 1,
        }
    }
    cells
        .into_iter()
        .map(|((pet, config), a)| {
            let mean = |sum: f64, n: usize| if n == 0 { 0.0 } else { sum / n as f64 };
            let controlled = a.ok - a.excluded;
            SummaryCell {
                pet,
                config,
                n_runs: a.ok,
                n_failed: a.failed,
                n_excluded: a.excluded,
                mean_gpu_energy: mean(a.energy, a.ok),
                mean_duration: mean(a.duration, a.ok),
                exact_matches: a.exact,
                mean_edit_distance: (controlled > 0).then(|| a.distance / controlled as f64),
            }
        })
        .collect()
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DeltaError {
    #[error("no {baseline} baseline cell for {pet}")]
    MissingBaseline { pet: PetKind, baseline: ConfigId },
}

/// Percentage change of each metric against the baseline cell of the same
/// technique. `None` marks an undefined delta (baseline or cell value
/// missing, or a zero baseline).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub pet: PetKind,
    pub config: ConfigId,
    pub baseline: ConfigId,
    pub gpu_energy_pct: Option<f64>,
    pub duration_pct: Option<f64>,
    pub exact_matches_pct: Option<f64>,
    pub edit_distance_pct: Option<f64>,
}

pub fn percent_delta(value: f64, baseline: f64) -> Option<f64> {
    (baseline != 0.0).then(|| (value - baseline) / baseline * 100.0)
}

pub fn delta_vs_baseline(cells: &[SummaryCell], baseline: ConfigId) -> Result<Vec<DeltaRow>, DeltaError> {
    let mut rows = Vec::new();
    for pet in PetKind::ALL {
        let of_pet: Vec<&SummaryCell> = cells.iter().filter(|c| c.pet == pet).collect();
        if of_pet.is_empty() {
            continue;
        }
        let base = of_pet
            .iter()
            .find(|c| c.config == baseline)
            .ok_or(DeltaError::MissingBaseline { pet, baseline })?;
        let mut others: Vec<&&SummaryCell> = of_pet.iter().filter(|c| c.config != baseline).collect();
        others.sort_by_key(|c| c.config);
        for c in others {
            rows.push(DeltaRow {
                pet,
                config: c.config,
                baseline,
                gpu_energy_pct: percent_delta(c.mean_gpu_energy, base.mean_gpu_energy),
                duration_pct: percent_delta(c.mean_duration, base.mean_duration),
                exact_matches_pct: percent_delta(c.exact_matches as f64, base.exact_matches as f64),
                edit_distance_pct: c
                    .mean_edit_distance
                    .zip(base.mean_edit_distance)
                    .and_then(|(v, b)| percent_delta(v, b)),
            });
        }
    }
    Ok(rows)
}
