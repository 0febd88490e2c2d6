//! Summary tables, baseline deltas and grouped bar charts for a run
//! directory. Everything here is read-only over the run and writes into
//! `<run>/report/`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::metrics::{aggregate, delta_vs_baseline, DeltaError, DeltaRow, SummaryCell};
use crate::prompt::{ConfigId, PetKind};
use crate::runner::{load_records, RunError};

pub const REPORT_DIR: &str = "report";
const NA: &str = "NA";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no run records found in {0}")]
    Empty(PathBuf),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Delta(#[from] DeltaError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown report format {0:?} (expected csv or json)")]
    UnknownFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = ReportError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(ReportError::UnknownFormat(s.into())),
        }
    }
}

pub const SUMMARY_COLUMNS: [&str; 9] = [
    "pet",
    "config",
    "n_runs",
    "n_failed",
    "n_excluded",
    "gpu_energy",
    "duration",
    "exact_matches",
    "edit_distance",
];

pub const DELTA_COLUMNS: [&str; 7] = [
    "pet",
    "config",
    "baseline",
    "gpu_energy_pct",
    "duration_pct",
    "exact_matches_pct",
    "edit_distance_pct",
];

/// Aggregates every record of the run, ordered by technique then
/// configuration.
pub fn summarize(run_dir: &Path) -> Result<Vec<SummaryCell>, ReportError> {
    let records = load_records(run_dir)?;
    if records.is_empty() {
        return Err(ReportError::Empty(run_dir.to_path_buf()));
    }
    Ok(aggregate(&records))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| NA.to_string(), |x| x.to_string())
}

fn write_report_file(run_dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, ReportError> {
    let dir = run_dir.join(REPORT_DIR);
    fs::create_dir_all(&dir).map_err(|source| ReportError::Io { path: dir.clone(), source })?;
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|source| ReportError::Io { path: path.clone(), source })?;
    Ok(path)
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for row in rows {
        w.write_record(&row).expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

pub fn summary_csv(cells: &[SummaryCell]) -> Vec<u8> {
    csv_bytes(
        &SUMMARY_COLUMNS,
        cells.iter().map(|c| {
            vec![
                c.pet.to_string(),
                c.config.to_string(),
                c.n_runs.to_string(),
                c.n_failed.to_string(),
                c.n_excluded.to_string(),
                c.mean_gpu_energy.to_string(),
                c.mean_duration.to_string(),
                c.exact_matches.to_string(),
                opt(c.mean_edit_distance),
            ]
        }),
    )
}

pub fn deltas_csv(rows: &[DeltaRow]) -> Vec<u8> {
    csv_bytes(
        &DELTA_COLUMNS,
        rows.iter().map(|r| {
            vec![
                r.pet.to_string(),
                r.config.to_string(),
                r.baseline.to_string(),
                opt(r.gpu_energy_pct),
                opt(r.duration_pct),
                opt(r.exact_matches_pct),
                opt(r.edit_distance_pct),
            ]
        }),
    )
}

/// Writes `report/summary.{csv,json}`.
pub fn emit_summary(run_dir: &Path, format: Format) -> Result<PathBuf, ReportError> {
    let cells = summarize(run_dir)?;
    match format {
        Format::Csv => write_report_file(run_dir, "summary.csv", &summary_csv(&cells)),
        Format::Json => {
            let mut bytes = serde_json::to_vec_pretty(&cells).expect("cells serialize");
            bytes.push(b'\n');
            write_report_file(run_dir, "summary.json", &bytes)
        }
    }
}

/// Writes `report/deltas_vs_<baseline>.csv`.
pub fn emit_deltas(run_dir: &Path, baseline: ConfigId) -> Result<PathBuf, ReportError> {
    let rows = delta_vs_baseline(&summarize(run_dir)?, baseline)?;
    write_report_file(run_dir, &format!("deltas_vs_{baseline}.csv"), &deltas_csv(&rows))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChartMetric {
    Energy,
    Duration,
    ExactMatch,
    EditDistance,
}

impl ChartMetric {
    pub const ALL: [ChartMetric; 4] =
        [ChartMetric::Energy, ChartMetric::Duration, ChartMetric::ExactMatch, ChartMetric::EditDistance];

    pub fn file_name(self) -> &'static str {
        match self {
            ChartMetric::Energy => "energy.svg",
            ChartMetric::Duration => "duration.svg",
            ChartMetric::ExactMatch => "exact_match.svg",
            ChartMetric::EditDistance => "edit_distance.svg",
        }
    }

    fn title(self) -> &'static str {
        match self {
            ChartMetric::Energy => "Energy consumption (kWh)",
            ChartMetric::Duration => "Execution time (s)",
            ChartMetric::ExactMatch => "Exact matches",
            ChartMetric::EditDistance => "Edit distance",
        }
    }

    /// `None` renders as an absent bar.
    pub fn value(self, c: &SummaryCell) -> Option<f64> {
        if c.n_runs == 0 {
            return None;
        }
        match self {
            ChartMetric::Energy => Some(c.mean_gpu_energy),
            ChartMetric::Duration => Some(c.mean_duration),
            ChartMetric::ExactMatch => Some(c.exact_matches as f64),
            ChartMetric::EditDistance => c.mean_edit_distance,
        }
    }
}

const PET_COLORS: [(PetKind, &str); 3] =
    [(PetKind::ZeroShot, "#4e79a7"), (PetKind::OneShot, "#f28e2b"), (PetKind::FewShot, "#59a14f")];

fn color(pet: PetKind) -> &'static str {
    PET_COLORS.iter().find(|(p, _)| *p == pet).map_or("#888888", |(_, c)| c)
}

/// Rounds `max` up to a 1/2/5 step scale; returns (step, top).
fn axis_scale(max: f64) -> (f64, f64) {
    if max <= 0.0 || !max.is_finite() {
        return (1.0, 1.0);
    }
    let raw = max / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].into_iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    (step, (max / step).ceil() * step)
}

fn tick_label(v: f64, step: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if step < 1e-3 || v >= 1e5 {
        format!("{v:.2e}")
    } else if step >= 1.0 {
        format!("{v:.0}")
    } else {
        let decimals = (-step.log10().floor()) as usize;
        format!("{v:.decimals$}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Grouped bars: one group per configuration, one bar per technique.
pub fn render_chart(cells: &[SummaryCell], metric: ChartMetric) -> String {
    const W: f64 = 720.0;
    const H: f64 = 420.0;
    const LEFT: f64 = 80.0;
    const RIGHT: f64 = 150.0;
    const TOP: f64 = 40.0;
    const BOTTOM: f64 = 70.0;

    let mut configs: Vec<ConfigId> = cells.iter().map(|c| c.config).collect();
    configs.sort();
    configs.dedup();
    let mut pets: Vec<PetKind> = cells.iter().map(|c| c.pet).collect();
    pets.sort();
    pets.dedup();

    let max = cells.iter().filter_map(|c| metric.value(c)).fold(0.0, f64::max);
    let (step, top) = axis_scale(max);
    let plot_w = W - LEFT - RIGHT;
    let plot_h = H - TOP - BOTTOM;
    let y_of = |v: f64| TOP + plot_h - v / top * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + plot_w / 2.0,
        escape(metric.title())
    );

    let mut v = 0.0;
    while v <= top + step * 1e-9 {
        let y = y_of(v);
        let _ = writeln!(
            svg,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/>"##,
            LEFT + plot_w
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            y + 4.0,
            tick_label(v, step)
        );
        v += step;
    }
    let _ = writeln!(
        svg,
        r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{:.2}" stroke="black"/>"#,
        TOP + plot_h
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{LEFT}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
        TOP + plot_h,
        LEFT + plot_w,
        TOP + plot_h
    );

    let group_w = plot_w / configs.len().max(1) as f64;
    let bar_w = group_w * 0.8 / pets.len().max(1) as f64;
    let mut absent = Vec::new();
    for (gi, config) in configs.iter().enumerate() {
        let gx = LEFT + gi as f64 * group_w;
        for (pi, pet) in pets.iter().enumerate() {
            let Some(cell) = cells.iter().find(|c| c.config == *config && c.pet == *pet) else {
                continue;
            };
            let x = gx + group_w * 0.1 + pi as f64 * bar_w;
            match metric.value(cell) {
                Some(value) => {
                    let y = y_of(value);
                    let _ = writeln!(
                        svg,
                        r#"<rect class="bar" data-pet="{pet}" data-config="{config}" data-value="{value}" x="{x:.2}" y="{y:.2}" width="{bar_w:.2}" height="{:.2}" fill="{}"/>"#,
                        TOP + plot_h - y,
                        color(*pet)
                    );
                }
                None => absent.push(format!("{} {config}", pet.label())),
            }
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{config}</text>"#,
            gx + group_w / 2.0,
            TOP + plot_h + 18.0
        );
    }

    let lx = LEFT + plot_w + 20.0;
    for (i, pet) in pets.iter().enumerate() {
        let ly = TOP + 10.0 + i as f64 * 20.0;
        let _ = writeln!(
            svg,
            r#"<rect x="{lx:.2}" y="{ly:.2}" width="12" height="12" fill="{}"/>"#,
            color(*pet)
        );
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 18.0, ly + 10.0, pet.label());
    }
    if !absent.is_empty() {
        let _ = writeln!(
            svg,
            r#"<text class="absent-note" x="{LEFT}" y="{:.2}">Omitted (no controlled answers): {}</text>"#,
            H - 20.0,
            escape(&absent.join(", "))
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes the four charts into `report/`.
pub fn emit_charts(run_dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    let cells = summarize(run_dir)?;
    ChartMetric::ALL
        .into_iter()
        .map(|m| write_report_file(run_dir, m.file_name(), render_chart(&cells, m).as_bytes()))
        .collect()
}
