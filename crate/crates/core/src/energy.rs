//! Power sampling over inference windows.
//!
//! A window samples accelerator power on a background thread at a fixed
//! interval and integrates the samples into kWh when it is stopped. CPU
//! package energy is read from the cumulative powercap counter at both ends
//! of the window when it is readable.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// mW·s (millijoules) per kWh.
pub const MJ_PER_KWH: f64 = 3.6e9;
/// µJ per kWh.
pub const UJ_PER_KWH: f64 = 3.6e12;

pub const DEFAULT_INTERVAL: Duration = Duration::from_millis(50);
pub const MIN_INTERVAL: Duration = Duration::from_millis(10);

const DEFAULT_POWERCAP_ROOT: &str = "/sys/class/powercap";

#[derive(Debug, Error)]
pub enum MeterError {
    #[error("power source unavailable: {0}")]
    Unavailable(String),
    #[error("a measurement window is already open")]
    WindowOpen,
    #[error("measurement window {0} is not open")]
    WindowClosed(WindowId),
    #[error("sample {index} at t={t}s is not after the previous sample")]
    Unordered { index: usize, t: f64 },
    #[error("sample {index} at t={t}s lies outside the window [{start}, {end}]")]
    OutOfWindow { index: usize, t: f64, start: f64, end: f64 },
    #[error("energy counter {path}: {reason}")]
    Counter { path: PathBuf, reason: String },
    #[error("power trace {path}: {reason}")]
    Trace { path: PathBuf, reason: String },
    #[error("sampling interval {0:?} is below the 10 ms minimum")]
    IntervalTooShort(Duration),
    #[error("sampler thread panicked")]
    SamplerPanicked,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSample {
    /// Seconds on the meter's monotonic clock.
    pub t: f64,
    pub gpu_power_mw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    /// kWh
    pub gpu_energy: f64,
    /// kWh, when a CPU counter was readable at both ends.
    pub cpu_energy: Option<f64>,
    /// seconds
    pub duration: f64,
    pub n_samples: usize,
}

/// Trapezoidal integral of sampled power over `[window_start, window_end]`,
/// in kWh.
///
/// The first sample's power is held back to `window_start` and the last
/// sample's power is held forward to `window_end`. Fewer than two samples
/// yield zero.
pub fn integrate(samples: &[PowerSample], window_start: f64, window_end: f64) -> Result<f64, MeterError> {
    for (index, s) in samples.iter().enumerate() {
        if s.t < window_start || s.t > window_end {
            return Err(MeterError::OutOfWindow { index, t: s.t, start: window_start, end: window_end });
        }
        if index > 0 && s.t <= samples[index - 1].t {
            return Err(MeterError::Unordered { index, t: s.t });
        }
    }
    let (first, last) = match samples {
        [first, .., last] => (first, last),
        _ => return Ok(0.0),
    };
    let body: f64 = samples
        .windows(2)
        .map(|w| 0.5 * (w[0].gpu_power_mw + w[1].gpu_power_mw) * (w[1].t - w[0].t))
        .sum();
    let head = first.gpu_power_mw * (first.t - window_start);
    let tail = last.gpu_power_mw * (window_end - last.t);
    Ok((head + body + tail) / MJ_PER_KWH)
}

/// Difference of two cumulative counter readings, allowing for one wrap at
/// `max_range`.
pub fn counter_delta(start: u64, end: u64, max_range: u64) -> u64 {
    if end >= start {
        end - start
    } else {
        (max_range - start) + end
    }
}

/// Something that reports instantaneous accelerator power.
pub trait PowerSource: Send {
    /// `elapsed` is the time since the window opened; hardware sources
    /// ignore it.
    fn read_power_mw(&mut self, elapsed: Duration) -> Result<f64, MeterError>;
    fn describe(&self) -> String;
}

/// Scripted power trace: `(offset_seconds, milliwatts)` points, linearly
/// interpolated and held flat beyond either end.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedSource {
    points: Vec<(f64, f64)>,
    label: String,
}

impl SimulatedSource {
    pub fn from_points(points: Vec<(f64, f64)>) -> Result<Self, MeterError> {
        Self::build(points, "simulated:inline".into(), PathBuf::new())
    }

    pub fn constant(mw: f64) -> Self {
        Self::from_points(vec![(0.0, mw)]).expect("single non-negative point")
    }

    /// Reads a CSV trace. A header row is optional.
    pub fn from_csv(path: &Path) -> Result<Self, MeterError> {
        let trace_err = |reason: String| MeterError::Trace { path: path.to_path_buf(), reason };
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_path(path)
            .map_err(|e| trace_err(e.to_string()))?;
        let mut points = Vec::new();
        for (i, row) in reader.records().enumerate() {
            let row = row.map_err(|e| trace_err(e.to_string()))?;
            if row.len() != 2 {
                return Err(trace_err(format!("row {} has {} fields, expected 2", i + 1, row.len())));
            }
            let parsed = (row[0].parse::<f64>(), row[1].parse::<f64>());
            match parsed {
                (Ok(t), Ok(p)) => points.push((t, p)),
                _ if i == 0 => continue,
                _ => return Err(trace_err(format!("row {} is not numeric", i + 1))),
            }
        }
        Self::build(points, format!("simulated:{}", path.display()), path.to_path_buf())
    }

    fn build(points: Vec<(f64, f64)>, label: String, path: PathBuf) -> Result<Self, MeterError> {
        let trace_err = |reason: String| MeterError::Trace { path: path.clone(), reason };
        if points.is_empty() {
            return Err(trace_err("trace has no points".into()));
        }
        for (i, &(t, p)) in points.iter().enumerate() {
            if !(t.is_finite() && p.is_finite()) || p < 0.0 {
                return Err(trace_err(format!("point {} ({t}, {p}) is invalid", i + 1)));
            }
            if i > 0 && t <= points[i - 1].0 {
                return Err(trace_err(format!("offsets must increase (point {})", i + 1)));
            }
        }
        Ok(SimulatedSource { points, label })
    }

    pub fn power_at(&self, offset: f64) -> f64 {
        let pts = &self.points;
        if offset <= pts[0].0 {
            return pts[0].1;
        }
        for w in pts.windows(2) {
            let ((t0, p0), (t1, p1)) = (w[0], w[1]);
            if offset <= t1 {
                return p0 + (p1 - p0) * (offset - t0) / (t1 - t0);
            }
        }
        pts[pts.len() - 1].1
    }

    /// Samples the trace at `start + k·interval` for every tick inside
    /// `[start, end]`.
    pub fn sample_series(&self, start: f64, end: f64, interval: f64) -> Vec<PowerSample> {
        let mut out = Vec::new();
        let mut k = 0u64;
        loop {
            let t = start + k as f64 * interval;
            if t > end {
                break;
            }
            out.push(PowerSample { t, gpu_power_mw: self.power_at(t - start) });
            k += 1;
        }
        out
    }
}

impl PowerSource for SimulatedSource {
    fn read_power_mw(&mut self, elapsed: Duration) -> Result<f64, MeterError> {
        Ok(self.power_at(elapsed.as_secs_f64()))
    }

    fn describe(&self) -> String {
        self.label.clone()
    }
}

/// Accelerator power through NVML. The library is loaded at runtime, so a
/// machine without the driver simply reports the source as unavailable.
pub struct NvmlSource {
    nvml: nvml_wrapper::Nvml,
    index: u32,
    name: String,
}

impl NvmlSource {
    pub fn open(index: u32, library: Option<&Path>) -> Result<Self, MeterError> {
        let unavailable = |e: nvml_wrapper::error::NvmlError| MeterError::Unavailable(format!("nvml: {e}"));
        let nvml = match library {
            Some(lib) => nvml_wrapper::Nvml::builder().lib_path(lib.as_os_str()).init(),
            None => nvml_wrapper::Nvml::init(),
        }
        .map_err(unavailable)?;
        let device = nvml.device_by_index(index).map_err(unavailable)?;
        let name = device.name().unwrap_or_else(|_| "unknown".into());
        device.power_usage().map_err(unavailable)?;
        Ok(NvmlSource { nvml, index, name })
    }
}

impl PowerSource for NvmlSource {
    fn read_power_mw(&mut self, _elapsed: Duration) -> Result<f64, MeterError> {
        self.nvml
            .device_by_index(self.index)
            .and_then(|d| d.power_usage())
            .map(f64::from)
            .map_err(|e| MeterError::Unavailable(format!("nvml: {e}")))
    }

    fn describe(&self) -> String {
        format!("nvml:{}:{}", self.index, self.name)
    }
}

/// Cumulative CPU package energy from the Linux powercap interface.
#[derive(Debug, Clone)]
pub struct RaplCounter {
    energy_path: PathBuf,
    max_range: u64,
}

impl RaplCounter {
    /// Probes `<root>/intel-rapl:0`, returning `None` when the counter is
    /// missing or unreadable without privileges.
    pub fn probe(root: &Path) -> Option<Self> {
        let domain = root.join("intel-rapl:0");
        let counter = RaplCounter {
            energy_path: domain.join("energy_uj"),
            max_range: read_u64(&domain.join("max_energy_range_uj")).ok()?,
        };
        counter.read_cpu_energy_counter().ok()?;
        Some(counter)
    }

    pub fn read_cpu_energy_counter(&self) -> Result<u64, MeterError> {
        read_u64(&self.energy_path)
    }

    pub fn delta(&self, start: u64, end: u64) -> u64 {
        counter_delta(start, end, self.max_range)
    }

    pub fn describe(&self) -> String {
        format!("rapl:{}", self.energy_path.display())
    }
}

fn read_u64(path: &Path) -> Result<u64, MeterError> {
    let counter_err = |reason: String| MeterError::Counter { path: path.to_path_buf(), reason };
    std::fs::read_to_string(path)
        .map_err(|e| counter_err(e.to_string()))?
        .trim()
        .parse()
        .map_err(|e: std::num::ParseIntError| counter_err(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeterBackend {
    Gpu {
        device: u32,
        /// Explicit path to the NVML shared library.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        library: Option<PathBuf>,
    },
    Simulated { trace: PathBuf },
}

impl fmt::Display for MeterBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeterBackend::Gpu { device, .. } => write!(f, "gpu:{device}"),
            MeterBackend::Simulated { trace } => write!(f, "simulated:{}", trace.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeterConfig {
    pub backend: MeterBackend,
    /// Trace used when the GPU backend is unavailable.
    #[serde(default)]
    pub fallback_trace: Option<PathBuf>,
    #[serde(with = "millis")]
    pub interval: Duration,
    #[serde(default = "default_powercap_root")]
    pub powercap_root: PathBuf,
}

fn default_powercap_root() -> PathBuf {
    PathBuf::from(DEFAULT_POWERCAP_ROOT)
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

impl MeterConfig {
    pub fn simulated(trace: impl Into<PathBuf>) -> Self {
        MeterConfig {
            backend: MeterBackend::Simulated { trace: trace.into() },
            fallback_trace: None,
            interval: DEFAULT_INTERVAL,
            powercap_root: default_powercap_root(),
        }
    }

    pub fn gpu(device: u32) -> Self {
        MeterConfig {
            backend: MeterBackend::Gpu { device, library: None },
            fallback_trace: None,
            interval: DEFAULT_INTERVAL,
            powercap_root: default_powercap_root(),
        }
    }
}

/// What the meter actually measures with, for the run manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeterDescriptor {
    pub gpu_source: String,
    pub cpu_source: Option<String>,
    /// Set when the configured backend could not be used.
    pub degraded: Option<String>,
    pub interval_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WindowId(u64);

impl fmt::Display for WindowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

struct SamplerResult {
    source: Box<dyn PowerSource>,
    read_errors: usize,
}

struct OpenWindow {
    id: WindowId,
    started: Instant,
    cpu_start: Option<u64>,
    stop_tx: mpsc::Sender<()>,
    sample_rx: mpsc::Receiver<PowerSample>,
    sampler: JoinHandle<SamplerResult>,
}

/// Windowed energy meter. At most one window is open at a time.
pub struct EnergyMeter {
    source: Option<Box<dyn PowerSource>>,
    cpu: Option<RaplCounter>,
    interval: Duration,
    epoch: Instant,
    open: Option<OpenWindow>,
    next_id: u64,
    descriptor: MeterDescriptor,
}

impl fmt::Debug for EnergyMeter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EnergyMeter").field("descriptor", &self.descriptor).finish_non_exhaustive()
    }
}

impl EnergyMeter {
    /// Builds the configured backend, degrading to the fallback trace when
    /// the accelerator cannot be read.
    pub fn new(cfg: &MeterConfig) -> Result<Self, MeterError> {
        let (source, degraded): (Box<dyn PowerSource>, Option<String>) = match &cfg.backend {
            MeterBackend::Simulated { trace } => (Box::new(SimulatedSource::from_csv(trace)?), None),
            MeterBackend::Gpu { device, library } => match NvmlSource::open(*device, library.as_deref()) {
                Ok(src) => (Box::new(src), None),
                Err(e) => match &cfg.fallback_trace {
                    Some(trace) => {
                        log::warn!("{e}; falling back to simulated trace {}", trace.display());
                        (Box::new(SimulatedSource::from_csv(trace)?), Some(e.to_string()))
                    }
                    None => return Err(e),
                },
            },
        };
        let cpu = RaplCounter::probe(&cfg.powercap_root);
        if cpu.is_none() {
            log::info!("no readable CPU energy counter under {}; measuring GPU only", cfg.powercap_root.display());
        }
        Self::with_source(source, cpu, cfg.interval, degraded)
    }

    pub fn with_source(
        source: Box<dyn PowerSource>,
        cpu: Option<RaplCounter>,
        interval: Duration,
        degraded: Option<String>,
    ) -> Result<Self, MeterError> {
        if interval < MIN_INTERVAL {
            return Err(MeterError::IntervalTooShort(interval));
        }
        let descriptor = MeterDescriptor {
            gpu_source: source.describe(),
            cpu_source: cpu.as_ref().map(RaplCounter::describe),
            degraded,
            interval_ms: interval.as_millis() as u64,
        };
        Ok(EnergyMeter {
            source: Some(source),
            cpu,
            interval,
            epoch: Instant::now(),
            open: None,
            next_id: 0,
            descriptor,
        })
    }

    pub fn descriptor(&self) -> &MeterDescriptor {
        &self.descriptor
    }

    pub fn is_open(&self) -> bool {
        self.open.is_some()
    }

    pub fn start_window(&mut self) -> Result<WindowId, MeterError> {
        if self.open.is_some() {
            return Err(MeterError::WindowOpen);
        }
        let mut source = self.source.take().ok_or(MeterError::WindowOpen)?;
        let cpu_start = self.cpu.as_ref().and_then(|c| c.read_cpu_energy_counter().ok());
        let (stop_tx, stop_rx) = mpsc::channel::<()>();
        let (sample_tx, sample_rx) = mpsc::channel();
        let interval = self.interval;
        let epoch = self.epoch;
        let started = Instant::now();
        let sampler = std::thread::spawn(move || {
            let mut read_errors = 0;
            let mut last_t = f64::NEG_INFINITY;
            let mut tick = 0u32;
            loop {
                let now = Instant::now();
                match source.read_power_mw(now.duration_since(started)) {
                    Ok(mw) => {
                        let t = now.duration_since(epoch).as_secs_f64();
                        if t > last_t && sample_tx.send(PowerSample { t, gpu_power_mw: mw.max(0.0) }).is_ok() {
                            last_t = t;
                        }
                    }
                    Err(e) => {
                        read_errors += 1;
                        log::warn!("power read failed: {e}");
                    }
                }
                tick += 1;
                let deadline = started + interval * tick;
                let wait = deadline.saturating_duration_since(Instant::now());
                match stop_rx.recv_timeout(wait) {
                    Err(RecvTimeoutError::Timeout) => continue,
                    _ => break,
                }
            }
            SamplerResult { source, read_errors }
        });
        let id = WindowId(self.next_id);
        self.next_id += 1;
        self.open = Some(OpenWindow { id, started, cpu_start, stop_tx, sample_rx, sampler });
        Ok(id)
    }

    pub fn stop_window(&mut self, id: WindowId) -> Result<Measurement, MeterError> {
        match &self.open {
            Some(w) if w.id == id => {}
            _ => return Err(MeterError::WindowClosed(id)),
        }
        let window = self.open.take().expect("checked above");
        let _ = window.stop_tx.send(());
        let result = window.sampler.join().map_err(|_| MeterError::SamplerPanicked)?;
        let ended = Instant::now();
        self.source = Some(result.source);
        if result.read_errors > 0 {
            log::warn!("window {id}: {} power reads failed", result.read_errors);
        }

        let samples: Vec<PowerSample> = window.sample_rx.try_iter().collect();
        let start = window.started.duration_since(self.epoch).as_secs_f64();
        let end = ended.duration_since(self.epoch).as_secs_f64();
        let gpu_energy = integrate(&samples, start, end)?;
        let cpu_energy = match (&self.cpu, window.cpu_start) {
            (Some(cpu), Some(s)) => cpu
                .read_cpu_energy_counter()
                .ok()
                .map(|e| cpu.delta(s, e) as f64 / UJ_PER_KWH),
            _ => None,
        };
        Ok(Measurement {
            gpu_energy,
            cpu_energy,
            duration: ended.duration_since(window.started).as_secs_f64(),
            n_samples: samples.len(),
        })
    }
}

impl Drop for EnergyMeter {
    fn drop(&mut self) {
        if let Some(w) = self.open.take() {
            let _ = w.stop_tx.send(());
            let _ = w.sampler.join();
        }
    }
}
