//! Run configuration, load-profile ingestion and generation, and CSV output.

use crate::model::{BatterySpec, ModelError, TariffSchedule};
use crate::sim::{default_y_max, MetricReport, Scheme, SimConfig, SimTrace, TraceRow};
use crate::solver::BnbSettings;
use crate::stats::epsilon_from_rho;
use chrono::{NaiveDateTime, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";
const ACCEPTED_FORMATS: [&str; 3] = [TIMESTAMP_FORMAT, "%Y-%m-%d %H:%M:%S", "%Y-%m-%d %H:%M"];
const SYNTHETIC_START: &str = "2024-01-01T00:00:00";
/// Peak consumer load of generated profiles, kWh per hour.
pub const SYNTHETIC_PEAK_KWH: f64 = 3.6;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config field `{field}`: {reason}")]
    Field { field: &'static str, reason: String },
    #[error("malformed config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot serialize config: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("row {row}: {reason}")]
    Row { row: usize, reason: String },
    #[error("header must be `timestamp,load_kwh[,gen_kwh]`, found `{0}`")]
    Header(String),
    #[error("profile is empty")]
    Empty,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("row {row}: {reason}")]
    Parse { row: usize, reason: String },
}

/// Uniformly spaced consumer load (and optional generation) series.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadProfile {
    pub start: NaiveDateTime,
    pub interval_minutes: u32,
    pub load: Vec<f64>,
    pub generation: Option<Vec<f64>>,
}

impl LoadProfile {
    /// Hourly profile starting at midnight of the synthetic epoch.
    pub fn hourly(load: Vec<f64>, generation: Option<Vec<f64>>) -> Self {
        Self {
            start: parse_timestamp(SYNTHETIC_START).expect("constant timestamp parses"),
            interval_minutes: 60,
            load,
            generation,
        }
    }

    pub fn len(&self) -> usize {
        self.load.len()
    }

    pub fn is_empty(&self) -> bool {
        self.load.is_empty()
    }

    pub fn generation_at(&self, t: usize) -> f64 {
        self.generation.as_ref().map_or(0.0, |g| g[t])
    }

    pub fn max_load(&self) -> f64 {
        self.load.iter().copied().fold(0.0, f64::max)
    }

    /// Minutes after midnight of the first interval.
    pub fn start_minute(&self) -> u32 {
        self.start.hour() * 60 + self.start.minute()
    }

    /// Sum of each consecutive block of `per_day` intervals.
    pub fn daily_totals(&self) -> Vec<f64> {
        let per_day = (24 * 60 / self.interval_minutes.max(1)) as usize;
        self.load.chunks(per_day).map(|d| d.iter().sum()).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), OutputError> {
        let mut w = csv_writer(path)?;
        if self.generation.is_some() {
            w.write_record(["timestamp", "load_kwh", "gen_kwh"])?;
        } else {
            w.write_record(["timestamp", "load_kwh"])?;
        }
        for t in 0..self.len() {
            let ts = self.start + chrono::Duration::minutes(t as i64 * self.interval_minutes as i64);
            let mut rec = vec![ts.format(TIMESTAMP_FORMAT).to_string(), self.load[t].to_string()];
            if let Some(g) = &self.generation {
                rec.push(g[t].to_string());
            }
            w.write_record(&rec)?;
        }
        flush(w, path)
    }
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    ACCEPTED_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s.trim(), f).ok())
}

/// Reads a `timestamp,load_kwh[,gen_kwh]` file. Row numbers in errors count
/// the header as row 1.
pub fn load_profile_csv(path: &Path) -> Result<LoadProfile, IngestError> {
    let file = fs::File::open(path).map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let with_gen = match header.as_slice() {
        [a, b] if a == "timestamp" && b == "load_kwh" => false,
        [a, b, c] if a == "timestamp" && b == "load_kwh" && c == "gen_kwh" => true,
        _ => return Err(IngestError::Header(header.join(","))),
    };
    let mut stamps = Vec::new();
    let mut load = Vec::new();
    let mut generation = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let row = k + 2;
        let rec = rec?;
        let bad = |reason: String| IngestError::Row { row, reason };
        let ts = parse_timestamp(&rec[0]).ok_or_else(|| bad(format!("unparseable timestamp `{}`", &rec[0])))?;
        let number = |field: &str, name: &str| -> Result<f64, IngestError> {
            let v: f64 = field
                .parse()
                .map_err(|_| IngestError::Row { row, reason: format!("{name} `{field}` is not a number") })?;
            if !v.is_finite() || v < 0.0 {
                return Err(IngestError::Row { row, reason: format!("{name} {v} must be finite and >= 0") });
            }
            Ok(v)
        };
        load.push(number(&rec[1], "load")?);
        if with_gen {
            generation.push(number(&rec[2], "generation")?);
        }
        stamps.push((row, ts));
    }
    if stamps.is_empty() {
        return Err(IngestError::Empty);
    }
    let interval = if stamps.len() > 1 {
        let step = (stamps[1].1 - stamps[0].1).num_minutes();
        if step <= 0 {
            return Err(IngestError::Row {
                row: stamps[1].0,
                reason: "timestamps must increase".into(),
            });
        }
        step
    } else {
        60
    };
    for pair in stamps.windows(2) {
        let step = (pair[1].1 - pair[0].1).num_minutes();
        if step != interval {
            let reason = if step > interval && step % interval == 0 {
                format!("gap: {} missing interval(s) before this row", step / interval - 1)
            } else {
                format!("interval of {step} min, expected {interval} min")
            };
            return Err(IngestError::Row { row: pair[1].0, reason });
        }
    }
    Ok(LoadProfile {
        start: stamps[0].1,
        interval_minutes: interval as u32,
        load,
        generation: with_gen.then_some(generation),
    })
}

/// Relative hourly consumption of the generated household.
const DIURNAL_SHAPE: [f64; 24] = [
    0.22, 0.18, 0.16, 0.15, 0.15, 0.18, 0.35, 0.60, 0.55, 0.35, 0.30, 0.38, //
    0.50, 0.38, 0.30, 0.30, 0.35, 0.55, 0.85, 0.95, 0.90, 0.70, 0.45, 0.30,
];

/// Seeded hourly household profile: a noisy diurnal base plus appliance
/// runs of one to three hours, scaled to a daily total between 8 and
/// 11.8 kWh and capped at 3.6 kWh per hour. Values are rounded to Wh.
pub fn generate_synthetic_profile(days: usize, seed: u64) -> Result<LoadProfile, ConfigError> {
    if days == 0 {
        return Err(ConfigError::Field {
            field: "days",
            reason: "must be at least 1".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut load = Vec::with_capacity(days * 24);
    for _ in 0..days {
        let mut day: Vec<f64> = DIURNAL_SHAPE.iter().map(|&b| b * rng.gen_range(0.7..1.3)).collect();
        let runs = rng.gen_range(1..=4);
        for _ in 0..runs {
            let start = rng.gen_range(6..22);
            let len = rng.gen_range(1..=3);
            let power = rng.gen_range(1.0..2.6);
            for h in start..(start + len).min(24) {
                day[h] += power;
            }
        }
        let target = rng.gen_range(8.0..11.8);
        let scale = target / day.iter().sum::<f64>();
        load.extend(
            day.iter()
                .map(|v| ((v * scale).clamp(0.05, SYNTHETIC_PEAK_KWH) * 1000.0).round() / 1000.0),
        );
    }
    Ok(LoadProfile::hourly(load, None))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum XMaxSource {
    /// Use `x_max` from the config.
    Config,
    /// Use the profile's largest load.
    Profile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Padding {
    /// Past the end of the profile the horizon repeats the last value.
    HoldLast,
}

/// Everything a run needs, as read from a TOML file and command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub horizon: usize,
    pub past_len: usize,
    pub x_bins: usize,
    pub y_bins: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    /// Smoothing of the evaluation metrics; defaults to the controller's.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_epsilon: Option<f64>,
    pub mu: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub battery_kwh: f64,
    pub battery_kw: f64,
    pub efficiency: f64,
    pub initial_soc_fraction: f64,
    pub price_high: f64,
    pub price_low: f64,
    pub high_start_hour: u32,
    pub high_end_hour: u32,
    pub x_max_source: XMaxSource,
    pub x_max: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y_max: Option<f64>,
    pub seed: u64,
    pub days: usize,
    pub padding: Padding,
    pub gap_tol: f64,
    pub node_limit: usize,
}

pub const DEFAULT_EPSILON: f64 = 0.1;

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            horizon: 12,
            past_len: 120,
            x_bins: 15,
            y_bins: 15,
            epsilon: None,
            rho: None,
            eval_epsilon: None,
            mu: 0.0,
            sigma: 0.11,
            gamma: 0.0,
            battery_kwh: 6.4,
            battery_kw: 3.3,
            efficiency: 0.96,
            initial_soc_fraction: 0.5,
            price_high: crate::model::PRICE_HIGH_RP,
            price_low: crate::model::PRICE_LOW_RP,
            high_start_hour: 7,
            high_end_hour: 20,
            x_max_source: XMaxSource::Config,
            x_max: SYNTHETIC_PEAK_KWH,
            y_max: None,
            seed: 1,
            days: 7,
            padding: Padding::HoldLast,
            gap_tol: crate::solver::DEFAULT_GAP_TOL,
            node_limit: 200_000,
        }
    }
}

fn field_err(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field,
        reason: reason.into(),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |field: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(field_err(field, format!("{v} must be > 0")))
            }
        };
        if self.epsilon.is_some() && self.rho.is_some() {
            return Err(field_err("epsilon", "set either epsilon or rho, not both"));
        }
        if let Some(e) = self.epsilon {
            positive("epsilon", e)?;
        }
        if let Some(r) = self.rho {
            positive("rho", r)?;
        }
        if let Some(e) = self.eval_epsilon {
            positive("eval_epsilon", e)?;
        }
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return Err(field_err("mu", format!("{} must be >= 0", self.mu)));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(field_err("sigma", format!("{} must be >= 0", self.sigma)));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(field_err("gamma", format!("{} must be >= 0", self.gamma)));
        }
        if self.x_bins < 2 {
            return Err(field_err("x_bins", "must be at least 2"));
        }
        if self.y_bins < 2 {
            return Err(field_err("y_bins", "must be at least 2"));
        }
        if self.past_len == 0 {
            return Err(field_err("past_len", "must be at least 1"));
        }
        positive("battery_kwh", self.battery_kwh)?;
        positive("battery_kw", self.battery_kw)?;
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(field_err("efficiency", format!("{} must be in (0, 1]", self.efficiency)));
        }
        if !(0.0..=1.0).contains(&self.initial_soc_fraction) {
            return Err(field_err(
                "initial_soc_fraction",
                format!("{} must be in [0, 1]", self.initial_soc_fraction),
            ));
        }
        positive("price_high", self.price_high)?;
        positive("price_low", self.price_low)?;
        positive("x_max", self.x_max)?;
        if let Some(y) = self.y_max {
            positive("y_max", y)?;
        }
        if self.days == 0 {
            return Err(field_err("days", "must be at least 1"));
        }
        if !(self.gap_tol.is_finite() && self.gap_tol >= 0.0) {
            return Err(field_err("gap_tol", format!("{} must be >= 0", self.gap_tol)));
        }
        if self.node_limit == 0 {
            return Err(field_err("node_limit", "must be at least 1"));
        }
        Ok(())
    }

    /// Controller smoothing: explicit, derived from the bound, or the default.
    pub fn resolved_epsilon(&self) -> Result<f64, ConfigError> {
        match (self.epsilon, self.rho) {
            (Some(_), Some(_)) => Err(field_err("epsilon", "set either epsilon or rho, not both")),
            (Some(e), None) => Ok(e),
            (None, Some(rho)) => epsilon_from_rho(self.past_len + self.horizon, self.x_bins, self.y_bins, rho)
                .map_err(|e| field_err("rho", e.to_string())),
            (None, None) => Ok(DEFAULT_EPSILON),
        }
    }

    pub fn battery(&self) -> Result<BatterySpec, ConfigError> {
        Ok(BatterySpec::symmetric(self.battery_kwh, self.battery_kw, self.efficiency)?)
    }

    /// Simulation settings for `profile`; the tariff is aligned with the
    /// profile's start time and interval length.
    pub fn to_sim_config(&self, profile: &LoadProfile) -> Result<SimConfig, ConfigError> {
        self.validate()?;
        let battery = self.battery()?;
        let mut tariff = TariffSchedule::two_tier(self.price_high, self.price_low, self.high_start_hour, self.high_end_hour)?;
        tariff = TariffSchedule::new(tariff.windows().to_vec(), profile.start_minute(), profile.interval_minutes)?;
        let x_max = match self.x_max_source {
            XMaxSource::Config => self.x_max,
            XMaxSource::Profile => {
                let peak = profile.max_load();
                if peak > 0.0 {
                    peak
                } else {
                    self.x_max
                }
            }
        };
        let y_max = self.y_max.unwrap_or_else(|| default_y_max(x_max, &battery));
        if y_max < x_max {
            return Err(field_err("y_max", format!("{y_max} is below the consumer peak {x_max}")));
        }
        let epsilon = self.resolved_epsilon()?;
        Ok(SimConfig {
            horizon: self.horizon,
            past_len: self.past_len,
            x_bins: self.x_bins,
            y_bins: self.y_bins,
            epsilon,
            eval_epsilon: self.eval_epsilon.unwrap_or(epsilon),
            mu: self.mu,
            sigma: self.sigma,
            gamma: self.gamma,
            initial_soc: self.initial_soc_fraction * battery.capacity_kwh,
            battery,
            tariff,
            x_max,
            y_max,
            solver: BnbSettings {
                gap_tol: self.gap_tol,
                node_limit: self.node_limit,
                ..Default::default()
            },
        })
    }
}

/// One point of a weight sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub scheme: String,
    pub mu: f64,
    pub cumulative_mi_bits: f64,
    pub total_cost_chf: f64,
    pub total_energy_kwh: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceRecord {
    t: usize,
    load_kwh: f64,
    gen_kwh: f64,
    price_rp: f64,
    action_kwh: f64,
    soc_kwh: f64,
    grid_kwh: f64,
    status: String,
    nodes: usize,
    pred_grid_kwh: Option<f64>,
    pred_load_kwh: Option<f64>,
    pred_gen_kwh: Option<f64>,
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, OutputError> {
    let file = fs::File::create(path).map_err(|source| OutputError::Io { path: path.to_path_buf(), source })?;
    Ok(csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::CRLF)
        .from_writer(file))
}

fn flush(mut w: csv::Writer<fs::File>, path: &Path) -> Result<(), OutputError> {
    w.flush().map_err(|source| OutputError::Io { path: path.to_path_buf(), source })
}

pub const TRACE_COLUMNS: [&str; 12] = [
    "t",
    "load_kwh",
    "gen_kwh",
    "price_rp",
    "action_kwh",
    "soc_kwh",
    "grid_kwh",
    "status",
    "nodes",
    "pred_grid_kwh",
    "pred_load_kwh",
    "pred_gen_kwh",
];

pub fn write_trace_csv(trace: &SimTrace, path: &Path) -> Result<(), OutputError> {
    let mut w = csv_writer(path)?;
    w.write_record(TRACE_COLUMNS)?;
    for r in &trace.rows {
        let (pg, pl, pr) = match r.predicted {
            Some((g, l, p)) => (Some(g), Some(l), Some(p)),
            None => (None, None, None),
        };
        w.serialize(TraceRecord {
            t: r.t,
            load_kwh: r.load,
            gen_kwh: r.generation,
            price_rp: r.price,
            action_kwh: r.action,
            soc_kwh: r.soc,
            grid_kwh: r.grid,
            status: r.status.clone(),
            nodes: r.nodes,
            pred_grid_kwh: pg,
            pred_load_kwh: pl,
            pred_gen_kwh: pr,
        })?;
    }
    flush(w, path)
}

/// Reads a trace written by [`write_trace_csv`].
pub fn read_trace_csv(path: &Path, scheme: Scheme, initial_soc: f64) -> Result<SimTrace, OutputError> {
    let file = fs::File::open(path).map_err(|source| OutputError::Io { path: path.to_path_buf(), source })?;
    let mut reader = csv::Reader::from_reader(file);
    let mut rows = Vec::new();
    for (k, rec) in reader.deserialize::<TraceRecord>().enumerate() {
        let r = rec.map_err(|e| OutputError::Parse { row: k + 2, reason: e.to_string() })?;
        let predicted = match (r.pred_grid_kwh, r.pred_load_kwh, r.pred_gen_kwh) {
            (Some(g), Some(l), Some(p)) => Some((g, l, p)),
            _ => None,
        };
        rows.push(TraceRow {
            t: r.t,
            load: r.load_kwh,
            generation: r.gen_kwh,
            price: r.price_rp,
            action: r.action_kwh,
            soc: r.soc_kwh,
            grid: r.grid_kwh,
            status: r.status,
            nodes: r.nodes,
            predicted,
        });
    }
    Ok(SimTrace {
        scheme,
        initial_soc,
        rows,
        solve_times: Vec::new(),
    })
}

pub fn write_metrics_csv(report: &MetricReport, path: &Path) -> Result<(), OutputError> {
    let mut w = csv_writer(path)?;
    w.write_record(["metric", "value"])?;
    w.write_record(["cumulative_mi_bits", &report.cumulative_mi_bits.to_string()])?;
    w.write_record(["total_cost_chf", &report.total_cost_chf.to_string()])?;
    w.write_record(["total_energy_kwh", &report.total_energy_kwh.to_string()])?;
    flush(w, path)
}

pub fn write_mi_series_csv(report: &MetricReport, path: &Path) -> Result<(), OutputError> {
    let mut w = csv_writer(path)?;
    w.write_record(["t", "mi_bits"])?;
    for (t, v) in &report.moving_mi_bits {
        w.write_record([t.to_string(), v.to_string()])?;
    }
    flush(w, path)
}

pub fn write_sweep_csv(points: &[SweepPoint], path: &Path) -> Result<(), OutputError> {
    let mut w = csv_writer(path)?;
    w.write_record(["scheme", "mu", "cumulative_mi_bits", "total_cost_chf", "total_energy_kwh"])?;
    for p in points {
        w.serialize(p)?;
    }
    flush(w, path)
}

/// Writes `<prefix>trace.csv`, `<prefix>metrics.csv` and `<prefix>mi_series.csv`.
pub fn emit_outputs(trace: &SimTrace, report: &MetricReport, out_dir: &Path, prefix: &str) -> Result<Vec<PathBuf>, OutputError> {
    fs::create_dir_all(out_dir).map_err(|source| OutputError::Io { path: out_dir.to_path_buf(), source })?;
    let paths: Vec<PathBuf> = ["trace.csv", "metrics.csv", "mi_series.csv"]
        .iter()
        .map(|name| out_dir.join(format!("{prefix}{name}")))
        .collect();
    write_trace_csv(trace, &paths[0])?;
    write_metrics_csv(report, &paths[1])?;
    write_mi_series_csv(report, &paths[2])?;
    Ok(paths)
}
