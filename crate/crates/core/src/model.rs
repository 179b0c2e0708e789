//! Domain types and single-interval system equations.
//!
//! All energies are kWh per interval. With hourly resolution a power rating in
//! kW and an energy per interval in kWh are numerically the same.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid quantization grid: {0}")]
    InvalidGrid(String),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("action {action} kWh outside rate limits [{min}, {max}]")]
    RateLimit { action: f64, min: f64, max: f64 },
    #[error("invalid battery: {0}")]
    InvalidBattery(String),
    #[error("invalid tariff: {0}")]
    InvalidTariff(String),
}

/// Storage device parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatterySpec {
    /// Usable capacity `E^max` in kWh.
    pub capacity_kwh: f64,
    /// Maximum energy absorbed per interval, `S^max`.
    pub charge_max_kwh: f64,
    /// Maximum energy released per interval, `-S^min`.
    pub discharge_max_kwh: f64,
    /// Charge and discharge efficiency, strictly inside (0, 1).
    pub efficiency: f64,
}

impl BatterySpec {
    pub fn new(
        capacity_kwh: f64,
        charge_max_kwh: f64,
        discharge_max_kwh: f64,
        efficiency: f64,
    ) -> Result<Self, ModelError> {
        let spec = Self {
            capacity_kwh,
            charge_max_kwh,
            discharge_max_kwh,
            efficiency,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Symmetric power rating, e.g. a 6.4 kWh / 3.3 kW unit.
    pub fn symmetric(capacity_kwh: f64, power_kw: f64, efficiency: f64) -> Result<Self, ModelError> {
        Self::new(capacity_kwh, power_kw, power_kw, efficiency)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.efficiency > 0.0 && self.efficiency < 1.0) {
            return Err(ModelError::InvalidBattery(format!(
                "efficiency {} must lie in (0, 1)",
                self.efficiency
            )));
        }
        for (name, v) in [
            ("capacity_kwh", self.capacity_kwh),
            ("charge_max_kwh", self.charge_max_kwh),
            ("discharge_max_kwh", self.discharge_max_kwh),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ModelError::InvalidBattery(format!("{name} = {v} must be >= 0")));
            }
        }
        Ok(())
    }

    /// `S^min`, the (non-positive) lower rate limit.
    pub fn s_min(&self) -> f64 {
        -self.discharge_max_kwh
    }

    pub fn s_max(&self) -> f64 {
        self.charge_max_kwh
    }
}

/// One priced window of the day, `[start_minute, end_minute)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TariffWindow {
    pub start_minute: u32,
    pub end_minute: u32,
    /// Price in Rp/kWh.
    pub price: f64,
}

/// Time-of-use tariff repeating every 24 h.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TariffSchedule {
    windows: Vec<TariffWindow>,
    /// Minutes after midnight at which interval 0 starts.
    pub start_minute: u32,
    pub interval_minutes: u32,
}

pub const PRICE_HIGH_RP: f64 = 24.6;
pub const PRICE_LOW_RP: f64 = 13.15;
const MINUTES_PER_DAY: u32 = 24 * 60;

impl TariffSchedule {
    /// Builds a schedule from windows that must tile `[0, 1440)` without gaps.
    pub fn new(mut windows: Vec<TariffWindow>, start_minute: u32, interval_minutes: u32) -> Result<Self, ModelError> {
        if interval_minutes == 0 {
            return Err(ModelError::InvalidTariff("interval length must be positive".into()));
        }
        windows.sort_by_key(|w| w.start_minute);
        let mut cursor = 0;
        for w in &windows {
            if w.start_minute != cursor || w.end_minute <= w.start_minute {
                return Err(ModelError::InvalidTariff(format!(
                    "windows must partition the day; gap or overlap at minute {cursor}"
                )));
            }
            if !(w.price.is_finite() && w.price > 0.0) {
                return Err(ModelError::InvalidTariff(format!("price {} must be > 0", w.price)));
            }
            cursor = w.end_minute;
        }
        if cursor != MINUTES_PER_DAY {
            return Err(ModelError::InvalidTariff(format!(
                "windows end at minute {cursor}, expected {MINUTES_PER_DAY}"
            )));
        }
        Ok(Self {
            windows,
            start_minute: start_minute % MINUTES_PER_DAY,
            interval_minutes,
        })
    }

    /// Two tiers: `high` from `high_start_hour` to `high_end_hour`, `low` otherwise.
    pub fn two_tier(high: f64, low: f64, high_start_hour: u32, high_end_hour: u32) -> Result<Self, ModelError> {
        if !(high_start_hour < high_end_hour && high_end_hour <= 24) {
            return Err(ModelError::InvalidTariff(format!(
                "high window {high_start_hour}..{high_end_hour} is not within one day"
            )));
        }
        let (a, b) = (high_start_hour * 60, high_end_hour * 60);
        let mut windows = Vec::new();
        if a > 0 {
            windows.push(TariffWindow { start_minute: 0, end_minute: a, price: low });
        }
        windows.push(TariffWindow { start_minute: a, end_minute: b, price: high });
        if b < MINUTES_PER_DAY {
            windows.push(TariffWindow { start_minute: b, end_minute: MINUTES_PER_DAY, price: low });
        }
        Self::new(windows, 0, 60)
    }

    pub fn flat(price: f64) -> Result<Self, ModelError> {
        Self::new(
            vec![TariffWindow { start_minute: 0, end_minute: MINUTES_PER_DAY, price }],
            0,
            60,
        )
    }

    pub fn windows(&self) -> &[TariffWindow] {
        &self.windows
    }
}

impl Default for TariffSchedule {
    fn default() -> Self {
        Self::two_tier(PRICE_HIGH_RP, PRICE_LOW_RP, 7, 20).expect("default tariff is valid")
    }
}

/// Price in Rp/kWh for interval `t`, determined by the interval's start time.
pub fn price_at(t: usize, schedule: &TariffSchedule) -> f64 {
    let offset = (t as u64 * schedule.interval_minutes as u64 + schedule.start_minute as u64)
        % MINUTES_PER_DAY as u64;
    let minute = offset as u32;
    schedule
        .windows
        .iter()
        .find(|w| w.start_minute <= minute && minute < w.end_minute)
        .map(|w| w.price)
        .expect("windows partition the day")
}

/// Evenly spaced quantization levels `(2k-1)·Δ`, `k = 1..=count`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantGrid {
    levels: Vec<f64>,
    half_width: f64,
    max_value: f64,
}

impl QuantGrid {
    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn max_value(&self) -> f64 {
        self.max_value
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Level value for 0-based index `k`.
    pub fn level(&self, k: usize) -> f64 {
        self.levels[k]
    }

    /// Lower edge of bin `k` (0-based).
    pub fn lower_edge(&self, k: usize) -> f64 {
        2.0 * self.half_width * k as f64
    }

    /// Upper edge of bin `k` (0-based).
    pub fn upper_edge(&self, k: usize) -> f64 {
        2.0 * self.half_width * (k + 1) as f64
    }
}

pub fn build_grid(max_value: f64, level_count: usize) -> Result<QuantGrid, ModelError> {
    if !(max_value.is_finite() && max_value > 0.0) {
        return Err(ModelError::InvalidGrid(format!("max value {max_value} must be > 0")));
    }
    if level_count < 2 {
        return Err(ModelError::InvalidGrid(format!("need at least 2 levels, got {level_count}")));
    }
    let half_width = max_value / (2.0 * level_count as f64);
    let levels = (1..=level_count).map(|k| (2 * k - 1) as f64 * half_width).collect();
    Ok(QuantGrid { levels, half_width, max_value })
}

/// Index (0-based) of the nearest level. Values on a bin boundary go to the
/// lower bin; values outside `[0, max]` are clamped to the outer bins.
pub fn quantize(value: f64, grid: &QuantGrid) -> Result<usize, ModelError> {
    if value.is_nan() {
        return Err(ModelError::InvalidValue("NaN cannot be quantized".into()));
    }
    Ok(quantize_clamped(value, grid))
}

pub(crate) fn quantize_clamped(value: f64, grid: &QuantGrid) -> usize {
    let n = grid.levels.len();
    // Bin k covers (lower_edge(k), upper_edge(k)]; bin 0 also holds 0.
    let guess = (value / (2.0 * grid.half_width)).floor();
    let mut k = if guess <= 0.0 { 0 } else { (guess as usize).min(n - 1) };
    while k > 0 && value <= grid.lower_edge(k) {
        k -= 1;
    }
    while k + 1 < n && value > grid.upper_edge(k) {
        k += 1;
    }
    k
}

/// True when `value` exceeds the grid maximum and would be clamped.
pub fn is_clamped(value: f64, grid: &QuantGrid) -> bool {
    value > grid.max_value
}

/// Storage dynamics: charging stores `α·s`, discharging drains `s/α`.
pub fn battery_step(soc: f64, s: f64, spec: &BatterySpec) -> Result<f64, ModelError> {
    if s.is_nan() || soc.is_nan() {
        return Err(ModelError::InvalidValue("NaN in battery step".into()));
    }
    if s < spec.s_min() || s > spec.s_max() {
        return Err(ModelError::RateLimit {
            action: s,
            min: spec.s_min(),
            max: spec.s_max(),
        });
    }
    Ok(if s >= 0.0 {
        soc + spec.efficiency * s
    } else {
        soc + s / spec.efficiency
    })
}

/// Grid-visible load `x + s - g`.
pub fn grid_load(x: f64, s: f64, g: f64) -> f64 {
    x + s - g
}

/// One realized interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Realized {
    pub x: f64,
    pub g: f64,
    pub c: f64,
    pub y: f64,
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub t: usize,
    pub soc_kwh: f64,
    pub history: Vec<Realized>,
}

impl SystemState {
    pub fn new(soc_kwh: f64, battery: &BatterySpec) -> Result<Self, ModelError> {
        if !(0.0..=battery.capacity_kwh).contains(&soc_kwh) {
            return Err(ModelError::InvalidValue(format!(
                "state of charge {soc_kwh} outside [0, {}]",
                battery.capacity_kwh
            )));
        }
        Ok(Self { t: 0, soc_kwh, history: Vec::new() })
    }
}
