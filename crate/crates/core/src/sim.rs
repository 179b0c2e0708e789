//! Closed-loop receding-horizon simulation, the two baselines, and the
//! evaluation metrics.

use crate::formulation::{
    build_loadlevel_problem, build_mdpc_problem_as, epigraph_squares, linearize_products, patterns_per_bin,
    FormulationError, HorizonInputs, InformationForm, RegularizerState,
};
use crate::io::LoadProfile;
use crate::model::{battery_step, build_grid, grid_load, price_at, BatterySpec, ModelError, QuantGrid, TariffSchedule};
use crate::problem::{HorizonLayout, MilProblem};
use crate::solver::{branch_and_bound, BnbSettings, MipSolution, MipStatus, SolverError};
use crate::stats::{count_window, estimate_probs, mutual_info_of_pairs, StatsError};
use std::time::Duration;
use thiserror::Error;

/// Tolerance of the physical consistency checks along a trace.
pub const PHYSICS_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Formulation(#[from] FormulationError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("no feasible plan at step {step}")]
    Infeasible { step: usize },
    #[error("physical inconsistency at step {step}: {detail}")]
    Physics { step: usize, detail: String },
    #[error("profile has {len} intervals, need at least {need}")]
    ProfileTooShort { len: usize, need: usize },
    #[error("moving window of length {window} needs t >= {}, got t = {t}", window - 1)]
    Window { window: usize, t: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Mdpc,
    LoadLevel,
    NoBattery,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Mdpc => "mdpc",
            Scheme::LoadLevel => "loadlevel",
            Scheme::NoBattery => "nobattery",
        }
    }
}

/// Controller and plant settings for one simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub horizon: usize,
    pub past_len: usize,
    pub x_bins: usize,
    pub y_bins: usize,
    pub epsilon: f64,
    /// Smoothing used by the evaluation metrics.
    pub eval_epsilon: f64,
    pub mu: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub battery: BatterySpec,
    pub tariff: TariffSchedule,
    pub x_max: f64,
    pub y_max: f64,
    pub initial_soc: f64,
    pub solver: BnbSettings,
}

/// Grid-load ceiling: consumer peak plus charging rate, rounded up to 0.5 kWh.
pub fn default_y_max(x_max: f64, battery: &BatterySpec) -> f64 {
    ((x_max + battery.s_max()) * 2.0).ceil() / 2.0
}

impl Default for SimConfig {
    fn default() -> Self {
        let battery = BatterySpec::symmetric(6.4, 3.3, 0.96).expect("default battery is valid");
        let x_max = 3.6;
        Self {
            horizon: 12,
            past_len: 120,
            x_bins: 15,
            y_bins: 15,
            epsilon: 0.1,
            eval_epsilon: 0.1,
            mu: 0.0,
            sigma: 0.11,
            gamma: 0.0,
            y_max: default_y_max(x_max, &battery),
            initial_soc: 0.5 * battery.capacity_kwh,
            battery,
            tariff: TariffSchedule::default(),
            x_max,
            solver: BnbSettings::default(),
        }
    }
}

impl SimConfig {
    pub fn x_grid(&self) -> Result<QuantGrid, ModelError> {
        build_grid(self.x_max, self.x_bins)
    }

    pub fn y_grid(&self) -> Result<QuantGrid, ModelError> {
        build_grid(self.y_max, self.y_bins)
    }
}

/// One simulated interval.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub load: f64,
    pub generation: f64,
    pub price: f64,
    pub action: f64,
    /// State of charge at the end of the interval.
    pub soc: f64,
    pub grid: f64,
    pub status: String,
    pub nodes: usize,
    /// Previous step's prediction for this interval (grid, load, generation).
    pub predicted: Option<(f64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub scheme: Scheme,
    pub initial_soc: f64,
    pub rows: Vec<TraceRow>,
    /// Per-step solver wall time; never written to output files.
    pub solve_times: Vec<Duration>,
}

impl SimTrace {
    pub fn pairs(&self) -> Vec<(f64, f64)> {
        self.rows.iter().map(|r| (r.load, r.grid)).collect()
    }

    pub fn grid_loads(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.grid).collect()
    }

    /// Total energy cost in CHF (prices are in Rp/kWh).
    pub fn total_cost_chf(&self) -> f64 {
        self.rows.iter().map(|r| r.price * r.grid).sum::<f64>() / 100.0
    }

    pub fn total_energy_kwh(&self) -> f64 {
        self.rows.iter().map(|r| r.grid).sum()
    }

    /// Checks balance, rate and range limits, and that the state-of-charge
    /// trajectory is reproduced by the recorded actions.
    pub fn check_physics(&self, battery: &BatterySpec, y_max: f64) -> Result<(), SimError> {
        let mut soc = self.initial_soc;
        for r in &self.rows {
            let fail = |detail: String| Err(SimError::Physics { step: r.t, detail });
            let balance = if self.scheme == Scheme::NoBattery {
                (r.grid - (r.load - r.generation).max(0.0)).abs()
            } else {
                (r.grid - grid_load(r.load, r.action, r.generation)).abs()
            };
            if balance > PHYSICS_TOL {
                return fail(format!("balance off by {balance:e}"));
            }
            if r.action < battery.s_min() - PHYSICS_TOL || r.action > battery.s_max() + PHYSICS_TOL {
                return fail(format!("action {} outside rate limits", r.action));
            }
            let expected = battery_step(soc, r.action.clamp(battery.s_min(), battery.s_max()), battery)?;
            if (expected - r.soc).abs() > PHYSICS_TOL {
                return fail(format!("state of charge {} does not follow from action ({expected})", r.soc));
            }
            if r.soc < -PHYSICS_TOL || r.soc > battery.capacity_kwh + PHYSICS_TOL {
                return fail(format!("state of charge {} outside capacity", r.soc));
            }
            if r.grid < -PHYSICS_TOL || r.grid > y_max + PHYSICS_TOL {
                return fail(format!("grid load {} outside [0, {y_max}]", r.grid));
            }
            soc = r.soc;
        }
        Ok(())
    }

    /// `Σx − (Σy + Σg − losses − ΔE)`; zero up to rounding for any valid trace
    /// without curtailment.
    pub fn energy_balance_residual(&self, battery: &BatterySpec) -> f64 {
        let alpha = battery.efficiency;
        let mut residual = 0.0;
        let mut losses = 0.0;
        for r in &self.rows {
            residual += r.load - r.grid - r.generation;
            losses += if r.action >= 0.0 {
                (1.0 - alpha) * r.action
            } else {
                (1.0 / alpha - 1.0) * -r.action
            };
        }
        let final_soc = self.rows.last().map_or(self.initial_soc, |r| r.soc);
        residual + losses + (final_soc - self.initial_soc)
    }
}

/// Cumulative leakage `I_c` in bits: one estimate over the whole trace.
pub fn cumulative_mi(trace: &SimTrace, x_grid: &QuantGrid, y_grid: &QuantGrid, epsilon: f64) -> Result<f64, SimError> {
    Ok(mutual_info_of_pairs(&trace.pairs(), x_grid, y_grid, epsilon)?)
}

/// Leakage over the realized pairs `t−window+1 ..= t`.
pub fn moving_mi(
    trace: &SimTrace,
    window: usize,
    t: usize,
    x_grid: &QuantGrid,
    y_grid: &QuantGrid,
    epsilon: f64,
) -> Result<f64, SimError> {
    if window == 0 || t + 1 < window || t >= trace.rows.len() {
        return Err(SimError::Window { window, t });
    }
    let pairs = &trace.pairs()[t + 1 - window..=t];
    Ok(mutual_info_of_pairs(pairs, x_grid, y_grid, epsilon)?)
}

/// `I_t` for every `t ≥ window − 1`.
pub fn moving_mi_series(
    trace: &SimTrace,
    window: usize,
    x_grid: &QuantGrid,
    y_grid: &QuantGrid,
    epsilon: f64,
) -> Result<Vec<(usize, f64)>, SimError> {
    (window.max(1) - 1..trace.rows.len())
        .map(|t| Ok((t, moving_mi(trace, window, t, x_grid, y_grid, epsilon)?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub cumulative_mi_bits: f64,
    pub moving_mi_bits: Vec<(usize, f64)>,
    pub total_cost_chf: f64,
    pub total_energy_kwh: f64,
}

/// `I_c`, `I_t` over windows of `past_len + horizon`, cost and energy.
pub fn evaluate(trace: &SimTrace, config: &SimConfig) -> Result<MetricReport, SimError> {
    let (xg, yg) = (config.x_grid()?, config.y_grid()?);
    let window = config.past_len + config.horizon;
    let moving = if trace.rows.len() >= window {
        moving_mi_series(trace, window, &xg, &yg, config.eval_epsilon)?
    } else {
        Vec::new()
    };
    Ok(MetricReport {
        cumulative_mi_bits: cumulative_mi(trace, &xg, &yg, config.eval_epsilon)?,
        moving_mi_bits: moving,
        total_cost_chf: trace.total_cost_chf(),
        total_energy_kwh: trace.total_energy_kwh(),
    })
}

/// Horizon data for `t ..= t+T`, holding the last known value past the end.
fn horizon_inputs(profile: &LoadProfile, config: &SimConfig, t: usize, soc: f64) -> HorizonInputs {
    let last = profile.len() - 1;
    let idx = |k: usize| (t + k).min(last);
    let steps = config.horizon + 1;
    HorizonInputs {
        soc,
        load: (0..steps).map(|k| profile.load[idx(k)]).collect(),
        generation: (0..steps).map(|k| profile.generation_at(idx(k))).collect(),
        prices: (0..steps).map(|k| price_at(t + k, &config.tariff)).collect(),
    }
}

/// First planned action, nudged so that rounding in the solver can never
/// push the state of charge outside its range.
fn realize_action(layout: &HorizonLayout, x: &[f64], soc: f64, battery: &BatterySpec) -> Result<(f64, f64), ModelError> {
    let mut s = layout.action(x, 0).clamp(battery.s_min(), battery.s_max());
    if s.abs() < 1e-12 {
        s = 0.0;
    }
    let mut next = battery_step(soc, s, battery)?;
    if next > battery.capacity_kwh {
        s = ((battery.capacity_kwh - soc) / battery.efficiency).clamp(0.0, battery.s_max());
        next = battery_step(soc, s, battery)?.min(battery.capacity_kwh);
    } else if next < 0.0 {
        s = (-soc * battery.efficiency).clamp(battery.s_min(), 0.0);
        next = battery_step(soc, s, battery)?.max(0.0);
    }
    Ok((s, next))
}

fn status_name(sol: &MipSolution) -> &'static str {
    match sol.status {
        MipStatus::Optimal => "optimal",
        MipStatus::GapLimit => "gap-limit",
        MipStatus::Infeasible => "infeasible",
    }
}

fn check_profile(profile: &LoadProfile, config: &SimConfig) -> Result<(), SimError> {
    let need = config.horizon + 1;
    if profile.len() < need {
        return Err(SimError::ProfileTooShort { len: profile.len(), need });
    }
    Ok(())
}

/// Shared receding-horizon loop; `build` turns one step's data into a
/// linear problem.
fn run_receding<F>(profile: &LoadProfile, config: &SimConfig, scheme: Scheme, mut build: F) -> Result<SimTrace, SimError>
where
    F: FnMut(usize, &HorizonInputs, &[(f64, f64)], Option<&RegularizerState>) -> Result<MilProblem, SimError>,
{
    check_profile(profile, config)?;
    let battery = &config.battery;
    let mut soc = config.initial_soc;
    let mut history: Vec<(f64, f64)> = Vec::with_capacity(profile.len());
    let mut rows = Vec::with_capacity(profile.len());
    let mut solve_times = Vec::with_capacity(profile.len());
    let mut reg: Option<RegularizerState> = None;
    for t in 0..profile.len() {
        let inputs = horizon_inputs(profile, config, t, soc);
        let problem = build(t, &inputs, &history, reg.as_ref())?;
        let sol = branch_and_bound(&problem, &config.solver)?;
        solve_times.push(sol.wall_time);
        if sol.status == MipStatus::Infeasible || sol.x.is_empty() {
            return Err(SimError::Infeasible { step: t });
        }
        let layout = &problem.layout;
        let (action, next) = realize_action(layout, &sol.x, soc, battery)?;
        let (x, g) = (inputs.load[0], inputs.generation[0]);
        let y = grid_load(x, action, g);
        if y < -PHYSICS_TOL || y > config.y_max + PHYSICS_TOL {
            return Err(SimError::Physics {
                step: t,
                detail: format!("realized grid load {y} outside [0, {}]", config.y_max),
            });
        }
        let predicted = reg.as_ref().and_then(|r| {
            Some((*r.grid.first()?, *r.load.first()?, *r.generation.first()?))
        });
        rows.push(TraceRow {
            t,
            load: x,
            generation: g,
            price: inputs.prices[0],
            action,
            soc: next,
            grid: y,
            status: status_name(&sol).to_string(),
            nodes: sol.nodes,
            predicted,
        });
        history.push((x, y));
        reg = Some(RegularizerState {
            grid: layout.grid[1..].iter().map(|&v| sol.x[v]).collect(),
            load: inputs.load[1..].to_vec(),
            generation: inputs.generation[1..].to_vec(),
            sigma: config.sigma,
            gamma: config.gamma,
        });
        soc = next;
    }
    Ok(SimTrace {
        scheme,
        initial_soc: config.initial_soc,
        rows,
        solve_times,
    })
}

/// Pattern weights beyond which the product form is used instead.
pub const MAX_PATTERN_WEIGHTS: usize = 16_384;

/// The pattern form has by far the tightest relaxation but can be large;
/// products with lazily enforced linking rows are the fallback.
fn information_form(consumer_bins: &[usize], y_bins: usize) -> InformationForm {
    if patterns_per_bin(consumer_bins).saturating_mul(y_bins) <= MAX_PATTERN_WEIGHTS {
        InformationForm::Patterns
    } else {
        InformationForm::Products
    }
}

/// Privacy-aware controller in closed loop with perfect load foresight.
pub fn run_simulation(profile: &LoadProfile, config: &SimConfig) -> Result<SimTrace, SimError> {
    let (xg, yg) = (config.x_grid()?, config.y_grid()?);
    run_receding(profile, config, Scheme::Mdpc, |t, inputs, history, reg| {
        let window = count_window(history, &inputs.load, &xg, &yg, config.past_len, config.horizon, t);
        let probs = estimate_probs(&window, config.epsilon)?;
        let form = information_form(&probs.horizon_bins, config.y_bins);
        let miq = build_mdpc_problem_as(inputs, &probs, &yg, &config.battery, config.mu, reg, form)?;
        Ok(linearize_products(&miq)?)
    })
}

/// Load-leveling baseline with the same plant, tariff and horizon.
pub fn run_loadlevel(profile: &LoadProfile, config: &SimConfig) -> Result<SimTrace, SimError> {
    run_receding(profile, config, Scheme::LoadLevel, |_, inputs, history, _| {
        let y_prev = history.last().map_or(0.0, |&(_, y)| y);
        let miq = build_loadlevel_problem(inputs, &config.battery, config.y_max, config.mu, y_prev)?;
        Ok(epigraph_squares(&miq)?)
    })
}

/// No storage: the grid sees `max(x − g, 0)`.
pub fn run_no_battery(profile: &LoadProfile, tariff: &TariffSchedule, initial_soc: f64) -> SimTrace {
    let rows = (0..profile.len())
        .map(|t| {
            let (x, g) = (profile.load[t], profile.generation_at(t));
            TraceRow {
                t,
                load: x,
                generation: g,
                price: price_at(t, tariff),
                action: 0.0,
                soc: initial_soc,
                grid: (x - g).max(0.0),
                status: "none".to_string(),
                nodes: 0,
                predicted: None,
            }
        })
        .collect();
    SimTrace {
        scheme: Scheme::NoBattery,
        initial_soc,
        rows,
        solve_times: Vec::new(),
    }
}
