//! Per-step horizon problems: the privacy-aware controller problem, the
//! load-leveling baseline, and their reformulation into linear form.

use crate::model::{BatterySpec, QuantGrid};
use crate::problem::{
    Epigraph, HorizonLayout, LinExpr, MilProblem, MiqProblem, Model, QuadBuilder, QuadObjective, RowClass, Sense,
    SquareTerm, VarKind,
};
use crate::stats::{ProbEstimates, NU};
use thiserror::Error;

/// Gap kept between adjacent bin intervals so that the realized grid load is
/// never exactly on an edge, where quantization rounds down.
pub const BIN_EDGE_SHRINK: f64 = 1e-9;

const SOC_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormulationError {
    #[error("state of charge {soc} kWh outside [0, {capacity}]")]
    InfeasibleState { soc: f64, capacity: f64 },
    #[error("horizon inputs disagree: {0}")]
    Inputs(String),
    #[error("unsupported structure: {0}")]
    UnsupportedStructure(String),
}

/// Known data for one horizon `{t, .., t+T}`.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonInputs {
    pub soc: f64,
    pub load: Vec<f64>,
    pub generation: Vec<f64>,
    pub prices: Vec<f64>,
}

impl HorizonInputs {
    pub fn len(&self) -> usize {
        self.load.len()
    }

    pub fn is_empty(&self) -> bool {
        self.load.is_empty()
    }

    fn validate(&self, battery: &BatterySpec) -> Result<(), FormulationError> {
        if self.load.is_empty() {
            return Err(FormulationError::Inputs("empty horizon".into()));
        }
        if self.generation.len() != self.load.len() || self.prices.len() != self.load.len() {
            return Err(FormulationError::Inputs(format!(
                "load {} / generation {} / prices {} lengths differ",
                self.load.len(),
                self.generation.len(),
                self.prices.len()
            )));
        }
        if !(self.soc >= -SOC_TOLERANCE && self.soc <= battery.capacity_kwh + SOC_TOLERANCE) {
            return Err(FormulationError::InfeasibleState {
                soc: self.soc,
                capacity: battery.capacity_kwh,
            });
        }
        Ok(())
    }
}

/// Predictions from the previous step over the overlap `{t, .., t+T-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizerState {
    pub grid: Vec<f64>,
    pub load: Vec<f64>,
    pub generation: Vec<f64>,
    pub sigma: f64,
    pub gamma: f64,
}

/// Linear pieces of the l1 regularizer: `weight · Σ_k |y_k − target_k|`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizerTerms {
    pub weight: f64,
    pub targets: Vec<f64>,
}

impl RegularizerTerms {
    pub fn is_empty(&self) -> bool {
        self.weight == 0.0 || self.targets.is_empty()
    }
}

/// Weight and targets of `μσT⁻¹‖Qy−ȳ‖₁ / (γ(‖Qx−x̄‖₁+‖Qg−ḡ‖₁)+1)`. The
/// denominator only involves known data, so it is folded into the weight.
pub fn build_regularizer(
    reg: Option<&RegularizerState>,
    load: &[f64],
    generation: &[f64],
    mu: f64,
) -> RegularizerTerms {
    let empty = RegularizerTerms { weight: 0.0, targets: Vec::new() };
    let Some(reg) = reg else { return empty };
    let horizon = reg.grid.len();
    if horizon == 0 || mu == 0.0 || reg.sigma == 0.0 {
        return empty;
    }
    let l1 = |pred: &[f64], now: &[f64]| -> f64 { pred.iter().zip(now).map(|(p, v)| (v - p).abs()).sum() };
    let mismatch = l1(&reg.load, load) + l1(&reg.generation, generation);
    let weight = mu * reg.sigma / horizon as f64 / (reg.gamma * mismatch + 1.0);
    RegularizerTerms {
        weight,
        targets: reg.grid.clone(),
    }
}

/// Rows and variables of Eq. (1)–(4) over the horizon, shared by both schemes.
fn add_system(model: &mut Model, layout: &mut HorizonLayout, inputs: &HorizonInputs, battery: &BatterySpec, y_max: f64) {
    let steps = inputs.len();
    let alpha = battery.efficiency;
    layout.horizon_len = steps;
    for k in 0..steps {
        let sp = model.add_var(format!("s_plus[{k}]"), 0.0, battery.charge_max_kwh, VarKind::Continuous);
        let sm = model.add_var(format!("s_minus[{k}]"), 0.0, battery.discharge_max_kwh, VarKind::Continuous);
        let e = model.add_var(format!("e[{}]", k + 1), 0.0, battery.capacity_kwh, VarKind::Continuous);
        let y = model.add_var(format!("y[{k}]"), 0.0, y_max, VarKind::Continuous);
        let w = model.add_var(format!("w[{k}]"), 0.0, 1.0, VarKind::Binary);

        model.add_row(
            format!("balance[{k}]"),
            vec![(y, 1.0), (sp, -1.0), (sm, 1.0)],
            Sense::Eq,
            inputs.load[k] - inputs.generation[k],
            RowClass::Core,
        );
        model.add_row(
            format!("charge_mode[{k}]"),
            vec![(sp, 1.0), (w, -battery.charge_max_kwh)],
            Sense::Le,
            0.0,
            RowClass::Core,
        );
        model.add_row(
            format!("discharge_mode[{k}]"),
            vec![(sm, 1.0), (w, battery.discharge_max_kwh)],
            Sense::Le,
            battery.discharge_max_kwh,
            RowClass::Core,
        );
        let mut terms = vec![(e, 1.0), (sp, -alpha), (sm, 1.0 / alpha)];
        let rhs = if k == 0 {
            inputs.soc.clamp(0.0, battery.capacity_kwh)
        } else {
            terms.push((layout.soc[k - 1], -1.0));
            0.0
        };
        model.add_row(format!("dynamics[{k}]"), terms, Sense::Eq, rhs, RowClass::Core);

        layout.charge.push(sp);
        layout.discharge.push(sm);
        layout.soc.push(e);
        layout.grid.push(y);
        layout.mode.push(w);
    }
}

fn add_regularizer(model: &mut Model, layout: &mut HorizonLayout, terms: &RegularizerTerms, y_max: f64) -> Vec<(usize, f64)> {
    let mut cost = Vec::new();
    if terms.is_empty() {
        return cost;
    }
    for (k, &target) in terms.targets.iter().enumerate().take(layout.horizon_len) {
        let y = layout.grid[k];
        let u = model.add_var(format!("dev[{k}]"), 0.0, y_max + target.abs(), VarKind::Continuous);
        model.add_row(format!("dev_up[{k}]"), vec![(u, 1.0), (y, -1.0)], Sense::Ge, -target, RowClass::Core);
        model.add_row(format!("dev_down[{k}]"), vec![(u, 1.0), (y, 1.0)], Sense::Ge, target, RowClass::Core);
        layout.deviation.push(u);
        cost.push((u, terms.weight));
    }
    cost
}

/// Builds the per-step controller problem: discounted energy cost plus `μ`
/// times the linearized mutual-information estimate of the window, over the
/// horizon described by `inputs`.
///
/// Only the grid-bin indicators of each step's known consumer bin are
/// variables, giving `(n+1)(T+1)` binaries in total.
pub fn build_mdpc_problem(
    inputs: &HorizonInputs,
    probs: &ProbEstimates,
    y_grid: &QuantGrid,
    battery: &BatterySpec,
    mu: f64,
    reg: Option<&RegularizerState>,
) -> Result<MiqProblem, FormulationError> {
    build_mdpc_problem_as(inputs, probs, y_grid, battery, mu, reg, InformationForm::Products)
}

/// How the quadratic part of the information term is expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InformationForm {
    /// Products of bin indicators, as expanded from the estimate.
    Products,
    /// An equivalent sum of weighted convex squares, one per consumer bin
    /// present in the horizon and grid bin. It agrees with `Products`
    /// wherever the indicators are binary and has a much tighter continuous
    /// relaxation.
    Squares,
    /// Linear in auxiliary weights over the integer count vectors each grid
    /// bin can receive; exact at binary points and the tightest of the three
    /// relaxations. The number of weights grows like `2^(T+1)` per grid bin
    /// in the worst case (see [`patterns_per_bin`]).
    Patterns,
}

/// [`build_mdpc_problem`] with a choice of quadratic representation.
pub fn build_mdpc_problem_as(
    inputs: &HorizonInputs,
    probs: &ProbEstimates,
    y_grid: &QuantGrid,
    battery: &BatterySpec,
    mu: f64,
    reg: Option<&RegularizerState>,
    form: InformationForm,
) -> Result<MiqProblem, FormulationError> {
    inputs.validate(battery)?;
    let steps = inputs.len();
    if probs.horizon_len() != steps {
        return Err(FormulationError::Inputs(format!(
            "window covers {} horizon steps, inputs cover {steps}",
            probs.horizon_len()
        )));
    }
    if probs.n != y_grid.len() {
        return Err(FormulationError::Inputs(format!(
            "estimates use {} grid bins, grid has {}",
            probs.n,
            y_grid.len()
        )));
    }
    let n = y_grid.len();
    let y_max = y_grid.max_value();
    let mut model = Model::default();
    let mut layout = HorizonLayout::default();
    add_system(&mut model, &mut layout, inputs, battery, y_max);

    // Bin k holds y in (lower_edge, upper_edge]; interior edges are pulled in
    // by BIN_EDGE_SHRINK on both sides, the outer edges 0 and Y^max are kept.
    let lower: Vec<f64> = (0..n)
        .map(|j| if j == 0 { 0.0 } else { y_grid.lower_edge(j) + BIN_EDGE_SHRINK })
        .collect();
    let upper: Vec<f64> = (0..n)
        .map(|j| if j + 1 == n { y_max } else { y_grid.upper_edge(j) - BIN_EDGE_SHRINK })
        .collect();
    for k in 0..steps {
        let zs: Vec<usize> = (0..n)
            .map(|j| model.add_var(format!("z[{k},{j}]"), 0.0, 1.0, VarKind::Binary))
            .collect();
        let y = layout.grid[k];
        model.add_row(
            format!("one_bin[{k}]"),
            zs.iter().map(|&z| (z, 1.0)).collect(),
            Sense::Eq,
            1.0,
            RowClass::Core,
        );
        let mut lo_terms = vec![(y, 1.0)];
        lo_terms.extend(zs.iter().zip(&lower).map(|(&z, &l)| (z, -l)));
        model.add_row(format!("bin_lo[{k}]"), lo_terms, Sense::Ge, 0.0, RowClass::Core);
        let mut hi_terms = vec![(y, 1.0)];
        hi_terms.extend(zs.iter().zip(&upper).map(|(&z, &u)| (z, -u)));
        model.add_row(format!("bin_hi[{k}]"), hi_terms, Sense::Le, 0.0, RowClass::Core);
        layout.bins.push(zs);
    }
    layout.consumer_bins = probs.horizon_bins.clone();

    let reg_terms = build_regularizer(reg, &inputs.load, &inputs.generation, mu);
    let reg_cost = add_regularizer(&mut model, &mut layout, &reg_terms, y_max);

    let mut quad = QuadBuilder::default();
    let horizon_weight = 1.0 / steps as f64;
    for k in 0..steps {
        quad.add_linear(&LinExpr::var(layout.grid[k]), horizon_weight * inputs.prices[k]);
    }
    let mut squares = Vec::new();
    let mut pattern_cost = Vec::new();
    if mu != 0.0 {
        match form {
            InformationForm::Products => add_linearized_information(&mut quad, &model, &layout, probs, mu),
            InformationForm::Squares => {
                add_information_linear(&mut quad, &layout, probs, mu);
                squares = add_information_squares(&layout, probs, mu);
            }
            InformationForm::Patterns => {
                add_information_linear(&mut quad, &layout, probs, mu);
                pattern_cost = add_information_patterns(&mut model, &layout, probs, mu);
            }
        }
    }
    let mut objective = quad.into_objective(model.num_vars());
    objective.squares = squares;
    for (v, c) in pattern_cost {
        objective.linear[v] += c;
    }
    for (u, c) in reg_cost {
        objective.linear[u] += c;
    }
    Ok(MiqProblem { model, objective, layout })
}

/// Adds `μ·Ĩ` where, for every bin pair `(i, j)`,
/// `(a + Z/Nε)·(log(a/(b c)) + ν Z/(a Nε) − ν B/(b Nε))`,
/// with `Z` the horizon count of `(i, j)` and `B` that of grid bin `j`.
fn add_linearized_information(quad: &mut QuadBuilder, model: &Model, layout: &HorizonLayout, probs: &ProbEstimates, mu: f64) {
    let inv = 1.0 / probs.n_eps;
    let is_binary = |j: usize| model.is_binary(j);
    for j in 0..probs.n {
        let mut column = LinExpr::default();
        for row in &layout.bins {
            column.add_term(row[j], inv);
        }
        let b = probs.b[j];
        for i in 0..probs.m {
            let a = probs.a(i, j);
            let mut joint = LinExpr::default();
            for (k, &ik) in layout.consumer_bins.iter().enumerate() {
                if ik == i {
                    joint.add_term(layout.bins[k][j], inv);
                }
            }
            let mut left = joint.clone();
            left.constant = a;
            let mut right = joint.scaled(NU / a);
            right.constant = (a / (b * probs.c[i])).log2();
            for &(v, coef) in &column.terms {
                right.add_term(v, -NU / b * coef);
            }
            quad.add_product(&left, &right, mu, is_binary);
        }
    }
}

/// Constant and linear part of `μ·Ĩ`: everything except the terms that are
/// quadratic in the horizon counts.
fn add_information_linear(quad: &mut QuadBuilder, layout: &HorizonLayout, probs: &ProbEstimates, mu: f64) {
    let inv = 1.0 / probs.n_eps;
    for j in 0..probs.n {
        let column = grid_count(layout, j);
        let b = probs.b[j];
        for i in 0..probs.m {
            let a = probs.a(i, j);
            let log_term = (a / (b * probs.c[i])).log2();
            quad.add_linear(&LinExpr::constant(a * log_term), mu);
            quad.add_linear(&joint_count(layout, i, j), mu * (NU + log_term) * inv);
            quad.add_linear(&column, -mu * a * NU * inv / b);
        }
    }
}

/// `B_j`: horizon steps placed in grid bin `j`.
fn grid_count(layout: &HorizonLayout, j: usize) -> LinExpr {
    let mut e = LinExpr::default();
    for row in &layout.bins {
        e.add_term(row[j], 1.0);
    }
    e
}

/// `Z_ij`: horizon steps with consumer bin `i` placed in grid bin `j`.
fn joint_count(layout: &HorizonLayout, i: usize, j: usize) -> LinExpr {
    let mut e = LinExpr::default();
    for (k, &ik) in layout.consumer_bins.iter().enumerate() {
        if ik == i {
            e.add_term(layout.bins[k][j], 1.0);
        }
    }
    e
}

/// Consumer bins occurring in the horizon, ascending, with multiplicities.
fn present_bins(layout: &HorizonLayout) -> Vec<(usize, usize)> {
    let mut bins = layout.consumer_bins.clone();
    bins.sort_unstable();
    let mut out: Vec<(usize, usize)> = Vec::new();
    for i in bins {
        match out.last_mut() {
            Some((last, count)) if *last == i => *count += 1,
            _ => out.push((i, 1)),
        }
    }
    out
}

/// Quadratic part as weighted convex squares. With `B = Σ_i Z_i` the part
/// per grid bin is `ν/Nε² (Σ_i Z_i²/a_i − B²/b)`, and since `b = Σ_i a_i`
/// this equals `ν/Nε² Σ_i a_i (Z_i/a_i − B/b)²`. Consumer bins absent from
/// the horizon have `Z_i ≡ 0` and share a single `(B/b)²` square.
fn add_information_squares(layout: &HorizonLayout, probs: &ProbEstimates, mu: f64) -> Vec<SquareTerm> {
    let inv = 1.0 / probs.n_eps;
    let present = present_bins(layout);
    let mut squares = Vec::new();
    for j in 0..probs.n {
        let b_sum: f64 = (0..probs.m).map(|i| probs.a(i, j)).sum();
        let mut absent_weight = b_sum;
        for &(i, _) in &present {
            let a = probs.a(i, j);
            absent_weight -= a;
            let mut expr = LinExpr::default();
            for (k, &ik) in layout.consumer_bins.iter().enumerate() {
                let own = if ik == i { 1.0 / a } else { 0.0 };
                expr.add_term(layout.bins[k][j], own - 1.0 / b_sum);
            }
            squares.push(SquareTerm {
                coef: mu * NU * inv * inv * a,
                expr,
            });
        }
        if absent_weight > 1e-15 * b_sum && !layout.bins.is_empty() {
            squares.push(SquareTerm {
                coef: mu * NU * inv * inv * absent_weight,
                expr: grid_count(layout, j).scaled(1.0 / b_sum),
            });
        }
    }
    squares
}

/// Number of count patterns the `Patterns` form enumerates per grid bin.
pub fn patterns_per_bin(consumer_bins: &[usize]) -> usize {
    let layout = HorizonLayout {
        consumer_bins: consumer_bins.to_vec(),
        ..Default::default()
    };
    present_bins(&layout)
        .iter()
        .fold(1usize, |acc, &(_, mult)| acc.saturating_mul(mult + 1))
}

/// Quadratic part through count patterns. For grid bin `j`, every integer
/// vector `π` with `0 ≤ π_i ≤ |{k : i_k = i}|` gets a weight `λ_π ∈ [0, 1]`
/// with `Σ λ_π = 1` and `Σ λ_π π_i = Z_ij`, priced at
/// `ν/Nε² (Σ_i π_i²/a_i − (Σ_i π_i)²/b)`. That function is convex, so for
/// integral counts the cheapest weights sit on the pattern equal to the
/// counts, and the continuous relaxation is the convex hull per grid bin.
fn add_information_patterns(model: &mut Model, layout: &HorizonLayout, probs: &ProbEstimates, mu: f64) -> Vec<(usize, f64)> {
    let inv = 1.0 / probs.n_eps;
    let present = present_bins(layout);
    let mut cost = Vec::new();
    for j in 0..probs.n {
        let b = probs.b[j];
        let mut pattern = vec![0usize; present.len()];
        let mut weights = Vec::new();
        let mut link: Vec<Vec<(usize, f64)>> = vec![Vec::new(); present.len()];
        loop {
            let mut quad_sum = 0.0;
            let mut total = 0usize;
            for (p, &(i, _)) in pattern.iter().zip(&present) {
                quad_sum += (p * p) as f64 / probs.a(i, j);
                total += p;
            }
            quad_sum -= (total * total) as f64 / b;
            let label: Vec<String> = pattern.iter().map(usize::to_string).collect();
            let v = model.add_var(format!("lambda[{j};{}]", label.join(",")), 0.0, 1.0, VarKind::Continuous);
            cost.push((v, mu * NU * inv * inv * quad_sum));
            weights.push((v, 1.0));
            for (r, &p) in pattern.iter().enumerate() {
                if p > 0 {
                    link[r].push((v, p as f64));
                }
            }
            // next pattern in mixed radix
            let mut pos = 0;
            while pos < pattern.len() {
                pattern[pos] += 1;
                if pattern[pos] <= present[pos].1 {
                    break;
                }
                pattern[pos] = 0;
                pos += 1;
            }
            if pos == pattern.len() {
                break;
            }
        }
        model.add_row(format!("lambda_sum[{j}]"), weights, Sense::Eq, 1.0, RowClass::Core);
        for (r, &(i, _)) in present.iter().enumerate() {
            let mut terms = std::mem::take(&mut link[r]);
            for (v, c) in joint_count(layout, i, j).terms {
                terms.push((v, -c));
            }
            model.add_row(format!("lambda_count[{j};{i}]"), terms, Sense::Eq, 0.0, RowClass::Core);
        }
    }
    cost
}

/// Load-leveling baseline: discounted energy cost plus
/// `μ/(T+1) Σ (y_τ − y_{τ−1})²` with `y_{t−1} = y_prev`.
pub fn build_loadlevel_problem(
    inputs: &HorizonInputs,
    battery: &BatterySpec,
    y_max: f64,
    mu: f64,
    y_prev: f64,
) -> Result<MiqProblem, FormulationError> {
    inputs.validate(battery)?;
    let steps = inputs.len();
    let mut model = Model::default();
    let mut layout = HorizonLayout::default();
    add_system(&mut model, &mut layout, inputs, battery, y_max);
    let mut objective = QuadObjective {
        linear: vec![0.0; model.num_vars()],
        ..Default::default()
    };
    let scale = 1.0 / steps as f64;
    for k in 0..steps {
        objective.linear[layout.grid[k]] += scale * inputs.prices[k];
    }
    if mu != 0.0 {
        for k in 0..steps {
            let mut diff = LinExpr::var(layout.grid[k]);
            if k == 0 {
                diff.constant = -y_prev;
            } else {
                diff.add_term(layout.grid[k - 1], -1.0);
            }
            objective.squares.push(SquareTerm { coef: mu * scale, expr: diff });
        }
    }
    Ok(MiqProblem { model, objective, layout })
}

/// Replaces every product of two binaries `z_a z_b` by `p ∈ [0, 1]` with
/// `p ≤ z_a`, `p ≤ z_b`, `p ≥ z_a + z_b − 1`.
pub fn linearize_products(problem: &MiqProblem) -> Result<MilProblem, FormulationError> {
    if !problem.objective.squares.is_empty() {
        return Err(FormulationError::UnsupportedStructure(
            "squared terms over continuous variables".into(),
        ));
    }
    reformulate(problem)
}

/// Like [`linearize_products`], and additionally moves each convex square
/// `c·d²` into an epigraph variable `q ≥ d²` with objective weight `c`.
pub fn epigraph_squares(problem: &MiqProblem) -> Result<MilProblem, FormulationError> {
    reformulate(problem)
}

fn reformulate(problem: &MiqProblem) -> Result<MilProblem, FormulationError> {
    let mut model = problem.model.clone();
    let mut cost = problem.objective.linear.clone();
    cost.resize(model.num_vars(), 0.0);
    for p in &problem.objective.products {
        if !(model.is_binary(p.a) && model.is_binary(p.b)) {
            return Err(FormulationError::UnsupportedStructure(format!(
                "product {} * {} involves a continuous variable",
                model.vars[p.a].name, model.vars[p.b].name
            )));
        }
        if p.a == p.b {
            cost[p.a] += p.coef;
            continue;
        }
        let name = format!("p({},{})", model.vars[p.a].name, model.vars[p.b].name);
        let v = model.add_var(name.clone(), 0.0, 1.0, VarKind::Continuous);
        cost.push(p.coef);
        model.add_row(format!("{name}_le_a"), vec![(v, 1.0), (p.a, -1.0)], Sense::Le, 0.0, RowClass::Linking);
        model.add_row(format!("{name}_le_b"), vec![(v, 1.0), (p.b, -1.0)], Sense::Le, 0.0, RowClass::Linking);
        model.add_row(
            format!("{name}_ge"),
            vec![(v, 1.0), (p.a, -1.0), (p.b, -1.0)],
            Sense::Ge,
            -1.0,
            RowClass::Linking,
        );
    }
    let mut epigraphs = Vec::new();
    for (k, sq) in problem.objective.squares.iter().enumerate() {
        if sq.coef < 0.0 {
            return Err(FormulationError::UnsupportedStructure(format!(
                "square term {k} has negative weight {}",
                sq.coef
            )));
        }
        let (lo, hi) = expr_range(&sq.expr, &model);
        let cap = lo.abs().max(hi.abs());
        let q = model.add_var(format!("sq[{k}]"), 0.0, cap * cap, VarKind::Continuous);
        cost.push(sq.coef);
        epigraphs.push(Epigraph { var: q, expr: sq.expr.clone() });
    }
    Ok(MilProblem {
        model,
        cost,
        constant: problem.objective.constant,
        epigraphs,
        layout: problem.layout.clone(),
    })
}

fn expr_range(expr: &LinExpr, model: &Model) -> (f64, f64) {
    expr.terms.iter().fold((expr.constant, expr.constant), |(lo, hi), &(j, a)| {
        let v = &model.vars[j];
        if a >= 0.0 {
            (lo + a * v.lower, hi + a * v.upper)
        } else {
            (lo + a * v.upper, hi + a * v.lower)
        }
    })
}
