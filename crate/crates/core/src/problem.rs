//! Symbolic optimization problems shared by the formulation and the solver.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub kind: VarKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

impl Sense {
    fn symbol(self) -> &'static str {
        match self {
            Sense::Le => "<=",
            Sense::Ge => ">=",
            Sense::Eq => "=",
        }
    }
}

/// Rows the solver must enforce from the start versus rows it may hold back
/// until a relaxation violates them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowClass {
    Core,
    Linking,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub terms: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
    pub class: RowClass,
}

impl Constraint {
    pub fn activity(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(j, a)| a * x[j]).sum()
    }

    /// Amount by which `x` violates the row (0 when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let lhs = self.activity(x);
        match self.sense {
            Sense::Le => (lhs - self.rhs).max(0.0),
            Sense::Ge => (self.rhs - lhs).max(0.0),
            Sense::Eq => (lhs - self.rhs).abs(),
        }
    }
}

/// `constant + Σ coef·x_var`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub constant: f64,
    pub terms: Vec<(usize, f64)>,
}

impl LinExpr {
    pub fn constant(c: f64) -> Self {
        Self { constant: c, terms: Vec::new() }
    }

    pub fn var(j: usize) -> Self {
        Self { constant: 0.0, terms: vec![(j, 1.0)] }
    }

    pub fn add_term(&mut self, j: usize, coef: f64) {
        self.terms.push((j, coef));
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(j, a)| a * x[j]).sum::<f64>()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            constant: self.constant * s,
            terms: self.terms.iter().map(|&(j, a)| (j, a * s)).collect(),
        }
    }
}

/// `coef · x_a · x_b` with `a < b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Product {
    pub a: usize,
    pub b: usize,
    pub coef: f64,
}

/// `coef · expr²`, convex for `coef ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareTerm {
    pub coef: f64,
    pub expr: LinExpr,
}

/// Objective with a linear part, pairwise products and convex squares.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QuadObjective {
    pub constant: f64,
    pub linear: Vec<f64>,
    pub products: Vec<Product>,
    pub squares: Vec<SquareTerm>,
}

impl QuadObjective {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let lin: f64 = self.linear.iter().zip(x).map(|(c, v)| c * v).sum();
        let prod: f64 = self.products.iter().map(|p| p.coef * x[p.a] * x[p.b]).sum();
        let sq: f64 = self
            .squares
            .iter()
            .map(|s| {
                let v = s.expr.eval(x);
                s.coef * v * v
            })
            .sum();
        self.constant + lin + prod + sq
    }
}

/// Accumulates a quadratic polynomial in binary and continuous variables.
/// Products of a binary with itself collapse to the variable.
#[derive(Debug, Default)]
pub(crate) struct QuadBuilder {
    pub constant: f64,
    pub linear: BTreeMap<usize, f64>,
    pub products: BTreeMap<(usize, usize), f64>,
}

impl QuadBuilder {
    pub fn add_linear(&mut self, expr: &LinExpr, scale: f64) {
        self.constant += scale * expr.constant;
        for &(j, a) in &expr.terms {
            *self.linear.entry(j).or_insert(0.0) += scale * a;
        }
    }

    /// Adds `scale · lhs · rhs`; `is_binary` decides whether `x·x` folds to `x`.
    pub fn add_product(&mut self, lhs: &LinExpr, rhs: &LinExpr, scale: f64, is_binary: impl Fn(usize) -> bool) {
        self.constant += scale * lhs.constant * rhs.constant;
        for &(j, a) in &rhs.terms {
            *self.linear.entry(j).or_insert(0.0) += scale * lhs.constant * a;
        }
        for &(j, a) in &lhs.terms {
            *self.linear.entry(j).or_insert(0.0) += scale * rhs.constant * a;
        }
        for &(j, a) in &lhs.terms {
            for &(k, b) in &rhs.terms {
                let c = scale * a * b;
                if j == k && is_binary(j) {
                    *self.linear.entry(j).or_insert(0.0) += c;
                } else {
                    *self.products.entry((j.min(k), j.max(k))).or_insert(0.0) += c;
                }
            }
        }
    }

    pub fn into_objective(self, num_vars: usize) -> QuadObjective {
        let mut linear = vec![0.0; num_vars];
        for (j, c) in self.linear {
            linear[j] += c;
        }
        let products = self
            .products
            .into_iter()
            .filter(|&(_, c)| c != 0.0)
            .map(|((a, b), coef)| Product { a, b, coef })
            .collect();
        QuadObjective {
            constant: self.constant,
            linear,
            products,
            squares: Vec::new(),
        }
    }
}

/// Where each physical quantity of a horizon problem lives in the variable
/// vector. Index `k` refers to horizon step `t + k`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HorizonLayout {
    pub horizon_len: usize,
    pub charge: Vec<usize>,
    pub discharge: Vec<usize>,
    /// State of charge at the end of each step, `e_{t+k+1}`.
    pub soc: Vec<usize>,
    pub grid: Vec<usize>,
    pub mode: Vec<usize>,
    /// `bins[k][j]`: indicator that step `k` lands in grid bin `j`.
    pub bins: Vec<Vec<usize>>,
    /// Absolute-deviation auxiliaries of the regularizer.
    pub deviation: Vec<usize>,
    /// Consumer bin of each step.
    pub consumer_bins: Vec<usize>,
}

impl HorizonLayout {
    /// Grid bin chosen at step `k`, if the problem carries bin indicators.
    pub fn chosen_bin(&self, x: &[f64], k: usize) -> Option<usize> {
        self.bins.get(k).and_then(|row| row.iter().position(|&v| x[v] > 0.5))
    }

    pub fn action(&self, x: &[f64], k: usize) -> f64 {
        x[self.charge[k]] - x[self.discharge[k]]
    }
}

/// Shared variable/constraint storage with a builder-style API.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Model {
    pub vars: Vec<Variable>,
    pub constraints: Vec<Constraint>,
}

impl Model {
    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64, kind: VarKind) -> usize {
        self.vars.push(Variable { name: name.into(), lower, upper, kind });
        self.vars.len() - 1
    }

    pub fn add_row(&mut self, name: impl Into<String>, terms: Vec<(usize, f64)>, sense: Sense, rhs: f64, class: RowClass) {
        self.constraints.push(Constraint {
            name: name.into(),
            terms,
            sense,
            rhs,
            class,
        });
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn binaries(&self) -> impl Iterator<Item = usize> + '_ {
        self.vars
            .iter()
            .enumerate()
            .filter(|(_, v)| v.kind == VarKind::Binary)
            .map(|(j, _)| j)
    }

    pub fn num_binaries(&self) -> usize {
        self.binaries().count()
    }

    pub fn is_binary(&self, j: usize) -> bool {
        self.vars[j].kind == VarKind::Binary
    }

    /// Largest violation of any bound or row at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let bounds = self
            .vars
            .iter()
            .zip(x)
            .map(|(v, &xv)| (v.lower - xv).max(xv - v.upper).max(0.0))
            .fold(0.0, f64::max);
        self.constraints
            .iter()
            .map(|c| c.violation(x))
            .fold(bounds, f64::max)
    }

    fn write_rows_and_bounds(&self, out: &mut String) -> fmt::Result {
        writeln!(out, "subject to")?;
        for c in &self.constraints {
            write!(out, "  {}:", c.name)?;
            write_terms(out, &self.vars, &c.terms)?;
            let class = match c.class {
                RowClass::Core => "",
                RowClass::Linking => " \\ linking",
            };
            writeln!(out, " {} {}{}", c.sense.symbol(), c.rhs, class)?;
        }
        writeln!(out, "bounds")?;
        for v in &self.vars {
            writeln!(out, "  {} <= {} <= {}", v.lower, v.name, v.upper)?;
        }
        writeln!(out, "binaries")?;
        for v in self.vars.iter().filter(|v| v.kind == VarKind::Binary) {
            writeln!(out, "  {}", v.name)?;
        }
        Ok(())
    }
}

fn write_terms(out: &mut String, vars: &[Variable], terms: &[(usize, f64)]) -> fmt::Result {
    for &(j, a) in terms {
        if a >= 0.0 {
            write!(out, " + {} {}", a, vars[j].name)?;
        } else {
            write!(out, " - {} {}", -a, vars[j].name)?;
        }
    }
    Ok(())
}

/// Mixed-binary problem with a quadratic objective.
#[derive(Debug, Clone, PartialEq)]
pub struct MiqProblem {
    pub model: Model,
    pub objective: QuadObjective,
    pub layout: HorizonLayout,
}

/// Mixed-binary linear problem. Each epigraph pairs a variable `q` with a
/// linear expression `d` and stands for the convex constraint `q ≥ d²`,
/// which the solver enforces through tangent cuts.
#[derive(Debug, Clone, PartialEq)]
pub struct MilProblem {
    pub model: Model,
    pub cost: Vec<f64>,
    pub constant: f64,
    pub epigraphs: Vec<Epigraph>,
    pub layout: HorizonLayout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Epigraph {
    pub var: usize,
    pub expr: LinExpr,
}

impl MilProblem {
    /// Linear objective value at `x`.
    pub fn objective(&self, x: &[f64]) -> f64 {
        self.constant + self.cost.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }

    /// Objective with every epigraph variable replaced by its square.
    pub fn exact_objective(&self, x: &[f64]) -> f64 {
        let mut obj = self.objective(x);
        for e in &self.epigraphs {
            let d = e.expr.eval(x);
            obj += self.cost[e.var] * (d * d - x[e.var]);
        }
        obj
    }
}

impl fmt::Display for MiqProblem {
    /// LP-style listing: objective, products, squares, rows, bounds, binaries.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        writeln!(out, "minimize")?;
        write!(out, "  obj: {}", self.objective.constant)?;
        let terms: Vec<(usize, f64)> = self
            .objective
            .linear
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0.0)
            .map(|(j, &c)| (j, c))
            .collect();
        write_terms(&mut out, &self.model.vars, &terms)?;
        writeln!(out)?;
        for p in &self.objective.products {
            writeln!(
                out,
                "  prod: {} {} * {}",
                p.coef, self.model.vars[p.a].name, self.model.vars[p.b].name
            )?;
        }
        for s in &self.objective.squares {
            write!(out, "  square: {} * ( {}", s.coef, s.expr.constant)?;
            write_terms(&mut out, &self.model.vars, &s.expr.terms)?;
            writeln!(out, " )^2")?;
        }
        self.model.write_rows_and_bounds(&mut out)?;
        writeln!(out, "end")?;
        f.write_str(&out)
    }
}

impl fmt::Display for MilProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        writeln!(out, "minimize")?;
        write!(out, "  obj: {}", self.constant)?;
        let terms: Vec<(usize, f64)> = self
            .cost
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0.0)
            .map(|(j, &c)| (j, c))
            .collect();
        write_terms(&mut out, &self.model.vars, &terms)?;
        writeln!(out)?;
        for e in &self.epigraphs {
            write!(out, "  epigraph: {} >= ( {}", self.model.vars[e.var].name, e.expr.constant)?;
            write_terms(&mut out, &self.model.vars, &e.expr.terms)?;
            writeln!(out, " )^2")?;
        }
        self.model.write_rows_and_bounds(&mut out)?;
        writeln!(out, "end")?;
        f.write_str(&out)
    }
}
