//! LP-based branch-and-bound over a single warm-started simplex workspace.

use super::{DualSimplex, MipSolution, MipStatus, Outcome, SolverError, DEFAULT_GAP_TOL, INTEGRALITY_TOL};
use crate::problem::{Epigraph, MilProblem, RowClass, Sense};
use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::time::Instant;

/// Tolerance for lazily enforced linking rows and tangent cuts.
const CUT_TOL: f64 = 1e-7;
/// Tangent points seeded per epigraph before the first solve.
const SEED_TANGENTS: usize = 5;
const MAX_CUT_ROUNDS: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct BnbSettings {
    /// Relative gap `(incumbent − bound) / (1 + |incumbent|)` at which to stop.
    pub gap_tol: f64,
    pub node_limit: usize,
    pub node_log: bool,
    /// Run the rounding dive at the root.
    pub dive: bool,
}

impl Default for BnbSettings {
    fn default() -> Self {
        Self {
            gap_tol: DEFAULT_GAP_TOL,
            node_limit: 200_000,
            node_log: false,
            dive: true,
        }
    }
}

/// The continuous relaxation of a [`MilProblem`] with linking rows and
/// square epigraphs enforced lazily. Bound overrides are applied relative to
/// the model's own bounds.
pub(crate) struct Relaxation<'a> {
    problem: &'a MilProblem,
    ws: DualSimplex,
    /// Rows currently loaded into the workspace, for rebuilds.
    loaded: Vec<(Vec<(usize, f64)>, Sense, f64)>,
    pending: Vec<usize>,
    overrides: BTreeMap<usize, (f64, f64)>,
}

impl<'a> Relaxation<'a> {
    pub fn new(problem: &'a MilProblem) -> Result<Self, SolverError> {
        let model = &problem.model;
        let lower: Vec<f64> = model.vars.iter().map(|v| v.lower).collect();
        let upper: Vec<f64> = model.vars.iter().map(|v| v.upper).collect();
        let ws = DualSimplex::new(&lower, &upper, &problem.cost)?;
        let mut relax = Self {
            problem,
            ws,
            loaded: Vec::new(),
            pending: Vec::new(),
            overrides: BTreeMap::new(),
        };
        for (i, c) in model.constraints.iter().enumerate() {
            match c.class {
                RowClass::Core => relax.push_row(c.terms.clone(), c.sense, c.rhs),
                RowClass::Linking => relax.pending.push(i),
            }
        }
        for e in &problem.epigraphs {
            let (lo, hi) = expr_range(e, problem);
            for k in 0..SEED_TANGENTS {
                let d0 = lo + (hi - lo) * k as f64 / (SEED_TANGENTS - 1) as f64;
                let (terms, rhs) = tangent(e, d0);
                relax.push_row(terms, Sense::Ge, rhs);
            }
        }
        Ok(relax)
    }

    fn push_row(&mut self, terms: Vec<(usize, f64)>, sense: Sense, rhs: f64) {
        self.ws.add_row(&terms, sense, rhs);
        self.loaded.push((terms, sense, rhs));
    }

    pub fn pivots(&self) -> usize {
        self.ws.pivots
    }

    pub fn x(&self) -> &[f64] {
        self.ws.structural_values()
    }

    /// Replaces all bound overrides with `bounds`.
    pub fn apply(&mut self, bounds: &BTreeMap<usize, (f64, f64)>) {
        let stale: Vec<usize> = self.overrides.keys().filter(|j| !bounds.contains_key(j)).copied().collect();
        for j in stale {
            let v = &self.problem.model.vars[j];
            self.ws.set_bounds(j, v.lower, v.upper);
        }
        for (&j, &(lo, hi)) in bounds {
            if self.overrides.get(&j) != Some(&(lo, hi)) {
                self.ws.set_bounds(j, lo, hi);
            }
        }
        self.overrides = bounds.clone();
    }

    /// Rebuilds the workspace from scratch with the same rows and bounds.
    fn rebuild(&mut self) -> Result<(), SolverError> {
        let model = &self.problem.model;
        let lower: Vec<f64> = model.vars.iter().map(|v| v.lower).collect();
        let upper: Vec<f64> = model.vars.iter().map(|v| v.upper).collect();
        let pivots = self.ws.pivots;
        self.ws = DualSimplex::new(&lower, &upper, &self.problem.cost)?;
        self.ws.pivots = pivots;
        for (terms, sense, rhs) in &self.loaded {
            self.ws.add_row(terms, *sense, *rhs);
        }
        for (&j, &(lo, hi)) in &self.overrides {
            self.ws.set_bounds(j, lo, hi);
        }
        Ok(())
    }

    fn solve_lp(&mut self) -> Result<Outcome, SolverError> {
        match self.ws.solve() {
            Ok(o) => Ok(o),
            Err(e) => {
                log::debug!("simplex restart after: {e}");
                self.rebuild()?;
                self.ws.solve()
            }
        }
    }

    /// Solves the relaxation, adding violated linking rows and tangent cuts
    /// until none remain. Returns the LP objective, or `None` if infeasible.
    pub fn solve(&mut self) -> Result<Option<f64>, SolverError> {
        for _ in 0..MAX_CUT_ROUNDS {
            if self.solve_lp()? == Outcome::Infeasible {
                return Ok(None);
            }
            let x = self.x().to_vec();
            let mut added = false;
            let model = &self.problem.model;
            let mut keep = Vec::with_capacity(self.pending.len());
            let mut fresh = Vec::new();
            for &i in &self.pending {
                let c = &model.constraints[i];
                if c.violation(&x) > CUT_TOL {
                    fresh.push((c.terms.clone(), c.sense, c.rhs));
                } else {
                    keep.push(i);
                }
            }
            self.pending = keep;
            for (terms, sense, rhs) in fresh {
                self.push_row(terms, sense, rhs);
                added = true;
            }
            for e in &self.problem.epigraphs {
                let d = e.expr.eval(&x);
                if x[e.var] < d * d - CUT_TOL * (1.0 + d * d) {
                    let (terms, rhs) = tangent(e, d);
                    self.push_row(terms, Sense::Ge, rhs);
                    added = true;
                }
            }
            if !added {
                let obj = self.problem.objective(&x);
                return Ok(Some(obj));
            }
        }
        Err(SolverError::Numeric(format!(
            "cut loop did not settle within {MAX_CUT_ROUNDS} rounds"
        )))
    }
}

/// `q ≥ 2·d0·d − d0²` written as `q − 2·d0·Σ a·x ≥ 2·d0·c − d0²`.
fn tangent(e: &Epigraph, d0: f64) -> (Vec<(usize, f64)>, f64) {
    let mut terms = vec![(e.var, 1.0)];
    terms.extend(e.expr.terms.iter().map(|&(j, a)| (j, -2.0 * d0 * a)));
    (terms, 2.0 * d0 * e.expr.constant - d0 * d0)
}

fn expr_range(e: &Epigraph, problem: &MilProblem) -> (f64, f64) {
    let vars = &problem.model.vars;
    e.expr.terms.iter().fold((e.expr.constant, e.expr.constant), |(lo, hi), &(j, a)| {
        let (l, u) = (vars[j].lower, vars[j].upper);
        if a >= 0.0 {
            (lo + a * l, hi + a * u)
        } else {
            (lo + a * u, hi + a * l)
        }
    })
}

/// Most fractional binary, ties to the lowest index.
fn branching_candidate(problem: &MilProblem, x: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for j in problem.model.binaries() {
        let frac = (x[j] - x[j].floor()).min(x[j].ceil() - x[j]);
        if frac > INTEGRALITY_TOL && best.is_none_or(|(_, f)| frac > f) {
            best = Some((j, frac));
        }
    }
    best.map(|(j, _)| j)
}

/// Rounds binaries to exact 0/1 and re-evaluates; the continuous part stays.
fn polish(problem: &MilProblem, x: &[f64]) -> Vec<f64> {
    let mut x = x.to_vec();
    for j in problem.model.binaries() {
        x[j] = x[j].round();
    }
    x
}

#[derive(Debug, Clone)]
struct Node {
    id: usize,
    depth: usize,
    bound: f64,
    bounds: BTreeMap<usize, (f64, f64)>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    /// Max-heap order: lowest bound first, then lowest id.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.id.cmp(&self.id))
    }
}

struct Incumbent {
    x: Vec<f64>,
    objective: f64,
}

impl Incumbent {
    fn offer(&mut self, problem: &MilProblem, x: &[f64]) -> bool {
        let x = polish(problem, x);
        let obj = problem.exact_objective(&x);
        if obj < self.objective {
            self.objective = obj;
            self.x = x;
            true
        } else {
            false
        }
    }

    fn cutoff(&self, gap_tol: f64) -> f64 {
        self.objective - gap_tol * (1.0 + self.objective.abs())
    }
}

/// Fix-and-resolve dive from the current root solution: repeatedly fixes the
/// least fractional binary to its rounding, trying the other side once if
/// that is infeasible.
fn dive(relax: &mut Relaxation, problem: &MilProblem, incumbent: &mut Incumbent) -> Result<(), SolverError> {
    let mut fixed = BTreeMap::new();
    let mut x = relax.x().to_vec();
    loop {
        let mut pick: Option<(usize, f64)> = None;
        for j in problem.model.binaries() {
            let frac = (x[j] - x[j].round()).abs();
            if frac > INTEGRALITY_TOL && pick.is_none_or(|(_, f)| frac < f) {
                pick = Some((j, frac));
            }
        }
        let Some((j, _)) = pick else {
            incumbent.offer(problem, &x);
            break;
        };
        let v = x[j].round();
        fixed.insert(j, (v, v));
        relax.apply(&fixed);
        if relax.solve()?.is_none() {
            fixed.insert(j, (1.0 - v, 1.0 - v));
            relax.apply(&fixed);
            if relax.solve()?.is_none() {
                break;
            }
        }
        x = relax.x().to_vec();
    }
    relax.apply(&BTreeMap::new());
    Ok(())
}

/// Solves a mixed-binary linear problem (with convex square epigraphs) to
/// within `settings.gap_tol`.
pub fn branch_and_bound(problem: &MilProblem, settings: &BnbSettings) -> Result<MipSolution, SolverError> {
    let start = Instant::now();
    let mut relax = Relaxation::new(problem)?;
    let mut incumbent = Incumbent {
        x: Vec::new(),
        objective: f64::INFINITY,
    };
    let mut log = Vec::new();
    let mut heap = BinaryHeap::new();
    heap.push(Node {
        id: 0,
        depth: 0,
        bound: f64::NEG_INFINITY,
        bounds: BTreeMap::new(),
    });
    let mut next_id = 1;
    let mut nodes = 0usize;
    let mut limit_bound: Option<f64> = None;

    while let Some(node) = heap.pop() {
        if node.bound >= incumbent.cutoff(settings.gap_tol) {
            // every remaining node is at least as bad
            heap.clear();
            break;
        }
        if nodes >= settings.node_limit {
            limit_bound = Some(node.bound);
            heap.push(node);
            break;
        }
        nodes += 1;
        relax.apply(&node.bounds);
        let status;
        match relax.solve()? {
            None => status = "infeasible".to_string(),
            Some(lp) if lp >= incumbent.cutoff(settings.gap_tol) => status = format!("pruned {lp:.9}"),
            Some(lp) => {
                let x = relax.x().to_vec();
                match branching_candidate(problem, &x) {
                    None => {
                        let improved = incumbent.offer(problem, &x);
                        status = format!("integral {lp:.9}{}", if improved { " *" } else { "" });
                    }
                    Some(j) => {
                        status = format!("branch {lp:.9} on {} = {:.6}", problem.model.vars[j].name, x[j]);
                        if node.id == 0 && settings.dive {
                            dive(&mut relax, problem, &mut incumbent)?;
                        }
                        for v in [0.0, 1.0] {
                            let mut bounds = node.bounds.clone();
                            bounds.insert(j, (v, v));
                            heap.push(Node {
                                id: next_id,
                                depth: node.depth + 1,
                                bound: lp,
                                bounds,
                            });
                            next_id += 1;
                        }
                    }
                }
            }
        }
        if settings.node_log {
            log.push(format!(
                "node {} depth {} parent_bound {:.9} incumbent {:.9} {}",
                node.id, node.depth, node.bound, incumbent.objective, status
            ));
        }
    }

    let wall_time = start.elapsed();
    if incumbent.x.is_empty() {
        let mut sol = MipSolution::infeasible(nodes, wall_time);
        if limit_bound.is_some() {
            sol.status = MipStatus::GapLimit;
            sol.bound = limit_bound.unwrap_or(f64::NEG_INFINITY);
        }
        sol.lp_pivots = relax.pivots();
        sol.node_log = log;
        return Ok(sol);
    }
    let open_bound = heap.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min);
    let bound = open_bound.min(incumbent.objective);
    let gap = incumbent.objective - bound;
    let status = if limit_bound.is_some() && gap > settings.gap_tol * (1.0 + incumbent.objective.abs()) {
        MipStatus::GapLimit
    } else {
        MipStatus::Optimal
    };
    Ok(MipSolution {
        status,
        objective: incumbent.objective,
        x: incumbent.x,
        bound,
        gap,
        nodes,
        lp_pivots: relax.pivots(),
        wall_time,
        node_log: log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{LinExpr, Model, VarKind};

    fn mil(model: Model, cost: Vec<f64>) -> MilProblem {
        MilProblem {
            model,
            cost,
            constant: 0.0,
            epigraphs: Vec::new(),
            layout: Default::default(),
        }
    }

    #[test]
    fn integral_root_takes_one_node() {
        let mut m = Model::default();
        let a = m.add_var("a", 0.0, 1.0, VarKind::Binary);
        let b = m.add_var("b", 0.0, 1.0, VarKind::Binary);
        m.add_row("cover", vec![(a, 1.0), (b, 1.0)], Sense::Ge, 1.0, RowClass::Core);
        let sol = branch_and_bound(&mil(m, vec![1.0, 2.0]), &BnbSettings::default()).unwrap();
        assert_eq!(sol.status, MipStatus::Optimal);
        assert_eq!(sol.nodes, 1);
        assert_eq!(sol.x, vec![1.0, 0.0]);
    }

    #[test]
    fn infeasible_parity() {
        // 2a + 2b = 1 has no binary solution although its relaxation does
        let mut m = Model::default();
        let a = m.add_var("a", 0.0, 1.0, VarKind::Binary);
        let b = m.add_var("b", 0.0, 1.0, VarKind::Binary);
        m.add_row("odd", vec![(a, 2.0), (b, 2.0)], Sense::Eq, 1.0, RowClass::Core);
        let sol = branch_and_bound(&mil(m, vec![0.0, 0.0]), &BnbSettings::default()).unwrap();
        assert_eq!(sol.status, MipStatus::Infeasible);
        assert!(sol.nodes >= 3);
    }

    #[test]
    fn knapsack_needs_branching() {
        // max 5a + 4b + 3c  s.t. 2a + 3b + 4c <= 5  ->  a = b = 1, value 9
        let mut m = Model::default();
        let v: Vec<usize> = (0..3).map(|k| m.add_var(format!("x{k}"), 0.0, 1.0, VarKind::Binary)).collect();
        m.add_row("cap", vec![(v[0], 2.0), (v[1], 3.0), (v[2], 4.0)], Sense::Le, 5.0, RowClass::Core);
        let sol = branch_and_bound(&mil(m, vec![-5.0, -4.0, -3.0]), &BnbSettings::default()).unwrap();
        assert_eq!(sol.status, MipStatus::Optimal);
        assert!((sol.objective + 9.0).abs() < 1e-9);
        assert_eq!(sol.x, vec![1.0, 1.0, 0.0]);
    }

    #[test]
    fn epigraph_cuts_converge() {
        // min (x - 0.3)^2 + 0.1 b  with x in [0, 1], x >= 0.5 b
        let mut m = Model::default();
        let x = m.add_var("x", 0.0, 1.0, VarKind::Continuous);
        let b = m.add_var("b", 0.0, 1.0, VarKind::Binary);
        let q = m.add_var("q", 0.0, 1.0, VarKind::Continuous);
        m.add_row("link", vec![(x, 1.0), (b, -0.5)], Sense::Ge, 0.0, RowClass::Core);
        let mut expr = LinExpr::var(x);
        expr.constant = -0.3;
        let mut p = mil(m, vec![0.0, 0.1, 1.0]);
        p.epigraphs.push(Epigraph { var: q, expr });
        let sol = branch_and_bound(&p, &BnbSettings::default()).unwrap();
        assert_eq!(sol.status, MipStatus::Optimal);
        assert!(sol.objective.abs() < 1e-6, "{}", sol.objective);
        assert!((sol.x[x] - 0.3).abs() < 1e-3);
    }

    #[test]
    fn node_limit_reports_gap() {
        let mut m = Model::default();
        let v: Vec<usize> = (0..12).map(|k| m.add_var(format!("x{k}"), 0.0, 1.0, VarKind::Binary)).collect();
        let terms: Vec<(usize, f64)> = v.iter().map(|&j| (j, 2.0)).collect();
        m.add_row("odd", terms, Sense::Eq, 11.0, RowClass::Core);
        let settings = BnbSettings {
            node_limit: 5,
            dive: false,
            ..Default::default()
        };
        let sol = branch_and_bound(&mil(m, vec![1.0; 12]), &settings).unwrap();
        assert_eq!(sol.status, MipStatus::GapLimit);
        assert_eq!(sol.nodes, 5);
    }

    #[test]
    fn node_log_is_deterministic() {
        let build = || {
            let mut m = Model::default();
            let v: Vec<usize> = (0..6).map(|k| m.add_var(format!("x{k}"), 0.0, 1.0, VarKind::Binary)).collect();
            let w = [3.0, 5.0, 7.0, 2.0, 4.0, 6.0];
            let terms: Vec<(usize, f64)> = v.iter().zip(w).map(|(&j, a)| (j, a)).collect();
            m.add_row("cap", terms, Sense::Le, 13.5, RowClass::Core);
            mil(m, vec![-4.0, -6.0, -9.0, -2.5, -5.0, -7.5])
        };
        let settings = BnbSettings {
            node_log: true,
            ..Default::default()
        };
        let a = branch_and_bound(&build(), &settings).unwrap();
        let b = branch_and_bound(&build(), &settings).unwrap();
        assert_eq!(a.node_log, b.node_log);
        assert_eq!(a.x, b.x);
        assert!(!a.node_log.is_empty());
    }
}
