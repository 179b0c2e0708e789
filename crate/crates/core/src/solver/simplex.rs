//! Dense-tableau bounded dual simplex.
//!
//! Each row `i` carries a slack `s_i` with `a_i·x + s_i = b_i`; the slack's
//! bounds encode the row sense. With every structural variable boxed, the
//! all-slack basis is dual feasible when each structural sits at the bound
//! favoured by its cost, so no phase one is needed. Bound changes keep dual
//! feasibility, which is what lets branch-and-bound re-optimize from whatever
//! basis it last held, and appended rows enter with their slack basic.
//! Slacks get the finite range implied by the structural boxes, so every
//! column is boxed and a flip can always restore a reduced cost's sign.

use super::SolverError;
use crate::problem::Sense;

const PRIMAL_TOL: f64 = 1e-9;
const DUAL_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-9;
const DROP_TOL: f64 = 1e-14;
/// Pivots without objective progress before switching to Bland's rule.
const STALL_LIMIT: usize = 60;
const REINVERT_EVERY: usize = 400;
/// Pivot magnitude below which refactorization treats a basis column as dependent.
const SINGULAR_TOL: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Basic,
    AtLower,
    AtUpper,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Outcome {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone)]
struct RowData {
    terms: Vec<(usize, f64)>,
    rhs: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct DualSimplex {
    n_struct: usize,
    /// Structural boxes at construction; slack ranges derive from these so
    /// they stay valid when branching later narrows or releases a box.
    outer_lower: Vec<f64>,
    outer_upper: Vec<f64>,
    rows: Vec<RowData>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    cost: Vec<f64>,
    tab: Vec<Vec<f64>>,
    basis: Vec<usize>,
    row_of: Vec<usize>,
    state: Vec<State>,
    x: Vec<f64>,
    d: Vec<f64>,
    since_reinvert: usize,
    pub pivots: usize,
    max_iterations: usize,
}

impl DualSimplex {
    /// Structural columns with finite bounds and costs; rows come later.
    pub fn new(lower: &[f64], upper: &[f64], cost: &[f64]) -> Result<Self, SolverError> {
        let n = cost.len();
        let mut x = Vec::with_capacity(n);
        let mut state = Vec::with_capacity(n);
        for j in 0..n {
            if !(lower[j].is_finite() && upper[j].is_finite()) {
                return Err(SolverError::Numeric(format!("variable {j} needs finite bounds")));
            }
            if lower[j] > upper[j] {
                return Err(SolverError::Numeric(format!(
                    "variable {j} has crossed bounds [{}, {}]",
                    lower[j], upper[j]
                )));
            }
            if cost[j] >= 0.0 {
                x.push(lower[j]);
                state.push(State::AtLower);
            } else {
                x.push(upper[j]);
                state.push(State::AtUpper);
            }
        }
        Ok(Self {
            n_struct: n,
            outer_lower: lower.to_vec(),
            outer_upper: upper.to_vec(),
            rows: Vec::new(),
            lower: lower.to_vec(),
            upper: upper.to_vec(),
            cost: cost.to_vec(),
            tab: Vec::new(),
            basis: Vec::new(),
            row_of: vec![usize::MAX; n],
            state,
            x,
            d: cost.to_vec(),
            since_reinvert: 0,
            pivots: 0,
            max_iterations: 50_000,
        })
    }

    pub fn structural_values(&self) -> &[f64] {
        &self.x[..self.n_struct]
    }

    pub fn objective(&self) -> f64 {
        self.cost.iter().zip(&self.x).map(|(c, v)| c * v).sum()
    }

    /// Appends `terms·x (sense) rhs`; its slack starts basic.
    pub fn add_row(&mut self, terms: &[(usize, f64)], sense: Sense, rhs: f64) {
        let s = self.lower.len();
        let (act_lo, act_hi) = terms.iter().fold((0.0, 0.0), |(lo, hi), &(j, a)| {
            let (l, u) = (self.outer_lower[j], self.outer_upper[j]);
            if a >= 0.0 {
                (lo + a * l, hi + a * u)
            } else {
                (lo + a * u, hi + a * l)
            }
        });
        // s = rhs − a·x; the margin keeps the implied side from ever binding
        let margin = 1.0 + 1e-6 * (rhs.abs() + act_lo.abs() + act_hi.abs());
        let (lo, hi) = match sense {
            Sense::Le => (0.0, (rhs - act_lo).max(0.0) + margin),
            Sense::Ge => ((rhs - act_hi).min(0.0) - margin, 0.0),
            Sense::Eq => (0.0, 0.0),
        };
        self.lower.push(lo);
        self.upper.push(hi);
        self.cost.push(0.0);
        self.d.push(0.0);
        self.state.push(State::Basic);
        for row in &mut self.tab {
            row.push(0.0);
        }
        let width = s + 1;
        let mut new_row = vec![0.0; width];
        let mut activity = 0.0;
        for &(j, a) in terms {
            activity += a * self.x[j];
            if self.state[j] == State::Basic {
                let r = self.row_of[j];
                for (dst, &src) in new_row.iter_mut().zip(&self.tab[r]) {
                    *dst -= a * src;
                }
            } else {
                new_row[j] += a;
            }
        }
        for &j in &self.basis {
            new_row[j] = 0.0;
        }
        new_row[s] = 1.0;
        self.x.push(rhs - activity);
        self.row_of.push(self.rows.len());
        self.basis.push(s);
        self.tab.push(new_row);
        self.rows.push(RowData { terms: terms.to_vec(), rhs });
    }

    /// Moves a structural variable's box, keeping the basis dual feasible.
    pub fn set_bounds(&mut self, j: usize, lo: f64, hi: f64) {
        self.lower[j] = lo;
        self.upper[j] = hi;
        if self.state[j] == State::Basic {
            return;
        }
        let (target, state) = if self.d[j] > DUAL_TOL {
            (lo, State::AtLower)
        } else if self.d[j] < -DUAL_TOL {
            (hi, State::AtUpper)
        } else if self.state[j] == State::AtUpper {
            (hi, State::AtUpper)
        } else {
            (lo, State::AtLower)
        };
        self.state[j] = state;
        let delta = target - self.x[j];
        if delta != 0.0 {
            self.x[j] = target;
            for (r, &b) in self.basis.iter().enumerate() {
                let a = self.tab[r][j];
                if a != 0.0 {
                    self.x[b] -= a * delta;
                }
            }
        }
    }

    fn infeasibility(&self, b: usize) -> f64 {
        let v = self.x[b];
        if v < self.lower[b] - PRIMAL_TOL {
            self.lower[b] - v
        } else if v > self.upper[b] + PRIMAL_TOL {
            v - self.upper[b]
        } else {
            0.0
        }
    }

    pub fn solve(&mut self) -> Result<Outcome, SolverError> {
        let mut stall = 0usize;
        let mut best_obj = f64::NEG_INFINITY;
        let mut iterations = 0usize;
        loop {
            if self.since_reinvert >= REINVERT_EVERY {
                self.reinvert()?;
            }
            let bland = stall > STALL_LIMIT;
            let Some(r) = self.choose_leaving(bland) else {
                if self.residual() > 1e-8 && self.since_reinvert > 0 {
                    self.reinvert()?;
                    continue;
                }
                return Ok(Outcome::Optimal);
            };
            let Some(q) = self.choose_entering(r, bland) else {
                if self.since_reinvert > 0 {
                    // confirm on a fresh factorization before declaring infeasible
                    self.reinvert()?;
                    if self.choose_leaving(true) == Some(r) && self.choose_entering(r, true).is_none() {
                        return Ok(Outcome::Infeasible);
                    }
                    continue;
                }
                return Ok(Outcome::Infeasible);
            };
            self.pivot(r, q);
            iterations += 1;
            if iterations > self.max_iterations {
                return Err(SolverError::Numeric(format!(
                    "dual simplex exceeded {} iterations with {} rows",
                    self.max_iterations,
                    self.rows.len()
                )));
            }
            let obj = self.objective();
            if obj > best_obj + 1e-12 * (1.0 + obj.abs()) {
                best_obj = obj;
                stall = 0;
            } else {
                stall += 1;
            }
        }
    }

    fn choose_leaving(&self, bland: bool) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (r, &b) in self.basis.iter().enumerate() {
            let inf = self.infeasibility(b);
            if inf <= 0.0 {
                continue;
            }
            let better = match best {
                None => true,
                Some((rb, vb)) => {
                    if bland {
                        b < self.basis[rb]
                    } else {
                        inf > vb || (inf == vb && b < self.basis[rb])
                    }
                }
            };
            if better {
                best = Some((r, inf));
            }
        }
        best.map(|(r, _)| r)
    }

    /// Harris two-pass ratio test on row `r`.
    fn choose_entering(&self, r: usize, bland: bool) -> Option<usize> {
        let b = self.basis[r];
        let increase = self.x[b] < self.lower[b];
        let row = &self.tab[r];
        let eligible = |j: usize| -> Option<(f64, f64)> {
            let st = self.state[j];
            if st == State::Basic || self.lower[j] == self.upper[j] {
                return None;
            }
            let a = row[j];
            if a.abs() <= PIVOT_TOL {
                return None;
            }
            let ok = match (st, increase) {
                (State::AtLower, true) => a < 0.0,
                (State::AtUpper, true) => a > 0.0,
                (State::AtLower, false) => a > 0.0,
                (State::AtUpper, false) => a < 0.0,
                _ => false,
            };
            if !ok {
                return None;
            }
            let dj = if st == State::AtLower { self.d[j] } else { -self.d[j] };
            Some((dj.max(0.0), a.abs()))
        };
        if bland {
            let mut best: Option<(usize, f64)> = None;
            for j in 0..row.len() {
                if let Some((dj, a)) = eligible(j) {
                    let ratio = dj / a;
                    if best.is_none_or(|(_, rb)| ratio < rb - 1e-15) {
                        best = Some((j, ratio));
                    }
                }
            }
            return best.map(|(j, _)| j);
        }
        let mut bound = f64::INFINITY;
        for j in 0..row.len() {
            if let Some((dj, a)) = eligible(j) {
                bound = bound.min((dj + DUAL_TOL) / a);
            }
        }
        if !bound.is_finite() {
            return None;
        }
        let mut best: Option<(usize, f64)> = None;
        for j in 0..row.len() {
            if let Some((dj, a)) = eligible(j) {
                if dj / a <= bound && best.is_none_or(|(_, ab)| a > ab) {
                    best = Some((j, a));
                }
            }
        }
        best.map(|(j, _)| j)
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let leaving = self.basis[r];
        let alpha = self.tab[r][q];
        let target = if self.x[leaving] < self.lower[leaving] {
            self.lower[leaving]
        } else {
            self.upper[leaving]
        };
        let step = (self.x[leaving] - target) / alpha;

        // primal values
        for (i, &b) in self.basis.iter().enumerate() {
            let a = self.tab[i][q];
            if a != 0.0 {
                self.x[b] -= a * step;
            }
        }
        self.x[q] += step;
        self.x[leaving] = target;

        // reduced costs
        let theta = self.d[q] / alpha;
        if theta != 0.0 {
            for (dj, &a) in self.d.iter_mut().zip(&self.tab[r]) {
                if a != 0.0 {
                    *dj -= theta * a;
                }
            }
        }
        self.d[q] = 0.0;

        // tableau
        let inv = 1.0 / alpha;
        let mut pivot_row = std::mem::take(&mut self.tab[r]);
        for v in pivot_row.iter_mut() {
            *v *= inv;
        }
        pivot_row[q] = 1.0;
        let nz: Vec<usize> = pivot_row
            .iter()
            .enumerate()
            .filter(|(_, v)| v.abs() > DROP_TOL)
            .map(|(j, _)| j)
            .collect();
        for (i, row) in self.tab.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[q];
            if f == 0.0 {
                continue;
            }
            for &j in &nz {
                row[j] -= f * pivot_row[j];
            }
            row[q] = 0.0;
        }
        self.tab[r] = pivot_row;

        self.state[leaving] = if target == self.lower[leaving] {
            State::AtLower
        } else {
            State::AtUpper
        };
        self.state[q] = State::Basic;
        self.row_of[q] = r;
        self.row_of[leaving] = usize::MAX;
        self.basis[r] = q;
        self.pivots += 1;
        self.since_reinvert += 1;
    }

    /// Largest `|a_i·x + s_i − b_i|` against the stored rows.
    fn residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for (i, row) in self.rows.iter().enumerate() {
            let s = self.n_struct + i;
            let lhs: f64 = row.terms.iter().map(|&(j, a)| a * self.x[j]).sum::<f64>() + self.x[s];
            worst = worst.max((lhs - row.rhs).abs());
        }
        worst
    }

    /// Rebuilds tableau, basic values and reduced costs from the original
    /// rows and the current basis by Gauss-Jordan elimination.
    fn reinvert(&mut self) -> Result<(), SolverError> {
        let m = self.rows.len();
        let width = self.lower.len();
        self.since_reinvert = 0;
        if m == 0 {
            return Ok(());
        }
        // dense [A | I] and right-hand side with nonbasic columns moved over
        let mut full = vec![vec![0.0; width]; m];
        let mut rhs = vec![0.0; m];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, a) in &row.terms {
                full[i][j] += a;
            }
            full[i][self.n_struct + i] = 1.0;
            rhs[i] = row.rhs;
        }
        for i in 0..m {
            for j in 0..width {
                if self.state[j] != State::Basic && full[i][j] != 0.0 {
                    rhs[i] -= full[i][j] * self.x[j];
                }
            }
        }
        // eliminate so that column basis[k] becomes unit vector e_k; a column
        // dependent on the earlier ones is swapped for the nonbasic column
        // with the largest remaining entry and parked at its nearer bound
        let mut basis = self.basis.clone();
        let mut order: Vec<usize> = (0..m).collect();
        for k in 0..m {
            let pick = |col: usize, full: &Vec<Vec<f64>>| {
                (k..m)
                    .map(|i| (i, full[order[i]][col].abs()))
                    .fold((k, -1.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc })
            };
            let (mut p, mag) = pick(basis[k], &full);
            if mag < SINGULAR_TOL {
                let dropped = basis[k];
                let (sub, sub_mag) = (0..width)
                    .filter(|&j| self.state[j] != State::Basic && self.lower[j] < self.upper[j])
                    .map(|j| (j, pick(j, &full).1))
                    .fold((usize::MAX, 0.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
                if sub_mag < SINGULAR_TOL {
                    return Err(SolverError::Numeric(format!(
                        "singular basis during refactorization (column {dropped}, pivot {mag:.3e}, {m} rows)"
                    )));
                }
                log::debug!("basis repair: column {dropped} replaced by {sub}");
                let (lo, hi) = (self.lower[dropped], self.upper[dropped]);
                let (bound, state) = if (self.x[dropped] - lo).abs() <= (hi - self.x[dropped]).abs() {
                    (lo, State::AtLower)
                } else {
                    (hi, State::AtUpper)
                };
                // move the dropped column's value to the right-hand side and
                // take the substitute's back out of it
                for i in 0..m {
                    rhs[i] += full[i][sub] * self.x[sub] - full[i][dropped] * bound;
                }
                self.x[dropped] = bound;
                self.state[dropped] = state;
                self.row_of[dropped] = usize::MAX;
                self.state[sub] = State::Basic;
                basis[k] = sub;
                p = pick(sub, &full).0;
            }
            let col = basis[k];
            order.swap(k, p);
            let pr = order[k];
            let inv = 1.0 / full[pr][col];
            for v in full[pr].iter_mut() {
                *v *= inv;
            }
            rhs[pr] *= inv;
            let prow = full[pr].clone();
            let prhs = rhs[pr];
            for &i in order.iter() {
                if i == pr {
                    continue;
                }
                let f = full[i][col];
                if f != 0.0 {
                    for (dst, &src) in full[i].iter_mut().zip(&prow) {
                        *dst -= f * src;
                    }
                    rhs[i] -= f * prhs;
                }
            }
        }
        for (k, &b) in basis.iter().enumerate() {
            self.row_of[b] = k;
        }
        self.basis = basis.clone();
        let mut tab = Vec::with_capacity(m);
        for k in 0..m {
            let mut row = std::mem::take(&mut full[order[k]]);
            for &b in &basis {
                row[b] = 0.0;
            }
            row[basis[k]] = 1.0;
            tab.push(row);
            self.x[basis[k]] = rhs[order[k]];
        }
        self.tab = tab;
        let mut d = self.cost.clone();
        for (k, &b) in basis.iter().enumerate() {
            let cb = self.cost[b];
            if cb != 0.0 {
                for (dj, &a) in d.iter_mut().zip(&self.tab[k]) {
                    *dj -= cb * a;
                }
            }
        }
        for &b in &basis {
            d[b] = 0.0;
        }
        // restore dual feasibility lost to rounding; fixed columns keep their
        // true reduced cost, which decides their side once they are released
        for j in 0..width {
            if self.lower[j] == self.upper[j] {
                continue;
            }
            match self.state[j] {
                State::AtLower if d[j] < -DUAL_TOL => {
                    self.state[j] = State::AtUpper;
                    let delta = self.upper[j] - self.x[j];
                    self.x[j] = self.upper[j];
                    self.shift_basics(j, delta);
                }
                State::AtUpper if d[j] > DUAL_TOL => {
                    self.state[j] = State::AtLower;
                    let delta = self.lower[j] - self.x[j];
                    self.x[j] = self.lower[j];
                    self.shift_basics(j, delta);
                }
                _ => {}
            }
        }
        self.d = d;
        Ok(())
    }

    fn shift_basics(&mut self, j: usize, delta: f64) {
        for (r, &b) in self.basis.iter().enumerate() {
            let a = self.tab[r][j];
            if a != 0.0 {
                self.x[b] -= a * delta;
            }
        }
    }
}
