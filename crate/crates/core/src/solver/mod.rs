//! Exact solution of the horizon problems: a bounded dual simplex for linear
//! relaxations, LP-based branch-and-bound, and an enumeration oracle.

mod bnb;
mod brute;
mod simplex;

use crate::problem::Sense;
use thiserror::Error;

pub use bnb::{branch_and_bound, BnbSettings};
pub use brute::{brute_force_solve, MAX_PATTERNS};

pub(crate) use simplex::{DualSimplex, Outcome};

/// Reported feasibility tolerance of LP and MIP solutions.
pub const FEASIBILITY_TOL: f64 = 1e-7;
/// Binaries this close to 0 or 1 count as integral.
pub const INTEGRALITY_TOL: f64 = 1e-6;
pub const DEFAULT_GAP_TOL: f64 = 1e-6;

/// Bound substituted for infinite variable bounds when detecting unboundedness.
const BIG_BOX: f64 = 1e9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("numerical breakdown: {0}")]
    Numeric(String),
    #[error("instance too large for enumeration: {0} patterns")]
    TooLarge(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpRow {
    pub terms: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// `min cost·x + constant` subject to `rows` and `lower ≤ x ≤ upper`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearProgram {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub cost: Vec<f64>,
    pub constant: f64,
    pub rows: Vec<LpRow>,
}

impl LinearProgram {
    pub fn num_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let bounds = (0..self.num_vars())
            .map(|j| (self.lower[j] - x[j]).max(x[j] - self.upper[j]).max(0.0))
            .fold(0.0, f64::max);
        self.rows
            .iter()
            .map(|r| {
                let lhs: f64 = r.terms.iter().map(|&(j, a)| a * x[j]).sum();
                match r.sense {
                    Sense::Le => (lhs - r.rhs).max(0.0),
                    Sense::Ge => (r.rhs - lhs).max(0.0),
                    Sense::Eq => (lhs - r.rhs).abs(),
                }
            })
            .fold(bounds, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
}

/// Solves a linear program from scratch.
///
/// Infinite bounds are replaced by a large box; an optimum that rests on
/// that box is reported as unbounded.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution, SolverError> {
    let n = lp.num_vars();
    if lp.lower.len() != n || lp.upper.len() != n {
        return Err(SolverError::Numeric("bound vectors do not match the cost vector".into()));
    }
    let boxed = |v: f64| v.clamp(-BIG_BOX, BIG_BOX);
    let lower: Vec<f64> = lp.lower.iter().map(|&v| boxed(v)).collect();
    let upper: Vec<f64> = lp.upper.iter().map(|&v| boxed(v)).collect();
    if let Some(j) = (0..n).find(|&j| lower[j] > upper[j]) {
        log::debug!("variable {j} has empty domain");
        return Ok(LpSolution {
            status: LpStatus::Infeasible,
            x: vec![0.0; n],
            objective: f64::INFINITY,
        });
    }
    let mut ws = DualSimplex::new(&lower, &upper, &lp.cost)?;
    for row in &lp.rows {
        ws.add_row(&row.terms, row.sense, row.rhs);
    }
    match ws.solve()? {
        Outcome::Infeasible => Ok(LpSolution {
            status: LpStatus::Infeasible,
            x: ws.structural_values().to_vec(),
            objective: f64::INFINITY,
        }),
        Outcome::Optimal => {
            let x = ws.structural_values().to_vec();
            let on_box = (0..n).any(|j| {
                (lp.lower[j].is_infinite() && x[j] <= -BIG_BOX * 0.5)
                    || (lp.upper[j].is_infinite() && x[j] >= BIG_BOX * 0.5)
            });
            if on_box {
                return Ok(LpSolution {
                    status: LpStatus::Unbounded,
                    x,
                    objective: f64::NEG_INFINITY,
                });
            }
            let objective = lp.constant + lp.cost.iter().zip(&x).map(|(c, v)| c * v).sum::<f64>();
            Ok(LpSolution {
                status: LpStatus::Optimal,
                x,
                objective,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MipStatus {
    Optimal,
    GapLimit,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MipSolution {
    pub status: MipStatus,
    pub x: Vec<f64>,
    /// Objective at `x`, squares evaluated exactly.
    pub objective: f64,
    /// Best proven lower bound.
    pub bound: f64,
    pub gap: f64,
    pub nodes: usize,
    pub lp_pivots: usize,
    pub wall_time: std::time::Duration,
    /// One line per processed node when node logging is enabled.
    pub node_log: Vec<String>,
}

impl MipSolution {
    pub(crate) fn infeasible(nodes: usize, wall_time: std::time::Duration) -> Self {
        Self {
            status: MipStatus::Infeasible,
            x: Vec::new(),
            objective: f64::INFINITY,
            bound: f64::INFINITY,
            gap: f64::INFINITY,
            nodes,
            lp_pivots: 0,
            wall_time,
            node_log: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn row(terms: &[(usize, f64)], sense: Sense, rhs: f64) -> LpRow {
        LpRow { terms: terms.to_vec(), sense, rhs }
    }

    #[test]
    fn single_lower_bound() {
        // min x  s.t. x >= 3
        let lp = LinearProgram {
            lower: vec![f64::NEG_INFINITY],
            upper: vec![f64::INFINITY],
            cost: vec![1.0],
            constant: 0.0,
            rows: vec![row(&[(0, 1.0)], Sense::Ge, 3.0)],
        };
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert_abs_diff_eq!(sol.x[0], 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.objective, 3.0, epsilon = 1e-9);
    }

    #[test]
    fn equality_system_unique_point() {
        // x + y = 3, x - y = 1, degenerate objective
        let lp = LinearProgram {
            lower: vec![0.0, 0.0],
            upper: vec![10.0, 10.0],
            cost: vec![0.0, 0.0],
            constant: 0.0,
            rows: vec![
                row(&[(0, 1.0), (1, 1.0)], Sense::Eq, 3.0),
                row(&[(0, 1.0), (1, -1.0)], Sense::Eq, 1.0),
            ],
        };
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert_abs_diff_eq!(sol.x[0], 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.x[1], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let lp = LinearProgram {
            lower: vec![0.0],
            upper: vec![1.0],
            cost: vec![1.0],
            constant: 0.0,
            rows: vec![row(&[(0, 1.0)], Sense::Ge, 2.0)],
        };
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Infeasible);

        let lp = LinearProgram {
            lower: vec![0.0, 0.0],
            upper: vec![f64::INFINITY, 5.0],
            cost: vec![-1.0, 0.0],
            constant: 0.0,
            rows: vec![row(&[(0, 1.0), (1, -1.0)], Sense::Ge, 0.0)],
        };
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn textbook_example() {
        // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18  ->  (2, 6), 36
        let lp = LinearProgram {
            lower: vec![0.0, 0.0],
            upper: vec![100.0, 100.0],
            cost: vec![-3.0, -5.0],
            constant: 0.0,
            rows: vec![
                row(&[(0, 1.0)], Sense::Le, 4.0),
                row(&[(1, 2.0)], Sense::Le, 12.0),
                row(&[(0, 3.0), (1, 2.0)], Sense::Le, 18.0),
            ],
        };
        let sol = solve_lp(&lp).unwrap();
        assert_abs_diff_eq!(sol.objective, -36.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.x[0], 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.x[1], 6.0, epsilon = 1e-9);
    }

    #[test]
    fn warm_restart_after_bound_change() {
        let mut ws = DualSimplex::new(&[0.0, 0.0], &[100.0, 100.0], &[-3.0, -5.0]).unwrap();
        ws.add_row(&[(0, 1.0)], Sense::Le, 4.0);
        ws.add_row(&[(1, 2.0)], Sense::Le, 12.0);
        ws.add_row(&[(0, 3.0), (1, 2.0)], Sense::Le, 18.0);
        assert_eq!(ws.solve().unwrap(), Outcome::Optimal);
        assert_abs_diff_eq!(ws.objective(), -36.0, epsilon = 1e-9);
        ws.set_bounds(1, 0.0, 5.0);
        assert_eq!(ws.solve().unwrap(), Outcome::Optimal);
        // y = 5, x = min(4, 8/3)
        assert_abs_diff_eq!(ws.objective(), -8.0 - 25.0, epsilon = 1e-9);
        ws.add_row(&[(0, 1.0), (1, 1.0)], Sense::Le, 6.0);
        assert_eq!(ws.solve().unwrap(), Outcome::Optimal);
        assert_abs_diff_eq!(ws.objective(), -(3.0 + 25.0), epsilon = 1e-9);
        ws.set_bounds(0, 7.0, 7.0);
        assert_eq!(ws.solve().unwrap(), Outcome::Infeasible);
    }
}
