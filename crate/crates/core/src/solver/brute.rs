//! Exhaustive enumeration of binary patterns, for cross-checking on small
//! instances.

use super::bnb::Relaxation;
use super::{MipSolution, MipStatus, SolverError};
use crate::problem::{MilProblem, Sense};
use std::collections::BTreeMap;
use std::time::Instant;

/// Largest number of binary patterns that will be enumerated.
pub const MAX_PATTERNS: f64 = (1u64 << 22) as f64;

/// Groups of binaries tied by a `Σ z = 1` row, plus the remaining free
/// binaries. Each binary lands in at most one group.
fn partition_binaries(problem: &MilProblem) -> (Vec<Vec<usize>>, Vec<usize>) {
    let model = &problem.model;
    let mut grouped = vec![false; model.num_vars()];
    let mut groups = Vec::new();
    for c in &model.constraints {
        let one_hot = c.sense == Sense::Eq
            && c.rhs == 1.0
            && c.terms.len() > 1
            && c.terms.iter().all(|&(j, a)| a == 1.0 && model.is_binary(j) && !grouped[j]);
        if one_hot {
            let members: Vec<usize> = c.terms.iter().map(|&(j, _)| j).collect();
            for &j in &members {
                grouped[j] = true;
            }
            groups.push(members);
        }
    }
    let free = model.binaries().filter(|&j| !grouped[j]).collect();
    (groups, free)
}

/// Solves by fixing every binary pattern and optimizing the continuous rest.
/// Ties keep the first pattern in enumeration order.
pub fn brute_force_solve(problem: &MilProblem) -> Result<MipSolution, SolverError> {
    let start = Instant::now();
    let (groups, free) = partition_binaries(problem);
    let patterns = groups.iter().map(|g| g.len() as f64).product::<f64>() * 2f64.powi(free.len() as i32);
    if patterns > MAX_PATTERNS {
        return Err(SolverError::TooLarge(patterns));
    }
    let mut relax = Relaxation::new(problem)?;
    let mut best: Option<(f64, Vec<f64>)> = None;
    // mixed-radix counter: one digit per group, then one bit per free binary
    let radices: Vec<usize> = groups.iter().map(|g| g.len()).chain(free.iter().map(|_| 2)).collect();
    let mut digits = vec![0usize; radices.len()];
    let mut visited = 0usize;
    loop {
        let mut fixed = BTreeMap::new();
        for (g, members) in groups.iter().enumerate() {
            for (k, &j) in members.iter().enumerate() {
                let v = if k == digits[g] { 1.0 } else { 0.0 };
                fixed.insert(j, (v, v));
            }
        }
        for (f, &j) in free.iter().enumerate() {
            let v = digits[groups.len() + f] as f64;
            fixed.insert(j, (v, v));
        }
        relax.apply(&fixed);
        visited += 1;
        if relax.solve()?.is_some() {
            let mut x = relax.x().to_vec();
            for (&j, &(v, _)) in &fixed {
                x[j] = v;
            }
            let obj = problem.exact_objective(&x);
            if best.as_ref().is_none_or(|(b, _)| obj < *b) {
                best = Some((obj, x));
            }
        }
        // advance the counter
        let mut pos = 0;
        while pos < digits.len() {
            digits[pos] += 1;
            if digits[pos] < radices[pos] {
                break;
            }
            digits[pos] = 0;
            pos += 1;
        }
        if pos == digits.len() {
            break;
        }
    }
    let wall_time = start.elapsed();
    let Some((objective, x)) = best else {
        let mut sol = MipSolution::infeasible(visited, wall_time);
        sol.lp_pivots = relax.pivots();
        return Ok(sol);
    };
    Ok(MipSolution {
        status: MipStatus::Optimal,
        x,
        objective,
        bound: objective,
        gap: 0.0,
        nodes: visited,
        lp_pivots: relax.pivots(),
        wall_time,
        node_log: Vec::new(),
    })
}
