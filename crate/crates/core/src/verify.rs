//! Self-checks run by `mdpc verify`: branch-and-bound against exhaustive
//! enumeration, and the MI estimate against a direct summation.

use crate::formulation::{build_mdpc_problem_as, linearize_products, HorizonInputs, InformationForm, RegularizerState};
use crate::model::{build_grid, quantize, BatterySpec};
use crate::solver::{branch_and_bound, brute_force_solve, BnbSettings, MipStatus, SolverError};
use crate::stats::{estimate_probs, mutual_info_exact, CountWindow};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Formulation(#[from] crate::formulation::FormulationError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Stats(#[from] crate::stats::StatsError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

/// Outcome of one named check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    /// Largest discrepancy seen.
    pub worst: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Compares branch-and-bound on the tight pattern form with exhaustive
/// enumeration of the product form, on `cases` random small instances.
pub fn check_solver(cases: usize, seed: u64) -> Result<CheckResult, VerifyError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut result = CheckResult { name: "branch-and-bound vs enumeration", cases, failures: 0, worst: 0.0 };
    for _ in 0..cases {
        let steps = rng.gen_range(1..=4);
        let (m, n) = (rng.gen_range(2..=4), rng.gen_range(2..=4));
        let past = rng.gen_range(1..=20);
        let x_grid = build_grid(3.6, m)?;
        let y_grid = build_grid(7.0, n)?;
        let load: Vec<f64> = (0..steps).map(|_| rng.gen_range(0.05..3.6)).collect();
        let mut joint = vec![0u32; m * n];
        for _ in 0..rng.gen_range(0..past) {
            joint[rng.gen_range(0..m * n)] += 1;
        }
        let horizon_bins = load.iter().map(|&x| quantize(x, &x_grid)).collect::<Result<_, _>>()?;
        let window = CountWindow { nominal_len: past + steps - 1, m, n, joint, horizon_bins };
        let probs = estimate_probs(&window, 0.1)?;
        let battery = BatterySpec::symmetric(rng.gen_range(1.0..7.0), rng.gen_range(0.5..3.3), 0.96)?;
        let reg = (steps > 1).then(|| RegularizerState {
            grid: (0..steps - 1).map(|_| rng.gen_range(0.0..5.0)).collect(),
            load: load[..steps - 1].to_vec(),
            generation: vec![0.0; steps - 1],
            sigma: 0.11,
            gamma: 0.0,
        });
        let inputs = HorizonInputs {
            soc: rng.gen_range(0.0..battery.capacity_kwh),
            generation: vec![0.0; steps],
            prices: (0..steps).map(|_| if rng.gen_bool(0.5) { 24.6 } else { 13.15 }).collect(),
            load,
        };
        let mu = rng.gen_range(0.0..80.0);
        let build = |form| -> Result<_, VerifyError> {
            let miq = build_mdpc_problem_as(&inputs, &probs, &y_grid, &battery, mu, reg.as_ref(), form)?;
            Ok(linearize_products(&miq)?)
        };
        let exact = brute_force_solve(&build(InformationForm::Products)?)?;
        let bnb = branch_and_bound(&build(InformationForm::Patterns)?, &BnbSettings::default())?;
        let agree = match (exact.status, bnb.status) {
            (MipStatus::Infeasible, MipStatus::Infeasible) => true,
            (MipStatus::Optimal, MipStatus::Optimal) => {
                let diff = (exact.objective - bnb.objective).abs();
                result.worst = result.worst.max(diff);
                diff <= 1e-6 * (1.0 + exact.objective.abs())
            }
            _ => false,
        };
        if !agree {
            result.failures += 1;
        }
    }
    Ok(result)
}

/// Compares the MI estimate with a plain double sum over smoothed
/// frequencies on random count tables.
pub fn check_estimator(cases: usize, seed: u64) -> Result<CheckResult, VerifyError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut result = CheckResult { name: "MI estimate vs direct sum", cases, failures: 0, worst: 0.0 };
    for _ in 0..cases {
        let (m, n) = (rng.gen_range(2..=8), rng.gen_range(2..=8));
        let total = rng.gen_range(1..200u32);
        let mut joint = vec![0u32; m * n];
        for _ in 0..total {
            joint[rng.gen_range(0..m * n)] += 1;
        }
        let eps = rng.gen_range(0.01..1.0);
        let window = CountWindow { nominal_len: total as usize, m, n, joint: joint.clone(), horizon_bins: Vec::new() };
        let ours = mutual_info_exact(&estimate_probs(&window, eps)?, &[])?;
        let norm = total as f64 + (m * n) as f64 * eps;
        let p = |i: usize, j: usize| (joint[i * n + j] as f64 + eps) / norm;
        let px: Vec<f64> = (0..m).map(|i| (0..n).map(|j| p(i, j)).sum()).collect();
        let py: Vec<f64> = (0..n).map(|j| (0..m).map(|i| p(i, j)).sum()).collect();
        let mut direct = 0.0;
        for i in 0..m {
            for j in 0..n {
                direct += p(i, j) * (p(i, j) / (px[i] * py[j])).log2();
            }
        }
        let diff = (ours - direct).abs();
        result.worst = result.worst.max(diff);
        if diff > 1e-12 {
            result.failures += 1;
        }
    }
    Ok(result)
}
