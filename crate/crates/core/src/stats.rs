//! Joint histogram statistics over the counting window and the mutual
//! information estimates built from them.
//!
//! The counting window spans `N = M + T` intervals: `M - 1` realized past
//! intervals `{t-M+1, .., t-1}` and the `T + 1` horizon intervals `{t, .., t+T}`.
//! Past pairs are fixed counts; the grid bins of the horizon are decision
//! variables, so every estimate takes the horizon assignment as an argument.

use crate::model::{quantize_clamped, QuantGrid};
use thiserror::Error;

/// `ν = 1 / ln 2`, the derivative scale of `log2`.
pub const NU: f64 = std::f64::consts::LOG2_E;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("smoothing constant must be positive, got {0}")]
    Smoothing(f64),
    #[error("safeguard infeasible: rho/nu = {rho_over_nu} must exceed m*n = {mn}")]
    InfeasibleSafeguard { rho_over_nu: f64, mn: f64 },
    #[error("horizon assignment has {got} entries, expected {expected}")]
    HorizonLength { got: usize, expected: usize },
    #[error("grid bin {bin} out of range 0..{n}")]
    BinRange { bin: usize, n: usize },
}

/// Past joint counts plus the known consumer bins over the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct CountWindow {
    /// Nominal window length `N`.
    pub nominal_len: usize,
    pub m: usize,
    pub n: usize,
    /// Row-major `m × n` table of past `(i, j)` counts.
    pub joint: Vec<u32>,
    /// Consumer bin of each horizon interval.
    pub horizon_bins: Vec<usize>,
}

impl CountWindow {
    pub fn count(&self, i: usize, j: usize) -> u32 {
        self.joint[i * self.n + j]
    }

    pub fn past_total(&self) -> u32 {
        self.joint.iter().sum()
    }

    /// Window with every pair treated as past data and an empty horizon,
    /// `N` equal to the number of pairs. Used for after-the-fact evaluation.
    pub fn from_pairs(pairs: &[(f64, f64)], x_grid: &QuantGrid, y_grid: &QuantGrid) -> Self {
        let (m, n) = (x_grid.len(), y_grid.len());
        let mut joint = vec![0u32; m * n];
        for &(x, y) in pairs {
            joint[quantize_clamped(x, x_grid) * n + quantize_clamped(y, y_grid)] += 1;
        }
        Self {
            nominal_len: pairs.len(),
            m,
            n,
            joint,
            horizon_bins: Vec::new(),
        }
    }
}

/// Tallies the window used by the controller at time `t`.
///
/// `history[τ]` holds the realized `(x, y)` of interval `τ`; only entries in
/// `{t-M+1, .., t-1}` are counted. During warm-up fewer than `M - 1` pairs
/// exist and the table simply holds fewer counts. `forecast` supplies the
/// consumer load for `{t, .., t+T}`.
pub fn count_window(
    history: &[(f64, f64)],
    forecast: &[f64],
    x_grid: &QuantGrid,
    y_grid: &QuantGrid,
    past_len: usize,
    horizon: usize,
    t: usize,
) -> CountWindow {
    let (m, n) = (x_grid.len(), y_grid.len());
    let end = t.min(history.len());
    let start = (t + 1).saturating_sub(past_len).min(end);
    let mut joint = vec![0u32; m * n];
    for &(x, y) in &history[start..end] {
        joint[quantize_clamped(x, x_grid) * n + quantize_clamped(y, y_grid)] += 1;
    }
    let horizon_bins = forecast
        .iter()
        .take(horizon + 1)
        .map(|&x| quantize_clamped(x, x_grid))
        .collect();
    CountWindow {
        nominal_len: past_len + horizon,
        m,
        n,
        joint,
        horizon_bins,
    }
}

/// Smoothed constant parts of the window's probability estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbEstimates {
    pub m: usize,
    pub n: usize,
    /// Row-major `a[i][j]`: smoothed past joint frequency.
    pub a: Vec<f64>,
    /// Smoothed past grid-bin frequency.
    pub b: Vec<f64>,
    /// Consumer marginal over the full window including the horizon.
    pub c: Vec<f64>,
    pub epsilon: f64,
    /// `N + m·n·ε`.
    pub n_eps: f64,
    pub horizon_bins: Vec<usize>,
}

impl ProbEstimates {
    pub fn a(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }

    pub fn horizon_len(&self) -> usize {
        self.horizon_bins.len()
    }

    fn check_assignment(&self, z: &[usize]) -> Result<(), StatsError> {
        if z.len() != self.horizon_bins.len() {
            return Err(StatsError::HorizonLength {
                got: z.len(),
                expected: self.horizon_bins.len(),
            });
        }
        if let Some(&bin) = z.iter().find(|&&j| j >= self.n) {
            return Err(StatsError::BinRange { bin, n: self.n });
        }
        Ok(())
    }

    /// Horizon counts `Σ_τ z^{ij}_τ` (row-major) and `Σ_τ Σ_k z^{kj}_τ`.
    fn horizon_counts(&self, z: &[usize]) -> (Vec<u32>, Vec<u32>) {
        let mut joint = vec![0u32; self.m * self.n];
        let mut grid = vec![0u32; self.n];
        for (&i, &j) in self.horizon_bins.iter().zip(z) {
            joint[i * self.n + j] += 1;
            grid[j] += 1;
        }
        (joint, grid)
    }
}

pub fn estimate_probs(window: &CountWindow, epsilon: f64) -> Result<ProbEstimates, StatsError> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(StatsError::Smoothing(epsilon));
    }
    let (m, n) = (window.m, window.n);
    let n_eps = window.nominal_len as f64 + (m * n) as f64 * epsilon;

    let a = window
        .joint
        .iter()
        .map(|&k| (k as f64 + epsilon) / n_eps)
        .collect();
    let b = (0..n)
        .map(|j| {
            let col: u32 = (0..m).map(|i| window.count(i, j)).sum();
            (col as f64 + m as f64 * epsilon) / n_eps
        })
        .collect();
    let mut consumer = vec![0u32; m];
    for i in 0..m {
        consumer[i] = (0..n).map(|j| window.count(i, j)).sum();
    }
    for &i in &window.horizon_bins {
        consumer[i] += 1;
    }
    let c = consumer
        .iter()
        .map(|&k| (k as f64 + n as f64 * epsilon) / n_eps)
        .collect();

    Ok(ProbEstimates {
        m,
        n,
        a,
        b,
        c,
        epsilon,
        n_eps,
        horizon_bins: window.horizon_bins.clone(),
    })
}

/// Nonlinear estimate `Ī` in bits for the horizon grid-bin assignment `z`.
pub fn mutual_info_exact(probs: &ProbEstimates, z: &[usize]) -> Result<f64, StatsError> {
    probs.check_assignment(z)?;
    let (hz, hb) = probs.horizon_counts(z);
    let inv = 1.0 / probs.n_eps;
    let mut total = 0.0;
    for j in 0..probs.n {
        let p_y = probs.b[j] + hb[j] as f64 * inv;
        for i in 0..probs.m {
            let p_xy = probs.a(i, j) + hz[i * probs.n + j] as f64 * inv;
            total += p_xy * (p_xy.log2() - p_y.log2() - probs.c[i].log2());
        }
    }
    Ok(total)
}

/// Estimate `Ĩ` with first-order expansions of both logarithms around the
/// constant parts `a` and `b`. Quadratic in the horizon indicators.
pub fn mutual_info_linearized(probs: &ProbEstimates, z: &[usize]) -> Result<f64, StatsError> {
    probs.check_assignment(z)?;
    let (hz, hb) = probs.horizon_counts(z);
    let inv = 1.0 / probs.n_eps;
    let mut total = 0.0;
    for j in 0..probs.n {
        let b = probs.b[j];
        let shift_b = hb[j] as f64 * inv;
        for i in 0..probs.m {
            let a = probs.a(i, j);
            let shift_a = hz[i * probs.n + j] as f64 * inv;
            let log_term = (a / (b * probs.c[i])).log2() + NU / a * shift_a - NU / b * shift_b;
            total += (a + shift_a) * log_term;
        }
    }
    Ok(total)
}

/// Smallest smoothing constant for which `ν/a ≤ ρ` and `ν/b ≤ ρ` hold for
/// every window of nominal length `N`, including one with no past counts.
pub fn epsilon_from_rho(nominal_len: usize, m: usize, n: usize, rho: f64) -> Result<f64, StatsError> {
    let mn = (m * n) as f64;
    let rho_over_nu = rho / NU;
    if !(rho_over_nu > mn) || !rho.is_finite() {
        return Err(StatsError::InfeasibleSafeguard { rho_over_nu, mn });
    }
    let n_f = nominal_len as f64;
    let mut eps = n_f / (rho_over_nu - mn);
    if eps <= 0.0 {
        // N = 0: any positive ε satisfies the bound
        eps = f64::MIN_POSITIVE;
    }
    // The closed form can overshoot ρ by an ulp once evaluated in floating point.
    while NU / (eps / (n_f + mn * eps)) > rho {
        eps = next_up(eps);
    }
    Ok(eps)
}

fn next_up(x: f64) -> f64 {
    f64::from_bits(x.to_bits() + 1)
}

/// `Ī` of the given `(x, y)` pairs treated as one static window.
pub fn mutual_info_of_pairs(
    pairs: &[(f64, f64)],
    x_grid: &QuantGrid,
    y_grid: &QuantGrid,
    epsilon: f64,
) -> Result<f64, StatsError> {
    let window = CountWindow::from_pairs(pairs, x_grid, y_grid);
    let probs = estimate_probs(&window, epsilon)?;
    mutual_info_exact(&probs, &[])
}
