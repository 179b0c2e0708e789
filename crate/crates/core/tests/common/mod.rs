#![allow(dead_code)]

use mdpc::formulation::{HorizonInputs, RegularizerState};
use mdpc::model::{build_grid, BatterySpec, QuantGrid};
use mdpc::stats::{estimate_probs, CountWindow, ProbEstimates};
use rand::Rng;

pub struct Instance {
    pub inputs: HorizonInputs,
    pub probs: ProbEstimates,
    pub y_grid: QuantGrid,
    pub battery: BatterySpec,
    pub mu: f64,
    pub reg: Option<RegularizerState>,
}

/// Small random controller instance: `steps ≤ 5`, `m, n ≤ 5`, `M ≤ 20`.
pub fn random_instance(rng: &mut impl Rng) -> Instance {
    let steps = rng.gen_range(1..=5);
    let (m, n) = (rng.gen_range(2..=5), rng.gen_range(2..=5));
    let past = rng.gen_range(1..=20);
    let x_grid = build_grid(3.6, m).unwrap();
    let y_grid = build_grid(7.0, n).unwrap();
    let load: Vec<f64> = (0..steps).map(|_| rng.gen_range(0.05..3.6)).collect();
    let mut joint = vec![0u32; m * n];
    for _ in 0..rng.gen_range(0..past) {
        joint[rng.gen_range(0..m * n)] += 1;
    }
    let window = CountWindow {
        nominal_len: past + steps - 1,
        m,
        n,
        joint,
        horizon_bins: load.iter().map(|&x| mdpc::model::quantize(x, &x_grid).unwrap()).collect(),
    };
    let probs = estimate_probs(&window, rng.gen_range(0.05..1.0)).unwrap();
    let battery = BatterySpec::symmetric(rng.gen_range(1.0..7.0), rng.gen_range(0.5..3.3), 0.96).unwrap();
    let reg = (steps > 1 && rng.gen_bool(0.5)).then(|| RegularizerState {
        grid: (0..steps - 1).map(|_| rng.gen_range(0.0..5.0)).collect(),
        load: load[..steps - 1].to_vec(),
        generation: vec![0.0; steps - 1],
        sigma: 0.11,
        gamma: 0.0,
    });
    Instance {
        inputs: HorizonInputs {
            soc: rng.gen_range(0.0..battery.capacity_kwh),
            load,
            generation: vec![0.0; steps],
            prices: (0..steps).map(|_| if rng.gen_bool(0.5) { 24.6 } else { 13.15 }).collect(),
        },
        probs,
        y_grid,
        battery,
        mu: if rng.gen_bool(0.1) { 0.0 } else { rng.gen_range(1.0..80.0) },
        reg,
    }
}
