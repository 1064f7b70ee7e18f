//! Case series generated from a forward run, for twin experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ParameterVector;
use crate::objective::{incidence_field, CaseSeries};
use crate::scenario::Scenario;
use crate::trajectory::{run_forward, ForwardStepper, Storage, Trajectory};

/// Ground truth written next to a synthetic case file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub beta: [f64; 3],
    pub breakpoints: [f64; 2],
    pub kappa: f64,
    pub delta: f64,
    pub seeds: indexmap::IndexMap<String, f64>,
    pub noise: f64,
    pub seed: u64,
    pub backend: String,
    pub tau: f64,
}

impl SyntheticTruth {
    pub fn new(params: &ParameterVector, noise: f64, seed: u64, stepper: &dyn ForwardStepper) -> Self {
        SyntheticTruth {
            beta: params.schedule.betas,
            breakpoints: params.schedule.breakpoints,
            kappa: params.kappa,
            delta: params.delta,
            seeds: params.init_infected.clone(),
            noise,
            seed,
            backend: stepper.backend().name().to_string(),
            tau: stepper.tau(),
        }
    }
}

/// Noise-free detected cases per region and day: population times the region-mean incidence.
pub fn exact_cases(trajectory: &Trajectory, scenario: &Scenario, params: &ParameterVector) -> Result<Vec<Vec<f64>>> {
    let pops = scenario.region_populations();
    let cells: Vec<Vec<usize>> = scenario.regions.iter().map(|m| m.indices()).collect();
    let mut out = vec![Vec::with_capacity(trajectory.days() + 1); pops.len()];
    for d in 0..=trajectory.days() {
        let inc = incidence_field(
            trajectory.state_at_day(d),
            scenario.model,
            &params.schedule,
            params.delta,
            d as f64,
        )?;
        let flat = inc.as_slice().expect("standard layout");
        for (r, c) in cells.iter().enumerate() {
            let mean = c.iter().map(|&p| flat[p]).sum::<f64>() / c.len() as f64;
            out[r].push(pops[r] * mean);
        }
    }
    Ok(out)
}

/// Runs the model from `params` and returns per-region series with multiplicative noise
/// `c·(1 + noise·z)`, clamped at zero.
pub fn generate_synthetic(
    stepper: &dyn ForwardStepper,
    scenario: &Scenario,
    params: &ParameterVector,
    noise: f64,
    seed: u64,
) -> Result<(Vec<CaseSeries>, Trajectory)> {
    if !(noise >= 0.0) || !noise.is_finite() {
        return Err(Error::Parameter(format!("noise level must be >= 0, got {noise}")));
    }
    params.validate()?;
    let u0 = scenario.initial_state(&params.init_infected)?;
    let traj = run_forward(
        stepper,
        scenario,
        &params.schedule,
        u0,
        params.schedule.t_end,
        Storage::Daily,
    )?;
    let exact = exact_cases(&traj, scenario, params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let series = scenario
        .regions
        .iter()
        .zip(exact)
        .map(|(region, cases)| {
            let noisy = cases
                .into_iter()
                .map(|c| {
                    if noise == 0.0 {
                        c
                    } else {
                        let z: f64 = rng.sample(StandardNormal);
                        (c * (1.0 + noise * z)).max(0.0)
                    }
                })
                .collect();
            CaseSeries::new(region.name.clone(), noisy)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((series, traj))
}
