//! Random-walk Metropolis over `χ` and, optionally, the regional seeds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Estimator, FitResult, InitMode, IterationRecord, Problem, Termination};
use crate::error::{Error, Result};
use crate::models::{ParameterVector, CHI_LEN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetropolisConfig {
    pub draws: usize,
    /// Fraction of the chain discarded before averaging.
    pub burn_in: f64,
    /// Proposal standard deviations; defaults to 1/100 of the starting values.
    pub step_scale: Option<Vec<f64>>,
    /// Likelihood temperature; defaults to the standard deviation of the district's daily incidence.
    pub sigma: Option<f64>,
    pub seed: u64,
    /// Consecutive rejections after which the chain is reported as stuck.
    pub stuck_window: usize,
}

impl Default for MetropolisConfig {
    fn default() -> Self {
        MetropolisConfig {
            draws: 10_000,
            burn_in: 0.2,
            step_scale: None,
            sigma: None,
            seed: 0,
            stuck_window: 1_000,
        }
    }
}

impl MetropolisConfig {
    pub fn burn_in_draws(&self) -> usize {
        (self.draws as f64 * self.burn_in).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.burn_in) {
            return Err(Error::config("metropolis.burn_in", "must lie in [0, 1)"));
        }
        if self.draws <= self.burn_in_draws() {
            return Err(Error::config(
                "metropolis.draws",
                format!(
                    "draws ({}) must exceed the burn-in ({})",
                    self.draws,
                    self.burn_in_draws()
                ),
            ));
        }
        if let Some(s) = &self.step_scale {
            if s.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(Error::config("metropolis.step_scale", "every entry must be > 0"));
            }
        }
        if let Some(s) = self.sigma {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::config("metropolis.sigma", "must be > 0"));
            }
        }
        Ok(())
    }
}

/// One proposal and the decision taken on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainEntry {
    pub iteration: usize,
    pub proposal: Vec<f64>,
    pub in_bounds: bool,
    pub j_old: f64,
    /// `None` if the proposal was out of bounds or its forward run failed.
    pub j_new: Option<f64>,
    pub uniform: f64,
    pub alpha: f64,
    pub accepted: bool,
}

/// `min{1, exp((J_old² − J_new²) / (2σ²))}`.
pub fn acceptance_probability(j_old: f64, j_new: f64, sigma: f64) -> f64 {
    let e = (j_old * j_old - j_new * j_new) / (2.0 * sigma * sigma);
    if e >= 0.0 {
        1.0
    } else {
        e.exp()
    }
}

fn sample_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt()
}

pub fn metropolis_fit(problem: &Problem, config: &MetropolisConfig) -> Result<FitResult> {
    config.validate()?;
    problem.validate()?;
    let sample_seeds = match problem.init_mode {
        InitMode::Fixed => false,
        InitMode::Region => true,
        InitMode::PerCell => {
            return Err(Error::config(
                "init_mode",
                "the sampler supports fixed or per-region seeds only",
            ));
        }
    };
    let n_regions = problem.scenario.regions.len();
    let dim = CHI_LEN + if sample_seeds { n_regions } else { 0 };

    let pack = |p: &ParameterVector| {
        let mut v = p.chi().to_vec();
        if sample_seeds {
            v.extend(problem.seeds(p));
        }
        v
    };
    let unpack = |v: &[f64]| {
        let mut p = problem.initial.with_chi(&v[..CHI_LEN]);
        if sample_seeds {
            problem.set_seeds(&mut p, &v[CHI_LEN..]);
        }
        p
    };

    let start = pack(&problem.initial);
    let step: Vec<f64> = match &config.step_scale {
        Some(s) if s.len() == dim => s.clone(),
        Some(s) => {
            return Err(Error::config(
                "metropolis.step_scale",
                format!("expected {dim} entries, got {}", s.len()),
            ))
        }
        None => start
            .iter()
            .map(|&v| if v != 0.0 { v.abs() / 100.0 } else { 0.01 })
            .collect(),
    };
    let sigma = match config.sigma {
        Some(s) => s,
        None => {
            let s = sample_std(&problem.objective.data.district_daily_fraction(&problem.scenario));
            if !(s > 0.0) {
                return Err(Error::config(
                    "metropolis.sigma",
                    "cannot be derived from constant data; set it explicitly",
                ));
            }
            s
        }
    };
    let seed_upper = problem.seed_upper();
    let in_bounds = |v: &[f64]| {
        problem.bounds.contains(&v[..CHI_LEN])
            && v[CHI_LEN..].iter().zip(&seed_upper).all(|(s, hi)| *s >= 0.0 && s <= hi)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut current = start;
    let mut j_cur = problem.evaluate(&unpack(&current), None)?.total;
    let mut evaluations = 1;
    let burn = config.burn_in_draws();
    let mut kept: Vec<Vec<f64>> = Vec::with_capacity(config.draws - burn);
    let mut chain = Vec::with_capacity(config.draws);
    let mut history = Vec::with_capacity(config.draws + 1);
    history.push(IterationRecord {
        iteration: 0,
        objective: j_cur,
        chi: problem.initial.chi(),
        seeds: if sample_seeds {
            problem.seeds(&problem.initial)
        } else {
            Vec::new()
        },
    });
    let mut accepted_count = 0usize;
    let mut rejected_run = 0usize;
    let mut warnings = Vec::new();

    for iteration in 1..=config.draws {
        let proposal: Vec<f64> = current
            .iter()
            .zip(&step)
            .map(|(x, s)| {
                let z: f64 = rng.sample(StandardNormal);
                x + s * z
            })
            .collect();
        let uniform: f64 = rng.random();
        let inside = in_bounds(&proposal);
        let j_new = if inside {
            evaluations += 1;
            match problem.evaluate(&unpack(&proposal), None) {
                Ok(j) => Some(j.total),
                Err(e) => {
                    log::debug!("draw {iteration}: forward run failed: {e}");
                    None
                }
            }
        } else {
            None
        };
        let alpha = j_new.map_or(0.0, |j| acceptance_probability(j_cur, j, sigma));
        let accepted = uniform < alpha;
        chain.push(ChainEntry {
            iteration,
            proposal: proposal.clone(),
            in_bounds: inside,
            j_old: j_cur,
            j_new,
            uniform,
            alpha,
            accepted,
        });
        if accepted {
            current = proposal;
            j_cur = j_new.expect("accepted proposals were evaluated");
            accepted_count += 1;
            rejected_run = 0;
        } else {
            rejected_run += 1;
            if rejected_run == config.stuck_window {
                let msg = format!("no proposal accepted in {rejected_run} draws ending at draw {iteration}");
                log::warn!("{msg}");
                warnings.push(msg);
            }
        }
        if iteration > burn {
            kept.push(current.clone());
        }
        let mut chi = [0.0; CHI_LEN];
        chi.copy_from_slice(&current[..CHI_LEN]);
        history.push(IterationRecord {
            iteration,
            objective: j_cur,
            chi,
            seeds: current[CHI_LEN..].to_vec(),
        });
    }

    let mean: Vec<f64> = (0..dim)
        .map(|k| kept.iter().map(|v| v[k]).sum::<f64>() / kept.len() as f64)
        .collect();
    let std: Vec<f64> = (0..dim)
        .map(|k| sample_std(&kept.iter().map(|v| v[k]).collect::<Vec<_>>()))
        .collect();
    let params = unpack(&mean);
    let objective = problem.evaluate(&params, None)?;
    let init_fields = problem.initial_state(&params, None)?;
    Ok(FitResult {
        estimator: Estimator::Metropolis,
        params,
        init_fields,
        objective,
        history,
        termination: Termination::DrawsCompleted,
        acceptance_rate: Some(accepted_count as f64 / config.draws as f64),
        gradient_norms: Vec::new(),
        posterior_std: Some(std),
        chain,
        sigma: Some(sigma),
        evaluations: evaluations + 1,
        warnings,
    })
}
