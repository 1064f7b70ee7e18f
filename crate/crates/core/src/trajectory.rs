//! Time integration driver shared by the finite-difference and finite-element backends.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{region_total, FieldSet};
use crate::models::{ModelKind, RateSchedule};
use crate::scenario::Scenario;

/// One time step of the state system plus pure diffusion of the population.
pub trait ForwardStepper {
    fn backend(&self) -> Backend;
    fn tau(&self) -> f64;
    fn step(&self, u: &FieldSet, model: ModelKind, schedule: &RateSchedule, t_n: f64) -> Result<FieldSet>;
    fn diffuse(&self, field: &Array2<f64>) -> Result<Array2<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    #[default]
    Cn,
    FemSplit,
}

impl Backend {
    pub fn name(self) -> &'static str {
        match self {
            Backend::Cn => "cn",
            Backend::FemSplit => "fem-split",
        }
    }
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cn" => Ok(Backend::Cn),
            "fem-split" => Ok(Backend::FemSplit),
            other => Err(Error::config(
                "backend",
                format!("unknown backend `{other}` (cn | fem-split)"),
            )),
        }
    }
}

/// Stepper for `backend` on `grid`.
pub fn build_stepper(
    grid: &crate::grid::GridSpec,
    backend: Backend,
    kappa: f64,
    tau: f64,
    taylor_correction: bool,
) -> Result<Box<dyn ForwardStepper>> {
    Ok(match backend {
        Backend::Cn => Box::new(
            crate::solver_cn::CnWorkspace::assemble(grid, kappa, tau)?.with_taylor_correction(taylor_correction),
        ),
        Backend::FemSplit => Box::new(crate::solver_fem::FemWorkspace::assemble(grid, kappa, tau)?),
    })
}

/// Which time levels a trajectory keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Storage {
    /// Every step; required by the adjoint sweep.
    Full,
    /// Integer days only.
    Daily,
}

/// Number of steps per day for `tau`, which must divide one day.
pub fn steps_per_day(tau: f64) -> Result<usize> {
    if !(tau > 0.0) {
        return Err(Error::Parameter(format!("time step must be > 0, got {tau}")));
    }
    let k = (1.0 / tau).round();
    if k < 1.0 || ((k * tau) - 1.0).abs() > 1e-9 {
        return Err(Error::Parameter(format!("time step {tau} does not divide one day")));
    }
    Ok(k as usize)
}

/// Whole number of simulated days.
pub fn whole_days(t_end: f64) -> Result<usize> {
    let d = t_end.round();
    if d < 1.0 || (d - t_end).abs() > 1e-9 {
        return Err(Error::Parameter(format!(
            "t_end must be a positive whole number of days, got {t_end}"
        )));
    }
    Ok(d as usize)
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub model: ModelKind,
    pub backend: Backend,
    pub tau: f64,
    pub steps_per_day: usize,
    pub storage: Storage,
    /// Time of each stored level (days).
    pub times: Vec<f64>,
    pub states: Vec<FieldSet>,
    /// Indices into `states` that fall on whole days; `daily_levels[d]` is day `d`.
    pub daily_levels: Vec<usize>,
    /// Population density at each whole day.
    pub population: Vec<Array2<f64>>,
}

impl Trajectory {
    pub fn days(&self) -> usize {
        self.daily_levels.len().saturating_sub(1)
    }

    pub fn state_at_day(&self, d: usize) -> &FieldSet {
        &self.states[self.daily_levels[d]]
    }

    pub fn initial(&self) -> &FieldSet {
        &self.states[0]
    }

    /// Persons in compartment `k` per region for every day, `[day][region]`.
    pub fn region_counts(&self, scenario: &Scenario, k: usize) -> Result<Vec<Vec<f64>>> {
        (0..=self.days())
            .map(|d| {
                let persons = &self.state_at_day(d).fields[k] * &self.population[d];
                scenario
                    .regions
                    .iter()
                    .map(|r| region_total(&persons, r, &scenario.grid))
                    .collect()
            })
            .collect()
    }
}

/// Advances `u0` to `t_end`, calling `observe(level, t, state)` at every step including the first.
pub fn integrate<S, F>(
    stepper: &S,
    model: ModelKind,
    schedule: &RateSchedule,
    u0: FieldSet,
    t_end: f64,
    mut observe: F,
) -> Result<FieldSet>
where
    S: ForwardStepper + ?Sized,
    F: FnMut(usize, f64, &FieldSet) -> Result<()>,
{
    let spd = steps_per_day(stepper.tau())?;
    let n_steps = whole_days(t_end)? * spd;
    if u0.len() != model.dim() {
        return Err(Error::Dimension(format!(
            "{model:?} needs {} compartments, initial state has {}",
            model.dim(),
            u0.len()
        )));
    }
    let mut u = u0;
    u.time = 0.0;
    observe(0, 0.0, &u)?;
    for n in 0..n_steps {
        let t_n = n as f64 / spd as f64;
        let mut next = stepper.step(&u, model, schedule, t_n)?;
        next.time = (n + 1) as f64 / spd as f64;
        observe(n + 1, next.time, &next)?;
        u = next;
    }
    Ok(u)
}

/// Full forward run: state fractions and diffusing population.
pub fn run_forward<S: ForwardStepper + ?Sized>(
    stepper: &S,
    scenario: &Scenario,
    schedule: &RateSchedule,
    u0: FieldSet,
    t_end: f64,
    storage: Storage,
) -> Result<Trajectory> {
    let spd = steps_per_day(stepper.tau())?;
    let days = whole_days(t_end)?;
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut daily_levels = Vec::with_capacity(days + 1);
    integrate(stepper, scenario.model, schedule, u0, t_end, |n, t, u| {
        let daily = n % spd == 0;
        if storage == Storage::Full || daily {
            if daily {
                daily_levels.push(states.len());
            }
            times.push(t);
            states.push(u.clone());
        }
        Ok(())
    })?;
    let mut population = Vec::with_capacity(days + 1);
    let mut n_field = scenario.population.clone();
    population.push(n_field.clone());
    for _ in 0..days {
        for _ in 0..spd {
            n_field = stepper.diffuse(&n_field)?;
        }
        population.push(n_field.clone());
    }
    Ok(Trajectory {
        model: scenario.model,
        backend: stepper.backend(),
        tau: stepper.tau(),
        steps_per_day: spd,
        storage,
        times,
        states,
        daily_levels,
        population,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_counts() {
        assert_eq!(steps_per_day(0.1).unwrap(), 10);
        assert_eq!(steps_per_day(0.25).unwrap(), 4);
        assert_eq!(steps_per_day(1.0).unwrap(), 1);
        assert!(steps_per_day(0.3).is_err());
        assert!(steps_per_day(0.0).is_err());
        assert!(steps_per_day(2.0).is_err());
        assert_eq!(whole_days(148.0).unwrap(), 148);
        assert!(whole_days(10.5).is_err());
        assert!(whole_days(0.0).is_err());
    }

    #[test]
    fn backend_names_round_trip() {
        for b in [Backend::Cn, Backend::FemSplit] {
            assert_eq!(b.name().parse::<Backend>().unwrap(), b);
        }
        assert!("spectral".parse::<Backend>().is_err());
    }
}
