//! Parameter estimation: random-walk Metropolis and adjoint-gradient quasi-Newton descent.

mod adjoint;
mod lbfgs;
mod metropolis;

pub use adjoint::{adjoint_fit, adjoint_gradient, gradient_check, AdjointConfig, Gradient, GradientComparison};
pub use lbfgs::Lbfgs;
pub use metropolis::{acceptance_probability, metropolis_fit, ChainEntry, MetropolisConfig};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::FieldSet;
use crate::models::{ParameterVector, CHI_LEN};
use crate::objective::{JBreakdown, Objective};
use crate::scenario::Scenario;
use crate::trajectory::{build_stepper, run_forward, Backend, ForwardStepper, Storage, Trajectory};

pub const CHI_NAMES: [&str; CHI_LEN] = ["beta0", "beta1", "beta2", "kappa", "delta"];

/// Which part of the initial state is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// Seeds are known and held fixed.
    Fixed,
    /// One seed count per region, spread uniformly.
    #[default]
    Region,
    /// A free infected-fraction field over the district.
    PerCell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: [f64; CHI_LEN],
    pub upper: [f64; CHI_LEN],
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            lower: [1e-8, 1e-8, 1e-8, 0.0, 0.0],
            upper: [f64::INFINITY, f64::INFINITY, f64::INFINITY, 1.0, 1.0],
        }
    }
}

impl Bounds {
    pub fn validate(&self) -> Result<()> {
        for k in 0..CHI_LEN {
            let (lo, hi) = (self.lower[k], self.upper[k]);
            if lo.is_nan() || hi.is_nan() || lo >= hi {
                return Err(Error::config(
                    format!("bounds.{}", CHI_NAMES[k]),
                    format!("lower {lo} must be below upper {hi}"),
                ));
            }
        }
        if self.lower[..3].iter().any(|&b| b <= 0.0) {
            return Err(Error::config("bounds", "transmission rates must stay > 0"));
        }
        if self.lower[3] < 0.0 || self.upper[3] > 1.0 || self.lower[4] < 0.0 || self.upper[4] > 1.0 {
            return Err(Error::config("bounds", "kappa and delta bounds must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn contains(&self, chi: &[f64]) -> bool {
        (0..CHI_LEN).all(|k| chi[k] >= self.lower[k] && chi[k] <= self.upper[k])
    }

    pub fn project(&self, chi: &mut [f64]) {
        for k in 0..CHI_LEN {
            chi[k] = chi[k].clamp(self.lower[k], self.upper[k]);
        }
    }
}

/// Everything an estimator needs: geometry, data, starting point, and solver settings.
#[derive(Debug, Clone)]
pub struct Problem {
    pub scenario: Scenario,
    pub objective: Objective,
    /// Starting guess; also the default regularization anchor.
    pub initial: ParameterVector,
    /// Starting infected-fraction field for [`InitMode::PerCell`].
    pub initial_fraction: Option<Array2<f64>>,
    pub tau: f64,
    pub backend: Backend,
    pub bounds: Bounds,
    pub init_mode: InitMode,
    pub taylor_correction: bool,
}

impl Problem {
    pub fn new(scenario: Scenario, objective: Objective, initial: ParameterVector, tau: f64) -> Self {
        Problem {
            scenario,
            objective,
            initial,
            initial_fraction: None,
            tau,
            backend: Backend::Cn,
            bounds: Bounds::default(),
            init_mode: InitMode::Region,
            taylor_correction: false,
        }
    }

    pub fn t_end(&self) -> f64 {
        self.objective.last_day() as f64
    }

    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        self.initial.validate()?;
        if !self.bounds.contains(&self.initial.chi()) {
            return Err(Error::config(
                "initial",
                "initial guess lies outside the parameter bounds",
            ));
        }
        self.scenario.seed_fraction(&self.initial.init_infected)?;
        Ok(())
    }

    pub fn stepper(&self, kappa: f64) -> Result<Box<dyn ForwardStepper>> {
        build_stepper(
            &self.scenario.grid,
            self.backend,
            kappa,
            self.tau,
            self.taylor_correction,
        )
    }

    /// Initial state from either the per-region seeds or an explicit fraction field.
    pub fn initial_state(&self, params: &ParameterVector, fraction: Option<&Array2<f64>>) -> Result<FieldSet> {
        match fraction {
            Some(v) => self.scenario.state_from_fraction(v),
            None => self.scenario.initial_state(&params.init_infected),
        }
    }

    /// `J` without storing the trajectory.
    pub fn evaluate(&self, params: &ParameterVector, fraction: Option<&Array2<f64>>) -> Result<JBreakdown> {
        let stepper = self.stepper(params.kappa)?;
        let u0 = self.initial_state(params, fraction)?;
        self.objective
            .evaluate_streaming(stepper.as_ref(), &self.scenario, params, u0)
    }

    pub fn forward(
        &self,
        params: &ParameterVector,
        fraction: Option<&Array2<f64>>,
        storage: Storage,
    ) -> Result<Trajectory> {
        let stepper = self.stepper(params.kappa)?;
        let u0 = self.initial_state(params, fraction)?;
        run_forward(
            stepper.as_ref(),
            &self.scenario,
            &params.schedule,
            u0,
            self.t_end(),
            storage,
        )
    }

    /// Stored forward run from an explicit initial state.
    pub fn forward_from(&self, params: &ParameterVector, u0: FieldSet, storage: Storage) -> Result<Trajectory> {
        let stepper = self.stepper(params.kappa)?;
        run_forward(
            stepper.as_ref(),
            &self.scenario,
            &params.schedule,
            u0,
            self.t_end(),
            storage,
        )
    }

    /// Seeds in region order (missing regions count as zero).
    pub fn seeds(&self, params: &ParameterVector) -> Vec<f64> {
        self.scenario
            .regions
            .iter()
            .map(|r| params.init_infected.get(&r.name).copied().unwrap_or(0.0))
            .collect()
    }

    pub fn set_seeds(&self, params: &mut ParameterVector, seeds: &[f64]) {
        for (r, &s) in self.scenario.regions.iter().zip(seeds) {
            params.init_infected.insert(r.name.clone(), s);
        }
    }

    pub fn seed_upper(&self) -> Vec<f64> {
        (0..self.scenario.regions.len())
            .map(|r| self.scenario.max_seed(r))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    Metropolis,
    Adjoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    /// Relative change of `J` fell below the tolerance.
    Converged,
    /// `J` or its gradient vanished.
    Stationary,
    MaxIterations,
    /// Armijo backtracking went below the minimum step.
    LineSearchFailure,
    DrawsCompleted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub chi: [f64; CHI_LEN],
    pub seeds: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub estimator: Estimator,
    pub params: ParameterVector,
    pub init_fields: FieldSet,
    /// `J` re-evaluated at `params`.
    pub objective: JBreakdown,
    pub history: Vec<IterationRecord>,
    pub termination: Termination,
    pub acceptance_rate: Option<f64>,
    pub gradient_norms: Vec<f64>,
    /// Chain standard deviation of `χ` followed by the seeds, if sampled.
    pub posterior_std: Option<Vec<f64>>,
    pub chain: Vec<ChainEntry>,
    /// Likelihood temperature used by the sampler.
    pub sigma: Option<f64>,
    pub evaluations: usize,
    pub warnings: Vec<String>,
}
