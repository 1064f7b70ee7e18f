//! Reduced, normalized compartment models and the piecewise transmission rate.
//!
//! States are fractions of the local population with the recovered
//! compartment eliminated:
//!
//! | model | state            | f(u)                                         |
//! |-------|------------------|----------------------------------------------|
//! | SIS   | `I/N`            | `β(1-u)u - γu`                               |
//! | SIR   | `(S/N, I/N)`     | `(-βu₁u₂, βu₁u₂ - γu₂)`                      |
//! | SEIR  | `(S/N, E/N, I/N)`| `(-βu₁u₃, βu₁u₃ - θu₂, θu₂ - γu₃)`           |

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_GAMMA: f64 = 0.1;
pub const DEFAULT_THETA: f64 = 1.0 / 3.0;

/// Largest state dimension of any model.
pub const MAX_DIM: usize = 3;

pub type Jacobian = [[f64; MAX_DIM]; MAX_DIM];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Sis,
    Sir,
    Seir,
}

/// Instantaneous rates for one evaluation of `f`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub beta: f64,
    pub gamma: f64,
    pub theta: f64,
}

impl ModelKind {
    pub fn dim(self) -> usize {
        match self {
            ModelKind::Sis => 1,
            ModelKind::Sir => 2,
            ModelKind::Seir => 3,
        }
    }

    pub fn compartment_names(self) -> &'static [&'static str] {
        match self {
            ModelKind::Sis => &["I"],
            ModelKind::Sir => &["S", "I"],
            ModelKind::Seir => &["S", "E", "I"],
        }
    }

    /// Compartments that carry the initial infection (penalized by `w2`).
    pub fn infected_components(self) -> &'static [usize] {
        match self {
            ModelKind::Sis => &[0],
            ModelKind::Sir => &[1],
            ModelKind::Seir => &[1, 2],
        }
    }

    /// Disease-free state.
    pub fn disease_free(self) -> [f64; MAX_DIM] {
        match self {
            ModelKind::Sis => [0.0, 0.0, 0.0],
            ModelKind::Sir => [1.0, 0.0, 0.0],
            ModelKind::Seir => [1.0, 0.0, 0.0],
        }
    }

    /// Change of the initial state per unit of infected fraction `v`.
    ///
    /// SEIR seeds `E = v/2`, `I = v` and removes both from `S`.
    pub fn seed_direction(self) -> [f64; MAX_DIM] {
        match self {
            ModelKind::Sis => [1.0, 0.0, 0.0],
            ModelKind::Sir => [-1.0, 1.0, 0.0],
            ModelKind::Seir => [-1.5, 0.5, 1.0],
        }
    }

    fn susceptible_infected(self, u: &[f64]) -> (f64, f64) {
        match self {
            ModelKind::Sis => (1.0 - u[0], u[0]),
            ModelKind::Sir => (u[0], u[1]),
            ModelKind::Seir => (u[0], u[2]),
        }
    }

    /// `f(u)` written into `out[..dim]`.
    #[inline]
    pub fn rhs(self, u: &[f64], r: &Rates, out: &mut [f64]) {
        match self {
            ModelKind::Sis => out[0] = r.beta * (1.0 - u[0]) * u[0] - r.gamma * u[0],
            ModelKind::Sir => {
                let inc = r.beta * u[0] * u[1];
                out[0] = -inc;
                out[1] = inc - r.gamma * u[1];
            }
            ModelKind::Seir => {
                let inc = r.beta * u[0] * u[2];
                out[0] = -inc;
                out[1] = inc - r.theta * u[1];
                out[2] = r.theta * u[1] - r.gamma * u[2];
            }
        }
    }

    /// `∂f/∂u`, entry `[row][col] = ∂f_row/∂u_col`.
    pub fn jacobian(self, u: &[f64], r: &Rates) -> Jacobian {
        let mut j = [[0.0; MAX_DIM]; MAX_DIM];
        match self {
            ModelKind::Sis => j[0][0] = r.beta * (1.0 - 2.0 * u[0]) - r.gamma,
            ModelKind::Sir => {
                j[0] = [-r.beta * u[1], -r.beta * u[0], 0.0];
                j[1] = [r.beta * u[1], r.beta * u[0] - r.gamma, 0.0];
            }
            ModelKind::Seir => {
                j[0] = [-r.beta * u[2], 0.0, -r.beta * u[0]];
                j[1] = [r.beta * u[2], -r.theta, r.beta * u[0]];
                j[2] = [0.0, r.theta, -r.gamma];
            }
        }
        j
    }

    /// `∂f/∂β`.
    pub fn beta_derivative(self, u: &[f64]) -> [f64; MAX_DIM] {
        let (s, i) = self.susceptible_infected(u);
        match self {
            ModelKind::Sis => [s * i, 0.0, 0.0],
            ModelKind::Sir => [-s * i, s * i, 0.0],
            ModelKind::Seir => [-s * i, s * i, 0.0],
        }
    }

    /// Incidence `β·u_S·u_I` (new infections per capita per day).
    #[inline]
    pub fn incidence(self, u: &[f64], beta: f64) -> f64 {
        let (s, i) = self.susceptible_infected(u);
        beta * s * i
    }

    /// Gradient of [`ModelKind::incidence`] with respect to the state.
    pub fn incidence_gradient(self, u: &[f64], beta: f64) -> [f64; MAX_DIM] {
        match self {
            ModelKind::Sis => [beta * (1.0 - 2.0 * u[0]), 0.0, 0.0],
            ModelKind::Sir => [beta * u[1], beta * u[0], 0.0],
            ModelKind::Seir => [beta * u[2], 0.0, beta * u[0]],
        }
    }
}

/// Piecewise-constant transmission rate with fixed recovery and latency rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSchedule {
    pub betas: [f64; 3],
    pub breakpoints: [f64; 2],
    pub gamma: f64,
    pub theta: f64,
    pub t_end: f64,
}

impl RateSchedule {
    pub fn new(betas: [f64; 3], breakpoints: [f64; 2], t_end: f64) -> Result<Self> {
        let s = RateSchedule {
            betas,
            breakpoints,
            gamma: DEFAULT_GAMMA,
            theta: DEFAULT_THETA,
            t_end,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(b) = self.betas.iter().find(|b| !(**b > 0.0 && b.is_finite())) {
            return Err(Error::Parameter(format!("transmission rates must be > 0, got {b}")));
        }
        let [t0, t1] = self.breakpoints;
        if !(0.0 < t0 && t0 < t1 && t1 < self.t_end) {
            return Err(Error::Parameter(format!(
                "breakpoints must satisfy 0 < t0 < t1 < t_end, got {t0}, {t1}, {}",
                self.t_end
            )));
        }
        if !(self.gamma > 0.0 && self.theta > 0.0) {
            return Err(Error::Parameter("gamma and theta must be > 0".into()));
        }
        Ok(())
    }

    /// Index of the transmission interval containing `t` (half-open on the left pieces).
    #[inline]
    pub fn interval(&self, t: f64) -> usize {
        if t < self.breakpoints[0] {
            0
        } else if t < self.breakpoints[1] {
            1
        } else {
            2
        }
    }

    pub fn beta_at(&self, t: f64) -> Result<f64> {
        if !(0.0..=self.t_end).contains(&t) {
            return Err(Error::Domain(format!("t = {t} outside [0, {}]", self.t_end)));
        }
        Ok(self.betas[self.interval(t)])
    }

    #[inline]
    pub fn rates_at(&self, t: f64) -> Rates {
        Rates {
            beta: self.betas[self.interval(t)],
            gamma: self.gamma,
            theta: self.theta,
        }
    }
}

/// Number of entries in the estimated vector `(β₀, β₁, β₂, κ, δ)`.
pub const CHI_LEN: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub schedule: RateSchedule,
    /// Diffusivity in km²/day.
    pub kappa: f64,
    /// Detection rate.
    pub delta: f64,
    /// Initial infected persons per region.
    pub init_infected: IndexMap<String, f64>,
}

impl ParameterVector {
    pub fn chi(&self) -> [f64; CHI_LEN] {
        let b = self.schedule.betas;
        [b[0], b[1], b[2], self.kappa, self.delta]
    }

    pub fn set_chi(&mut self, chi: &[f64]) {
        self.schedule.betas = [chi[0], chi[1], chi[2]];
        self.kappa = chi[3];
        self.delta = chi[4];
    }

    pub fn with_chi(&self, chi: &[f64]) -> Self {
        let mut p = self.clone();
        p.set_chi(chi);
        p
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if !(0.0..=1.0).contains(&self.kappa) {
            return Err(Error::Parameter(format!("kappa = {} outside [0, 1]", self.kappa)));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::Parameter(format!("delta = {} outside [0, 1]", self.delta)));
        }
        if let Some((r, v)) = self.init_infected.iter().find(|(_, v)| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::Parameter(format!(
                "initial infected for `{r}` = {v} must be >= 0"
            )));
        }
        Ok(())
    }
}

fn check_arity(model: ModelKind, u: &[f64]) -> Result<()> {
    if u.len() != model.dim() {
        return Err(Error::Dimension(format!(
            "{model:?} expects {} components, got {}",
            model.dim(),
            u.len()
        )));
    }
    Ok(())
}

/// `f(u)` at time `t`.
pub fn reaction(model: ModelKind, u: &[f64], t: f64, schedule: &RateSchedule) -> Result<Vec<f64>> {
    check_arity(model, u)?;
    let mut r = schedule.rates_at(t);
    r.beta = schedule.beta_at(t)?;
    let mut out = vec![0.0; model.dim()];
    model.rhs(u, &r, &mut out);
    Ok(out)
}

/// `∂f/∂u` at time `t` as an `m × m` matrix.
pub fn reaction_jacobian(model: ModelKind, u: &[f64], t: f64, schedule: &RateSchedule) -> Result<Vec<Vec<f64>>> {
    check_arity(model, u)?;
    let mut r = schedule.rates_at(t);
    r.beta = schedule.beta_at(t)?;
    let j = model.jacobian(u, &r);
    let m = model.dim();
    Ok(j[..m].iter().map(|row| row[..m].to_vec()).collect())
}

/// Total rate of change of the tracked (non-recovered) compartments.
///
/// SIR and SEIR return `Σ_j f_j`, the negated flow into the eliminated `R`.
/// SIS tracks `S = 1 - u` implicitly, so its susceptible and infected rates cancel.
pub fn conserved_sum_rate(model: ModelKind, u: &[f64], t: f64, schedule: &RateSchedule) -> Result<f64> {
    let f = reaction(model, u, t, schedule)?;
    Ok(match model {
        ModelKind::Sis => 0.0,
        _ => f.iter().sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn schedule() -> RateSchedule {
        RateSchedule::new([0.2, 0.1, 0.1], [32.0, 77.0], 148.0).unwrap()
    }

    #[test]
    fn beta_lookup() {
        let s = schedule();
        assert_eq!(s.beta_at(0.0).unwrap(), 0.2);
        assert_eq!(s.beta_at(31.999).unwrap(), 0.2);
        assert_eq!(s.beta_at(32.0).unwrap(), 0.1);
        assert_eq!(s.beta_at(50.0).unwrap(), 0.1);
        assert_eq!(s.beta_at(148.0).unwrap(), 0.1);
        assert!(matches!(s.beta_at(-0.1), Err(Error::Domain(_))));
        assert!(matches!(s.beta_at(148.5), Err(Error::Domain(_))));

        let distinct = RateSchedule::new([0.3, 0.2, 0.1], [10.0, 20.0], 30.0).unwrap();
        assert_eq!(distinct.beta_at(10.0).unwrap(), 0.2);
        assert_eq!(distinct.beta_at(20.0).unwrap(), 0.1);
        assert_eq!(distinct.beta_at(19.999999).unwrap(), 0.2);
    }

    #[test]
    fn schedule_validation() {
        assert!(RateSchedule::new([0.2, 0.0, 0.1], [32.0, 77.0], 148.0).is_err());
        assert!(RateSchedule::new([0.2, 0.1, 0.1], [77.0, 32.0], 148.0).is_err());
        assert!(RateSchedule::new([0.2, 0.1, 0.1], [32.0, 77.0], 77.0).is_err());
        assert!(RateSchedule::new([0.2, 0.1, 0.1], [0.0, 77.0], 148.0).is_err());
    }

    #[test]
    fn seir_reaction_values() {
        let s = schedule();
        assert_eq!(
            reaction(ModelKind::Seir, &[1.0, 0.0, 0.0], 0.0, &s).unwrap(),
            vec![0.0, 0.0, 0.0]
        );
        let f = reaction(ModelKind::Seir, &[0.9, 0.05, 0.05], 0.0, &s).unwrap();
        assert_relative_eq!(f[0], -0.009, max_relative = 1e-12);
        assert_relative_eq!(f[1], -0.00766666666666667, max_relative = 1e-12);
        assert_relative_eq!(f[2], 0.01166666666666667, max_relative = 1e-12);
    }

    #[test]
    fn sis_reaction_value() {
        let f = reaction(ModelKind::Sis, &[0.5], 0.0, &schedule()).unwrap();
        assert!(f[0].abs() < 1e-15);
    }

    #[test]
    fn arity_is_checked() {
        assert!(matches!(
            reaction(ModelKind::Seir, &[0.5, 0.5], 0.0, &schedule()),
            Err(Error::Dimension(_))
        ));
        assert!(reaction_jacobian(ModelKind::Sis, &[0.5, 0.1], 0.0, &schedule()).is_err());
    }

    #[test]
    fn seir_jacobian_values() {
        let s = schedule();
        let j = reaction_jacobian(ModelKind::Seir, &[1.0, 0.0, 0.0], 0.0, &s).unwrap();
        let th = 1.0 / 3.0;
        assert_eq!(j, vec![vec![0.0, 0.0, -0.2], vec![0.0, -th, 0.2], vec![0.0, th, -0.1]]);
        let j = reaction_jacobian(ModelKind::Seir, &[0.9, 0.05, 0.05], 0.0, &s).unwrap();
        assert_relative_eq!(j[0][2], -0.18, max_relative = 1e-12);
    }

    #[test]
    fn conserved_sums() {
        let s = schedule();
        for u in [0.0, 0.37, 0.5, 1.0] {
            assert_eq!(conserved_sum_rate(ModelKind::Sis, &[u], 3.0, &s).unwrap(), 0.0);
        }
        assert_relative_eq!(
            conserved_sum_rate(ModelKind::Seir, &[0.9, 0.05, 0.05], 0.0, &s).unwrap(),
            -0.005,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            conserved_sum_rate(ModelKind::Sir, &[0.5, 0.5], 0.0, &s).unwrap(),
            -0.05,
            max_relative = 1e-12
        );
    }

    #[test]
    fn parameter_bounds() {
        let mut p = ParameterVector {
            schedule: schedule(),
            kappa: 0.1,
            delta: 0.5,
            init_infected: IndexMap::from([("a".to_string(), 3.0)]),
        };
        assert!(p.validate().is_ok());
        assert_eq!(p.chi(), [0.2, 0.1, 0.1, 0.1, 0.5]);
        p.kappa = 1.5;
        assert!(p.validate().is_err());
        p.kappa = 0.1;
        p.init_infected.insert("b".into(), -1.0);
        assert!(p.validate().is_err());
    }

    fn fd_jacobian(model: ModelKind, u: &[f64], r: &Rates, h: f64) -> Jacobian {
        let m = model.dim();
        let mut j = [[0.0; MAX_DIM]; MAX_DIM];
        for c in 0..m {
            let (mut up, mut dn) = (u.to_vec(), u.to_vec());
            up[c] += h;
            dn[c] -= h;
            let (mut fp, mut fm) = ([0.0; 3], [0.0; 3]);
            model.rhs(&up, r, &mut fp);
            model.rhs(&dn, r, &mut fm);
            for row in 0..m {
                j[row][c] = (fp[row] - fm[row]) / (2.0 * h);
            }
        }
        j
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn jacobian_matches_finite_differences(
            model in prop_oneof![Just(ModelKind::Sis), Just(ModelKind::Sir), Just(ModelKind::Seir)],
            u in proptest::array::uniform3(0.0f64..1.0),
            beta in 0.01f64..1.0,
        ) {
            let r = Rates { beta, gamma: 0.1, theta: 1.0 / 3.0 };
            let exact = model.jacobian(&u, &r);
            let fd = fd_jacobian(model, &u, &r, 1e-6);
            let m = model.dim();
            let scale = (0..m).flat_map(|a| (0..m).map(move |b| (a, b)))
                .map(|(a, b)| exact[a][b].abs()).fold(0.0, f64::max).max(1e-12);
            for a in 0..m {
                for b in 0..m {
                    prop_assert!((exact[a][b] - fd[a][b]).abs() <= 1e-5 * scale,
                        "{model:?} [{a}][{b}] exact {} fd {}", exact[a][b], fd[a][b]);
                }
            }
        }

        #[test]
        fn seir_sum_identity(u in proptest::array::uniform3(0.0f64..1.0), beta in 0.0f64..1.0) {
            let r = Rates { beta, gamma: 0.1, theta: 1.0 / 3.0 };
            let mut f = [0.0; 3];
            ModelKind::Seir.rhs(&u, &r, &mut f);
            let sum = f[0] + f[1] + f[2];
            prop_assert!((sum + r.gamma * u[2]).abs() <= 1e-15);
        }

        #[test]
        fn incidence_gradient_matches_fd(
            model in prop_oneof![Just(ModelKind::Sis), Just(ModelKind::Sir), Just(ModelKind::Seir)],
            u in proptest::array::uniform3(0.0f64..1.0),
            beta in 0.01f64..1.0,
        ) {
            let g = model.incidence_gradient(&u, beta);
            for c in 0..model.dim() {
                let (mut up, mut dn) = (u, u);
                up[c] += 1e-6;
                dn[c] -= 1e-6;
                let fd = (model.incidence(&up, beta) - model.incidence(&dn, beta)) / 2e-6;
                prop_assert!((fd - g[c]).abs() <= 1e-8);
            }
        }
    }
}
