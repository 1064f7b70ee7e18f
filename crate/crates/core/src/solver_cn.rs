//! Crank–Nicolson stepping for the state system (forward) and the adjoint system (backward).
//!
//! With `L` the Neumann Laplacian, `A = I - (κτ/2)L` and `B = I + (κτ/2)L`.
//! Each compartment advances by `A q_{n+1} = B q_n + τ f(q_n)`; the second-order
//! Taylor correction of the reaction term is dropped unless requested.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::{FieldSet, GridSpec};
use crate::linalg::{BandedCholesky, CsrMatrix};
use crate::models::{ModelKind, RateSchedule, MAX_DIM};
use crate::scenario::Scenario;
use crate::trajectory::{self, Backend, ForwardStepper, Storage, Trajectory};

pub const DEFAULT_TAU: f64 = 0.1;
/// Sanity bound on the step size, in days.
pub const MAX_TAU: f64 = 1.0;
/// Negative values above this are rounding noise and are clipped to zero.
pub const NEGATIVE_TOL: f64 = 1e-10;

/// Factorized Crank–Nicolson operators for one `(grid, κ, τ)`.
#[derive(Debug, Clone)]
pub struct CnWorkspace {
    pub grid: GridSpec,
    pub kappa: f64,
    pub tau: f64,
    pub rx: f64,
    pub ry: f64,
    /// Implicit side.
    pub a: CsrMatrix,
    /// Explicit side.
    pub b: CsrMatrix,
    pub laplacian: CsrMatrix,
    factor: BandedCholesky,
    taylor_correction: bool,
}

impl CnWorkspace {
    pub fn assemble(grid: &GridSpec, kappa: f64, tau: f64) -> Result<Self> {
        if !(kappa >= 0.0) || !kappa.is_finite() {
            return Err(Error::Parameter(format!("kappa must be >= 0, got {kappa}")));
        }
        if !(tau > 0.0) || tau > MAX_TAU {
            return Err(Error::Parameter(format!("tau must be in (0, {MAX_TAU}], got {tau}")));
        }
        let laplacian = grid.laplacian_matrix();
        let identity = CsrMatrix::identity(grid.len());
        let half = 0.5 * kappa * tau;
        let a = identity.linear_combination(1.0, &laplacian, -half);
        let b = identity.linear_combination(1.0, &laplacian, half);
        let factor = BandedCholesky::factor(&a)?;
        Ok(CnWorkspace {
            grid: *grid,
            kappa,
            tau,
            rx: kappa * tau / (grid.hx * grid.hx),
            ry: kappa * tau / (grid.hy * grid.hy),
            a,
            b,
            laplacian,
            factor,
            taylor_correction: false,
        })
    }

    /// Enables the `τ²/2 ∂f/∂u (κΔu + f)` correction term.
    pub fn with_taylor_correction(mut self, on: bool) -> Self {
        self.taylor_correction = on;
        self
    }

    pub fn taylor_correction(&self) -> bool {
        self.taylor_correction
    }

    /// Solves `A x = rhs` in place.
    pub fn solve_implicit(&self, rhs: &mut [f64]) {
        self.factor.solve_in_place(rhs);
    }

    fn check(&self, fs: &FieldSet) -> Result<()> {
        for f in &fs.fields {
            self.grid.check_shape(f)?;
        }
        Ok(())
    }

    /// One forward step from `t_n`.
    pub fn step_forward(
        &self,
        u_n: &FieldSet,
        model: ModelKind,
        schedule: &RateSchedule,
        t_n: f64,
    ) -> Result<FieldSet> {
        self.check(u_n)?;
        let m = model.dim();
        if u_n.len() != m {
            return Err(Error::Dimension(format!(
                "{model:?} needs {m} fields, got {}",
                u_n.len()
            )));
        }
        let n = self.grid.len();
        let rates = schedule.rates_at(t_n);
        let src: Vec<&[f64]> = u_n
            .fields
            .iter()
            .map(|f| f.as_slice().expect("standard layout"))
            .collect();
        let mut rhs: Vec<Vec<f64>> = src.iter().map(|s| self.b.mul_vec(s)).collect();

        let lap: Option<Vec<Vec<f64>>> = self
            .taylor_correction
            .then(|| src.iter().map(|s| self.laplacian.mul_vec(s)).collect());
        let mut cell = [0.0; MAX_DIM];
        let mut f = [0.0; MAX_DIM];
        for p in 0..n {
            for k in 0..m {
                cell[k] = src[k][p];
            }
            model.rhs(&cell, &rates, &mut f);
            for k in 0..m {
                rhs[k][p] += self.tau * f[k];
            }
            if let Some(lap) = &lap {
                let jac = model.jacobian(&cell, &rates);
                let mut g = [0.0; MAX_DIM];
                for k in 0..m {
                    g[k] = self.kappa * lap[k][p] + f[k];
                }
                for row in 0..m {
                    let jg: f64 = (0..m).map(|c| jac[row][c] * g[c]).sum();
                    rhs[row][p] += 0.5 * self.tau * self.tau * jg;
                }
            }
        }

        let t_next = t_n + self.tau;
        let mut fields = Vec::with_capacity(m);
        for (k, mut q) in rhs.into_iter().enumerate() {
            self.solve_implicit(&mut q);
            clip_negatives(&mut q, t_next, &u_n.names[k])?;
            fields.push(Array2::from_shape_vec(self.grid.shape(), q).expect("grid shape"));
        }
        FieldSet::new(u_n.names.clone(), fields, t_next)
    }

    /// One backward step of the adjoint system: `A z_{n-1} = B z_n + τ p_n`.
    pub fn step_backward(&self, z_n: &FieldSet, source: &FieldSet) -> Result<FieldSet> {
        self.check(z_n)?;
        self.check(source)?;
        if z_n.len() != source.len() {
            return Err(Error::Dimension(format!(
                "adjoint has {} fields, source has {}",
                z_n.len(),
                source.len()
            )));
        }
        let mut fields = Vec::with_capacity(z_n.len());
        for (z, p) in z_n.fields.iter().zip(&source.fields) {
            let mut q = self.b.mul_vec(z.as_slice().expect("standard layout"));
            for (qi, pi) in q.iter_mut().zip(p.iter()) {
                *qi += self.tau * pi;
            }
            self.solve_implicit(&mut q);
            fields.push(Array2::from_shape_vec(self.grid.shape(), q).expect("grid shape"));
        }
        FieldSet::new(z_n.names.clone(), fields, z_n.time - self.tau)
    }

    /// Pure diffusion over one step: `A x = B y`.
    pub fn diffuse_flat(&self, y: &[f64]) -> Vec<f64> {
        let mut q = self.b.mul_vec(y);
        self.solve_implicit(&mut q);
        q
    }
}

fn clip_negatives(q: &mut [f64], time: f64, name: &str) -> Result<()> {
    for v in q.iter_mut() {
        if *v < 0.0 {
            if *v > -NEGATIVE_TOL {
                *v = 0.0;
            } else {
                return Err(Error::Stability {
                    time,
                    detail: format!("{name} fell to {v:e}"),
                });
            }
        }
    }
    Ok(())
}

impl ForwardStepper for CnWorkspace {
    fn backend(&self) -> Backend {
        Backend::Cn
    }

    fn tau(&self) -> f64 {
        self.tau
    }

    fn step(&self, u: &FieldSet, model: ModelKind, schedule: &RateSchedule, t_n: f64) -> Result<FieldSet> {
        self.step_forward(u, model, schedule, t_n)
    }

    fn diffuse(&self, field: &Array2<f64>) -> Result<Array2<f64>> {
        self.grid.check_shape(field)?;
        let q = self.diffuse_flat(field.as_slice().expect("standard layout"));
        Ok(Array2::from_shape_vec(self.grid.shape(), q).expect("grid shape"))
    }
}

/// Forward run with the Crank–Nicolson backend.
pub fn run_forward(
    scenario: &Scenario,
    params: &crate::models::ParameterVector,
    t_end: f64,
    tau: f64,
    storage: Storage,
) -> Result<Trajectory> {
    let ws = CnWorkspace::assemble(&scenario.grid, params.kappa, tau)?;
    let u0 = scenario.initial_state(&params.init_infected)?;
    trajectory::run_forward(&ws, scenario, &params.schedule, u0, t_end, storage)
}
