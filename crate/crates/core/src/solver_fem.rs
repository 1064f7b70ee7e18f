//! Bilinear finite elements with Strang splitting: half diffusion, full reaction, half diffusion.
//!
//! Nodes coincide with the finite-difference grid. On each cell the local shape functions are
//! ordered φ1 at (x1, y1), φ2 at (x1, y2), φ3 at (x2, y1), φ4 at (x2, y2).

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::{FieldSet, GridSpec};
use crate::linalg::{BandedCholesky, CsrMatrix};
use crate::models::{ModelKind, RateSchedule, Rates, MAX_DIM};
use crate::scenario::Scenario;
use crate::solver_cn::{MAX_TAU, NEGATIVE_TOL};
use crate::trajectory::{self, Backend, ForwardStepper, Storage, Trajectory};

/// RK4 is stable for `κ λ dt` up to about 2.78 on the negative real axis.
pub const RK4_STABILITY_CAP: f64 = 2.5;

/// Local corner offsets `(di, dj)` in shape-function order.
const CORNERS: [(usize, usize); 4] = [(0, 0), (0, 1), (1, 0), (1, 1)];

#[derive(Debug, Clone)]
pub struct FemAssembly {
    pub grid: GridSpec,
    pub mass: CsrMatrix,
    pub stiffness: CsrMatrix,
}

/// Element mass and stiffness for a cell of size `hx × hy`.
pub fn element_matrices(hx: f64, hy: f64) -> ([[f64; 4]; 4], [[f64; 4]; 4]) {
    let m1 = |h: f64| [[h / 3.0, h / 6.0], [h / 6.0, h / 3.0]];
    let k1 = |h: f64| [[1.0 / h, -1.0 / h], [-1.0 / h, 1.0 / h]];
    let (mx, my, kx, ky) = (m1(hx), m1(hy), k1(hx), k1(hy));
    let mut mass = [[0.0; 4]; 4];
    let mut stiff = [[0.0; 4]; 4];
    for (a, &(ax, ay)) in CORNERS.iter().enumerate() {
        for (b, &(bx, by)) in CORNERS.iter().enumerate() {
            mass[a][b] = mx[ax][bx] * my[ay][by];
            stiff[a][b] = kx[ax][bx] * my[ay][by] + mx[ax][bx] * ky[ay][by];
        }
    }
    (mass, stiff)
}

pub fn assemble_fem(grid: &GridSpec) -> FemAssembly {
    let (me, ke) = element_matrices(grid.hx, grid.hy);
    let cells = (grid.nx - 1) * (grid.ny - 1);
    let mut mt = Vec::with_capacity(16 * cells);
    let mut kt = Vec::with_capacity(16 * cells);
    for j in 0..grid.ny - 1 {
        for i in 0..grid.nx - 1 {
            let nodes = CORNERS.map(|(di, dj)| grid.index(i + di, j + dj));
            for a in 0..4 {
                for b in 0..4 {
                    mt.push((nodes[a], nodes[b], me[a][b]));
                    kt.push((nodes[a], nodes[b], ke[a][b]));
                }
            }
        }
    }
    FemAssembly {
        grid: *grid,
        mass: CsrMatrix::from_triplets(grid.len(), mt),
        stiffness: CsrMatrix::from_triplets(grid.len(), kt),
    }
}

/// Largest eigenvalue of `M⁻¹K` by power iteration.
fn generalized_lambda_max(mass: &BandedCholesky, stiffness: &CsrMatrix, grid: &GridSpec) -> f64 {
    // checkerboard start has a large component along the top mode
    let mut v: Vec<f64> = (0..grid.len())
        .map(|p| {
            let (i, j) = (p % grid.nx, p / grid.nx);
            if (i + j) % 2 == 0 {
                1.0
            } else {
                -1.0
            }
        })
        .collect();
    let mut lambda = 0.0;
    for _ in 0..500 {
        let mut w = stiffness.mul_vec(&v);
        mass.solve_in_place(&mut w);
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm / v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = w.into_iter().map(|x| x / norm).collect();
        let converged = (next - lambda).abs() <= 1e-10 * next;
        lambda = next;
        if converged {
            break;
        }
    }
    lambda
}

/// Factorized finite-element operators plus the splitting step for one `(grid, κ, τ)`.
#[derive(Debug, Clone)]
pub struct FemWorkspace {
    pub assembly: FemAssembly,
    pub kappa: f64,
    pub tau: f64,
    pub lambda_max: f64,
    /// RK4 substep of the diffusion flow.
    pub dt_sub: f64,
    /// Substeps per half step.
    pub substeps: usize,
    mass_factor: BandedCholesky,
}

impl FemWorkspace {
    pub fn assemble(grid: &GridSpec, kappa: f64, tau: f64) -> Result<Self> {
        if !(kappa >= 0.0) || !kappa.is_finite() {
            return Err(Error::Parameter(format!("kappa must be >= 0, got {kappa}")));
        }
        if !(tau > 0.0) || tau > MAX_TAU {
            return Err(Error::Parameter(format!("tau must be in (0, {MAX_TAU}], got {tau}")));
        }
        let assembly = assemble_fem(grid);
        let mass_factor = BandedCholesky::factor(&assembly.mass)?;
        let lambda_max = generalized_lambda_max(&mass_factor, &assembly.stiffness, grid);
        // small margin since power iteration approaches the top eigenvalue from below
        let rate = 1.05 * kappa * lambda_max;
        let half = 0.5 * tau;
        let substeps = if rate > 0.0 {
            (half * rate / RK4_STABILITY_CAP).ceil().max(1.0) as usize
        } else {
            1
        };
        Ok(FemWorkspace {
            assembly,
            kappa,
            tau,
            lambda_max,
            dt_sub: half / substeps as f64,
            substeps,
            mass_factor,
        })
    }

    fn diffusion_rate(&self, u: &[f64], out: &mut Vec<f64>) {
        out.resize(u.len(), 0.0);
        self.assembly.stiffness.mul_vec_into(u, out);
        for v in out.iter_mut() {
            *v *= -self.kappa;
        }
        self.mass_factor.solve_in_place(out);
    }

    /// Advances `M u' = -κ K u` by `steps` RK4 substeps of size `dt`.
    pub fn diffuse_flow(&self, u: &mut [f64], dt: f64, steps: usize) {
        if self.kappa == 0.0 {
            return;
        }
        let n = u.len();
        let (mut k1, mut k2, mut k3, mut k4) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let mut tmp = vec![0.0; n];
        for _ in 0..steps {
            self.diffusion_rate(u, &mut k1);
            for p in 0..n {
                tmp[p] = u[p] + 0.5 * dt * k1[p];
            }
            self.diffusion_rate(&tmp, &mut k2);
            for p in 0..n {
                tmp[p] = u[p] + 0.5 * dt * k2[p];
            }
            self.diffusion_rate(&tmp, &mut k3);
            for p in 0..n {
                tmp[p] = u[p] + dt * k3[p];
            }
            self.diffusion_rate(&tmp, &mut k4);
            for p in 0..n {
                u[p] += dt / 6.0 * (k1[p] + 2.0 * k2[p] + 2.0 * k3[p] + k4[p]);
            }
        }
    }

    /// Diffusion over `τ/2`.
    pub fn half_diffusion(&self, u: &mut [f64]) {
        self.diffuse_flow(u, self.dt_sub, self.substeps);
    }

    /// Strang step from `t_n` with `β(t_n)` held over the step.
    pub fn strang_step(&self, u_n: &FieldSet, model: ModelKind, schedule: &RateSchedule, t_n: f64) -> Result<FieldSet> {
        let grid = &self.assembly.grid;
        for f in &u_n.fields {
            grid.check_shape(f)?;
        }
        let m = model.dim();
        if u_n.len() != m {
            return Err(Error::Dimension(format!(
                "{model:?} needs {m} fields, got {}",
                u_n.len()
            )));
        }
        let mut q: Vec<Vec<f64>> = u_n.fields.iter().map(|f| f.iter().copied().collect()).collect();
        for c in q.iter_mut() {
            self.half_diffusion(c);
        }
        let rates = schedule.rates_at(t_n);
        let mut cell = [0.0; MAX_DIM];
        for p in 0..grid.len() {
            for k in 0..m {
                cell[k] = q[k][p];
            }
            rk4_reaction(model, &rates, &mut cell[..m], self.tau);
            for k in 0..m {
                q[k][p] = cell[k];
            }
        }
        let t_next = t_n + self.tau;
        let mut fields = Vec::with_capacity(m);
        for (k, mut c) in q.into_iter().enumerate() {
            self.half_diffusion(&mut c);
            for v in c.iter_mut() {
                if *v < 0.0 {
                    if *v > -NEGATIVE_TOL {
                        *v = 0.0;
                    } else {
                        return Err(Error::Stability {
                            time: t_next,
                            detail: format!("{} fell to {v:e}", u_n.names[k]),
                        });
                    }
                }
            }
            fields.push(Array2::from_shape_vec(grid.shape(), c).expect("grid shape"));
        }
        FieldSet::new(u_n.names.clone(), fields, t_next)
    }
}

/// One classical RK4 step of the pointwise reaction system.
pub fn rk4_reaction(model: ModelKind, rates: &Rates, u: &mut [f64], dt: f64) {
    let m = u.len();
    let f = |v: &[f64]| {
        let mut o = [0.0; MAX_DIM];
        model.rhs(v, rates, &mut o);
        o
    };
    let mut tmp = [0.0; MAX_DIM];
    let k1 = f(u);
    for k in 0..m {
        tmp[k] = u[k] + 0.5 * dt * k1[k];
    }
    let k2 = f(&tmp[..m]);
    for k in 0..m {
        tmp[k] = u[k] + 0.5 * dt * k2[k];
    }
    let k3 = f(&tmp[..m]);
    for k in 0..m {
        tmp[k] = u[k] + dt * k3[k];
    }
    let k4 = f(&tmp[..m]);
    for k in 0..m {
        u[k] += dt / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
    }
}

/// Pointwise reaction system integrated with RK4 at step `dt`; the state at every whole day.
pub fn ode_reference(
    model: ModelKind,
    schedule: &RateSchedule,
    u0: &[f64],
    t_end: f64,
    dt: f64,
) -> Result<Vec<Vec<f64>>> {
    let spd = crate::trajectory::steps_per_day(dt)?;
    let days = crate::trajectory::whole_days(t_end)?;
    if u0.len() != model.dim() {
        return Err(Error::Dimension(format!(
            "{model:?} needs {} values, got {}",
            model.dim(),
            u0.len()
        )));
    }
    let mut u = u0.to_vec();
    let mut out = Vec::with_capacity(days + 1);
    out.push(u.clone());
    for n in 0..days * spd {
        let rates = schedule.rates_at(n as f64 / spd as f64);
        rk4_reaction(model, &rates, &mut u, dt);
        if (n + 1) % spd == 0 {
            out.push(u.clone());
        }
    }
    Ok(out)
}

impl ForwardStepper for FemWorkspace {
    fn backend(&self) -> Backend {
        Backend::FemSplit
    }

    fn tau(&self) -> f64 {
        self.tau
    }

    fn step(&self, u: &FieldSet, model: ModelKind, schedule: &RateSchedule, t_n: f64) -> Result<FieldSet> {
        self.strang_step(u, model, schedule, t_n)
    }

    fn diffuse(&self, field: &Array2<f64>) -> Result<Array2<f64>> {
        let grid = &self.assembly.grid;
        grid.check_shape(field)?;
        let mut q: Vec<f64> = field.iter().copied().collect();
        self.half_diffusion(&mut q);
        self.half_diffusion(&mut q);
        Ok(Array2::from_shape_vec(grid.shape(), q).expect("grid shape"))
    }
}

/// Forward run with the finite-element backend.
pub fn run_forward(
    scenario: &Scenario,
    params: &crate::models::ParameterVector,
    t_end: f64,
    tau: f64,
    storage: Storage,
) -> Result<Trajectory> {
    let ws = FemWorkspace::assemble(&scenario.grid, params.kappa, tau)?;
    let u0 = scenario.initial_state(&params.init_infected)?;
    trajectory::run_forward(&ws, scenario, &params.schedule, u0, t_end, storage)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn unit_cell_mass_matrix() {
        let (m, _) = element_matrices(1.0, 1.0);
        let expected = [
            [4.0, 2.0, 2.0, 1.0],
            [2.0, 4.0, 1.0, 2.0],
            [2.0, 1.0, 4.0, 2.0],
            [1.0, 2.0, 2.0, 4.0],
        ];
        for a in 0..4 {
            for b in 0..4 {
                assert_relative_eq!(m[a][b], expected[a][b] / 36.0, max_relative = 1e-15);
            }
        }
    }

    #[test]
    fn unit_cell_stiffness_by_quadrature() {
        // 3-point Gauss quadrature is exact for the bilinear gradient products
        let (_, k) = element_matrices(1.5, 0.5);
        let (hx, hy) = (1.5, 0.5);
        let g = [
            (0.5 - 0.5 * (0.6f64).sqrt(), 5.0 / 18.0),
            (0.5, 8.0 / 18.0),
            (0.5 + 0.5 * (0.6f64).sqrt(), 5.0 / 18.0),
        ];
        let grad = |(ax, ay): (usize, usize), s: f64, t: f64| {
            let fx = |a: usize, s: f64| if a == 0 { 1.0 - s } else { s };
            let dfx = |a: usize| if a == 0 { -1.0 } else { 1.0 };
            (dfx(ax) / hx * fx(ay, t), fx(ax, s) * dfx(ay) / hy)
        };
        for a in 0..4 {
            for b in 0..4 {
                let mut sum = 0.0;
                for &(s, ws) in &g {
                    for &(t, wt) in &g {
                        let (ga, gb) = (grad(CORNERS[a], s, t), grad(CORNERS[b], s, t));
                        sum += ws * wt * hx * hy * (ga.0 * gb.0 + ga.1 * gb.1);
                    }
                }
                assert_relative_eq!(k[a][b], sum, max_relative = 1e-13, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn global_matrices() {
        let g = GridSpec::new(7, 5, 3.0, 2.0).unwrap();
        let fem = assemble_fem(&g);
        assert!(fem.mass.is_symmetric(1e-15));
        assert!(fem.stiffness.is_symmetric(1e-15));
        let ones = vec![1.0; g.len()];
        assert!(fem.stiffness.mul_vec(&ones).iter().all(|v| v.abs() < 1e-13));
        let area: f64 = fem.mass.mul_vec(&ones).iter().sum();
        assert_relative_eq!(area, 6.0, max_relative = 1e-13);
        // positive semidefinite on a sample vector
        let v: Vec<f64> = (0..g.len()).map(|p| ((p * 17) % 5) as f64 - 2.0).collect();
        let kv = fem.stiffness.mul_vec(&v);
        assert!(v.iter().zip(&kv).map(|(a, b)| a * b).sum::<f64>() > 0.0);
    }

    #[test]
    fn power_iteration_finds_checkerboard_mode() {
        // the checkerboard is an exact eigenvector with eigenvalue 12/hx² + 12/hy²
        let g = GridSpec::new(41, 3, 20.0, 4.0).unwrap();
        let ws = FemWorkspace::assemble(&g, 1.0, 0.1).unwrap();
        assert_relative_eq!(ws.lambda_max, 48.0 + 3.0, max_relative = 1e-9);
        assert!(ws.kappa * ws.lambda_max * ws.dt_sub * 1.05 <= RK4_STABILITY_CAP + 1e-12);
    }

    fn smooth(g: &GridSpec) -> Vec<f64> {
        (0..g.len())
            .map(|p| {
                let (x, y) = g.node_position(p % g.nx, p / g.nx);
                1.0 + 0.5 * (x / g.lx * std::f64::consts::PI).cos() * (y / g.ly * std::f64::consts::PI).cos()
            })
            .collect()
    }

    #[test]
    fn two_halves_equal_one_full_diffusion_step() {
        let g = GridSpec::new(9, 9, 8.0, 8.0).unwrap();
        let ws = FemWorkspace::assemble(&g, 0.3, 0.5).unwrap();
        let mut halves = smooth(&g);
        ws.diffuse_flow(&mut halves, 1e-3, 250);
        ws.diffuse_flow(&mut halves, 1e-3, 250);
        let mut full = smooth(&g);
        ws.diffuse_flow(&mut full, 2.5e-4, 2000);
        for (a, b) in halves.iter().zip(&full) {
            assert!(((a - b) / b).abs() < 1e-8);
        }
    }

    #[test]
    fn diffusion_conserves_mass() {
        let g = GridSpec::new(11, 9, 5.0, 4.0).unwrap();
        let ws = FemWorkspace::assemble(&g, 0.5, 0.2).unwrap();
        let mut u = vec![0.0; g.len()];
        u[g.index(3, 4)] = 7.0;
        u[g.index(10, 0)] = 2.0;
        let ones = vec![1.0; g.len()];
        let weights = ws.assembly.mass.mul_vec(&ones);
        let total = |u: &[f64]| u.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>();
        let m0 = total(&u);
        let mut field = Array2::from_shape_vec(g.shape(), u).unwrap();
        for _ in 0..40 {
            field = ws.diffuse(&field).unwrap();
            assert!(((total(field.as_slice().unwrap()) - m0) / m0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_diffusivity_is_pure_reaction() {
        let g = GridSpec::new(3, 4, 2.0, 3.0).unwrap();
        let ws = FemWorkspace::assemble(&g, 0.0, 0.25).unwrap();
        let s = RateSchedule::new([0.3, 0.2, 0.1], [2.0, 4.0], 10.0).unwrap();
        let i = Array2::from_shape_fn(g.shape(), |(j, i)| 0.01 * (1 + i + j) as f64);
        let u = FieldSet::new(
            vec!["S".into(), "E".into(), "I".into()],
            vec![i.mapv(|v| 1.0 - 1.5 * v), i.mapv(|v| 0.5 * v), i.clone()],
            0.0,
        )
        .unwrap();
        let next = ws.strang_step(&u, ModelKind::Seir, &s, 0.0).unwrap();
        let rates = s.rates_at(0.0);
        for ((j, ii), _) in i.indexed_iter() {
            let mut cell = [u.fields[0][[j, ii]], u.fields[1][[j, ii]], u.fields[2][[j, ii]]];
            rk4_reaction(ModelKind::Seir, &rates, &mut cell, 0.25);
            for k in 0..3 {
                assert_eq!(next.fields[k][[j, ii]], cell[k]);
            }
        }
    }

    #[test]
    fn strang_splitting_is_second_order() {
        let g = GridSpec::new(9, 9, 8.0, 8.0).unwrap();
        let s = RateSchedule::new([0.5, 0.5, 0.5], [3.0, 4.0], 5.0).unwrap();
        let run = |tau: f64| {
            let ws = FemWorkspace::assemble(&g, 0.4, tau).unwrap();
            let base = smooth(&g);
            let i = Array2::from_shape_vec(g.shape(), base.iter().map(|v| 0.02 * v).collect()).unwrap();
            let mut u = FieldSet::new(
                vec!["S".into(), "E".into(), "I".into()],
                vec![i.mapv(|v| 1.0 - 1.5 * v), i.mapv(|v| 0.5 * v), i.clone()],
                0.0,
            )
            .unwrap();
            let steps = (2.0 / tau).round() as usize;
            for n in 0..steps {
                u = ws.strang_step(&u, ModelKind::Seir, &s, n as f64 * tau).unwrap();
            }
            u
        };
        let reference = run(1.0 / 128.0);
        let err = |u: &FieldSet| {
            (0..3)
                .flat_map(|k| {
                    u.fields[k]
                        .iter()
                        .zip(reference.fields[k].iter())
                        .map(|(a, b)| (a - b).abs())
                })
                .fold(0.0, f64::max)
        };
        let (e1, e2, e3) = (err(&run(0.5)), err(&run(0.25)), err(&run(0.125)));
        let order = ((e1 / e2).log2() + (e2 / e3).log2()) / 2.0;
        assert!(order >= 1.8, "observed order {order} ({e1:e}, {e2:e}, {e3:e})");
    }

    #[test]
    fn ode_reference_matches_exponential_decay() {
        // with S = 0 no new infections occur, so E and I decay in closed form
        let schedule = RateSchedule::new([0.3, 0.2, 0.1], [1.0, 2.0], 5.0).unwrap();
        let u0 = [0.0, 0.02, 0.01];
        let days = ode_reference(ModelKind::Seir, &schedule, &u0, 5.0, 0.01).unwrap();
        assert_eq!(days.len(), 6);
        let (th, g) = (schedule.theta, schedule.gamma);
        let e = |t: f64| 0.02 * (-th * t).exp();
        let i = |t: f64| 0.01 * (-g * t).exp() + 0.02 * th / (th - g) * ((-g * t).exp() - (-th * t).exp());
        for (d, u) in days.iter().enumerate() {
            assert!((u[1] - e(d as f64)).abs() < 1e-12);
            assert!((u[2] - i(d as f64)).abs() < 1e-12);
        }
    }
}
