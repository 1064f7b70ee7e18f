//! Discrete adjoint of the Crank–Nicolson scheme and the forward–backward descent built on it.
//!
//! With `A u_{n+1} = B u_n + τ f(u_n; β(t_n))` and `z` scaled by `1/(hx·hy)` the adjoint runs
//! `A z_n = B z_{n+1} + τ (∂f/∂u)ᵀ(u_n) z_{n+1} + G_n/(hx·hy)` from `z_{N+1} = 0`, where `G_n`
//! is the derivative of the data term at day marks. The gradient is exact for the discrete `J`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Estimator, FitResult, InitMode, IterationRecord, Lbfgs, Problem, Termination};
use crate::error::{Error, Result};
use crate::grid::FieldSet;
use crate::models::{ParameterVector, CHI_LEN, MAX_DIM};
use crate::objective::{incidence_field, time_weight, JBreakdown};
use crate::solver_cn::CnWorkspace;
use crate::trajectory::{Backend, Storage, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdjointConfig {
    pub tol: f64,
    pub max_outer: usize,
    pub armijo_c: f64,
    pub armijo_shrink: f64,
    pub bfgs_memory: usize,
    pub alpha_min: f64,
    /// Infinity-norm of the first quasi-Newton step, in units of the starting values.
    pub first_step: f64,
}

impl Default for AdjointConfig {
    fn default() -> Self {
        AdjointConfig {
            tol: 1e-6,
            max_outer: 100,
            armijo_c: 1e-3,
            armijo_shrink: 0.5,
            bfgs_memory: 10,
            alpha_min: 1e-10,
            first_step: 0.1,
        }
    }
}

impl AdjointConfig {
    pub fn validate(&self) -> Result<()> {
        let key = |k: &str| format!("adjoint.{k}");
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err(Error::config(key("armijo_c"), "must lie in (0, 1)"));
        }
        if !(self.armijo_shrink > 0.0 && self.armijo_shrink < 1.0) {
            return Err(Error::config(key("armijo_shrink"), "must lie in (0, 1)"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::config(key("tol"), "must be > 0"));
        }
        if self.max_outer == 0 {
            return Err(Error::config(key("max_outer"), "must be >= 1"));
        }
        if self.bfgs_memory == 0 {
            return Err(Error::config(key("bfgs_memory"), "must be >= 1"));
        }
        if !(self.alpha_min > 0.0 && self.alpha_min < 1.0) {
            return Err(Error::config(key("alpha_min"), "must lie in (0, 1)"));
        }
        if !(self.first_step > 0.0) {
            return Err(Error::config(key("first_step"), "must be > 0"));
        }
        Ok(())
    }
}

/// Derivatives of `J` at one point.
#[derive(Debug, Clone)]
pub struct Gradient {
    /// `∂J/∂(β₀, β₁, β₂, κ, δ)`.
    pub chi: [f64; CHI_LEN],
    /// `∂J/∂u₀` per compartment and node.
    pub initial_state: Vec<Array2<f64>>,
    /// `∂J/∂v` for the infected-fraction field `v` that generates `u₀`.
    pub fraction: Array2<f64>,
    /// `∂J/∂I₀` per region.
    pub seeds: Vec<f64>,
    pub objective: JBreakdown,
}

fn flat(f: &Array2<f64>) -> &[f64] {
    f.as_slice().expect("standard layout")
}

/// Gradient of `J` by one backward sweep over a fully stored forward trajectory.
pub fn adjoint_gradient(problem: &Problem, params: &ParameterVector, trajectory: &Trajectory) -> Result<Gradient> {
    if trajectory.backend != Backend::Cn {
        return Err(Error::config(
            "backend",
            "the adjoint is only available for the cn backend",
        ));
    }
    if problem.taylor_correction {
        return Err(Error::config(
            "solver.taylor_correction",
            "the adjoint is derived for the uncorrected stepper",
        ));
    }
    if trajectory.storage != Storage::Full {
        return Err(Error::Sequencing("adjoint sweep needs every forward level".into()));
    }
    let objective = &problem.objective;
    let scenario = &problem.scenario;
    let schedule = &params.schedule;
    let model = trajectory.model;
    let m = model.dim();
    let grid = scenario.grid;
    let n_cells = grid.len();
    let h2 = grid.cell_area();
    let spd = trajectory.steps_per_day;
    let tau = trajectory.tau;
    let levels = trajectory.states.len();
    if levels != trajectory.days() * spd + 1 {
        return Err(Error::Sequencing(format!(
            "expected {} forward levels, found {levels}",
            trajectory.days() * spd + 1
        )));
    }
    let value = objective.evaluate(trajectory, params)?;
    let ws = CnWorkspace::assemble(&grid, params.kappa, tau)?;
    let w0 = objective.weights.w0;
    let last = objective.last_day();

    let mut g_chi = [0.0; CHI_LEN];
    let mut z_next = trajectory.states[0].zeros_like();
    let mut cell = [0.0; MAX_DIM];
    let mut du0: Vec<Array2<f64>> = Vec::new();

    for n in (0..levels).rev() {
        let t_n = n as f64 / spd as f64;
        let u_n = &trajectory.states[n];
        let rates = schedule.rates_at(t_n);

        if n + 1 < levels {
            // parameter sensitivities of the step n -> n+1
            let u_next = &trajectory.states[n + 1];
            let k_beta = schedule.interval(t_n);
            let mut gb = 0.0;
            for p in 0..n_cells {
                for k in 0..m {
                    cell[k] = flat(&u_n.fields[k])[p];
                }
                let dfdb = model.beta_derivative(&cell[..m]);
                for k in 0..m {
                    gb += flat(&z_next.fields[k])[p] * dfdb[k];
                }
            }
            g_chi[k_beta] += h2 * tau * gb;
            let mut gk = 0.0;
            for k in 0..m {
                let sum: Vec<f64> = flat(&u_n.fields[k])
                    .iter()
                    .zip(flat(&u_next.fields[k]))
                    .map(|(a, b)| a + b)
                    .collect();
                let lap = ws.laplacian.mul_vec(&sum);
                gk += flat(&z_next.fields[k])
                    .iter()
                    .zip(&lap)
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            }
            g_chi[3] += h2 * 0.5 * tau * gk;
        }

        // source: τ (∂f/∂u)ᵀ z_{n+1} + G_n/h²
        let mut source: Vec<Vec<f64>> = vec![vec![0.0; n_cells]; m];
        for p in 0..n_cells {
            for k in 0..m {
                cell[k] = flat(&u_n.fields[k])[p];
            }
            let jac = model.jacobian(&cell[..m], &rates);
            for c in 0..m {
                let mut acc = 0.0;
                for r in 0..m {
                    acc += jac[r][c] * flat(&z_next.fields[r])[p];
                }
                source[c][p] = tau * acc;
            }
        }
        if n % spd == 0 {
            let d = n / spd;
            let beta = schedule.beta_at(d as f64)?;
            let inc = incidence_field(u_n, model, schedule, params.delta, d as f64)?;
            let res = objective.residual(d, &inc);
            let omega = w0 * time_weight(d, last);
            let mut gb = 0.0;
            let mut gd = 0.0;
            for p in 0..n_cells {
                if res[p] == 0.0 {
                    continue;
                }
                for k in 0..m {
                    cell[k] = flat(&u_n.fields[k])[p];
                }
                let si = model.incidence(&cell[..m], 1.0);
                gb += res[p] * params.delta * si;
                gd += res[p] * beta * si;
                let dinc = model.incidence_gradient(&cell[..m], beta);
                for k in 0..m {
                    source[k][p] += omega * res[p] * params.delta * dinc[k];
                }
            }
            g_chi[schedule.interval(d as f64)] += omega * h2 * gb;
            g_chi[4] += omega * h2 * gd;
        }
        if n == 0 && objective.weights.w2 > 0.0 {
            let w2 = objective.weights.w2;
            for &k in model.infected_components() {
                let reference = objective.weights.u0_ref.as_ref().map(|r| flat(&r.fields[k]));
                for p in 0..n_cells {
                    let r = reference.map_or(0.0, |r| r[p]);
                    source[k][p] += w2 * (flat(&u_n.fields[k])[p] - r);
                }
            }
        }

        if n > 0 {
            let scaled: Vec<Array2<f64>> = source
                .into_iter()
                .map(|s| {
                    Array2::from_shape_vec(grid.shape(), s.into_iter().map(|v| v / tau).collect()).expect("grid shape")
                })
                .collect();
            let p = FieldSet::new(u_n.names.clone(), scaled, t_n)?;
            let mut z_n = ws.step_backward(&z_next, &p)?;
            z_n.time = t_n;
            z_next = z_n;
        } else {
            du0 = source
                .into_iter()
                .zip(&z_next.fields)
                .map(|(s, z)| {
                    let bz = ws.b.mul_vec(flat(z));
                    let v: Vec<f64> = bz.iter().zip(&s).map(|(a, b)| h2 * (a + b)).collect();
                    Array2::from_shape_vec(grid.shape(), v).expect("grid shape")
                })
                .collect();
        }
    }

    let w1 = objective.weights.w1;
    let chi = params.chi();
    for k in 0..CHI_LEN {
        g_chi[k] += w1 * (chi[k] - objective.weights.chi_ref[k]);
    }
    let dir = model.seed_direction();
    let mut fraction = grid.zeros();
    for k in 0..m {
        fraction.scaled_add(dir[k], &du0[k]);
    }
    let seeds = (0..scenario.regions.len())
        .map(|r| (&fraction * &scenario.seed_profile(r)).sum())
        .collect();
    Ok(Gradient {
        chi: g_chi,
        initial_state: du0,
        fraction,
        seeds,
        objective: value,
    })
}

/// Forward run plus backward sweep at one point.
fn evaluate_with_gradient(
    problem: &Problem,
    params: &ParameterVector,
    fraction: Option<&Array2<f64>>,
) -> Result<(Trajectory, Gradient)> {
    let traj = problem.forward(params, fraction, Storage::Full)?;
    let grad = adjoint_gradient(problem, params, &traj)?;
    Ok((traj, grad))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Current iterate of the initial-condition unknowns.
#[derive(Debug, Clone)]
enum InitIterate {
    Fixed,
    Seeds(Vec<f64>),
    Field(Array2<f64>),
}

/// Forward–backward sweep: quasi-Newton direction for `χ`, optimal-initial-condition
/// direction for `u₀`, and projected Armijo backtracking on both together.
pub fn adjoint_fit(problem: &Problem, config: &AdjointConfig) -> Result<FitResult> {
    config.validate()?;
    problem.validate()?;
    if problem.backend != Backend::Cn {
        return Err(Error::config("backend", "the adjoint estimator runs on the cn backend"));
    }
    let w2 = problem.objective.weights.w2;
    if problem.init_mode != InitMode::Fixed && w2 <= 0.0 {
        return Err(Error::config(
            "weights.w2",
            "must be > 0 when the initial condition is optimized",
        ));
    }
    let scenario = &problem.scenario;
    let model = scenario.model;
    let h2 = scenario.grid.cell_area();
    let dir = model.seed_direction();
    let curvature: f64 = model.infected_components().iter().map(|&k| dir[k] * dir[k]).sum();
    let profiles: Vec<Array2<f64>> = (0..scenario.regions.len()).map(|r| scenario.seed_profile(r)).collect();
    let seed_upper = problem.seed_upper();
    let field_upper = dir[..model.dim()]
        .iter()
        .map(|&d| if d != 0.0 { 1.0 / d.abs() } else { f64::INFINITY })
        .fold(f64::INFINITY, f64::min);

    let mut params = problem.initial.clone();
    let mut init = match problem.init_mode {
        InitMode::Fixed => InitIterate::Fixed,
        InitMode::Region => InitIterate::Seeds(problem.seeds(&params)),
        InitMode::PerCell => InitIterate::Field(match &problem.initial_fraction {
            Some(v) => v.clone(),
            None => scenario.seed_fraction(&params.init_infected)?,
        }),
    };
    let field_of = |init: &InitIterate| match init {
        InitIterate::Field(v) => Some(v.clone()),
        _ => None,
    };

    let scale: Vec<f64> = params
        .chi()
        .iter()
        .map(|&c| if c != 0.0 { c.abs() } else { 1.0 })
        .collect();
    let mut lbfgs = Lbfgs::new(config.bfgs_memory, config.first_step);
    let mut evaluations = 1;
    let (mut traj, mut grad) = evaluate_with_gradient(problem, &params, field_of(&init).as_ref())?;
    let mut j = grad.objective.total;
    let seeds_of = |init: &InitIterate| match init {
        InitIterate::Seeds(s) => s.clone(),
        _ => Vec::new(),
    };
    let mut history = vec![IterationRecord {
        iteration: 0,
        objective: j,
        chi: params.chi(),
        seeds: seeds_of(&init),
    }];
    let mut gradient_norms = vec![dot(&grad.chi, &grad.chi).sqrt()];
    let mut warnings = Vec::new();
    let mut termination = Termination::MaxIterations;

    let stationary = |g: &Gradient, init: &InitIterate| {
        let init_zero = match init {
            InitIterate::Fixed => true,
            InitIterate::Seeds(_) => g.seeds.iter().all(|&v| v == 0.0),
            InitIterate::Field(_) => g.fraction.iter().all(|&v| v == 0.0),
        };
        g.chi.iter().all(|&v| v == 0.0) && init_zero
    };

    if j == 0.0 || stationary(&grad, &init) {
        termination = Termination::Stationary;
    } else {
        for iteration in 1..=config.max_outer {
            let chi = params.chi();
            let gx: Vec<f64> = grad.chi.iter().zip(&scale).map(|(g, s)| g * s).collect();
            let mut d = lbfgs.direction(&gx);
            if dot(&gx, &d) >= 0.0 {
                log::warn!("iteration {iteration}: quasi-Newton direction is not a descent direction, restarting");
                lbfgs.reset();
                d = lbfgs.steepest(&gx);
            }
            let init_step = match &init {
                InitIterate::Fixed => InitIterate::Fixed,
                InitIterate::Seeds(_) => InitIterate::Seeds(
                    grad.seeds
                        .iter()
                        .zip(&profiles)
                        .map(|(g, rho)| -g / (w2 * curvature * h2 * rho.iter().map(|v| v * v).sum::<f64>()))
                        .collect(),
                ),
                InitIterate::Field(_) => {
                    let mut s = grad.fraction.mapv(|g| -g / (w2 * curvature * h2));
                    ndarray::Zip::from(&mut s)
                        .and(&scenario.district.cells)
                        .for_each(|v, &m| {
                            if !m {
                                *v = 0.0;
                            }
                        });
                    InitIterate::Field(s)
                }
            };

            let mut alpha = 1.0;
            let accepted = loop {
                let mut cand_chi: Vec<f64> = (0..CHI_LEN).map(|k| chi[k] + alpha * d[k] * scale[k]).collect();
                problem.bounds.project(&mut cand_chi);
                let mut decrease = dot(
                    &grad.chi,
                    &cand_chi.iter().zip(&chi).map(|(a, b)| a - b).collect::<Vec<_>>(),
                );
                let cand_init = match (&init, &init_step) {
                    (InitIterate::Seeds(s), InitIterate::Seeds(st)) => {
                        let c: Vec<f64> = s
                            .iter()
                            .zip(st)
                            .zip(&seed_upper)
                            .map(|((v, dv), hi)| (v + alpha * dv).clamp(0.0, *hi))
                            .collect();
                        decrease += grad
                            .seeds
                            .iter()
                            .zip(c.iter().zip(s))
                            .map(|(g, (a, b))| g * (a - b))
                            .sum::<f64>();
                        InitIterate::Seeds(c)
                    }
                    (InitIterate::Field(v), InitIterate::Field(st)) => {
                        let mut c = v + &(st * alpha);
                        c.mapv_inplace(|x| x.clamp(0.0, field_upper));
                        decrease += ((&c - v) * &grad.fraction).sum();
                        InitIterate::Field(c)
                    }
                    _ => InitIterate::Fixed,
                };
                if decrease < 0.0 {
                    let mut cand = params.with_chi(&cand_chi);
                    if let InitIterate::Seeds(s) = &cand_init {
                        problem.set_seeds(&mut cand, s);
                    }
                    evaluations += 1;
                    match problem.evaluate(&cand, field_of(&cand_init).as_ref()) {
                        Ok(jc) if jc.total <= j + config.armijo_c * decrease => break Some((cand, cand_init)),
                        Ok(_) => {}
                        Err(e) => log::debug!("line search candidate failed: {e}"),
                    }
                }
                alpha *= config.armijo_shrink;
                if alpha < config.alpha_min {
                    break None;
                }
            };
            let Some((cand, cand_init)) = accepted else {
                termination = Termination::LineSearchFailure;
                warnings.push(format!("line search failed at iteration {iteration}"));
                break;
            };

            let (t_new, g_new) = evaluate_with_gradient(problem, &cand, field_of(&cand_init).as_ref())?;
            evaluations += 1;
            let s: Vec<f64> = (0..CHI_LEN).map(|k| (cand.chi()[k] - chi[k]) / scale[k]).collect();
            let y: Vec<f64> = (0..CHI_LEN).map(|k| (g_new.chi[k] - grad.chi[k]) * scale[k]).collect();
            let bs: Vec<f64> = gx.iter().map(|g| -alpha * g).collect();
            if !lbfgs.update(&s, &y, &bs) {
                log::debug!("iteration {iteration}: curvature pair skipped");
            }

            let j_new = g_new.objective.total;
            let rel = (j - j_new).abs() / j.abs();
            params = cand;
            init = cand_init;
            traj = t_new;
            grad = g_new;
            j = j_new;
            history.push(IterationRecord {
                iteration,
                objective: j,
                chi: params.chi(),
                seeds: seeds_of(&init),
            });
            gradient_norms.push(dot(&grad.chi, &grad.chi).sqrt());
            log::info!("iteration {iteration}: J = {j:.6e}, alpha = {alpha:.3e}");
            if j == 0.0 || stationary(&grad, &init) {
                termination = Termination::Stationary;
                break;
            }
            if rel < config.tol {
                termination = Termination::Converged;
                break;
            }
        }
    }

    Ok(FitResult {
        estimator: Estimator::Adjoint,
        params,
        init_fields: traj.initial().clone(),
        objective: grad.objective,
        history,
        termination,
        acceptance_rate: None,
        gradient_norms,
        posterior_std: None,
        chain: Vec::new(),
        sigma: None,
        evaluations,
        warnings,
    })
}

/// One component of an adjoint-versus-finite-difference comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientComparison {
    pub name: String,
    pub adjoint: f64,
    pub finite_difference: f64,
    pub step: f64,
    pub relative_error: f64,
}

/// Compares the adjoint gradient over `χ` and the seeds with central differences of `J`
/// at step `rel_step·max(|x|, 10⁻³)`.
pub fn gradient_check(problem: &Problem, params: &ParameterVector, rel_step: f64) -> Result<Vec<GradientComparison>> {
    let traj = problem.forward(params, None, Storage::Full)?;
    let g = adjoint_gradient(problem, params, &traj)?;
    let j = |p: &ParameterVector| problem.evaluate(p, None).map(|b| b.total);
    let compare =
        |name: String, adjoint: f64, x: f64, set: &dyn Fn(f64) -> ParameterVector| -> Result<GradientComparison> {
            let step = rel_step * x.abs().max(1e-3);
            let fd = (j(&set(x + step))? - j(&set(x - step))?) / (2.0 * step);
            let scale = fd.abs().max(adjoint.abs());
            Ok(GradientComparison {
                name,
                adjoint,
                finite_difference: fd,
                step,
                relative_error: if scale == 0.0 {
                    0.0
                } else {
                    (adjoint - fd).abs() / scale
                },
            })
        };
    let mut out = Vec::new();
    let chi = params.chi();
    for k in 0..CHI_LEN {
        let set = |v: f64| {
            let mut c = chi;
            c[k] = v;
            params.with_chi(&c)
        };
        out.push(compare(super::CHI_NAMES[k].to_string(), g.chi[k], chi[k], &set)?);
    }
    if problem.init_mode == super::InitMode::Region {
        let seeds = problem.seeds(params);
        for (r, region) in problem.scenario.regions.iter().enumerate() {
            let set = |v: f64| {
                let mut s = seeds.clone();
                s[r] = v;
                let mut p = params.clone();
                problem.set_seeds(&mut p, &s);
                p
            };
            out.push(compare(format!("seed_{}", region.name), g.seeds[r], seeds[r], &set)?);
        }
    }
    Ok(out)
}
