//! Command pipelines: each reads the config, runs the core modules, and writes its outputs
//! plus `summary.json` to the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::{json, Value};

use epidiffuse::estimate::{adjoint_fit, gradient_check as check_gradient, metropolis_fit, Estimator, InitMode};
use epidiffuse::io::cases::{day_to_date, write_cases, NaiveDate};
use epidiffuse::io::config::EstimatorKind;
use epidiffuse::io::export::{config_hash, file_sha256, Exporter, FitReport, Provenance, StringMap};
use epidiffuse::io::synthetic::{exact_cases, generate_synthetic, SyntheticTruth};
use epidiffuse::solver_fem::ode_reference;
use epidiffuse::trajectory::{build_stepper, run_forward, ForwardStepper};
use epidiffuse::{Error, ParameterVector, RunConfig, Scenario, Storage};

use crate::Common;

/// A check command ran but its result is outside tolerance.
#[derive(Debug)]
pub struct CheckFailed(pub String);

impl std::error::Error for CheckFailed {}

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Error category and exit code.
pub fn classify(e: &anyhow::Error) -> (&'static str, u8) {
    if let Some(err) = e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        let cat = err.category();
        let code = match cat {
            "config" => 2,
            "io" => 3,
            "input" => 4,
            "numerical" => 5,
            _ => 1,
        };
        return (cat, code);
    }
    if e.downcast_ref::<CheckFailed>().is_some() {
        return ("numerical", 5);
    }
    ("internal", 1)
}

struct Run {
    cfg: RunConfig,
    config_path: PathBuf,
    exporter: Exporter,
}

impl Run {
    /// Loads the config, applies command-line overrides, validates, and opens the output directory.
    fn open(
        common: &Common,
        extra: &[(String, String)],
        apply: impl FnOnce(&mut RunConfig) -> Result<()>,
    ) -> Result<Self> {
        let text = fs::read_to_string(&common.config).map_err(|e| Error::Io {
            path: common.config.clone(),
            source: e,
        })?;
        let mut cfg = RunConfig::from_toml(&text, &common.config)?;
        let mut overrides = Vec::new();
        if let Some(seed) = common.seed {
            cfg.seed = seed;
            cfg.metropolis.seed = seed;
            if let Some(s) = cfg.synthetic.as_mut() {
                s.seed = Some(seed);
            }
            overrides.push(("seed".to_string(), seed.to_string()));
        }
        if let Some(b) = &common.backend {
            cfg.solver.backend = b.parse()?;
            overrides.push(("backend".to_string(), b.clone()));
        }
        overrides.extend(extra.iter().cloned());
        apply(&mut cfg)?;
        cfg.validate()?;
        let dir = match &common.out {
            Some(d) => d.clone(),
            None => cfg.output_dir(),
        };
        let exporter = Exporter::new(dir, config_hash(&text, &overrides))?;
        Ok(Run {
            cfg,
            config_path: common.config.clone(),
            exporter,
        })
    }

    fn provenance(&self, scenario: &Scenario) -> Result<Provenance> {
        let mut inputs = StringMap::new();
        inputs.insert("config".into(), file_sha256(&self.config_path)?);
        inputs.insert(
            "district".into(),
            file_sha256(&self.cfg.resolve(&self.cfg.grid.district))?,
        );
        for (name, p) in &self.cfg.grid.regions {
            inputs.insert(format!("region_{name}"), file_sha256(&self.cfg.resolve(p))?);
        }
        if let Some(p) = &self.cfg.grid.population_file {
            inputs.insert("population".into(), file_sha256(&self.cfg.resolve(p))?);
        }
        if let Some(p) = &self.cfg.data.cases {
            inputs.insert("cases".into(), file_sha256(&self.cfg.resolve(p))?);
        }
        Ok(Provenance {
            config_hash: self.exporter.config_hash.clone(),
            inputs,
            grid: (&scenario.grid).into(),
            backend: self.cfg.solver.backend.name().to_string(),
            tau: self.cfg.solver.tau,
            seed: self.cfg.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
        })
    }

    fn stepper(&self, scenario: &Scenario, kappa: f64, tau: f64) -> Result<Box<dyn ForwardStepper>> {
        Ok(build_stepper(
            &scenario.grid,
            self.cfg.solver.backend,
            kappa,
            tau,
            self.cfg.solver.taylor_correction,
        )?)
    }

    fn summary(&self, command: &str, mut body: Value, outputs: &[PathBuf]) -> Result<PathBuf> {
        let names: Vec<String> = outputs
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect();
        body["command"] = command.into();
        body["outputs"] = json!(names);
        Ok(self.exporter.write_json("summary.json", &body)?)
    }
}

fn region_names(s: &Scenario) -> Vec<String> {
    s.region_names()
}

pub fn simulate(common: &Common) -> Result<PathBuf> {
    let run = Run::open(common, &[], |_| Ok(()))?;
    let cfg = &run.cfg;
    let scenario = cfg.load_scenario()?;
    let params = cfg.initial_parameters()?;
    let t_end = params.schedule.t_end;
    let stepper = run.stepper(&scenario, params.kappa, cfg.solver.tau)?;
    let u0 = scenario.initial_state(&params.init_infected)?;
    let traj = run_forward(stepper.as_ref(), &scenario, &params.schedule, u0, t_end, Storage::Daily)?;
    let start = cfg.start_date()?;
    let regions = region_names(&scenario);

    let mut outputs = run.exporter.write_region_tables(&traj, &scenario, start)?;
    let cases = exact_cases(&traj, &scenario, &params)?;
    outputs.push(
        run.exporter
            .write_region_series("incidence_regions.csv", &regions, &cases, start)?,
    );
    outputs.extend(
        run.exporter
            .write_snapshots(&traj, &scenario.grid, &cfg.output.snapshot_days)?,
    );

    let mut body = json!({
        "backend": cfg.solver.backend.name(),
        "tau": cfg.solver.tau,
        "days": traj.days(),
        "district_population_start": scenario.district_population(),
        "model_cases_total": cases.iter().map(|c| c.iter().sum::<f64>()).collect::<Vec<_>>(),
        "regions": regions,
    });
    if params.kappa == 0.0 {
        let (path, max_err) = ode_comparison(&run, &scenario, &params, &traj, start)?;
        outputs.push(path);
        body["ode_max_abs_error"] = max_err.into();
        body["ode_step"] = (cfg.solver.tau / 100.0).into();
    }
    run.summary("simulate", body, &outputs)
}

/// Per-region comparison of the κ = 0 run with a fine-step RK4 solution of the local ODE.
fn ode_comparison(
    run: &Run,
    scenario: &Scenario,
    params: &ParameterVector,
    traj: &epidiffuse::Trajectory,
    start: NaiveDate,
) -> Result<(PathBuf, f64)> {
    let model = scenario.model;
    let names = model.compartment_names();
    let mut columns = vec!["day".to_string(), "date".to_string(), "region".to_string()];
    columns.extend(names.iter().map(|n| format!("{n}_ode")));
    columns.push("max_abs_error".into());
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    let u0 = traj.state_at_day(0);
    for region in &scenario.regions {
        let cells = region.indices();
        let first = cells[0];
        let init: Vec<f64> = u0
            .fields
            .iter()
            .map(|f| f.as_slice().expect("standard layout")[first])
            .collect();
        let reference = ode_reference(
            model,
            &params.schedule,
            &init,
            params.schedule.t_end,
            run.cfg.solver.tau / 100.0,
        )?;
        for (d, ode) in reference.iter().enumerate() {
            let state = traj.state_at_day(d);
            let mut err: f64 = 0.0;
            for (k, f) in state.fields.iter().enumerate() {
                let flat = f.as_slice().expect("standard layout");
                for &c in &cells {
                    err = err.max((flat[c] - ode[k]).abs());
                }
            }
            worst = worst.max(err);
            let mut row = vec![d.to_string(), day_to_date(start, d).to_string(), region.name.clone()];
            row.extend(ode.iter().map(|v| format!("{v}")));
            row.push(format!("{err}"));
            rows.push(row);
        }
    }
    Ok((run.exporter.write_table("ode_comparison.csv", &columns, &rows)?, worst))
}

pub fn fit(common: &Common, estimator: Option<String>, draws: Option<usize>) -> Result<PathBuf> {
    let mut extra = Vec::new();
    if let Some(e) = &estimator {
        extra.push(("estimator".to_string(), e.clone()));
    }
    if let Some(d) = draws {
        extra.push(("draws".to_string(), d.to_string()));
    }
    let run = Run::open(common, &extra, |cfg| {
        if let Some(e) = &estimator {
            cfg.estimator.kind = e.parse()?;
        }
        if let Some(d) = draws {
            cfg.metropolis.draws = d;
        }
        Ok(())
    })?;
    let cfg = &run.cfg;
    let problem = cfg.load_problem()?;
    let result = match cfg.estimator.kind {
        EstimatorKind::Adjoint => adjoint_fit(&problem, &cfg.adjoint)?,
        EstimatorKind::Metropolis => metropolis_fit(&problem, &cfg.metropolis)?,
        EstimatorKind::SimulateOnly => {
            return Err(Error::config(
                "estimator.kind",
                "simulate-only has nothing to fit; use the simulate command",
            )
            .into())
        }
    };
    let regions = region_names(&problem.scenario);
    let config_echo = serde_json::to_value(cfg).context("serializing the config echo")?;
    let report = FitReport::new(
        &result,
        &problem.initial,
        &regions,
        config_echo,
        run.provenance(&problem.scenario)?,
    );
    let mut outputs = vec![
        run.exporter.write_json("fit_report.json", &report)?,
        run.exporter.write_history(&result, &regions)?,
    ];
    if result.estimator == Estimator::Metropolis {
        outputs.push(run.exporter.write_chain(&result, &regions)?);
    }
    let start = cfg.start_date()?;
    let traj = match problem.init_mode {
        InitMode::PerCell => problem.forward_from(&result.params, result.init_fields.clone(), Storage::Daily)?,
        _ => problem.forward(&result.params, None, Storage::Daily)?,
    };
    outputs.extend(run.exporter.write_region_tables(&traj, &problem.scenario, start)?);
    let modelled = exact_cases(&traj, &problem.scenario, &result.params)?;
    let observed = cfg.load_cases()?;
    outputs.extend(run.exporter.write_plot_tables(&observed, &modelled, &regions, start)?);
    for w in &result.warnings {
        log::warn!("{w}");
    }
    let body = json!({
        "estimator": result.estimator,
        "termination": result.termination,
        "objective": result.objective,
        "estimate": report.estimate,
        "acceptance_rate": result.acceptance_rate,
        "iterations": report.iterations,
    });
    run.summary("fit", body, &outputs)
}

pub fn gradient_check(common: &Common, rel_step: f64, tolerance: f64) -> Result<PathBuf> {
    let run = Run::open(common, &[], |_| Ok(()))?;
    let problem = run.cfg.load_problem()?;
    let rows = check_gradient(&problem, &problem.initial, rel_step)?;
    let columns: Vec<String> = ["parameter", "adjoint", "finite_difference", "step", "relative_error"]
        .map(String::from)
        .to_vec();
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.name.clone(),
                format!("{}", r.adjoint),
                format!("{}", r.finite_difference),
                format!("{}", r.step),
                format!("{}", r.relative_error),
            ]
        })
        .collect();
    let out = run.exporter.write_table("gradient_check.csv", &columns, &table)?;
    let worst = rows.iter().map(|r| r.relative_error).fold(0.0, f64::max);
    let pass = worst < tolerance;
    let summary = run.summary(
        "gradient-check",
        json!({ "max_relative_error": worst, "tolerance": tolerance, "pass": pass, "components": rows }),
        &[out],
    )?;
    if !pass {
        bail!(CheckFailed(format!(
            "largest relative gradient error {worst:e} exceeds {tolerance:e}; see {}",
            summary.display()
        )));
    }
    Ok(summary)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn convergence_study(common: &Common) -> Result<PathBuf> {
    let run = Run::open(common, &[], |_| Ok(()))?;
    let cfg = &run.cfg;
    let conv = &cfg.convergence;
    let scenario = cfg.load_scenario()?;
    let params = cfg.initial_parameters()?;
    if conv.days > params.schedule.t_end {
        return Err(Error::config("convergence.days", "must not exceed the study window").into());
    }
    let tau_ref = conv.taus.iter().copied().fold(f64::INFINITY, f64::min) / conv.reference_divisor as f64;
    let u0 = scenario.initial_state(&params.init_infected)?;

    let diffuse = |tau: f64| -> Result<Vec<f64>> {
        let stepper = run.stepper(&scenario, params.kappa, tau)?;
        let steps = (conv.days / tau).round() as usize;
        let mut n = scenario.population.clone();
        for _ in 0..steps {
            n = stepper.diffuse(&n)?;
        }
        Ok(n.iter().copied().collect())
    };
    let coupled = |tau: f64| -> Result<Vec<f64>> {
        let stepper = run.stepper(&scenario, params.kappa, tau)?;
        let end = epidiffuse::trajectory::integrate(
            stepper.as_ref(),
            scenario.model,
            &params.schedule,
            u0.clone(),
            conv.days,
            |_, _, _| Ok(()),
        )?;
        Ok(end.fields.iter().flat_map(|f| f.iter().copied()).collect())
    };

    let mut rows = Vec::new();
    let mut orders = serde_json::Map::new();
    for (study, solve) in [
        ("diffusion", &diffuse as &dyn Fn(f64) -> Result<Vec<f64>>),
        ("coupled", &coupled),
    ] {
        let reference = solve(tau_ref)?;
        let scale = reference
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        let errors: Vec<f64> = conv
            .taus
            .iter()
            .map(|&t| solve(t).map(|u| max_abs_diff(&u, &reference) / scale))
            .collect::<Result<_>>()?;
        let mut observed = Vec::new();
        for (k, (&tau, &err)) in conv.taus.iter().zip(&errors).enumerate() {
            let order = (k > 0).then(|| (errors[k - 1] / err).ln() / (conv.taus[k - 1] / tau).ln());
            if let Some(p) = order {
                observed.push(p);
            }
            rows.push(vec![
                study.to_string(),
                format!("{tau}"),
                format!("{err}"),
                order.map_or_else(String::new, |p| format!("{p}")),
            ]);
        }
        orders.insert(
            study.to_string(),
            json!({ "errors": errors, "orders": observed, "min_order": observed.iter().copied().fold(f64::INFINITY, f64::min) }),
        );
    }
    let columns = ["study", "tau", "relative_max_error", "observed_order"]
        .map(String::from)
        .to_vec();
    let out = run.exporter.write_table("convergence.csv", &columns, &rows)?;
    run.summary(
        "convergence-study",
        json!({ "backend": cfg.solver.backend.name(), "reference_tau": tau_ref, "days": conv.days, "studies": orders }),
        &[out],
    )
}

/// Overwrites the initial guess in `cfg` with the estimate in a fit report.
fn apply_report(cfg: &mut RunConfig, report: &Path) -> Result<()> {
    let text = fs::read_to_string(report).map_err(|e| Error::Io {
        path: report.to_path_buf(),
        source: e,
    })?;
    let v: Value = serde_json::from_str(&text).with_context(|| format!("{} is not valid JSON", report.display()))?;
    let est = &v["estimate"];
    let num = |x: &Value, key: &str| -> Result<f64> {
        x.as_f64().ok_or_else(|| {
            anyhow::Error::from(Error::config(
                format!("report.estimate.{key}"),
                "missing or not a number",
            ))
        })
    };
    for k in 0..3 {
        cfg.initial.beta[k] = num(&est["beta"][k], "beta")?;
    }
    cfg.initial.kappa = num(&est["kappa"], "kappa")?;
    cfg.initial.delta = num(&est["delta"], "delta")?;
    if let Some(seeds) = est["seeds"].as_object() {
        cfg.initial.seeds.clear();
        for (name, s) in seeds {
            cfg.initial.seeds.insert(name.clone(), num(s, "seeds")?);
        }
    }
    Ok(())
}

pub fn export_plots(common: &Common, report: Option<PathBuf>) -> Result<PathBuf> {
    let mut source = String::from("initial");
    let run = Run::open(common, &[], |cfg| {
        let dir = common.out.clone().unwrap_or_else(|| cfg.output_dir());
        let path = report
            .clone()
            .or_else(|| Some(dir.join("fit_report.json")).filter(|p| p.is_file()));
        if let Some(p) = path {
            apply_report(cfg, &p)?;
            source = p.display().to_string();
        }
        Ok(())
    })?;
    let cfg = &run.cfg;
    let scenario = cfg.load_scenario()?;
    let params = cfg.initial_parameters()?;
    let stepper = run.stepper(&scenario, params.kappa, cfg.solver.tau)?;
    let u0 = scenario.initial_state(&params.init_infected)?;
    let traj = run_forward(
        stepper.as_ref(),
        &scenario,
        &params.schedule,
        u0,
        params.schedule.t_end,
        Storage::Daily,
    )?;
    let modelled = exact_cases(&traj, &scenario, &params)?;
    let observed = match &cfg.data.cases {
        Some(_) => cfg.load_cases()?,
        None => Vec::new(),
    };
    let regions = region_names(&scenario);
    let outputs = run
        .exporter
        .write_plot_tables(&observed, &modelled, &regions, cfg.start_date()?)?;
    run.summary(
        "export-plots",
        json!({ "parameters_from": source, "regions": regions, "days": traj.days() }),
        &outputs,
    )
}

pub fn synthesize(common: &Common, noise: Option<f64>) -> Result<PathBuf> {
    let extra: Vec<(String, String)> = noise.iter().map(|n| ("noise".to_string(), n.to_string())).collect();
    let run = Run::open(common, &extra, |cfg| {
        let s = cfg
            .synthetic
            .as_mut()
            .ok_or_else(|| Error::config("synthetic", "the config has no [synthetic] block"))?;
        if let Some(n) = noise {
            s.noise = n;
        }
        Ok(())
    })?;
    let cfg = &run.cfg;
    let syn = cfg.synthetic.as_ref().expect("checked when opening");
    let truth = cfg.parameters(&syn.truth)?;
    let seed = syn.seed.unwrap_or(cfg.seed);
    let scenario = cfg.load_scenario()?;
    scenario.seed_fraction(&truth.init_infected)?;
    let stepper = run.stepper(&scenario, truth.kappa, cfg.solver.tau)?;
    let (series, _) = generate_synthetic(stepper.as_ref(), &scenario, &truth, syn.noise, seed)?;
    let cases = run.exporter.path("cases_synthetic.csv");
    write_cases(
        &cases,
        &series,
        cfg.start_date()?,
        Some(&format!("config_hash={}", run.exporter.config_hash)),
    )?;
    let record = SyntheticTruth::new(&truth, syn.noise, seed, stepper.as_ref());
    let truth_path = run.exporter.write_json("truth.json", &record)?;
    run.summary(
        "synthesize",
        json!({ "noise": syn.noise, "seed": seed, "days": series[0].new_cases.len() - 1, "regions": region_names(&scenario) }),
        &[cases, truth_path],
    )
}
