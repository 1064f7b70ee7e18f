//! Run configuration (TOML) and assembly of the scenario and estimation problem from it.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::cases::{parse_date, read_cases};
use super::masks::{read_field, read_mask};
use crate::error::{Error, Result};
use crate::estimate::{AdjointConfig, Bounds, InitMode, MetropolisConfig, Problem};
use crate::grid::{GridSpec, RegionMask, DEFAULT_MAX_CELLS};
use crate::models::{ModelKind, ParameterVector, RateSchedule, DEFAULT_GAMMA, DEFAULT_THETA};
use crate::objective::{interpolate_data, CaseSeries, DataField, MisfitMode, Objective, ObjectiveWeights};
use crate::scenario::Scenario;
use crate::trajectory::{steps_per_day, whole_days, Backend};

pub const DEFAULT_START: &str = "2020-10-01";
/// Day indices of November 2 and December 17, 2020 from October 1.
pub const DEFAULT_BREAKPOINTS: [f64; 2] = [32.0, 77.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DayOrDate {
    Day(f64),
    Date(String),
}

impl DayOrDate {
    fn resolve(&self, start: NaiveDate, key: &str) -> Result<f64> {
        match self {
            DayOrDate::Day(d) => Ok(*d),
            DayOrDate::Date(s) => parse_date(s)
                .map(|d| (d - start).num_days() as f64)
                .ok_or_else(|| Error::config(key, format!("`{s}` is not a YYYY-MM-DD date"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub district: PathBuf,
    /// Region name to mask file, in reporting order.
    pub regions: IndexMap<String, PathBuf>,
    /// Persons per region, spread uniformly over its mask.
    #[serde(default)]
    pub populations: IndexMap<String, f64>,
    /// Population density file, used instead of `populations`.
    pub population_file: Option<PathBuf>,
    pub max_cells: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub cases: Option<PathBuf>,
    pub start_date: String,
    /// Last day index of the window.
    pub t_end: Option<f64>,
    /// Last date of the window, used when `t_end` is absent.
    pub end_date: Option<String>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            cases: None,
            start_date: DEFAULT_START.into(),
            t_end: None,
            end_date: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub breakpoints: [DayOrDate; 2],
    pub gamma: f64,
    pub theta: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            breakpoints: DEFAULT_BREAKPOINTS.map(DayOrDate::Day),
            gamma: DEFAULT_GAMMA,
            theta: DEFAULT_THETA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterConfig {
    pub beta: [f64; 3],
    pub kappa: f64,
    pub delta: f64,
    #[serde(default)]
    pub seeds: IndexMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightsConfig {
    pub w0: f64,
    pub w1: f64,
    pub w2: f64,
    pub misfit: MisfitMode,
    /// Regularization anchor for `(β₀, β₁, β₂, κ, δ)`; defaults to the initial guess.
    pub chi_ref: Option<[f64; 5]>,
}

impl Default for WeightsConfig {
    fn default() -> Self {
        WeightsConfig {
            w0: 1.0,
            w1: 0.0,
            w2: 0.0,
            misfit: MisfitMode::RegionMean,
            chi_ref: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub backend: Backend,
    pub tau: f64,
    pub taylor_correction: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            backend: Backend::Cn,
            tau: crate::solver_cn::DEFAULT_TAU,
            taylor_correction: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Metropolis,
    #[default]
    Adjoint,
    SimulateOnly,
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "metropolis" => Ok(EstimatorKind::Metropolis),
            "adjoint" => Ok(EstimatorKind::Adjoint),
            "simulate-only" => Ok(EstimatorKind::SimulateOnly),
            other => Err(Error::config(
                "estimator.kind",
                format!("unknown estimator `{other}` (metropolis | adjoint | simulate-only)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    pub kind: EstimatorKind,
    pub init_mode: InitMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Days at which full fields are written.
    pub snapshot_days: Vec<usize>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            snapshot_days: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub truth: ParameterConfig,
    /// Relative standard deviation of the multiplicative noise.
    #[serde(default)]
    pub noise: f64,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceConfig {
    /// Coarsest step first, each halving the previous.
    pub taus: Vec<f64>,
    pub reference_divisor: usize,
    pub days: f64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        ConvergenceConfig {
            taus: vec![0.5, 0.25, 0.125],
            reference_divisor: 64,
            days: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_model")]
    pub model: ModelKind,
    #[serde(default)]
    pub seed: u64,
    pub grid: GridConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    pub initial: ParameterConfig,
    #[serde(default)]
    pub weights: WeightsConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub metropolis: MetropolisConfig,
    #[serde(default)]
    pub adjoint: AdjointConfig,
    #[serde(default)]
    pub bounds: Bounds,
    #[serde(default)]
    pub output: OutputConfig,
    pub synthetic: Option<SyntheticConfig>,
    #[serde(default)]
    pub convergence: ConvergenceConfig,
    /// Directory that relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_model() -> ModelKind {
    ModelKind::Seir
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.span().map_or(0, |s| line_of(text, s.start)),
            message: e.message().to_string(),
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// Reads and validates a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = Self::from_toml(&text, path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output.dir)
    }

    pub fn start_date(&self) -> Result<NaiveDate> {
        parse_date(&self.data.start_date).ok_or_else(|| {
            Error::config(
                "data.start_date",
                format!("`{}` is not a YYYY-MM-DD date", self.data.start_date),
            )
        })
    }

    /// Last day index of the study window.
    pub fn t_end(&self) -> Result<f64> {
        let t = match (&self.data.t_end, &self.data.end_date) {
            (Some(t), _) => *t,
            (None, Some(end)) => {
                let end = parse_date(end)
                    .ok_or_else(|| Error::config("data.end_date", format!("`{end}` is not a YYYY-MM-DD date")))?;
                (end - self.start_date()?).num_days() as f64
            }
            (None, None) => return Err(Error::config("data.t_end", "set either data.t_end or data.end_date")),
        };
        whole_days(t).map_err(|e| Error::config("data.t_end", e.to_string()))?;
        Ok(t)
    }

    pub fn breakpoints(&self) -> Result<[f64; 2]> {
        let start = self.start_date()?;
        Ok([
            self.schedule.breakpoints[0].resolve(start, "schedule.breakpoints")?,
            self.schedule.breakpoints[1].resolve(start, "schedule.breakpoints")?,
        ])
    }

    pub fn parameters(&self, p: &ParameterConfig) -> Result<ParameterVector> {
        let t_end = self.t_end()?;
        let [t0, t1] = self.breakpoints()?;
        if !(0.0 < t0 && t0 < t1 && t1 < t_end) {
            return Err(Error::config(
                "schedule.breakpoints",
                format!("need 0 < t0 < t1 < t_end, got t0 = {t0}, t1 = {t1}, t_end = {t_end}"),
            ));
        }
        let schedule = RateSchedule {
            betas: p.beta,
            breakpoints: [t0, t1],
            gamma: self.schedule.gamma,
            theta: self.schedule.theta,
            t_end,
        };
        schedule.validate()?;
        let params = ParameterVector {
            schedule,
            kappa: p.kappa,
            delta: p.delta,
            init_infected: p.seeds.clone(),
        };
        params.validate()?;
        Ok(params)
    }

    pub fn initial_parameters(&self) -> Result<ParameterVector> {
        self.parameters(&self.initial).map_err(|e| match e {
            Error::Parameter(m) => Error::config("initial", m),
            other => other,
        })
    }

    /// Checks everything that can be checked without reading the grid files.
    pub fn validate(&self) -> Result<()> {
        self.start_date()?;
        let t_end = self.t_end()?;
        steps_per_day(self.solver.tau).map_err(|e| Error::config("solver.tau", e.to_string()))?;
        if self.solver.tau > crate::solver_cn::MAX_TAU {
            return Err(Error::config("solver.tau", "must be <= 1 day"));
        }
        self.initial_parameters()?;
        if let Some(s) = &self.synthetic {
            self.parameters(&s.truth)
                .map_err(|e| Error::config("synthetic.truth", e.to_string()))?;
            if !(s.noise >= 0.0) {
                return Err(Error::config("synthetic.noise", "must be >= 0"));
            }
        }
        ObjectiveWeights::new(self.weights.w0, self.weights.w1, self.weights.w2, [0.0; 5])?;
        self.bounds.validate()?;
        if !self.bounds.contains(&self.initial_parameters()?.chi()) {
            return Err(Error::config(
                "initial",
                "initial guess lies outside the parameter bounds",
            ));
        }
        match self.estimator.kind {
            EstimatorKind::Metropolis => self.metropolis.validate()?,
            EstimatorKind::Adjoint => {
                self.adjoint.validate()?;
                if self.estimator.init_mode != InitMode::Fixed && self.weights.w2 <= 0.0 {
                    return Err(Error::config(
                        "weights.w2",
                        "must be > 0 when the initial condition is optimized",
                    ));
                }
            }
            EstimatorKind::SimulateOnly => {}
        }
        if let Some(d) = self.output.snapshot_days.iter().find(|&&d| d as f64 > t_end) {
            return Err(Error::config(
                "output.snapshot_days",
                format!("day {d} is after t_end = {t_end}"),
            ));
        }
        for (key, p) in std::iter::once(("grid.district".to_string(), &self.grid.district))
            .chain(self.grid.regions.iter().map(|(k, p)| (format!("grid.regions.{k}"), p)))
        {
            if !self.resolve(p).is_file() {
                return Err(Error::config(
                    key,
                    format!("file {} not found", self.resolve(p).display()),
                ));
            }
        }
        if self.grid.regions.is_empty() {
            return Err(Error::config("grid.regions", "at least one region is required"));
        }
        if self.convergence.taus.is_empty() || self.convergence.reference_divisor < 2 {
            return Err(Error::config(
                "convergence",
                "need at least one step and a reference divisor >= 2",
            ));
        }
        Ok(())
    }

    /// Grid, masks, and population.
    pub fn load_scenario(&self) -> Result<Scenario> {
        let max_cells = self.grid.max_cells.unwrap_or(DEFAULT_MAX_CELLS);
        let (grid, district) = read_mask(&self.resolve(&self.grid.district), "district")?;
        let grid = GridSpec::with_max_cells(grid.nx, grid.ny, grid.lx, grid.ly, max_cells)?;
        let mut regions = Vec::with_capacity(self.grid.regions.len());
        for (name, p) in &self.grid.regions {
            let (g, m) = read_mask(&self.resolve(p), name)?;
            if g != grid {
                return Err(Error::config(
                    format!("grid.regions.{name}"),
                    "mask header differs from the district mask",
                ));
            }
            regions.push(m);
        }
        let population = match &self.grid.population_file {
            Some(p) => {
                let (g, n) = read_field(&self.resolve(p))?;
                if g != grid {
                    return Err(Error::config(
                        "grid.population_file",
                        "header differs from the district mask",
                    ));
                }
                n
            }
            None => {
                let mut unmatched: Vec<String> = self
                    .grid
                    .regions
                    .keys()
                    .filter(|k| !self.grid.populations.contains_key(*k))
                    .chain(
                        self.grid
                            .populations
                            .keys()
                            .filter(|k| !self.grid.regions.contains_key(*k)),
                    )
                    .cloned()
                    .collect();
                if !unmatched.is_empty() {
                    unmatched.sort();
                    return Err(Error::UnmatchedRegions(unmatched));
                }
                let totals: Vec<f64> = self.grid.regions.keys().map(|k| self.grid.populations[k]).collect();
                Scenario::uniform_population(&grid, &regions, &totals)?
            }
        };
        let scenario = Scenario::new(grid, regions, district, population, self.model)?;
        scenario.seed_fraction(&self.initial.seeds)?;
        Ok(scenario)
    }

    pub fn load_cases(&self) -> Result<Vec<CaseSeries>> {
        let path = self
            .data
            .cases
            .as_ref()
            .ok_or_else(|| Error::config("data.cases", "no case data file configured"))?;
        let path = self.resolve(path);
        if !path.is_file() {
            return Err(Error::config(
                "data.cases",
                format!("file {} not found", path.display()),
            ));
        }
        read_cases(&path, self.start_date()?, self.t_end()? as usize)
    }

    /// Scenario, data, and starting point bundled for an estimator.
    pub fn load_problem(&self) -> Result<Problem> {
        let scenario = self.load_scenario()?;
        let series = self.load_cases()?;
        self.problem_from(scenario, &series)
    }

    pub fn problem_from(&self, scenario: Scenario, series: &[CaseSeries]) -> Result<Problem> {
        let data: DataField = interpolate_data(series, &scenario)?;
        if data.last_day() as f64 != self.t_end()? {
            return Err(Error::Alignment(format!(
                "case data end at day {}, window ends at day {}",
                data.last_day(),
                self.t_end()?
            )));
        }
        let initial = self.initial_parameters()?;
        let chi_ref = self.weights.chi_ref.unwrap_or(initial.chi());
        let weights = ObjectiveWeights::new(self.weights.w0, self.weights.w1, self.weights.w2, chi_ref)?;
        let objective = Objective::new(weights, self.weights.misfit, data);
        let mut problem = Problem::new(scenario, objective, initial, self.solver.tau);
        problem.backend = self.solver.backend;
        problem.bounds = self.bounds.clone();
        problem.init_mode = self.estimator.init_mode;
        problem.taylor_correction = self.solver.taylor_correction;
        problem.validate()?;
        Ok(problem)
    }
}

/// Masks and populations for a scenario built in code rather than from files.
pub fn scenario_from_masks(
    grid: GridSpec,
    regions: Vec<RegionMask>,
    populations: &[f64],
    model: ModelKind,
) -> Result<Scenario> {
    let district = RegionMask::union("district", &regions)?;
    let n = Scenario::uniform_population(&grid, &regions, populations)?;
    Scenario::new(grid, regions, district, n, model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::masks::write_mask;

    fn write_fixture(dir: &Path) -> PathBuf {
        let g = GridSpec::new(6, 5, 5.0, 4.0).unwrap();
        let a = RegionMask::rectangle("A", &g, (0, 3), (0, 5));
        let b = RegionMask::rectangle("B", &g, (3, 6), (0, 5));
        write_mask(
            &dir.join("district.txt"),
            &g,
            &RegionMask::union("d", &[a.clone(), b.clone()]).unwrap(),
        )
        .unwrap();
        write_mask(&dir.join("A.txt"), &g, &a).unwrap();
        write_mask(&dir.join("B.txt"), &g, &b).unwrap();
        let cfg = r#"
model = "seir"
[grid]
district = "district.txt"
regions = { A = "A.txt", B = "B.txt" }
populations = { A = 1000, B = 500 }
[data]
t_end = 20
[schedule]
breakpoints = [5, "2020-10-12"]
[initial]
beta = [0.3, 0.2, 0.1]
kappa = 0.1
delta = 0.5
seeds = { A = 2 }
[weights]
w2 = 1e-5
"#;
        let p = dir.join("run.toml");
        fs::write(&p, cfg).unwrap();
        p
    }

    #[test]
    fn loads_and_resolves() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::load(&write_fixture(dir.path())).unwrap();
        assert_eq!(cfg.breakpoints().unwrap(), [5.0, 11.0]);
        let s = cfg.load_scenario().unwrap();
        assert!((s.district_population() - 1500.0).abs() < 1e-9);
        assert_eq!(s.region_names(), vec!["A", "B"]);
    }

    #[test]
    fn validation_errors_name_the_key() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_fixture(dir.path());
        let text = fs::read_to_string(&p).unwrap();
        let check = |t: &str, key: &str| {
            let cfg = RunConfig::from_toml(t, &p).unwrap();
            match cfg.validate().unwrap_err() {
                Error::Config { key: k, .. } => assert_eq!(k, key),
                e => panic!("{e}"),
            }
        };
        check(&text.replace("[5, \"2020-10-12\"]", "[12, 11]"), "schedule.breakpoints");
        check(&text.replace("w2 = 1e-5", "w2 = 0"), "weights.w2");
        check(&text.replace("kappa = 0.1", "kappa = 1.5"), "initial");
        check(&text.replace("\"A.txt\", B", "\"missing.txt\", B"), "grid.regions.A");
        check(&format!("{text}\n[solver]\ntau = 0.3\n"), "solver.tau");
        check(
            &format!("{text}\n[metropolis]\ndraws = 0\n")
                .replace("[weights]", "[estimator]\nkind = \"metropolis\"\n[weights]"),
            "metropolis.draws",
        );
        assert!(matches!(
            RunConfig::from_toml("model = 3", &p),
            Err(Error::Parse { .. })
        ));
        let cfg = RunConfig::from_toml(&text.replace("[data]", "[data]\ncases = \"nope.csv\""), &p).unwrap();
        cfg.validate().unwrap();
        assert!(matches!(cfg.load_cases(), Err(Error::Config { key, .. }) if key == "data.cases"));
    }

    #[test]
    fn unmatched_names_are_listed() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_fixture(dir.path());
        let text = fs::read_to_string(&p)
            .unwrap()
            .replace("A = 1000, B = 500", "A = 1000, C = 5");
        let cfg = RunConfig::from_toml(&text, &p).unwrap();
        match cfg.load_scenario().unwrap_err() {
            Error::UnmatchedRegions(v) => assert_eq!(v, vec!["B".to_string(), "C".to_string()]),
            e => panic!("{e}"),
        }
        let text = fs::read_to_string(&p)
            .unwrap()
            .replace("seeds = { A = 2 }", "seeds = { Q = 2 }");
        let cfg = RunConfig::from_toml(&text, &p).unwrap();
        assert!(matches!(cfg.load_scenario(), Err(Error::UnmatchedRegions(_))));
    }
}
