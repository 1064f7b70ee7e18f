//! Output files: region tables, field snapshots, fit reports, and plot-ready series.
//!
//! Every text file starts with `# config_hash=<sha256>`; JSON files carry the same value
//! in a `config_hash` field.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use indexmap::IndexMap;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::cases::day_to_date;
use super::masks::field_to_string;
use crate::error::{Error, Result};
use crate::estimate::{FitResult, CHI_NAMES};
use crate::grid::GridSpec;
use crate::objective::{CaseSeries, JBreakdown};
use crate::scenario::Scenario;
use crate::trajectory::Trajectory;

pub type StringMap = IndexMap<String, String>;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the config text plus the command-line overrides applied to it.
pub fn config_hash(config_text: &str, overrides: &[(String, String)]) -> String {
    let mut h = Sha256::new();
    h.update(config_text.as_bytes());
    for (k, v) in overrides {
        h.update(b"\n--");
        h.update(k.as_bytes());
        h.update(b"=");
        h.update(v.as_bytes());
    }
    hex::encode(h.finalize())
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridInfo {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

impl From<&GridSpec> for GridInfo {
    fn from(g: &GridSpec) -> Self {
        GridInfo {
            nx: g.nx,
            ny: g.ny,
            lx: g.lx,
            ly: g.ly,
        }
    }
}

/// Where a result came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub config_hash: String,
    /// SHA-256 of each input file, keyed by its role.
    pub inputs: StringMap,
    pub grid: GridInfo,
    pub backend: String,
    pub tau: f64,
    pub seed: u64,
    pub version: String,
}

/// Output directory plus the hash stamped into every file.
#[derive(Debug, Clone)]
pub struct Exporter {
    pub dir: PathBuf,
    pub config_hash: String,
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

impl Exporter {
    pub fn new(dir: impl Into<PathBuf>, config_hash: impl Into<String>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Exporter {
            dir,
            config_hash: config_hash.into(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn header_line(&self) -> String {
        format!("config_hash={}", self.config_hash)
    }

    /// Writes a CSV table with the hash comment on the first line.
    pub fn write_table(&self, name: &str, columns: &[String], rows: &[Vec<String>]) -> Result<PathBuf> {
        let path = self.path(name);
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::io(&path, std::io::Error::other(e.to_string()));
        w.write_record(columns).map_err(csv_err)?;
        for r in rows {
            w.write_record(r).map_err(csv_err)?;
        }
        let body = w
            .into_inner()
            .map_err(|e| Error::io(&path, std::io::Error::other(e.to_string())))?;
        let mut text = format!("# {}\n", self.header_line()).into_bytes();
        text.extend(body);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.path(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Pretty JSON with a `config_hash` field added at the top level.
    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.path(name);
        let mut v = serde_json::to_value(value).map_err(|e| Error::io(&path, std::io::Error::other(e)))?;
        if let serde_json::Value::Object(m) = &mut v {
            m.insert("config_hash".into(), self.config_hash.clone().into());
        }
        let text = serde_json::to_string_pretty(&v).map_err(|e| Error::io(&path, std::io::Error::other(e)))?;
        self.write_text(name, &(text + "\n"))
    }

    /// One table per compartment, `<name>_regions.csv`: persons per region and day.
    pub fn write_region_tables(
        &self,
        trajectory: &Trajectory,
        scenario: &Scenario,
        start: NaiveDate,
    ) -> Result<Vec<PathBuf>> {
        let names = scenario.region_names();
        let mut columns = vec!["day".to_string(), "date".to_string()];
        columns.extend(names.iter().cloned());
        let mut out = Vec::new();
        for (k, comp) in scenario.model.compartment_names().iter().enumerate() {
            let counts = trajectory.region_counts(scenario, k)?;
            let rows: Vec<Vec<String>> = counts
                .iter()
                .enumerate()
                .map(|(d, row)| {
                    let mut r = vec![d.to_string(), day_to_date(start, d).to_string()];
                    r.extend(row.iter().map(|&v| fmt(v)));
                    r
                })
                .collect();
            out.push(self.write_table(&format!("{comp}_regions.csv"), &columns, &rows)?);
        }
        Ok(out)
    }

    /// Per-region daily series as a `day,date,<regions>` table.
    pub fn write_region_series(
        &self,
        name: &str,
        regions: &[String],
        series: &[Vec<f64>],
        start: NaiveDate,
    ) -> Result<PathBuf> {
        let mut columns = vec!["day".to_string(), "date".to_string()];
        columns.extend(regions.iter().cloned());
        let days = series.first().map_or(0, Vec::len);
        let rows: Vec<Vec<String>> = (0..days)
            .map(|d| {
                let mut r = vec![d.to_string(), day_to_date(start, d).to_string()];
                r.extend(series.iter().map(|s| fmt(s[d])));
                r
            })
            .collect();
        self.write_table(name, &columns, &rows)
    }

    /// Full fields at the requested days, `snapshot_day<d>_<name>.txt`, in the mask file format.
    pub fn write_snapshots(&self, trajectory: &Trajectory, grid: &GridSpec, days: &[usize]) -> Result<Vec<PathBuf>> {
        let mut out = Vec::new();
        for &d in days {
            if d > trajectory.days() {
                return Err(Error::Domain(format!(
                    "snapshot day {d} after the last day {}",
                    trajectory.days()
                )));
            }
            let state = trajectory.state_at_day(d);
            let comment = format!("{}\nday={d}", self.header_line());
            for (name, field) in state.names.iter().zip(&state.fields) {
                let file = format!("snapshot_day{d}_{name}.txt");
                out.push(self.write_text(&file, &field_to_string(grid, field, Some(&comment)))?);
            }
            let file = format!("snapshot_day{d}_N.txt");
            out.push(self.write_text(&file, &field_to_string(grid, &trajectory.population[d], Some(&comment)))?);
        }
        Ok(out)
    }

    /// `history.csv`: objective and parameters per iteration (or draw).
    pub fn write_history(&self, fit: &FitResult, regions: &[String]) -> Result<PathBuf> {
        let with_seeds = fit.history.iter().any(|h| !h.seeds.is_empty());
        let mut columns = vec!["iteration".to_string(), "objective".to_string()];
        columns.extend(CHI_NAMES.iter().map(|s| s.to_string()));
        if with_seeds {
            columns.extend(regions.iter().map(|r| format!("seed_{r}")));
        }
        let rows: Vec<Vec<String>> = fit
            .history
            .iter()
            .map(|h| {
                let mut r = vec![h.iteration.to_string(), fmt(h.objective)];
                r.extend(h.chi.iter().map(|&v| fmt(v)));
                if with_seeds {
                    r.extend(h.seeds.iter().map(|&v| fmt(v)));
                }
                r
            })
            .collect();
        self.write_table("history.csv", &columns, &rows)
    }

    /// `chain.csv`: every proposal with its uniform draw and decision.
    pub fn write_chain(&self, fit: &FitResult, regions: &[String]) -> Result<PathBuf> {
        let dim = fit.chain.first().map_or(0, |c| c.proposal.len());
        let mut columns = vec!["iteration".to_string()];
        columns.extend(CHI_NAMES.iter().map(|s| format!("proposal_{s}")));
        columns.extend(
            regions
                .iter()
                .take(dim.saturating_sub(CHI_NAMES.len()))
                .map(|r| format!("proposal_seed_{r}")),
        );
        columns.extend(["in_bounds", "j_old", "j_new", "uniform", "alpha", "accepted"].map(String::from));
        let rows: Vec<Vec<String>> = fit
            .chain
            .iter()
            .map(|c| {
                let mut r = vec![c.iteration.to_string()];
                r.extend(c.proposal.iter().map(|&v| fmt(v)));
                r.push(c.in_bounds.to_string());
                r.push(fmt(c.j_old));
                r.push(c.j_new.map_or_else(String::new, fmt));
                r.push(fmt(c.uniform));
                r.push(fmt(c.alpha));
                r.push(c.accepted.to_string());
                r
            })
            .collect();
        self.write_table("chain.csv", &columns, &rows)
    }

    /// Observed and modelled daily and cumulative cases per region for plotting.
    pub fn write_plot_tables(
        &self,
        observed: &[CaseSeries],
        modelled: &[Vec<f64>],
        regions: &[String],
        start: NaiveDate,
    ) -> Result<Vec<PathBuf>> {
        let mut columns = vec!["day".to_string(), "date".to_string()];
        for r in regions {
            columns.push(format!("{r}_observed"));
            columns.push(format!("{r}_model"));
        }
        let days = modelled.first().map_or(0, Vec::len);
        let cum_model: Vec<Vec<f64>> = modelled
            .iter()
            .map(|m| {
                m.iter()
                    .scan(0.0, |acc, &v| {
                        *acc += v;
                        Some(*acc)
                    })
                    .collect()
            })
            .collect();
        let table = |obs: &dyn Fn(&CaseSeries, usize) -> f64, model: &[Vec<f64>]| -> Vec<Vec<String>> {
            (0..days)
                .map(|d| {
                    let mut r = vec![d.to_string(), day_to_date(start, d).to_string()];
                    for (k, name) in regions.iter().enumerate() {
                        let o = observed.iter().find(|s| &s.region == name);
                        r.push(o.map_or_else(String::new, |s| fmt(obs(s, d))));
                        r.push(fmt(model[k][d]));
                    }
                    r
                })
                .collect()
        };
        let daily = table(&|s, d| s.new_cases[d], modelled);
        let cumulative = table(&|s, d| s.cumulative[d], &cum_model);
        Ok(vec![
            self.write_table("cases_daily.csv", &columns, &daily)?,
            self.write_table("cases_cumulative.csv", &columns, &cumulative)?,
        ])
    }
}

/// Estimated parameters in reporting form.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParameterReport {
    pub beta: [f64; 3],
    pub breakpoints: [f64; 2],
    pub kappa: f64,
    pub delta: f64,
    pub seeds: IndexMap<String, f64>,
}

impl From<&crate::models::ParameterVector> for ParameterReport {
    fn from(p: &crate::models::ParameterVector) -> Self {
        ParameterReport {
            beta: p.schedule.betas,
            breakpoints: p.schedule.breakpoints,
            kappa: p.kappa,
            delta: p.delta,
            seeds: p.init_infected.clone(),
        }
    }
}

/// Contents of `fit_report.json`.
#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub estimator: crate::estimate::Estimator,
    pub termination: crate::estimate::Termination,
    pub initial: ParameterReport,
    pub estimate: ParameterReport,
    pub objective: JBreakdown,
    pub iterations: usize,
    pub evaluations: usize,
    pub acceptance_rate: Option<f64>,
    pub sigma: Option<f64>,
    /// Chain standard deviation by parameter name.
    pub posterior_std: Option<IndexMap<String, f64>>,
    pub gradient_norms: Vec<f64>,
    pub warnings: Vec<String>,
    pub config: serde_json::Value,
    pub provenance: Provenance,
}

impl FitReport {
    pub fn new(
        fit: &FitResult,
        initial: &crate::models::ParameterVector,
        regions: &[String],
        config: serde_json::Value,
        provenance: Provenance,
    ) -> Self {
        let posterior_std = fit.posterior_std.as_ref().map(|s| {
            CHI_NAMES
                .iter()
                .map(|n| n.to_string())
                .chain(regions.iter().map(|r| format!("seed_{r}")))
                .zip(s.iter().copied())
                .collect()
        });
        FitReport {
            estimator: fit.estimator,
            termination: fit.termination,
            initial: initial.into(),
            estimate: (&fit.params).into(),
            objective: fit.objective,
            iterations: fit.history.len().saturating_sub(1),
            evaluations: fit.evaluations,
            acceptance_rate: fit.acceptance_rate,
            sigma: fit.sigma,
            posterior_std,
            gradient_norms: fit.gradient_norms.clone(),
            warnings: fit.warnings.clone(),
            config,
            provenance,
        }
    }
}
