//! Geometry, population, and the mapping from seed counts to initial states.

use indexmap::IndexMap;
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::grid::{distribute_uniform, region_total, FieldSet, GridSpec, RegionMask};
use crate::models::ModelKind;

/// Everything about a run that does not change while parameters are estimated.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub grid: GridSpec,
    /// Disjoint reporting regions, each a subset of `district`.
    pub regions: Vec<RegionMask>,
    pub district: RegionMask,
    /// Population density `N(x, y, 0)` in persons per km².
    pub population: Array2<f64>,
    pub model: ModelKind,
}

impl Scenario {
    pub fn new(
        grid: GridSpec,
        regions: Vec<RegionMask>,
        district: RegionMask,
        population: Array2<f64>,
        model: ModelKind,
    ) -> Result<Self> {
        grid.check_shape(&population)?;
        district.check_grid(&grid)?;
        if regions.is_empty() {
            return Err(Error::config("regions", "at least one region is required"));
        }
        for (k, r) in regions.iter().enumerate() {
            r.check_grid(&grid)?;
            if r.cell_count == 0 {
                return Err(Error::DegenerateRegion(r.name.clone()));
            }
            if !r.is_subset_of(&district) {
                return Err(Error::config(
                    format!("regions.{}", r.name),
                    "region mask is not contained in the district mask",
                ));
            }
            if let Some(other) = regions[..k].iter().find(|o| o.overlaps(r)) {
                return Err(Error::config(
                    format!("regions.{}", r.name),
                    format!("region overlaps `{}`", other.name),
                ));
            }
            if regions[..k].iter().any(|o| o.name == r.name) {
                return Err(Error::config("regions", format!("duplicate region `{}`", r.name)));
            }
        }
        for ((j, i), &n) in population.indexed_iter() {
            if !n.is_finite() || n < 0.0 {
                return Err(Error::Normalization(format!("N = {n} at node ({i}, {j})")));
            }
            if district.cells[[j, i]] && n <= 0.0 {
                return Err(Error::Normalization(format!(
                    "N must be > 0 inside the district, got {n} at node ({i}, {j})"
                )));
            }
        }
        Ok(Scenario {
            grid,
            regions,
            district,
            population,
            model,
        })
    }

    /// Population spread uniformly over each region (zero elsewhere).
    pub fn uniform_population(grid: &GridSpec, regions: &[RegionMask], totals: &[f64]) -> Result<Array2<f64>> {
        if regions.len() != totals.len() {
            return Err(Error::Dimension(format!(
                "{} regions, {} population totals",
                regions.len(),
                totals.len()
            )));
        }
        let mut n = grid.zeros();
        for (r, &t) in regions.iter().zip(totals) {
            n += &distribute_uniform(t, r, grid)?;
        }
        Ok(n)
    }

    pub fn region_names(&self) -> Vec<String> {
        self.regions.iter().map(|r| r.name.clone()).collect()
    }

    pub fn region_index(&self, name: &str) -> Option<usize> {
        self.regions.iter().position(|r| r.name == name)
    }

    /// Persons per region at `t = 0`.
    pub fn region_populations(&self) -> Vec<f64> {
        self.regions
            .iter()
            .map(|r| region_total(&self.population, r, &self.grid).expect("validated shapes"))
            .collect()
    }

    pub fn district_population(&self) -> f64 {
        region_total(&self.population, &self.district, &self.grid).expect("validated shapes")
    }

    /// Infected fraction per seeded person in region `r`: `distribute_uniform(1)/N`.
    pub fn seed_profile(&self, r: usize) -> Array2<f64> {
        let region = &self.regions[r];
        let density = distribute_uniform(1.0, region, &self.grid).expect("validated region");
        let mut rho = self.grid.zeros();
        ndarray::Zip::from(&mut rho)
            .and(&density)
            .and(&self.population)
            .and(&region.cells)
            .for_each(|o, &d, &n, &m| {
                if m {
                    *o = d / n;
                }
            });
        rho
    }

    /// Infected-fraction field for per-region seed counts.
    pub fn seed_fraction(&self, init_infected: &IndexMap<String, f64>) -> Result<Array2<f64>> {
        let mut unknown: Vec<String> = init_infected
            .keys()
            .filter(|k| self.region_index(k).is_none())
            .cloned()
            .collect();
        if !unknown.is_empty() {
            unknown.sort();
            return Err(Error::UnmatchedRegions(unknown));
        }
        let mut v = self.grid.zeros();
        for (r, region) in self.regions.iter().enumerate() {
            let seed = init_infected.get(&region.name).copied().unwrap_or(0.0);
            if !(seed >= 0.0) {
                return Err(Error::Domain(format!("seed for `{}` must be >= 0", region.name)));
            }
            if seed > 0.0 {
                v.scaled_add(seed, &self.seed_profile(r));
            }
        }
        Ok(v)
    }

    /// Initial normalized state from an infected-fraction field.
    pub fn state_from_fraction(&self, v: &Array2<f64>) -> Result<FieldSet> {
        self.grid.check_shape(v)?;
        let base = self.model.disease_free();
        let dir = self.model.seed_direction();
        let names: Vec<String> = self.model.compartment_names().iter().map(|s| s.to_string()).collect();
        let fields: Vec<Array2<f64>> = (0..self.model.dim())
            .map(|k| v.mapv(|x| base[k] + dir[k] * x))
            .collect();
        let state = FieldSet::new(names, fields, 0.0)?;
        state
            .check_normalized(None)
            .map_err(|e| Error::Domain(format!("initial seed exceeds the local population: {e}")))?;
        Ok(state)
    }

    pub fn initial_state(&self, init_infected: &IndexMap<String, f64>) -> Result<FieldSet> {
        self.state_from_fraction(&self.seed_fraction(init_infected)?)
    }

    /// Largest seed (persons) region `r` can take before a fraction leaves `[0, 1]`.
    pub fn max_seed(&self, r: usize) -> f64 {
        let dir = self.model.seed_direction();
        let max_rho = self.seed_profile(r).iter().copied().fold(0.0, f64::max);
        // per component, base + dir·v stays inside [0, 1]
        let limit = dir[..self.model.dim()]
            .iter()
            .map(|&d| if d != 0.0 { 1.0 / d.abs() } else { f64::INFINITY })
            .fold(f64::INFINITY, f64::min);
        limit / max_rho
    }
}
