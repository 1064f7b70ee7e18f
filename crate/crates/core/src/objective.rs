//! Least-squares objective against daily regional case counts.
//!
//! `J = w0/2 ‖δβ u_S u_I − d‖² + w1/2 |χ − χ̃|² + w2/2 Σ_j ‖u_{j,0} − u_{j,0}^ref‖²`
//! with trapezoid weights over the daily marks in time and `hx·hy` per node in space.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{FieldSet, GridSpec};
use crate::models::{ModelKind, ParameterVector, RateSchedule, CHI_LEN};
use crate::scenario::Scenario;
use crate::trajectory::{integrate, ForwardStepper, Trajectory};

/// Daily new cases for one region, day 0 being the window start.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseSeries {
    pub region: String,
    pub new_cases: Vec<f64>,
    pub cumulative: Vec<f64>,
    /// Days that were missing in the input and filled with zero.
    pub filled: Vec<bool>,
}

impl CaseSeries {
    pub fn new(region: impl Into<String>, new_cases: Vec<f64>) -> Result<Self> {
        let n = new_cases.len();
        Self::with_gaps(region, new_cases.into_iter().map(Some).collect::<Vec<_>>()).map(|mut s| {
            s.filled = vec![false; n];
            s
        })
    }

    /// Missing days (`None`) become zero and are flagged.
    pub fn with_gaps(region: impl Into<String>, days: Vec<Option<f64>>) -> Result<Self> {
        let region = region.into();
        if days.is_empty() {
            return Err(Error::Domain(format!("case series for `{region}` is empty")));
        }
        let mut new_cases = Vec::with_capacity(days.len());
        let mut filled = Vec::with_capacity(days.len());
        for (d, v) in days.into_iter().enumerate() {
            match v {
                Some(x) if x.is_finite() && x >= 0.0 => {
                    new_cases.push(x);
                    filled.push(false);
                }
                Some(x) => return Err(Error::Domain(format!("`{region}` day {d}: new cases {x} must be >= 0"))),
                None => {
                    new_cases.push(0.0);
                    filled.push(true);
                }
            }
        }
        let cumulative = new_cases
            .iter()
            .scan(0.0, |acc, &x| {
                *acc += x;
                Some(*acc)
            })
            .collect();
        Ok(CaseSeries {
            region,
            new_cases,
            cumulative,
            filled,
        })
    }

    /// Index of the last day.
    pub fn last_day(&self) -> usize {
        self.new_cases.len() - 1
    }
}

/// How model incidence is compared with the regional data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MisfitMode {
    /// Residual of the region mean, spread back over the region's cells.
    #[default]
    RegionMean,
    /// Residual cell by cell against the uniformly spread data.
    Pointwise,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveWeights {
    pub w0: f64,
    pub w1: f64,
    pub w2: f64,
    /// Anchor for `χ = (β₀, β₁, β₂, κ, δ)`.
    pub chi_ref: [f64; CHI_LEN],
    /// Anchor for the initial infected compartments; zero when absent.
    pub u0_ref: Option<FieldSet>,
}

impl ObjectiveWeights {
    pub fn new(w0: f64, w1: f64, w2: f64, chi_ref: [f64; CHI_LEN]) -> Result<Self> {
        for (k, w) in [("w0", w0), ("w1", w1), ("w2", w2)] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::config(format!("weights.{k}"), format!("must be >= 0, got {w}")));
            }
        }
        if w0 <= 0.0 {
            return Err(Error::config("weights.w0", "must be > 0"));
        }
        Ok(ObjectiveWeights {
            w0,
            w1,
            w2,
            chi_ref,
            u0_ref: None,
        })
    }

    pub fn data_only(chi_ref: [f64; CHI_LEN]) -> Self {
        ObjectiveWeights::new(1.0, 0.0, 0.0, chi_ref).expect("valid weights")
    }
}

/// Reported incidence as a per-cell fraction per day, constant within each region.
#[derive(Debug, Clone)]
pub struct DataField {
    pub grid: GridSpec,
    pub region_names: Vec<String>,
    /// Flat node indices of each region.
    pub region_cells: Vec<Vec<usize>>,
    /// `fractions[r][d]` = new cases of region `r` on day `d` over its population.
    pub fractions: Vec<Vec<f64>>,
}

/// Aligns case series with the scenario regions and converts counts to population fractions.
pub fn interpolate_data(series: &[CaseSeries], scenario: &Scenario) -> Result<DataField> {
    let names = scenario.region_names();
    let mut unmatched: Vec<String> = names
        .iter()
        .filter(|n| !series.iter().any(|s| &s.region == *n))
        .chain(series.iter().map(|s| &s.region).filter(|r| !names.contains(r)))
        .cloned()
        .collect();
    if !unmatched.is_empty() {
        unmatched.sort();
        unmatched.dedup();
        return Err(Error::UnmatchedRegions(unmatched));
    }
    let pops = scenario.region_populations();
    let mut fractions = Vec::with_capacity(names.len());
    let mut len = None;
    for (r, name) in names.iter().enumerate() {
        let s = series.iter().find(|s| &s.region == name).expect("matched above");
        if *len.get_or_insert(s.new_cases.len()) != s.new_cases.len() {
            return Err(Error::Alignment(format!(
                "case series for `{name}` has {} days, expected {}",
                s.new_cases.len(),
                len.unwrap()
            )));
        }
        fractions.push(s.new_cases.iter().map(|c| c / pops[r]).collect());
    }
    Ok(DataField {
        grid: scenario.grid,
        region_names: names,
        region_cells: scenario.regions.iter().map(|m| m.indices()).collect(),
        fractions,
    })
}

impl DataField {
    pub fn last_day(&self) -> usize {
        self.fractions[0].len() - 1
    }

    /// Data field at day `d`.
    pub fn at_day(&self, d: usize) -> Array2<f64> {
        let mut out = self.grid.zeros();
        let flat = out.as_slice_mut().expect("standard layout");
        for (cells, f) in self.region_cells.iter().zip(&self.fractions) {
            for &p in cells {
                flat[p] = f[d];
            }
        }
        out
    }

    /// Data field at time `t`, linear between day marks.
    pub fn at(&self, t: f64) -> Result<Array2<f64>> {
        let last = self.last_day() as f64;
        if !(0.0..=last).contains(&t) {
            return Err(Error::Domain(format!("t = {t} outside the data window [0, {last}]")));
        }
        let d0 = (t.floor() as usize).min(self.last_day());
        let w = t - d0 as f64;
        if w == 0.0 {
            return Ok(self.at_day(d0));
        }
        Ok(self.at_day(d0) * (1.0 - w) + self.at_day(d0 + 1) * w)
    }

    /// District-wide daily new cases divided by district population.
    pub fn district_daily_fraction(&self, scenario: &Scenario) -> Vec<f64> {
        let pops = scenario.region_populations();
        let total: f64 = pops.iter().sum();
        (0..=self.last_day())
            .map(|d| (0..pops.len()).map(|r| self.fractions[r][d] * pops[r]).sum::<f64>() / total)
            .collect()
    }
}

/// Trapezoid weight of day `d` on `[0, last]`.
pub fn time_weight(d: usize, last: usize) -> f64 {
    if d == 0 || d == last {
        0.5
    } else {
        1.0
    }
}

/// Detected incidence `δ β(t) u_S u_I` per node.
pub fn incidence_field(
    u: &FieldSet,
    model: ModelKind,
    schedule: &RateSchedule,
    delta: f64,
    t: f64,
) -> Result<Array2<f64>> {
    if u.len() != model.dim() {
        return Err(Error::Dimension(format!(
            "{model:?} needs {} fields, got {}",
            model.dim(),
            u.len()
        )));
    }
    let beta = schedule.beta_at(t)?;
    let shape = u.shape().expect("non-empty field set");
    let mut out = Array2::zeros(shape);
    let m = model.dim();
    let mut cell = [0.0; 3];
    for ((j, i), o) in out.indexed_iter_mut() {
        for k in 0..m {
            cell[k] = u.fields[k][[j, i]];
        }
        *o = delta * model.incidence(&cell[..m], beta);
    }
    Ok(out)
}

/// Value of `J` split into its three terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JBreakdown {
    pub data: f64,
    pub chi_reg: f64,
    pub init_reg: f64,
    pub total: f64,
}

/// Objective bound to one data set.
#[derive(Debug, Clone)]
pub struct Objective {
    pub weights: ObjectiveWeights,
    pub misfit: MisfitMode,
    pub data: DataField,
}

impl Objective {
    pub fn new(weights: ObjectiveWeights, misfit: MisfitMode, data: DataField) -> Self {
        Objective { weights, misfit, data }
    }

    pub fn last_day(&self) -> usize {
        self.data.last_day()
    }

    /// Residual field `R` at day `d` for the given detected incidence (flat, row-major).
    pub fn residual(&self, d: usize, incidence: &Array2<f64>) -> Vec<f64> {
        let inc = incidence.as_slice().expect("standard layout");
        let mut r = vec![0.0; inc.len()];
        for (cells, f) in self.data.region_cells.iter().zip(&self.data.fractions) {
            match self.misfit {
                MisfitMode::RegionMean => {
                    let mean = cells.iter().map(|&p| inc[p]).sum::<f64>() / cells.len() as f64;
                    for &p in cells {
                        r[p] = mean - f[d];
                    }
                }
                MisfitMode::Pointwise => {
                    for &p in cells {
                        r[p] = inc[p] - f[d];
                    }
                }
            }
        }
        r
    }

    /// Contribution of day `d` to the data term.
    pub fn day_misfit(&self, d: usize, incidence: &Array2<f64>) -> f64 {
        let h2 = self.data.grid.cell_area();
        let sq: f64 = self.residual(d, incidence).iter().map(|r| r * r).sum();
        0.5 * self.weights.w0 * time_weight(d, self.last_day()) * h2 * sq
    }

    pub fn chi_term(&self, params: &ParameterVector) -> f64 {
        let chi = params.chi();
        let sq: f64 = chi
            .iter()
            .zip(&self.weights.chi_ref)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        0.5 * self.weights.w1 * sq
    }

    pub fn init_term(&self, model: ModelKind, u0: &FieldSet) -> f64 {
        if self.weights.w2 == 0.0 {
            return 0.0;
        }
        let h2 = self.data.grid.cell_area();
        let mut sq = 0.0;
        for &k in model.infected_components() {
            let u = &u0.fields[k];
            match &self.weights.u0_ref {
                Some(r) => {
                    sq += u
                        .iter()
                        .zip(r.fields[k].iter())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                }
                None => sq += u.iter().map(|a| a * a).sum::<f64>(),
            }
        }
        0.5 * self.weights.w2 * h2 * sq
    }

    fn check_window(&self, days: usize) -> Result<()> {
        if days != self.last_day() {
            return Err(Error::Alignment(format!(
                "trajectory covers {days} days, data cover {}",
                self.last_day()
            )));
        }
        Ok(())
    }

    fn finish(&self, data: f64, params: &ParameterVector, model: ModelKind, u0: &FieldSet) -> JBreakdown {
        let chi_reg = self.chi_term(params);
        let init_reg = self.init_term(model, u0);
        JBreakdown {
            data,
            chi_reg,
            init_reg,
            total: data + chi_reg + init_reg,
        }
    }

    /// `J` on a stored trajectory.
    pub fn evaluate(&self, trajectory: &Trajectory, params: &ParameterVector) -> Result<JBreakdown> {
        self.check_window(trajectory.days())?;
        let mut data = 0.0;
        for d in 0..=trajectory.days() {
            let inc = incidence_field(
                trajectory.state_at_day(d),
                trajectory.model,
                &params.schedule,
                params.delta,
                d as f64,
            )?;
            data += self.day_misfit(d, &inc);
        }
        Ok(self.finish(data, params, trajectory.model, trajectory.initial()))
    }

    /// `J` computed while integrating, without storing the trajectory.
    pub fn evaluate_streaming<S: ForwardStepper + ?Sized>(
        &self,
        stepper: &S,
        scenario: &Scenario,
        params: &ParameterVector,
        u0: FieldSet,
    ) -> Result<JBreakdown> {
        let t_end = self.last_day() as f64;
        let spd = crate::trajectory::steps_per_day(stepper.tau())?;
        let init = self.init_term(scenario.model, &u0);
        let mut data = 0.0;
        integrate(stepper, scenario.model, &params.schedule, u0, t_end, |n, _, u| {
            if n % spd == 0 {
                let d = n / spd;
                let inc = incidence_field(u, scenario.model, &params.schedule, params.delta, d as f64)?;
                data += self.day_misfit(d, &inc);
            }
            Ok(())
        })?;
        let chi_reg = self.chi_term(params);
        Ok(JBreakdown {
            data,
            chi_reg,
            init_reg: init,
            total: data + chi_reg + init,
        })
    }
}

/// `J` from its parts; convenience over [`Objective::evaluate`].
pub fn evaluate_j(
    trajectory: &Trajectory,
    params: &ParameterVector,
    weights: &ObjectiveWeights,
    misfit: MisfitMode,
    data: &DataField,
) -> Result<f64> {
    let obj = Objective::new(weights.clone(), misfit, data.clone());
    Ok(obj.evaluate(trajectory, params)?.total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::RegionMask;
    use crate::solver_cn::CnWorkspace;
    use crate::trajectory::{run_forward, Storage};
    use approx::assert_relative_eq;
    use indexmap::IndexMap;

    fn scenario(nx: usize, ny: usize) -> Scenario {
        let g = GridSpec::new(nx, ny, (nx - 1) as f64, (ny - 1) as f64).unwrap();
        let a = RegionMask::rectangle("a", &g, (0, nx / 2), (0, ny));
        let b = RegionMask::rectangle("b", &g, (nx / 2, nx), (0, ny - 1));
        let d = RegionMask::full("district", &g);
        let mut n = Scenario::uniform_population(&g, &[a.clone(), b.clone()], &[900.0, 400.0]).unwrap();
        n.mapv_inplace(|v| if v == 0.0 { 50.0 } else { v });
        Scenario::new(g, vec![a, b], d, n, ModelKind::Seir).unwrap()
    }

    fn params(days: f64) -> ParameterVector {
        ParameterVector {
            schedule: RateSchedule::new([0.3, 0.2, 0.1], [1.0, 3.0], days).unwrap(),
            kappa: 0.2,
            delta: 0.6,
            init_infected: IndexMap::from([("a".to_string(), 20.0), ("b".to_string(), 5.0)]),
        }
    }

    fn run(s: &Scenario, p: &ParameterVector, days: f64) -> Trajectory {
        let ws = CnWorkspace::assemble(&s.grid, p.kappa, 0.5).unwrap();
        run_forward(
            &ws,
            s,
            &p.schedule,
            s.initial_state(&p.init_infected).unwrap(),
            days,
            Storage::Full,
        )
        .unwrap()
    }

    fn series(names: &[&str], days: usize, f: impl Fn(usize, usize) -> f64) -> Vec<CaseSeries> {
        names
            .iter()
            .enumerate()
            .map(|(r, n)| CaseSeries::new(*n, (0..=days).map(|d| f(r, d)).collect()).unwrap())
            .collect()
    }

    #[test]
    fn incidence_examples() {
        let u = FieldSet::new(
            vec!["S".into(), "E".into(), "I".into()],
            vec![
                Array2::from_elem((3, 3), 0.9),
                Array2::from_elem((3, 3), 0.05),
                Array2::from_elem((3, 3), 0.05),
            ],
            0.0,
        )
        .unwrap();
        let s = RateSchedule::new([0.2, 0.1, 0.1], [32.0, 77.0], 148.0).unwrap();
        let inc = incidence_field(&u, ModelKind::Seir, &s, 0.5, 0.0).unwrap();
        assert_relative_eq!(inc[[1, 1]], 0.0045, max_relative = 1e-14);
        assert!(incidence_field(&u, ModelKind::Seir, &s, 0.0, 0.0)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        let mut none = u.clone();
        none.fields[2].fill(0.0);
        assert!(incidence_field(&none, ModelKind::Seir, &s, 0.5, 0.0)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn cumulative_and_gaps() {
        let s = CaseSeries::with_gaps("a", vec![Some(2.0), None, Some(3.0), Some(0.0)]).unwrap();
        assert_eq!(s.new_cases, vec![2.0, 0.0, 3.0, 0.0]);
        assert_eq!(s.cumulative, vec![2.0, 2.0, 5.0, 5.0]);
        assert_eq!(s.filled, vec![false, true, false, false]);
        assert!(CaseSeries::new("a", vec![1.0, -1.0]).is_err());
    }

    #[test]
    fn data_units() {
        let g = GridSpec::new(5, 5, 2.0, 2.0).unwrap();
        let a = RegionMask::rectangle("a", &g, (0, 5), (0, 5));
        let n = Scenario::uniform_population(&g, std::slice::from_ref(&a), &[1000.0]).unwrap();
        let s = Scenario::new(g, vec![a.clone()], a.clone(), n.clone(), ModelKind::Seir).unwrap();
        let data = interpolate_data(&series(&["a"], 6, |_, _| 10.0), &s).unwrap();
        for d in 0..=6 {
            let f = data.at_day(d);
            let persons = crate::grid::region_total(&(&f * &n), &a, &g).unwrap();
            assert_relative_eq!(persons / 1000.0, 0.01, max_relative = 1e-12);
        }
        let zero = interpolate_data(&series(&["a"], 3, |_, _| 0.0), &s).unwrap();
        assert!(zero.at(1.5).unwrap().iter().all(|&v| v == 0.0));
        let ramp = interpolate_data(&series(&["a"], 6, |_, d| d as f64 * 7.0), &s).unwrap();
        let mid = ramp.at(3.5).unwrap();
        assert_relative_eq!(
            mid[[2, 2]],
            0.5 * (ramp.at_day(3)[[2, 2]] + ramp.at_day(4)[[2, 2]]),
            max_relative = 1e-14
        );
        assert!(ramp.at(6.5).is_err());
    }

    #[test]
    fn unmatched_regions_are_listed() {
        let s = scenario(5, 4);
        match interpolate_data(&series(&["a", "zz"], 3, |_, _| 1.0), &s).unwrap_err() {
            Error::UnmatchedRegions(v) => assert_eq!(v, vec!["b".to_string(), "zz".to_string()]),
            e => panic!("{e}"),
        }
    }

    /// Cases a model trajectory would report with no noise.
    fn exact_series(s: &Scenario, p: &ParameterVector, t: &Trajectory) -> Vec<CaseSeries> {
        let pops = s.region_populations();
        s.regions
            .iter()
            .enumerate()
            .map(|(r, m)| {
                let cells = m.indices();
                let counts = (0..=t.days())
                    .map(|d| {
                        let inc = incidence_field(t.state_at_day(d), s.model, &p.schedule, p.delta, d as f64).unwrap();
                        let flat = inc.as_slice().unwrap();
                        pops[r] * cells.iter().map(|&c| flat[c]).sum::<f64>() / cells.len() as f64
                    })
                    .collect();
                CaseSeries::new(m.name.clone(), counts).unwrap()
            })
            .collect()
    }

    #[test]
    fn zero_at_consistent_data() {
        let s = scenario(6, 5);
        let p = params(4.0);
        let t = run(&s, &p, 4.0);
        let data = interpolate_data(&exact_series(&s, &p, &t), &s).unwrap();
        let obj = Objective::new(
            ObjectiveWeights::new(1.0, 1.0, 0.0, p.chi()).unwrap(),
            MisfitMode::RegionMean,
            data,
        );
        let j = obj.evaluate(&t, &p).unwrap();
        assert!(j.total < 1e-28, "{j:?}");
    }

    #[test]
    fn matches_triple_loop_oracle() {
        let s = scenario(3, 3);
        let p = params(4.0);
        let t = run(&s, &p, 4.0);
        let data = interpolate_data(&series(&["a", "b"], 4, |r, d| 0.5 + r as f64 + 0.3 * d as f64), &s).unwrap();
        let w = ObjectiveWeights::new(1.3, 0.7, 0.9, [0.1, 0.1, 0.1, 0.1, 0.5]).unwrap();
        for mode in [MisfitMode::RegionMean, MisfitMode::Pointwise] {
            let obj = Objective::new(w.clone(), mode, data.clone());
            let got = obj.evaluate(&t, &p).unwrap().total;

            let h2 = s.grid.hx * s.grid.hy;
            let pops = s.region_populations();
            let mut expected = 0.0;
            for d in 0..=4usize {
                let u = t.state_at_day(d);
                let beta = p.schedule.beta_at(d as f64).unwrap();
                let omega = if d == 0 || d == 4 { 0.5 } else { 1.0 };
                for (r, m) in s.regions.iter().enumerate() {
                    let target = (0.5 + r as f64 + 0.3 * d as f64) / pops[r];
                    let mut cells = Vec::new();
                    for j in 0..3 {
                        for i in 0..3 {
                            if m.cells[[j, i]] {
                                cells.push(p.delta * beta * u.fields[0][[j, i]] * u.fields[2][[j, i]]);
                            }
                        }
                    }
                    let mean = cells.iter().sum::<f64>() / cells.len() as f64;
                    for c in &cells {
                        let res = match mode {
                            MisfitMode::RegionMean => mean - target,
                            MisfitMode::Pointwise => c - target,
                        };
                        expected += 0.5 * 1.3 * omega * h2 * res * res;
                    }
                }
            }
            let chi = p.chi();
            let refs = [0.1, 0.1, 0.1, 0.1, 0.5];
            expected += 0.5 * 0.7 * (0..5).map(|k| (chi[k] - refs[k]).powi(2)).sum::<f64>();
            let u0 = t.initial();
            for j in 0..3 {
                for i in 0..3 {
                    expected += 0.5 * 0.9 * h2 * (u0.fields[1][[j, i]].powi(2) + u0.fields[2][[j, i]].powi(2));
                }
            }
            assert_relative_eq!(got, expected, max_relative = 1e-12);
        }
    }

    #[test]
    fn weights_scale_and_relabeling() {
        let s = scenario(6, 5);
        let p = params(4.0);
        let t = run(&s, &p, 4.0);
        let sr = series(&["a", "b"], 4, |r, d| 1.0 + 2.0 * r as f64 + d as f64);
        let data = interpolate_data(&sr, &s).unwrap();
        let j1 = evaluate_j(
            &t,
            &p,
            &ObjectiveWeights::data_only(p.chi()),
            MisfitMode::RegionMean,
            &data,
        )
        .unwrap();
        let j2 = evaluate_j(
            &t,
            &p,
            &ObjectiveWeights::new(2.0, 0.0, 0.0, p.chi()).unwrap(),
            MisfitMode::RegionMean,
            &data,
        )
        .unwrap();
        assert_eq!(j2, 2.0 * j1);
        assert!(j1 > 0.0);

        let mut swapped = s.clone();
        swapped.regions.reverse();
        let mut sr_rev = sr.clone();
        sr_rev.reverse();
        let data_rev = interpolate_data(&sr_rev, &swapped).unwrap();
        let t_rev = run(&swapped, &p, 4.0);
        let j3 = evaluate_j(
            &t_rev,
            &p,
            &ObjectiveWeights::data_only(p.chi()),
            MisfitMode::RegionMean,
            &data_rev,
        )
        .unwrap();
        assert_relative_eq!(j1, j3, max_relative = 1e-12);
    }

    #[test]
    fn streaming_matches_stored() {
        let s = scenario(6, 5);
        let p = params(4.0);
        let t = run(&s, &p, 4.0);
        let data = interpolate_data(&series(&["a", "b"], 4, |r, d| 1.0 + r as f64 * d as f64), &s).unwrap();
        let obj = Objective::new(
            ObjectiveWeights::new(1.0, 0.1, 0.2, [0.0; 5]).unwrap(),
            MisfitMode::RegionMean,
            data,
        );
        let stored = obj.evaluate(&t, &p).unwrap();
        let ws = CnWorkspace::assemble(&s.grid, p.kappa, 0.5).unwrap();
        let streamed = obj
            .evaluate_streaming(&ws, &s, &p, s.initial_state(&p.init_infected).unwrap())
            .unwrap();
        assert_eq!(stored, streamed);
    }

    #[test]
    fn window_mismatch_is_an_alignment_error() {
        let s = scenario(5, 4);
        let p = params(4.0);
        let t = run(&s, &p, 4.0);
        let data = interpolate_data(&series(&["a", "b"], 6, |_, _| 1.0), &s).unwrap();
        let obj = Objective::new(ObjectiveWeights::data_only(p.chi()), MisfitMode::RegionMean, data);
        assert!(matches!(obj.evaluate(&t, &p), Err(Error::Alignment(_))));
    }
}
