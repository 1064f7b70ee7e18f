//! Writes the bundled Birkenfeld fixture: district and region masks on a 101×101 grid,
//! a run config, and a synthetic case file with its truth record.
//!
//! Usage: `cargo run -p epidiffuse --example make_birkenfeld -- <out-dir>`

use std::fs;
use std::path::PathBuf;

use indexmap::IndexMap;

use epidiffuse::io::cases::{parse_date, write_cases};
use epidiffuse::io::masks::{rasterize_polygon, write_mask};
use epidiffuse::io::synthetic::{generate_synthetic, SyntheticTruth};
use epidiffuse::solver_cn::CnWorkspace;
use epidiffuse::{GridSpec, ModelKind, ParameterVector, RateSchedule, RegionMask, Scenario};

const LX: f64 = 39.23;
const LY: f64 = 56.05;

/// District outline in km from the south-west corner.
const OUTLINE: [(f64, f64); 13] = [
    (2.0, 20.0),
    (6.0, 8.0),
    (14.0, 2.0),
    (24.0, 1.0),
    (33.0, 5.0),
    (38.0, 14.0),
    (37.0, 26.0),
    (38.5, 38.0),
    (34.0, 50.0),
    (24.0, 55.0),
    (15.0, 54.0),
    (8.0, 47.0),
    (3.0, 36.0),
];

const REGIONS: [(&str, f64, f64); 4] = [
    ("BA", 15_500.0, 4.007),
    ("BI", 21_500.0, 3.275),
    ("HR", 16_000.0, 6.350),
    ("IO", 28_000.0, 14.630),
];

fn region_of(x: f64, y: f64) -> &'static str {
    if y >= 36.0 {
        "HR"
    } else if x < 15.0 {
        "BI"
    } else if y < 17.0 {
        "BA"
    } else {
        "IO"
    }
}

const CONFIG: &str = r#"model = "seir"
seed = 20201001

[grid]
district = "district.txt"
regions = { BA = "BA.txt", BI = "BI.txt", HR = "HR.txt", IO = "IO.txt" }
populations = { BA = 15500, BI = 21500, HR = 16000, IO = 28000 }

[data]
cases = "cases_synthetic.csv"
start_date = "2020-10-01"
end_date = "2021-02-25"

[schedule]
breakpoints = ["2020-11-02", "2020-12-17"]
gamma = 0.1
theta = 0.3333333333333333

[initial]
beta = [0.1, 0.1, 0.1]
kappa = 0.1
delta = 0.5
seeds = { BA = 1, BI = 1, HR = 1, IO = 3 }

[weights]
w0 = 1.0
w1 = 1e-5
w2 = 1e-5

[solver]
backend = "cn"
tau = 0.1

[estimator]
kind = "adjoint"
init_mode = "region"

[metropolis]
draws = 2000
burn_in = 0.2
seed = 1

[output]
dir = "out"
snapshot_days = [0, 32, 77, 147]
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures/birkenfeld".into()));
    fs::create_dir_all(&out)?;
    let grid = GridSpec::new(101, 101, LX, LY)?;
    let district = rasterize_polygon("district", &grid, &OUTLINE);
    write_mask(&out.join("district.txt"), &grid, &district)?;

    let mut regions = Vec::new();
    for (name, _, _) in REGIONS {
        let part = RegionMask::new(
            name,
            ndarray::Array2::from_shape_fn(grid.shape(), |(j, i)| {
                let (x, y) = grid.node_position(i, j);
                region_of(x, y) == name
            }),
        );
        let mask = district.intersection(name, &part)?;
        write_mask(&out.join(format!("{name}.txt")), &grid, &mask)?;
        regions.push(mask);
    }
    let totals: Vec<f64> = REGIONS.iter().map(|r| r.1).collect();
    let n = Scenario::uniform_population(&grid, &regions, &totals)?;
    let scenario = Scenario::new(grid, regions, district, n, ModelKind::Seir)?;

    let start = parse_date("2020-10-01").expect("valid date");
    let t_end = (parse_date("2021-02-25").expect("valid date") - start).num_days() as f64;
    let seeds: IndexMap<String, f64> = REGIONS.iter().map(|r| (r.0.to_string(), r.2)).collect();
    let truth = ParameterVector {
        schedule: RateSchedule::new([0.202, 0.109, 0.097], [32.0, 77.0], t_end)?,
        kappa: 0.102,
        delta: 0.397,
        init_infected: seeds,
    };
    let (noise, seed) = (0.1, 20201001);
    let stepper = CnWorkspace::assemble(&scenario.grid, truth.kappa, 0.1)?;
    let (series, _) = generate_synthetic(&stepper, &scenario, &truth, noise, seed)?;
    write_cases(
        &out.join("cases_synthetic.csv"),
        &series,
        start,
        Some("synthetic case counts generated by make_birkenfeld; see truth.json"),
    )?;
    let record = SyntheticTruth::new(&truth, noise, seed, &stepper);
    fs::write(out.join("truth.json"), serde_json::to_string_pretty(&record)? + "\n")?;
    fs::write(out.join("config.toml"), CONFIG)?;
    println!(
        "wrote {} (district population {:.0})",
        out.display(),
        scenario.district_population()
    );
    Ok(())
}
