use std::path::PathBuf;

use epidiffuse::RunConfig;

fn fixture_config() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/birkenfeld/config.toml")
}

#[test]
fn birkenfeld_fixture_loads() {
    let cfg = RunConfig::load(&fixture_config()).unwrap();
    cfg.validate().unwrap();
    let scenario = cfg.load_scenario().unwrap();
    assert_eq!(scenario.grid.shape(), (101, 101));
    assert_eq!(scenario.region_names(), ["BA", "BI", "HR", "IO"]);
    assert!((scenario.district_population() - 81_000.0).abs() < 1e-6);
    for (r, m) in scenario.regions.iter().enumerate() {
        assert!(m.is_subset_of(&scenario.district), "region {r}");
        for other in &scenario.regions[r + 1..] {
            assert!(!m.overlaps(other));
        }
    }
}

#[test]
fn birkenfeld_cases_cover_the_window() {
    let cfg = RunConfig::load(&fixture_config()).unwrap();
    let problem = cfg.load_problem().unwrap();
    assert_eq!(problem.t_end(), 147.0);
    assert_eq!(problem.objective.data.last_day(), 147);
    let series = cfg.load_cases().unwrap();
    assert_eq!(series.len(), 4);
    assert!(series.iter().all(|s| s.new_cases.iter().all(|&c| c >= 0.0)));
}
