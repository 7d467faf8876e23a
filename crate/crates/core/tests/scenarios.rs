use std::path::Path;

use hopbound::scenario::{load_scenario, Scenario, SweepParam};

fn fixtures() -> Vec<(String, Scenario)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .map(|p| (p.file_stem().unwrap().to_string_lossy().into_owned(), load_scenario(&p).unwrap()))
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

#[test]
fn every_fixture_loads_and_names_match() {
    let all = fixtures();
    assert_eq!(all.len(), 7);
    for (stem, s) in &all {
        assert_eq!(&s.name, stem);
        assert!(!s.flow_instances().unwrap().is_empty(), "{stem}");
    }
}

#[test]
fn toml_round_trip_is_lossless() {
    for (stem, s) in fixtures() {
        let again = Scenario::parse(&s.to_toml()).unwrap_or_else(|e| panic!("{stem}: {e}"));
        assert_eq!(again, s, "{stem}");
        assert_eq!(again.to_toml(), s.to_toml(), "{stem}");
    }
}

#[test]
fn sweep_parameters_apply_to_every_fixture() {
    for (stem, s) in fixtures() {
        for (param, value) in [
            (SweepParam::Capacity, 3e7),
            (SweepParam::NodeEpsilon, 1e-3),
            (SweepParam::AppDelayBound, 0.5),
            (SweepParam::Seed, 42.0),
            (SweepParam::Horizon, 10.0),
        ] {
            let v = s.with_param(param, value).unwrap_or_else(|e| panic!("{stem} {param}: {e}"));
            v.validate().unwrap_or_else(|e| panic!("{stem} {param}: {e}"));
        }
    }
}
