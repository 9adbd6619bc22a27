use std::path::{Path, PathBuf};

use serde_json::Value;

use fpk_core::scenario::{check_scenario, parse_scenario, parse_scenario_str, run_scenario};

fn repo(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn validator(name: &str) -> jsonschema::Validator {
    let text = std::fs::read_to_string(repo(&format!("schemas/{name}.schema.json"))).unwrap();
    jsonschema::validator_for(&serde_json::from_str(&text).unwrap()).unwrap()
}

fn assert_valid(v: &jsonschema::Validator, doc: &Value, what: &str) {
    let errors: Vec<String> = v.iter_errors(doc).map(|e| format!("{} at {}", e, e.instance_path())).collect();
    assert!(errors.is_empty(), "{what}: {errors:#?}");
}

fn shipped_scenarios() -> Vec<PathBuf> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(repo("scenarios"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| !p.file_name().unwrap().to_str().unwrap().starts_with("sweep"))
        .collect();
    paths.sort();
    paths
}

#[test]
fn shipped_scenarios_and_their_normalized_form_match_the_schema() {
    let v = validator("scenario");
    for path in shipped_scenarios() {
        let raw: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_valid(&v, &raw, &path.display().to_string());
        let scenario = parse_scenario(&path).unwrap();
        let normalized: Value = serde_json::from_str(&scenario.to_json()).unwrap();
        assert_valid(&v, &normalized, "normalized");
        assert_eq!(parse_scenario_str(&scenario.to_json()).unwrap(), scenario);
    }
}

#[test]
fn reports_match_the_schema() {
    let v = validator("report");
    for path in shipped_scenarios() {
        let scenario = parse_scenario(&path).unwrap();
        let mut fast = scenario.clone();
        fast.solver.t_end = fast.solver.t_end.min(0.01);
        fast.diagnostics.fit_window = None;
        let report = serde_json::to_value(run_scenario(&fast).unwrap().report).unwrap();
        assert_valid(&v, &report, &path.display().to_string());
        let checked = serde_json::to_value(check_scenario(&scenario).unwrap()).unwrap();
        assert_valid(&v, &checked, "check report");
    }
}

#[test]
fn sweep_spec_matches_the_schema() {
    let v = validator("sweep");
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(repo("scenarios/sweep_d_scale.json")).unwrap()).unwrap();
    assert_valid(&v, &doc, "sweep");
    assert!(!v.is_valid(&serde_json::json!({"base": "x.json", "axis": "d_scale", "values": []})));
}
