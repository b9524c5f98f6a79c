mod common;

use orpd::pipeline::{render_report, run_pipeline, OrpdReport, ReportFormat, RunConfig, CSV_COLUMNS, REPORT_SCHEMA};
use orpd::relaxations::{ModelKind, Objective};

fn case14(kinds: Vec<ModelKind>) -> RunConfig {
    RunConfig::new(vec![common::case_path("case14")], kinds, vec![Objective::Cost])
}

#[test]
fn report_is_reproducible_and_round_trips() {
    let mut config = case14(ModelKind::ALL.to_vec());
    config.workers = 2;
    let a = run_pipeline(&config).unwrap();
    config.workers = 1;
    let b = run_pipeline(&config).unwrap();
    assert_eq!(a.stable_json().unwrap(), b.stable_json().unwrap());
    assert_eq!(a.schema, REPORT_SCHEMA);
    assert!(a.all_completed());
    assert_eq!(a.cells.len(), 4);
    let back = OrpdReport::from_json(&a.to_json().unwrap()).unwrap();
    assert_eq!(back, a);
    for c in &a.cells {
        let (lb, ub) = (c.lower_bound.unwrap(), c.upper_bound.unwrap());
        assert!(lb <= ub * (1.0 + 1e-7));
        let nb = c.normalized_bound.unwrap();
        assert!(nb > 0.999 && nb <= 1.0 + 1e-6, "{nb}");
    }
    assert_eq!(a.best.len(), 1);
}

#[test]
fn failed_cells_are_recorded_not_fatal() {
    let mut config = case14(vec![ModelKind::Sdr2]);
    config.max_iter = 2;
    let report = run_pipeline(&config).unwrap();
    assert!(!report.all_completed());
    let cell = &report.cells[0];
    assert!(!cell.completed);
    assert!(cell.failure.is_some());
    assert!(cell.gap_percent.is_none());
    let md = render_report(&report, ReportFormat::Md).unwrap();
    assert!(md.contains("Failed cells"));
    assert!(md.contains("Average"));
}

#[test]
fn csv_has_fixed_columns() {
    let report = run_pipeline(&case14(vec![ModelKind::Tcr1])).unwrap();
    let csv = render_report(&report, ReportFormat::Csv).unwrap();
    let mut reader = csv::Reader::from_reader(csv.as_bytes());
    let header: Vec<String> = reader.headers().unwrap().iter().map(str::to_string).collect();
    assert_eq!(header, CSV_COLUMNS);
    assert_eq!(reader.records().count(), 1);
}

#[test]
fn invalid_configs_are_rejected() {
    let mut config = case14(vec![]);
    assert!(run_pipeline(&config).is_err());
    config.kinds = vec![ModelKind::Sdr1];
    config.tolerance = 0.0;
    assert!(run_pipeline(&config).is_err());
    let mut missing = case14(vec![ModelKind::Sdr1]);
    missing.cases = vec![common::case_path("no_such_case")];
    assert!(run_pipeline(&missing).is_err());
    let unknown = r#"{"cases": ["a.m"], "kinds": ["sdr1"], "colour": 1}"#;
    assert!(serde_json::from_str::<RunConfig>(unknown).is_err());
    let known = r#"{"cases": ["a.m"], "kinds": ["sdr1"]}"#;
    assert!(serde_json::from_str::<RunConfig>(known).unwrap().validate().is_ok());
}
