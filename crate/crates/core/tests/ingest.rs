use std::path::Path;

use qmc_amis::harness::{ExperimentConfig, ExperimentKind};
use qmc_amis::targets::{load_pima, parse_pima, PimaDesign, PIMA_ROWS};
use qmc_amis::Error;

const BUNDLED: &str = include_str!("../data/pima_first30.csv");

#[test]
fn file_and_bundled_copy_agree() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pima.csv");
    std::fs::write(&path, BUNDLED).unwrap();
    let from_file = load_pima(&path).unwrap();
    let bundled = PimaDesign::bundled().unwrap();
    assert_eq!(from_file.x.as_slice(), bundled.x.as_slice());
    assert_eq!(from_file.y, bundled.y);
    assert_eq!((bundled.n(), bundled.dim()), (PIMA_ROWS, 9));
}

#[test]
fn extra_rows_are_ignored_and_header_is_optional() {
    let body: String = BUNDLED.lines().skip(1).map(|l| format!("{l}\n")).collect();
    let longer = format!("{body}{body}");
    let a = parse_pima(&longer, Path::new("x.csv")).unwrap();
    let b = PimaDesign::bundled().unwrap();
    assert_eq!(a.x.as_slice(), b.x.as_slice());
}

#[test]
fn standardized_columns_have_zero_mean_and_unit_variance() {
    let d = PimaDesign::bundled().unwrap();
    for j in 1..d.dim() {
        let col: Vec<f64> = (0..d.n()).map(|i| d.x.row(i)[j]).collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / col.len() as f64;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12, "column {j}");
    }
    assert!((0..d.n()).all(|i| d.x.row(i)[0] == 1.0));
}

#[test]
fn bad_cells_name_their_column() {
    let mut lines: Vec<String> = BUNDLED.lines().map(String::from).collect();
    lines[3] = lines[3].replacen("0.", "abc", 1);
    let err = parse_pima(&lines.join("\n"), Path::new("broken.csv")).unwrap_err();
    match err {
        Error::Ingest { path, message } => {
            assert_eq!(path, Path::new("broken.csv"));
            assert!(message.contains("line 4") && message.contains("not numeric"), "{message}");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn missing_file_is_an_io_error() {
    assert!(matches!(load_pima("/nonexistent/pima.csv"), Err(Error::Io { .. })));
}

#[test]
fn config_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.cfg");
    std::fs::write(&path, "experiment = logistic\nnu = 3\ntruth_budget = 2^10\npima = data.csv  # local copy\n").unwrap();
    let cfg = ExperimentConfig::load(&path).unwrap();
    assert_eq!(cfg.experiment, ExperimentKind::Logistic);
    assert_eq!((cfg.nu, cfg.truth_budget), (3.0, 1024));
    assert_eq!(cfg.pima.as_deref(), Some(Path::new("data.csv")));
    assert!(matches!(ExperimentConfig::load(dir.path().join("none.cfg")), Err(Error::Io { .. })));
}
