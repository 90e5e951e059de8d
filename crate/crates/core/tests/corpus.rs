use std::fs;
use std::path::{Path, PathBuf};

use saddle_exit::experiment::{Experiment, ExperimentConfig};
use saddle_exit::normal_form::{coefficient_table, parse_coefficient_table};
use saddle_exit::poly::parse_rational;
use saddle_exit::sde::{read_samples_csv, write_samples_csv};
use saddle_exit::system::validate_system;
use saddle_exit::system_file::{load_system, parse_system};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    out.sort();
    assert!(!out.is_empty(), "{} is empty", dir.display());
    out
}

#[test]
fn shipped_systems_are_valid() {
    for path in files(&root().join("data/systems")) {
        let s = load_system(&path).unwrap();
        let r = validate_system(&s);
        assert!(r.valid, "{}: {:?}", path.display(), r.failures);
    }
}

#[test]
fn shipped_configs_prepare() {
    for path in files(&root().join("data/configs")) {
        let c = ExperimentConfig::load(&path).unwrap();
        Experiment::prepare(c).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}

#[test]
fn fuzz_seeds_parse_without_panicking() {
    let corpus = root().join("fuzz/corpus");
    for path in files(&corpus.join("system_file")) {
        let text = fs::read_to_string(&path).unwrap();
        parse_system(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
    for path in files(&corpus.join("experiment_config")) {
        let text = fs::read_to_string(&path).unwrap();
        ExperimentConfig::parse(&text, Path::new(".")).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
    for path in files(&corpus.join("coefficient_table")) {
        let field = parse_coefficient_table(&fs::read_to_string(&path).unwrap()).unwrap();
        let again = serde_json::to_string(&coefficient_table(&field)).unwrap();
        assert_eq!(parse_coefficient_table(&again).unwrap(), field);
    }
    for path in files(&corpus.join("samples_csv")) {
        let samples = read_samples_csv(fs::File::open(&path).unwrap()).unwrap();
        let mut out = Vec::new();
        write_samples_csv(&mut out, &samples).unwrap();
        assert_eq!(read_samples_csv(out.as_slice()).unwrap(), samples);
    }
    for path in files(&corpus.join("rational")) {
        parse_rational(&fs::read_to_string(&path).unwrap()).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}

#[test]
fn cancelling_records_leave_nothing() {
    let text = r#"[{"target": 1, "a1": 2, "a2": 1, "numerator": "-7", "denominator": "3"},
                   {"target": 1, "a1": 2, "a2": 1, "numerator": "7", "denominator": "3"}]"#;
    let field = parse_coefficient_table(text).unwrap();
    assert!(coefficient_table(&field).is_empty());
}
