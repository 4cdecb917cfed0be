use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use labfm::cli::{run, sidecar, RunConfig};

fn config(dir: &Path, body: &str) -> RunConfig {
    let text = format!(r#"{{ {body}, "out": {:?} }}"#, dir.to_str().unwrap());
    RunConfig::from_json(&text).unwrap()
}

fn read_all(paths: &[std::path::PathBuf]) -> Vec<(String, String)> {
    paths
        .iter()
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read_to_string(p).unwrap()))
        .collect()
}

#[test]
fn nodes_command_writes_only_the_node_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), r#""command": "nodes", "s": 0.05"#);
    let files = run(&cfg, &BTreeMap::new()).unwrap();
    assert_eq!(files.len(), 1);
    assert_eq!(files[0].file_name().unwrap(), "nodes.csv");
    assert!(sidecar(&files[0]).exists());
}

#[test]
fn rp_writes_one_csv_per_scheme_and_line_and_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let body = r#""command": "rp", "scheme": "a,d", "kind": "ddx", "s": 0.05, "samples": 16"#;
    let first = run(&config(a.path(), body), &BTreeMap::new()).unwrap();
    let second = run(&config(b.path(), body), &BTreeMap::new()).unwrap();
    let rp: Vec<_> = first
        .iter()
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with("rp_"))
        .collect();
    assert_eq!(rp.len(), 6);
    let csv_only = |files: &[std::path::PathBuf]| -> Vec<(String, String)> {
        read_all(files)
            .into_iter()
            .filter(|(name, _)| name.ends_with(".csv"))
            .collect()
    };
    assert_eq!(csv_only(&first), csv_only(&second));
}

#[test]
fn every_output_has_a_header_and_a_sidecar_naming_the_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), r#""command": "stability", "scheme": "a,b", "kind": "ddx", "s": 0.08"#);
    let files = run(&cfg, &BTreeMap::new()).unwrap();
    assert!(!files.is_empty());
    let hash = cfg.hash();
    for path in files.iter().filter(|p| !p.to_string_lossy().ends_with(".meta.json")) {
        let text = fs::read_to_string(path).unwrap();
        let header = text.lines().next().unwrap();
        assert!(header.chars().any(|c| c.is_ascii_alphabetic()), "{path:?} has header {header:?}");
        let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(sidecar(path)).unwrap()).unwrap();
        assert_eq!(meta["config_hash"], serde_json::Value::String(hash.clone()));
    }
}

#[test]
fn unknown_scheme_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), r#""command": "rp", "scheme": "z""#);
    let err = run(&cfg, &BTreeMap::new()).unwrap_err();
    assert_eq!(labfm::cli::exit_code(&err), 2);
}
