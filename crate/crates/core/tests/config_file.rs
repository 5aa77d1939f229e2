use std::path::{Path, PathBuf};

use csilab_core::config::LabConfig;

fn shipped_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/lab.toml")
}

#[test]
fn shipped_config_spells_out_the_defaults() {
    let cfg = LabConfig::load(&shipped_path()).unwrap();
    assert_eq!(cfg.to_toml_string(), LabConfig::default().to_toml_string());
}

#[test]
fn commented_activity_example_parses() {
    let text = std::fs::read_to_string(shipped_path()).unwrap();
    let start = text.find("# [[activity]]").unwrap();
    let example: String = text[start..].lines().map(|l| format!("{}\n", l.trim_start_matches("# "))).collect();
    let second = example.replace("label = 0", "label = 1").replace("\"walk\"", "\"run\"");
    let cfg = LabConfig::from_toml_str(&format!("schema_version = 1\n{example}{second}"), "example").unwrap();
    let specs = cfg.activity_specs().unwrap();
    assert_eq!(specs.len(), 2);
    assert_eq!(specs[1].name, "run");
    assert_eq!(specs[0].dynamic_paths.len(), 1);
}
