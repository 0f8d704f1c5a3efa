#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mfclab::config::ExperimentConfig;

pub const DEFAULT: &str = include_str!("../../../../configs/default.toml");

pub fn default_config() -> ExperimentConfig {
    ExperimentConfig::from_toml(DEFAULT).expect("shipped config parses")
}

fn set(table: &mut toml::Table, path: &str, value: toml::Value) {
    let mut keys: Vec<&str> = path.split('.').collect();
    let last = keys.pop().unwrap();
    let mut t = table;
    for k in keys {
        t = t.get_mut(k).and_then(toml::Value::as_table_mut).unwrap_or_else(|| panic!("no table {k}"));
    }
    t.insert(last.into(), value);
}

/// The shipped scenario shrunk to seconds: n = 32, K = 4, a handful of
/// particles and replicas.
pub fn small_config(overrides: &[(&str, toml::Value)]) -> String {
    let mut table: toml::Table = DEFAULT.parse().unwrap();
    let base: Vec<(&str, toml::Value)> = vec![
        ("grid.n", 32.into()),
        ("pde.dt", 0.01.into()),
        ("pde.snapshots", 4.into()),
        ("cost.snapshots", 4.into()),
        ("cost.replicas", 2.into()),
        ("sde.particles", 32.into()),
        ("sde.replicas", 2.into()),
        ("optim.max_evals", 6.into()),
        ("chaos.schedule", toml::Value::Array(vec![16.into(), 32.into()])),
        ("chaos.replicas", 2.into()),
        ("chaos.seeds", toml::Value::Array(vec![1.into()])),
        ("chaos.bootstrap", 10.into()),
        ("gamma.schedule", toml::Value::Array(vec![16.into(), 32.into(), 64.into()])),
        ("gamma.seeds", toml::Value::Array(vec![1.into(), 2.into()])),
        ("kernel_check.eps", toml::Value::Array(vec![0.2.into(), 0.1.into()])),
    ];
    for (path, value) in base.into_iter().chain(overrides.iter().cloned()) {
        set(&mut table, path, value);
    }
    toml::to_string(&table).unwrap()
}

pub fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

pub fn mfclab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfclab")).args(args).output().expect("binary runs")
}

pub fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}
