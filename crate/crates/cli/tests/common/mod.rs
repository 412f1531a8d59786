//! Helpers for driving the `primhand` binary from tests.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

pub fn primhand(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_primhand"))
        .args(args)
        .env_remove("PRIMHAND_LOG")
        .output()
        .expect("the primhand binary runs")
}

/// Runs a subcommand with `--config` and panics with stderr on failure.
pub fn run_ok(subcommand: &str, config: &Path, extra: &[&str]) -> Output {
    let cfg = config.to_str().expect("utf-8 path");
    let mut args = vec![subcommand, "--config", cfg];
    args.extend_from_slice(extra);
    let out = primhand(&args);
    assert!(
        out.status.success(),
        "primhand {subcommand} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn write_config(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

/// The JSON error line a failed run leaves on stderr.
pub fn error_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr {text:?} is not error JSON: {e}"))
}

/// Every file below `dir`, keyed by its relative path.
pub fn tree_bytes(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for path in entries {
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_path_buf();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

pub fn csv_rows(path: &Path) -> usize {
    csv::Reader::from_path(path).unwrap().records().count()
}
