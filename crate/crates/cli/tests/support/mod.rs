#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

pub fn demo_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../data/demo")
        .canonicalize()
        .unwrap()
}

pub fn tabclar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tabclar"))
        .args(args)
        .env_remove("TABCLAR_WORKERS")
        .output()
        .expect("binary runs")
}

fn demo_config(name: &str) -> Value {
    let text = std::fs::read_to_string(demo_dir().join(name)).unwrap();
    let mut v: Value = serde_json::from_str(&text).unwrap();
    for key in ["manifest", "templates", "intents", "sql_examples", "summary_examples"] {
        if let Some(p) = v.get(key).and_then(Value::as_str) {
            v[key] = json!(demo_dir().join(p));
        }
    }
    v
}

fn write(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

/// The demo generate config writing to `output`.
pub fn generate_config(dir: &Path, output: &Path) -> PathBuf {
    let mut v = demo_config("generate.json");
    v["output"] = json!(output);
    write(dir, "generate.json", &v)
}

/// The demo run config reading `dataset`, with `patch` merged on top.
pub fn run_config(dir: &Path, dataset: &Path, output_dir: &Path, patch: Value) -> PathBuf {
    let mut v = demo_config("run.json");
    v["dataset"] = json!(dataset);
    v["output_dir"] = json!(output_dir);
    if let Value::Object(m) = patch {
        for (k, x) in m {
            v[k] = x;
        }
    }
    write(
        dir,
        &format!("run-{}.json", output_dir.file_name().unwrap().to_string_lossy()),
        &v,
    )
}

pub fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Generates the demo dataset into `dir` and returns its path.
pub fn demo_dataset(dir: &Path) -> PathBuf {
    let out = dir.join("dataset.jsonl");
    let cfg = generate_config(dir, &out);
    let o = tabclar(&["generate", "--config", path(&cfg)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}
