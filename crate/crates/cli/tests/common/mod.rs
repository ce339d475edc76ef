#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

pub const REFERENCE: &str = "\
* reference values, unit gains
R1 n1 0 2k
C1 n1 0 10p
C2 n2 0 20p
R2 n3 0 1k
X1 DVCC Y1=n1 Y2=n2 X=n3 Z1=n2 Z2=n1
.out V01 n3
.out V02 n2
";

/// Same circuit with a 2 % startup margin on R1.
pub const STARTUP: &str = "\
R1 n1 0 2.04k
C1 n1 0 10p
C2 n2 0 20p
R2 n3 0 1k
X1 DVCC Y1=n1 Y2=n2 X=n3 Z1=n2 Z2=n1 sat=tanh vsat=2.5
.out V01 n3
.out V02 n2
";

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Run {
    pub fn json(&self) -> Value {
        serde_json::from_str(&self.stdout).unwrap_or_else(|e| panic!("stdout is not JSON ({e}):\n{}", self.stdout))
    }
}

pub fn dvccosc(dir: &Path, args: &[&str]) -> Run {
    let Output { status, stdout, stderr } = Command::new(env!("CARGO_BIN_EXE_dvccosc"))
        .args(args)
        .current_dir(dir)
        .env_remove("DVCCOSC_OUT_DIR")
        .output()
        .expect("binary runs");
    Run {
        code: status.code().expect("exit code"),
        stdout: String::from_utf8(stdout).unwrap(),
        stderr: String::from_utf8(stderr).unwrap(),
    }
}

pub fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

pub fn schema_validator() -> jsonschema::Validator {
    let text = include_str!("../../schema/run_report.schema.json");
    let schema: Value = serde_json::from_str(text).unwrap();
    jsonschema::validator_for(&schema).expect("schema compiles")
}

pub fn assert_valid(report: &Value) {
    let v = schema_validator();
    let errors: Vec<String> = v
        .iter_errors(report)
        .map(|e| format!("{} at {}", e, e.instance_path()))
        .collect();
    assert!(errors.is_empty(), "schema violations: {errors:#?}");
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}
