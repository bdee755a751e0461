use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn root() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR"))
}

fn data(rel: &str) -> PathBuf {
    root().join(rel)
}

fn mipu(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mipu")).current_dir(root()).args(args).output().unwrap()
}

fn stdout_ok(args: &[&str]) -> String {
    let out = mipu(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn golden(name: &str) -> String {
    std::fs::read_to_string(data("tests/golden").join(name)).unwrap()
}

#[test]
fn asm_then_disasm_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("p.bin");
    stdout_ok(&["asm", "data/programs/three_hops.asm", "--out", bin.to_str().unwrap()]);
    assert_eq!(stdout_ok(&["disasm", bin.to_str().unwrap()]), golden("three_hops.disasm"));
}

#[test]
fn sim_text_matches_golden() {
    assert_eq!(stdout_ok(&["sim", "data/programs/three_hops.asm"]), golden("sim_three_hops.txt"));
}

#[test]
fn sim_accepts_binary_programs() {
    let dir = tempfile::tempdir().unwrap();
    let bin = dir.path().join("p.bin");
    stdout_ok(&["asm", "data/programs/three_hops.asm", "--out", bin.to_str().unwrap()]);
    assert_eq!(stdout_ok(&["sim", bin.to_str().unwrap()]), golden("sim_three_hops.txt"));
}

#[test]
fn run_text_matches_golden() {
    assert_eq!(stdout_ok(&["run", "--workload", "data/workloads/matmul_4x3x3.toml"]), golden("run_matmul_4x3x3.txt"));
}

#[test]
fn sweep_csv_matches_golden() {
    assert_eq!(stdout_ok(&["sweep", "--vary", "m", "--lo", "2", "--hi", "16"]), golden("sweep_m.csv"));
}

#[test]
fn empty_program_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("empty.asm");
    std::fs::write(&src, "# nothing here\n").unwrap();
    let out = mipu(&["asm", src.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no injections"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(mipu(&["bogus"]).status.code(), Some(2));
    assert_eq!(mipu(&["sweep", "--vary", "q", "--lo", "2", "--hi", "4"]).status.code(), Some(2));
}

#[test]
fn trace_file_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("t.csv");
    let jsonl = dir.path().join("t.jsonl");
    stdout_ok(&["--trace", csv.to_str().unwrap(), "sim", "data/programs/three_hops.asm"]);
    stdout_ok(&["--trace", jsonl.to_str().unwrap(), "sim", "data/programs/three_hops.asm"]);
    let csv = std::fs::read_to_string(csv).unwrap();
    let jsonl = std::fs::read_to_string(jsonl).unwrap();
    assert!(csv.lines().count() > 1);
    assert_eq!(csv.lines().count() - 1, jsonl.lines().count());
    for line in jsonl.lines() {
        serde_json::from_str::<Value>(line).unwrap();
    }
}

/// Checks `required`, `type`, `properties` and `items`. Enough for the shipped schemas.
fn conforms(v: &Value, schema: &Value, at: &str) -> Result<(), String> {
    if let Some(t) = schema.get("type") {
        let types: Vec<&str> = match t {
            Value::Array(ts) => ts.iter().filter_map(Value::as_str).collect(),
            other => vec![other.as_str().unwrap()],
        };
        let ok = types.iter().any(|t| match *t {
            "object" => v.is_object(),
            "array" => v.is_array(),
            "string" => v.is_string(),
            "integer" => v.is_i64() || v.is_u64(),
            "number" => v.is_number(),
            "boolean" => v.is_boolean(),
            "null" => v.is_null(),
            _ => false,
        });
        if !ok {
            return Err(format!("{at}: expected {types:?}, got {v}"));
        }
    }
    if let Some(req) = schema.get("required").and_then(Value::as_array) {
        for key in req.iter().filter_map(Value::as_str) {
            if v.get(key).is_none() {
                return Err(format!("{at}: missing {key}"));
            }
        }
    }
    if let (Some(props), Some(obj)) = (schema.get("properties").and_then(Value::as_object), v.as_object()) {
        for (key, sub) in props {
            if let Some(x) = obj.get(key) {
                conforms(x, sub, &format!("{at}.{key}"))?;
            }
        }
        if schema.get("additionalProperties") == Some(&Value::Bool(false)) {
            if let Some(extra) = obj.keys().find(|k| !props.contains_key(*k)) {
                return Err(format!("{at}: unexpected {extra}"));
            }
        }
    }
    if let (Some(items), Some(arr)) = (schema.get("items"), v.as_array()) {
        for (i, x) in arr.iter().enumerate() {
            conforms(x, items, &format!("{at}[{i}]"))?;
        }
    }
    Ok(())
}

fn check_schema(name: &str, args: &[&str]) {
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(data("schema").join(name)).unwrap()).unwrap();
    let out: Value = serde_json::from_str(&stdout_ok(args)).unwrap();
    conforms(&out, &schema, "$").unwrap_or_else(|e| panic!("{name}: {e}"));
}

#[test]
fn json_outputs_match_schemas() {
    check_schema("run_summary.schema.json", &["--format", "json", "run", "--workload", "data/workloads/matmul_4x3x3.toml"]);
    check_schema("run_summary.schema.json", &["--format", "json", "run", "--workload", "data/workloads/table1_cnn.toml"]);
    check_schema("run_report.schema.json", &["--format", "json", "sim", "data/programs/three_hops.asm"]);
    check_schema("sweep.schema.json", &["--format", "json", "sweep", "--vary", "p", "--lo", "2", "--hi", "64"]);
    check_schema("throughput.schema.json", &["--format", "json", "throughput"]);
    check_schema("report.schema.json", &["--format", "json", "report", "--span-sitems", "64"]);
}
