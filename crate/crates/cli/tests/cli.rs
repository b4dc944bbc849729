use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pemrisk"));
    c.env_remove("PEMRISK_OUT_DIR");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn schema_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas")
}

/// Checks the subset of JSON Schema used by the bundled schema files.
fn validate(value: &Value, schema: &Value, at: &str) -> Result<(), String> {
    if let Some(r) = schema.get("$ref").and_then(Value::as_str) {
        return validate(value, &read_json(&schema_dir().join(r)), at);
    }
    if let Some(t) = schema.get("type") {
        let allowed: Vec<&str> = match t {
            Value::String(s) => vec![s.as_str()],
            Value::Array(a) => a.iter().filter_map(Value::as_str).collect(),
            _ => return Err(format!("{at}: bad type keyword")),
        };
        let ok = allowed.iter().any(|t| match *t {
            "object" => value.is_object(),
            "array" => value.is_array(),
            "string" => value.is_string(),
            "boolean" => value.is_boolean(),
            "null" => value.is_null(),
            "number" => value.is_number(),
            "integer" => value.is_u64() || value.is_i64(),
            _ => false,
        });
        if !ok {
            return Err(format!("{at}: {value} is not of type {allowed:?}"));
        }
    }
    if let Some(options) = schema.get("enum").and_then(Value::as_array) {
        if !options.contains(value) {
            return Err(format!("{at}: {value} not in {options:?}"));
        }
    }
    if let Some(x) = value.as_f64() {
        if schema.get("minimum").and_then(Value::as_f64).is_some_and(|m| x < m) {
            return Err(format!("{at}: {x} below minimum"));
        }
        if schema.get("maximum").and_then(Value::as_f64).is_some_and(|m| x > m) {
            return Err(format!("{at}: {x} above maximum"));
        }
    }
    if let Some(obj) = value.as_object() {
        for key in schema.get("required").and_then(Value::as_array).into_iter().flatten() {
            let key = key.as_str().unwrap();
            if !obj.contains_key(key) {
                return Err(format!("{at}: missing `{key}`"));
            }
        }
        let props = schema.get("properties").and_then(Value::as_object);
        for (k, v) in obj {
            match props.and_then(|p| p.get(k)) {
                Some(s) => validate(v, s, &format!("{at}.{k}"))?,
                None if schema.get("additionalProperties") == Some(&Value::Bool(false)) => {
                    return Err(format!("{at}: unexpected `{k}`"));
                }
                None => {}
            }
        }
    }
    if let (Some(items), Some(arr)) = (schema.get("items"), value.as_array()) {
        for (i, v) in arr.iter().enumerate() {
            validate(v, items, &format!("{at}[{i}]"))?;
        }
    }
    Ok(())
}

fn assert_schema(path: &Path, schema: &str) {
    let s = read_json(&schema_dir().join(schema));
    validate(&read_json(path), &s, "$").unwrap_or_else(|e| panic!("{}: {e}", path.display()));
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const SMALL: &str = r#"
[scenario]
horizon = 12
dt = 0.25
initial_gap = 11.0
lead_brake_step = 0

[cem]
samples_per_stage = 200
alpha = 0.5
"#;

#[test]
fn validator_rejects_bad_documents() {
    let s = read_json(&schema_dir().join("oracle.schema.json"));
    let good = serde_json::json!({"mu": 0.5, "log10_mu": -0.3, "n_fail_sequences": 1, "n_total": 2});
    assert!(validate(&good, &s, "$").is_ok());
    let extra = serde_json::json!({"mu": 0.5, "log10_mu": -0.3, "n_fail_sequences": 1, "n_total": 2, "x": 1});
    assert!(validate(&extra, &s, "$").is_err());
    let missing = serde_json::json!({"mu": 0.5});
    assert!(validate(&missing, &s, "$").is_err());
    let range = serde_json::json!({"mu": 1.5, "log10_mu": 0.1, "n_fail_sequences": 1, "n_total": 2});
    assert!(validate(&range, &s, "$").is_err());
}

#[test]
fn trained_pem_matches_the_planted_generator() {
    let dir = TempDir::new().unwrap();
    let log = dir.path().join("log.jsonl");
    let model = dir.path().join("pem.json");
    let planted = dir.path().join("planted.json");
    let g = run(&["gen-synthetic-log", "--n", "20000", "--seed", "3", "--out", log.to_str().unwrap(), "--model-out", planted.to_str().unwrap()]);
    assert!(g.status.success(), "{}", stderr(&g));
    let t = run(&["train-pem", "--log", log.to_str().unwrap(), "--out", model.to_str().unwrap(), "--epochs", "150", "--lr", "3e-3"]);
    assert!(t.status.success(), "{}", stderr(&t));
    let report_path = dir.path().join("pem.json.calibration.json");
    assert_schema(&report_path, "calibration.schema.json");
    let report = read_json(&report_path);

    // Oracle: the planted generator scored on the same held-out folds.
    let data = pemrisk::pem::read_detection_log(std::io::BufReader::new(std::fs::File::open(&log).unwrap())).unwrap();
    let gen = pemrisk::pem::PemModel::load(std::fs::File::open(&planted).unwrap()).unwrap();
    let folds = pemrisk::pem::fold_assignment(data.len(), 5, 0).unwrap();
    let oracle_auc = folds
        .iter()
        .map(|idx| {
            let s: Vec<f64> = idx.iter().map(|&i| gen.eval(data[i].salient.as_slice()).unwrap()).collect();
            let l: Vec<bool> = idx.iter().map(|&i| data[i].detected).collect();
            pemrisk::pem::roc_auc(&s, &l).unwrap()
        })
        .sum::<f64>()
        / 5.0;
    let auc = report["calibration"]["roc_auc"].as_f64().unwrap();
    assert!((auc - oracle_auc).abs() <= 0.02, "auc {auc} vs planted {oracle_auc}");
    assert!(pemrisk::pem::PemModel::load(std::fs::File::open(&model).unwrap()).is_ok());
}

#[test]
fn bad_logs_are_input_errors() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("m.json");
    let empty = write(dir.path(), "empty.jsonl", "");
    let o = run(&["train-pem", "--log", empty.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let good = r#"{"category":"car","occlusion":"none","loc":[0,0,10],"rot_y":0,"detected":true}"#;
    let bad = r#"{"category":"bus","occlusion":"none","loc":[0,0,10],"rot_y":0,"detected":true}"#;
    let log = write(dir.path(), "bad.jsonl", &format!("{good}\n{good}\n{bad}\n"));
    let o = run(&["train-pem", "--log", log.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn monte_carlo_sees_no_failures_with_a_near_perfect_pem() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "mc.toml", "[pem]\nkind = \"constant\"\np = 1.0\n");
    let out = dir.path().join("out");
    let o = run(&["estimate", "--config", cfg.to_str().unwrap(), "--method", "mc", "--seed", "0", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let path = out.join("report_mc_seed0.json");
    assert_schema(&path, "report.schema.json");
    let r = read_json(&path);
    assert_eq!(r["mu_hat"], 0.0);
    assert_eq!(r["n_fail"], 0);
    assert_eq!(r["n_total"], 10_000);
    assert_schema(&out.join("aggregate_mc.json"), "aggregate.schema.json");
}

#[test]
fn adaptive_run_agrees_with_the_oracle_and_beats_naive_sampling() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("out");
    let args = |method: &'static str, out: &Path| {
        vec![
            "estimate".to_string(),
            "--config".into(),
            cfg.to_str().unwrap().into(),
            "--method".into(),
            method.into(),
            "--seed".into(),
            "0".into(),
            "--out".into(),
            out.to_str().unwrap().into(),
            "--oracle".into(),
        ]
    };
    let o = bin().args(args("adaptive", &out)).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let o = bin().args(args("naive-flat", &out)).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));

    assert_schema(&out.join("report_adaptive_seed0.json"), "report.schema.json");
    assert_schema(&out.join("aggregate_adaptive.json"), "aggregate.schema.json");
    assert_schema(&out.join("oracle.json"), "oracle.schema.json");
    let diag_schema = read_json(&schema_dir().join("diagnostics.schema.json"));
    let diagnostics = std::fs::read_to_string(out.join("diagnostics_seed0.jsonl")).unwrap();
    assert!(diagnostics.lines().count() >= 1);
    for line in diagnostics.lines() {
        validate(&serde_json::from_str(line).unwrap(), &diag_schema, "$").unwrap();
    }
    let curve = std::fs::read_to_string(out.join("proposal_curve_seed0.csv")).unwrap();
    assert!(curve.starts_with("gap_m,proposal_p,pem_p\n"));

    let oracle = read_json(&out.join("oracle.json"))["mu"].as_f64().unwrap();
    let adaptive = read_json(&out.join("report_adaptive_seed0.json"));
    let ratio = adaptive["mu_hat"].as_f64().unwrap() / oracle;
    assert!((1.0 / 3.0..=3.0).contains(&ratio), "ratio {ratio}");

    let naive = read_json(&out.join("report_naive-flat_seed0.json"));
    assert!(naive["failure_fraction"].as_f64().unwrap() >= 0.3);
    let (nn, an) = (naive["mean_fail_nll"].as_f64().unwrap(), adaptive["mean_fail_nll"].as_f64().unwrap());
    assert!(nn > an + 10.0, "naive NLL {nn} vs adaptive {an}");

    // Re-running overwrites with identical bytes.
    let again = dir.path().join("again");
    let o = bin().args(args("adaptive", &again)).output().unwrap();
    assert!(o.status.success());
    for name in ["report_adaptive_seed0.json", "diagnostics_seed0.jsonl", "proposal_curve_seed0.csv", "oracle.json"] {
        assert_eq!(std::fs::read(out.join(name)).unwrap(), std::fs::read(again.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn oracle_command() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let res = dir.path().join("oracle.json");
    let start = Instant::now();
    let o = run(&["oracle", "--config", cfg.to_str().unwrap(), "--out", res.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(start.elapsed().as_secs_f64() < 10.0);
    assert_schema(&res, "oracle.schema.json");
    let mu = read_json(&res)["mu"].as_f64().unwrap();
    assert!((1e-8..=1e-6).contains(&mu));

    let long = write(dir.path(), "long.toml", "[scenario]\nhorizon = 40\n");
    let o = run(&["oracle", "--config", long.to_str().unwrap(), "--out", res.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("40"));

    let blind = write(dir.path(), "blind.toml", &format!("{SMALL}\n[pem]\nkind = \"constant\"\np = 0.0\n"));
    let o = run(&["oracle", "--config", blind.to_str().unwrap(), "--out", res.to_str().unwrap()]);
    assert!(o.status.success());
    assert!((read_json(&res)["mu"].as_f64().unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "typo.toml", "[scenario]\nhorizn = 12\n");
    let o = run(&["oracle", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("horizn"));
}

#[test]
fn output_directory_comes_from_the_environment() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "mc.toml", "[scenario]\nhorizon = 12\n[estimate]\nmc_samples = 50\n");
    let out = dir.path().join("env-out");
    let o = bin()
        .args(["estimate", "--config", cfg.to_str().unwrap(), "--method", "mc"])
        .env("PEMRISK_OUT_DIR", &out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("report_mc_seed0.json").exists());
}

fn trace_csv(values: &[f64]) -> String {
    let mut s = String::from("step,time_s,dist_m\n");
    for (i, v) in values.iter().enumerate() {
        s.push_str(&format!("{i},{},{v}\n", i as f64 * 0.05));
    }
    s
}

fn rank(dir: &Path, metric: &str) -> Vec<(String, f64)> {
    let o = run(&[
        "rank",
        "--traces",
        dir.to_str().unwrap(),
        "--formula",
        "(always 0 19 (geq dist_m 2.0))",
        "--metric",
        metric,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("file,robustness"));
    lines
        .map(|l| {
            let (f, r) = l.split_once(',').unwrap();
            (f.to_string(), r.parse().unwrap())
        })
        .collect()
}

#[test]
fn ranking_leaders_depend_on_the_metric() {
    let dir = TempDir::new().unwrap();
    let mut deep = vec![52.0; 20];
    deep[7] = 3.0;
    let mut mid = vec![52.0; 20];
    mid[5..15].iter_mut().for_each(|v| *v = 3.2);
    write(dir.path(), "deep.csv", &trace_csv(&deep));
    write(dir.path(), "shallow.csv", &trace_csv(&[5.0; 20]));
    write(dir.path(), "intermediate.csv", &trace_csv(&mid));
    write(dir.path(), "broken.csv", "not,a,trace\n");
    assert_eq!(rank(dir.path(), "classical")[0].0, "deep.csv");
    assert_eq!(rank(dir.path(), "agm")[0].0, "shallow.csv");
    let smooth = rank(dir.path(), "smooth");
    assert_eq!(smooth[0].0, "intermediate.csv");
    assert_eq!(smooth.len(), 3);
    assert!(smooth.windows(2).all(|w| w[0].1 <= w[1].1));
}

#[test]
fn ranking_edge_cases() {
    let dir = TempDir::new().unwrap();
    assert!(rank(dir.path(), "classical").is_empty());
    write(dir.path(), "only.csv", &trace_csv(&[4.0; 20]));
    let rows = rank(dir.path(), "classical");
    assert_eq!(rows, vec![("only.csv".to_string(), 2.0)]);
}
