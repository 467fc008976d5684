//! End-to-end runs of the `mpsynth` binary on small inputs.

use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const SCHEMA: &str = r#"
[[attribute]]
name = "age"
kind = "bucket"
buckets = 3
min = 18
max = 78

[[attribute]]
name = "smoker"
kind = "categorical"
categories = ["no", "yes"]

[[attribute]]
name = "visits"
kind = "integer"
min = 0
max = 2

[[attribute]]
name = "label"
kind = "identity"
domain_size = 2
"#;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mpsynth")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_fixture(dir: &Path) {
    let mut csv = String::from("age,smoker,visits,label\n");
    for i in 0..120u32 {
        let age = 18 + (i * 7) % 60;
        let smoker = if i % 3 == 0 { "yes" } else { "no" };
        let visits = i % 3;
        let label = u32::from(age > 45 || smoker == "yes");
        csv.push_str(&format!("{age},{smoker},{visits},{label}\n"));
    }
    std::fs::write(dir.join("data.csv"), csv).unwrap();
    std::fs::write(dir.join("schema.toml"), SCHEMA).unwrap();
}

fn p(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_str().unwrap().to_owned()
}

#[test]
fn synth_train_eval_round_trip() {
    let dir = TempDir::new().unwrap();
    write_fixture(dir.path());
    let (data, schema) = (p(&dir, "data.csv"), p(&dir, "schema.toml"));
    ok(&[
        "synth", "--data", &data, "--schema", &schema, "--epsilon", "1", "--seed", "3",
        "--out", &p(&dir, "synth.csv"), "--report", &p(&dir, "report.json"),
        "--save-marginals", &p(&dir, "marginals"),
    ]);
    let synth = std::fs::read_to_string(p(&dir, "synth.csv")).unwrap();
    assert_eq!(synth.lines().count(), 121);
    assert!(synth.starts_with("age,smoker,visits,label"));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p(&dir, "report.json")).unwrap()).unwrap();
    assert!(report["sigma"].as_f64().unwrap() > 0.0);
    assert_eq!(report["seed"], 3);
    assert!(dir.path().join("marginals/marginals.csv").exists());
    assert!(dir.path().join("marginals/manifest.json").exists());

    // regeneration from the saved marginals touches no real data
    ok(&[
        "synth", "--from-marginals", &p(&dir, "marginals"), "--n", "40", "--mode", "brute",
        "--out", &p(&dir, "regen.csv"),
    ]);
    assert_eq!(std::fs::read_to_string(p(&dir, "regen.csv")).unwrap().lines().count(), 41);

    ok(&["train", "--data", &data, "--schema", &schema, "--tau", "1", "--out", &p(&dir, "real.json")]);
    let synth_schema = p(&dir, "synth_schema.toml");
    std::fs::write(
        &synth_schema,
        "[[attribute]]\nname = \"age\"\nkind = \"identity\"\ndomain_size = 3\n\
         [[attribute]]\nname = \"smoker\"\nkind = \"identity\"\ndomain_size = 2\n\
         [[attribute]]\nname = \"visits\"\nkind = \"identity\"\ndomain_size = 3\n\
         [[attribute]]\nname = \"label\"\nkind = \"identity\"\ndomain_size = 2\n",
    )
    .unwrap();
    ok(&[
        "train", "--data", &p(&dir, "synth.csv"), "--schema", &synth_schema, "--tau", "1",
        "--out", &p(&dir, "synth_model.json"),
    ]);
    let metrics = ok(&[
        "eval", "--model", &p(&dir, "synth_model.json"), "--data", &data, "--schema", &schema,
        "--reference", &p(&dir, "real.json"),
    ]);
    let metrics: serde_json::Value = serde_json::from_str(&metrics).unwrap();
    let acc = metrics["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert!(metrics["excess_empirical_risk"].as_f64().unwrap() >= -1e-9);
}

#[test]
fn dpsgd_writes_a_model() {
    let dir = TempDir::new().unwrap();
    write_fixture(dir.path());
    ok(&[
        "dpsgd", "--data", &p(&dir, "data.csv"), "--schema", &p(&dir, "schema.toml"),
        "--iterations", "20", "--batch-size", "8", "--out", &p(&dir, "dp.json"),
    ]);
    let model: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p(&dir, "dp.json")).unwrap()).unwrap();
    assert_eq!(model["w"].as_array().unwrap().len(), 3);
}

#[test]
fn approx_prints_iterated_table() {
    let out = ok(&["approx", "--methods", "iterated", "--iters", "1,4,9"]);
    let rows: Vec<&str> = out.lines().collect();
    assert!(rows[0].starts_with("method,iterations,degree,max_abs_error"));
    assert_eq!(rows.len(), 4);
    let err: f64 = rows[1].split(',').nth(3).unwrap().parse().unwrap();
    assert!((err - 0.545).abs() < 0.01);
}

#[test]
fn bound_reads_params() {
    let dir = TempDir::new().unwrap();
    std::fs::write(p(&dir, "b.toml"), "n = 10000\nm = 4\nd = 3\ntau = 0.5\nnu = 10\n").unwrap();
    let report: serde_json::Value =
        serde_json::from_str(&ok(&["bound", "--params", &p(&dir, "b.toml"), "--theorem", "logistic"])).unwrap();
    assert!((report["total"].as_f64().unwrap() - 1.9876263880012642).abs() < 1e-12);
    let sched = ok(&["bound", "--lower-bound-m", "8"]);
    assert!(sched.contains("0.435275281648062"));
}

#[test]
fn pipeline_writes_tables() {
    let dir = TempDir::new().unwrap();
    std::fs::write(
        p(&dir, "exp.toml"),
        "epsilons = [0.5, 1.0]\nrepeats = 2\nd = 2\nseed = 1\n\
         [data.simulate]\ndomains = [2, 3]\nn = 200\nweights = [1.0, -0.5]\nseed = 1\n",
    )
    .unwrap();
    ok(&["pipeline", "--config", &p(&dir, "exp.toml"), "--out", &p(&dir, "out")]);
    let runs = std::fs::read_to_string(p(&dir, "out/runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 5);
    let agg = std::fs::read_to_string(p(&dir, "out/aggregates.csv")).unwrap();
    assert_eq!(agg.lines().count(), 3);
    assert!(dir.path().join("out/reports/run_eps0.5_rep1.json").exists());
}

#[test]
fn bad_input_exits_with_code_2() {
    let dir = TempDir::new().unwrap();
    write_fixture(dir.path());
    std::fs::write(p(&dir, "bad.csv"), "age,smoker,visits,label\n30,maybe,1,0\n").unwrap();
    let out = run(&["train", "--data", &p(&dir, "bad.csv"), "--schema", &p(&dir, "schema.toml"), "--out", &p(&dir, "m.json")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());

    let out = run(&["synth", "--data", &p(&dir, "data.csv"), "--schema", &p(&dir, "schema.toml"), "--epsilon", "4", "--out", &p(&dir, "s.csv")]);
    assert_eq!(out.status.code(), Some(2));
}
