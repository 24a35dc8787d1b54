use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cegarette"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write_v1(dir: &Path, threshold: f64) -> (String, String) {
    let net = dir.join("net.json");
    let prop = dir.join("prop.json");
    fs::write(
        &net,
        r#"{"input_size":1,"layers":[
            {"weights":[[10.0],[1.0]],"biases":[0,0],"activation":"relu"},
            {"weights":[[3.0,4.0]],"biases":[0],"activation":"none"}]}"#,
    )
    .unwrap();
    fs::write(
        &prop,
        format!(r#"{{"input_lower":[20],"input_upper":[21],"output_threshold":{threshold}}}"#),
    )
    .unwrap();
    (net.to_string_lossy().into(), prop.to_string_lossy().into())
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

#[test]
fn verify_running_example() {
    let dir = tempfile::tempdir().unwrap();
    let (net, prop) = write_v1(dir.path(), 800.0);
    for (mode, refinements) in [("direct", 0), ("cegarette", 0)] {
        let out = run(&["verify", "--net", &net, "--prop", &prop, "--mode", mode]);
        assert_eq!(out.status.code(), Some(0));
        let v = json(&out);
        assert_eq!(v["status"], "UNSAT");
        assert_eq!(v["run"]["refinement_steps"], refinements);
    }
    let out = run(&["verify", "--net", &net, "--prop", &prop, "--mode", "cegar"]);
    let v = json(&out);
    assert_eq!(v["status"], "UNSAT");
    assert!(v["run"]["refinement_steps"].as_u64().unwrap() >= 1);
}

#[test]
fn verify_sat_writes_witness_file() {
    let dir = tempfile::tempdir().unwrap();
    let (net, prop) = write_v1(dir.path(), 700.0);
    let out_path = dir.path().join("r.json");
    let out = run(&[
        "verify",
        "--net",
        &net,
        "--prop",
        &prop,
        "--out",
        out_path.to_str().unwrap(),
        "--dump-bounds",
        "--dump-groups",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_path).unwrap()).unwrap();
    assert_eq!(v["status"], "SAT");
    assert!(v["witness_output"].as_f64().unwrap() > 700.0);
    assert_eq!(v["bounds"]["ibp"]["post"][1][0]["hi"], 714.0);
    assert!(v["groups"].is_array());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (net, prop) = write_v1(dir.path(), 800.0);
    assert_eq!(run(&["verify", "--net", &net]).status.code(), Some(1));
    assert_eq!(
        run(&["verify", "--net", &net, "--prop", "/nonexistent.json"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        run(&["verify", "--net", &net, "--prop", &prop, "--mode", "fast"])
            .status
            .code(),
        Some(1)
    );
    fs::write(dir.path().join("bad.json"), "{ not json").unwrap();
    let bad = dir.path().join("bad.json");
    let out = run(&["verify", "--net", bad.to_str().unwrap(), "--prop", &prop]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.json"));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn gen_is_deterministic_and_bench_counts() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        let out = run(&[
            "gen",
            "--seed",
            "42",
            "--count",
            "12",
            "--out",
            d.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0));
    }
    let mut files: Vec<_> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    files.sort();
    assert_eq!(files.len(), 25);
    for f in &files {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
    }

    let csv = dir.path().join("runs.csv");
    let out = run(&[
        "bench",
        "--suite",
        a.to_str().unwrap(),
        "--modes",
        "direct,cegar,cegarette",
        "--timeout",
        "30",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("query_id,mode,verdict,refinements,iterations,time_ms,timeout")
    );
    assert_eq!(lines.count(), 36);
    let summary = fs::read_to_string(dir.path().join("runs.summary.csv")).unwrap();
    for row in summary.lines().skip(1) {
        let cols: Vec<&str> = row.split(',').collect();
        let timeout: usize = cols[1].parse().unwrap();
        let finished: usize = cols[2].parse().unwrap();
        assert_eq!(timeout + finished, 12, "{row}");
    }
    assert!(dir.path().join("runs.json").exists());
}

#[test]
fn bench_empty_suite() {
    let dir = tempfile::tempdir().unwrap();
    let suite = dir.path().join("s");
    fs::create_dir(&suite).unwrap();
    fs::write(
        suite.join("manifest.json"),
        r#"{"seed":0,"kind":"oracle","queries":[]}"#,
    )
    .unwrap();
    let csv = dir.path().join("r.csv");
    let out = run(&[
        "bench",
        "--suite",
        suite.to_str().unwrap(),
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(fs::read_to_string(csv).unwrap().lines().count(), 1);
}

#[test]
fn robustness_gen_and_preprocess_dump() {
    let dir = tempfile::tempdir().unwrap();
    let suite = dir.path().join("rob");
    let out = run(&[
        "gen",
        "--kind",
        "robustness",
        "--seed",
        "1",
        "--count",
        "3",
        "--max-width",
        "12",
        "--out",
        suite.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let (net, prop) = write_v1(dir.path(), 800.0);
    let pp = dir.path().join("pp");
    let out = run(&[
        "preprocess",
        "--net",
        &net,
        "--prop",
        &prop,
        "--out",
        pp.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let abs: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(pp.join("abstract.json")).unwrap()).unwrap();
    assert_eq!(abs["layers"][0]["weights"][0][0], 10.0);
    assert_eq!(abs["layers"][1]["weights"][0][0], 7.0);
}
