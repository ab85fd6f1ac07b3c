use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const MERTON: &str = r#"{"dynamics":{"family":"proportional_control","mu":[0.1],"sigma":[0.2]},
 "controls":{"bound":10.0,"boxes":[]},"domain":{"lo":[0.0],"hi":[null]},"horizon":1.0,
 "payoff":{"kind":"power","exponent":0.5,"scale":1.0},"gauge":{"kind":"one_plus_norm","power":1.0},
 "growth_constant":1.0,"constraint":{"kind":"concavity"}}"#;

fn ctrlcert(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctrlcert")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn oracle_prints_full_precision_value() {
    let dir = tempfile::tempdir().unwrap();
    let o = ctrlcert(&["--out-dir", p(dir.path()), "oracle", "--family", "merton", "--params", "mu=0.1,sigma=0.2,p=0.5,T=1,B=10", "--eval", "0,1"]);
    assert_eq!(o.status.code(), Some(0));
    // u* = μ/((1−p)σ²) = 5 ≤ B, so Λ = pμ²/(2(1−p)σ²) = 0.125 and V(0,1) = e^Λ.
    let v: f64 = stdout(&o).trim().parse().unwrap();
    assert!((v - 0.125f64.exp()).abs() < 1e-14, "{v}");
    let m = manifest(dir.path());
    assert_eq!(m["status"], "ok");
    assert_eq!(m["exit_code"], 0);
    assert_eq!(m["subcommand"], "oracle");
}

#[test]
fn usage_and_input_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(ctrlcert(&["oracle", "--family", "nope"]).status.code(), Some(2));
    assert_eq!(ctrlcert(&[]).status.code(), Some(2));
    let missing = dir.path().join("missing.json");
    let o = ctrlcert(&["--out-dir", p(dir.path()), "facelift", "--problem", p(&missing), "--grid", p(&missing)]);
    assert_eq!(o.status.code(), Some(2));
    let m = manifest(dir.path());
    assert_eq!(m["status"], "failed");
    assert_eq!(m["failed_stage"], "load");
    // x ≤ 0 lies outside the Merton domain
    let o = ctrlcert(&["--out-dir", p(dir.path()), "oracle", "--family", "merton", "--params", "mu=0.1,sigma=0.2,p=0.5,B=10", "--eval", "0,-1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn facelift_of_concave_payoff_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("problem.json"), MERTON).unwrap();
    fs::write(dir.path().join("grid.json"), r#"{"axes":[{"lo":0.2,"hi":5.0,"nodes":81,"spacing":"geometric"}]}"#).unwrap();
    let out = dir.path().join("out");
    let o = ctrlcert(&[
        "--out-dir",
        p(&out),
        "facelift",
        "--problem",
        p(&dir.path().join("problem.json")),
        "--grid",
        p(&dir.path().join("grid.json")),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rows = csv::Reader::from_path(out.join("facelift.csv")).unwrap();
    let mut n = 0;
    for r in rows.records() {
        let r = r.unwrap();
        let x: f64 = r[0].parse().unwrap();
        let v: f64 = r[1].parse().unwrap();
        assert!((v - x.sqrt()).abs() < 1e-12, "{x}: {v}");
        n += 1;
    }
    assert_eq!(n, 81);
    assert_eq!(manifest(&out)["inputs"].as_array().unwrap().len(), 2);
}

#[test]
fn inflated_sub_candidate_fails_with_exit_4_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("problem.json"), MERTON).unwrap();
    fs::write(
        dir.path().join("cand.json"),
        r#"{"kind":"closed_form","family":"merton",
            "params":{"mu":0.1,"sigma":0.2,"p":0.5,"horizon":1.0,"bound":10.0},"delta":0.05}"#,
    )
    .unwrap();
    let run = |out: &Path, extra: &[&str]| {
        let mut args = vec!["--seed", "11", "--out-dir", p(out)];
        args.extend_from_slice(extra);
        ctrlcert(&args)
    };
    let out = dir.path().join("a");
    let (problem, cand) = (dir.path().join("problem.json"), dir.path().join("cand.json"));
    let args = [
        "certify",
        "--problem",
        p(&problem),
        "--candidate",
        p(&cand),
        "--kind",
        "sub",
        "--test-box",
        "0.5:2",
        "--budget",
        "100000",
    ];
    let o = run(&out, &args);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("FAILED"));
    let m = manifest(&out);
    assert_eq!(m["status"], "certification failed");
    let report = fs::read(out.join("report.json")).unwrap();

    let replay = dir.path().join("b");
    let o = ctrlcert(&["--out-dir", p(&replay), "--manifest", p(&out.join("manifest.json"))]);
    assert_eq!(o.status.code(), Some(4));
    assert_eq!(fs::read(replay.join("report.json")).unwrap(), report);
    assert_eq!(manifest(&replay)["seed"], 11);

    // a changed input refuses to replay
    fs::write(dir.path().join("cand.json"), r#"{"kind":"constant","value":0.0}"#).unwrap();
    let o = ctrlcert(&["--out-dir", p(&dir.path().join("c")), "--manifest", p(&out.join("manifest.json"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_is_deterministic_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("problem.json"), MERTON).unwrap();
    fs::write(dir.path().join("policy.json"), r#"{"kind":"constant","u":[5.0]}"#).unwrap();
    let mut hashes = Vec::new();
    for (i, threads) in ["1", "3"].iter().enumerate() {
        let out = dir.path().join(format!("o{i}"));
        let o = ctrlcert(&[
            "--seed",
            "5",
            "--threads",
            threads,
            "--out-dir",
            p(&out),
            "simulate",
            "--problem",
            p(&dir.path().join("problem.json")),
            "--policy",
            p(&dir.path().join("policy.json")),
            "--x0",
            "1",
            "--paths",
            "20000",
            "--steps",
            "32",
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let s: Value = serde_json::from_str(&fs::read_to_string(out.join("ensemble-summary.json")).unwrap()).unwrap();
        // constant u = u* is optimal: E[√X_T] = e^Λ
        let est = &s["estimate"];
        let (mean, hw) = (est["mean"].as_f64().unwrap(), est["half_width_95"].as_f64().unwrap());
        assert!((mean - 0.125f64.exp()).abs() < 2.0 * hw, "{mean} ± {hw}");
        hashes.push(s["terminal_sha256"].as_str().unwrap().to_string());
    }
    assert_eq!(hashes[0], hashes[1]);
}
