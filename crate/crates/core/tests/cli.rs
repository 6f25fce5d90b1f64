use std::fs;
use std::path::Path;
use std::process::Command;

use comod::cli::run;
use comod::metrics::MetricsReport;
use comod::platform::ingest::DatasetManifest;
use comod::platform::persist::load_calibration;
use comod::router::RoutingDecision;

fn comod(args: &[&str]) -> i32 {
    run(std::iter::once("comod").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    for (out, seed) in [(&a, "7"), (&b, "7"), (&c, "8")] {
        assert_eq!(comod(&["simulate", "--out", p(out), "--seed", seed, "--n", "300"]), 0);
    }
    let names = [
        "manifest.json",
        "train.annotations.csv",
        "train.scores.csv",
        "cal.annotations.csv",
        "cal.scores.csv",
        "test.annotations.csv",
        "test.scores.csv",
    ];
    for name in names {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    assert_ne!(fs::read(a.join("cal.scores.csv")).unwrap(), fs::read(c.join("cal.scores.csv")).unwrap());

    let m: DatasetManifest = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!((m.n, m.seed, m.rng_algorithm.as_deref()), (300, Some(7), Some("chacha8")));
    m.verify(&a).unwrap();
    fs::write(a.join("cal.scores.csv"), "id,p_toxic,d_hat\n").unwrap();
    assert!(m.verify(&a).is_err());
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    assert_eq!(comod(&["simulate", "--out", p(&data), "--seed", "3", "--n", "3000"]), 0);
    let ann = |s: &str| data.join(format!("{s}.annotations.csv"));
    let sco = |s: &str| data.join(format!("{s}.scores.csv"));

    let manifest = d.join("ingest.json");
    let code = comod(&[
        "ingest", "--annotations", p(&ann("cal")), "--scores", p(&sco("cal")), "--out", p(&manifest),
    ]);
    assert_eq!(code, 0);
    let m: DatasetManifest = serde_json::from_slice(&fs::read(&manifest).unwrap()).unwrap();
    assert_eq!(m.n, 600);
    assert_eq!(m.files.len(), 2);

    let state = d.join("state.json");
    let code = comod(&[
        "calibrate", "--annotations", p(&ann("cal")), "--scores", p(&sco("cal")),
        "--class-method", "lac", "--reg-method", "rn", "--alpha", "0.1", "--out", p(&state),
    ]);
    assert_eq!(code, 0);
    let s = load_calibration(&state).unwrap();
    assert_eq!(s.policy.alpha, 0.1);

    let decisions = d.join("decisions.jsonl");
    assert_eq!(comod(&["route", "--state", p(&state), "--scores", p(&sco("test")), "--out", p(&decisions)]), 0);
    let text = fs::read_to_string(&decisions).unwrap();
    let routed: Vec<RoutingDecision> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(routed.len(), 600);
    assert!(routed.iter().all(|r| r.interval.is_some()));

    let report = d.join("report.json");
    let code = comod(&[
        "evaluate", "--state", p(&state), "--annotations", p(&ann("test")), "--scores", p(&sco("test")),
        "--out", p(&report),
    ]);
    assert_eq!(code, 0);
    let r: MetricsReport = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    let cov = r.marginal_coverage.value.unwrap();
    assert!((0.85..0.95).contains(&cov), "coverage {cov}");
    assert_eq!(r.n, 600);
}

#[test]
fn toy_scorer_trains_and_rescores() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    assert_eq!(comod(&["simulate", "--out", p(&data), "--seed", "5", "--n", "1000"]), 0);
    let model = d.join("model.json");
    let rescored = d.join("cal.rescored.csv");
    let code = comod(&[
        "train-toy",
        "--annotations", p(&data.join("train.annotations.csv")),
        "--scores", p(&data.join("train.scores.csv")),
        "--reg-mode", "rac", "--epochs", "50", "--seed", "1",
        "--out", p(&model),
        "--rescore", p(&data.join("cal.scores.csv")),
        "--rescore-out", p(&rescored),
    ]);
    assert_eq!(code, 0);
    let state = d.join("state.json");
    let code = comod(&[
        "calibrate", "--annotations", p(&data.join("cal.annotations.csv")), "--scores", p(&rescored),
        "--reg-method", "r2ccp", "--class-method", "cclac", "--out", p(&state),
    ]);
    assert_eq!(code, 0);
}

#[test]
fn bad_invocations_fail() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    assert_ne!(comod(&["simulate", "--bogus"]), 0);
    assert_ne!(comod(&["calibrate", "--annotations", p(&missing), "--scores", p(&missing), "--out", "x"]), 0);
    assert_ne!(comod(&["route", "--state", p(&missing)]), 0);
    assert_ne!(comod(&["simulate", "--out", p(dir.path()), "--split", "0.5,0.5"]), 0);

    let out = Command::new(env!("CARGO_BIN_EXE_comod")).arg("frobnicate").output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("frobnicate"));
    let out = Command::new(env!("CARGO_BIN_EXE_comod"))
        .args(["route", "--state", p(&missing), "--scores", p(&missing), "--out", "x"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}
