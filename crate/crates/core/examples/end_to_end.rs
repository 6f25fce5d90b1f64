//! The whole CLI pipeline: simulate, train the toy scorer, calibrate, route, evaluate.

use comod::cli::run;

fn step(args: &[&str]) {
    println!("$ comod {}", args.join(" "));
    let code = run(std::iter::once("comod").chain(args.iter().copied()));
    assert_eq!(code, 0, "step failed");
}

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    step(&["simulate", "--out", &p("data"), "--seed", "7", "--n", "5000"]);
    step(&[
        "train-toy",
        "--annotations", &p("data/train.annotations.csv"),
        "--scores", &p("data/train.scores.csv"),
        "--reg-mode", "mse",
        "--seed", "7",
        "--out", &p("model.json"),
        "--rescore", &p("data/cal.scores.csv"),
        "--rescore-out", &p("cal.toy.csv"),
        "--rescore", &p("data/test.scores.csv"),
        "--rescore-out", &p("test.toy.csv"),
    ]);
    step(&[
        "calibrate",
        "--annotations", &p("data/cal.annotations.csv"),
        "--scores", &p("cal.toy.csv"),
        "--class-method", "cclac",
        "--reg-method", "rn",
        "--pipeline", "mtl",
        "--out", &p("state.json"),
    ]);
    step(&["route", "--state", &p("state.json"), "--scores", &p("test.toy.csv"), "--out", &p("decisions.jsonl")]);
    step(&[
        "evaluate",
        "--state", &p("state.json"),
        "--annotations", &p("data/test.annotations.csv"),
        "--scores", &p("test.toy.csv"),
        "--out", &p("report.json"),
    ]);
}
