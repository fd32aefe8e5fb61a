use std::path::Path;
use std::process::{Command, Output};

fn dpsrgd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpsrgd")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn calibrate_reports_infeasibility_with_exit_2() {
    let base = [
        "calibrate",
        "--n",
        "1000",
        "--iterations",
        "100",
        "--batch",
        "50",
        "--zeta",
        "0.1",
    ];
    let out = dpsrgd(&base);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("alpha bound"));
    let out = dpsrgd(&[&base[..], &["--allow-uncertified"]].concat());
    assert_eq!(code(&out), 0);
    let plan: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(plan["iterations"], 100);

    let ok = dpsrgd(&[
        "calibrate",
        "--n",
        "10000",
        "--batch",
        "100",
        "--epoch-len",
        "100",
        "--iterations",
        "10000",
        "--zeta",
        "0.1",
        "--clip",
        "1",
        "--epsilon",
        "10",
        "--delta",
        "1e-3",
    ]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stderr));
}

#[test]
fn usage_and_numeric_errors() {
    assert_eq!(code(&dpsrgd(&["frobnicate"])), 3);
    assert_eq!(code(&dpsrgd(&["account", "--sensitivity", "x", "--sigma-sq", "1"])), 3);
    assert_eq!(code(&dpsrgd(&["--help"])), 0);
    assert_eq!(code(&dpsrgd(&["account", "--sensitivity", "1", "--sigma-sq", "0"])), 4);
    assert_eq!(
        code(&dpsrgd(&[
            "calibrate",
            "--n",
            "10",
            "--iterations",
            "5",
            "--batch",
            "20",
            "--zeta",
            "1"
        ])),
        4
    );
}

#[test]
fn account_matches_closed_form() {
    let out = dpsrgd(&[
        "account",
        "--sensitivity",
        "1",
        "--sigma-sq",
        "4",
        "--steps",
        "10",
        "--alpha",
        "3",
    ]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let rho = 10.0 * 3.0 / 8.0;
    assert!((v["rho_total"].as_f64().unwrap() - rho).abs() < 1e-12);
    let eps = rho + (1e5f64).ln() / 2.0;
    assert!((v["epsilon"].as_f64().unwrap() - eps).abs() < 1e-9);
}

#[test]
fn gen_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.txt");
    let test = dir.path().join("test.txt");
    let run = dir.path().join("run");
    assert_eq!(
        code(&dpsrgd(&[
            "gen-data",
            "--n",
            "400",
            "--dim",
            "4",
            "--seed",
            "1",
            "--out",
            path(&train)
        ])),
        0
    );
    assert_eq!(
        code(&dpsrgd(&[
            "gen-data",
            "--n",
            "200",
            "--dim",
            "4",
            "--seed",
            "1",
            "--out",
            path(&test)
        ])),
        0
    );

    let out = dpsrgd(&[
        "train-dist",
        "--parties",
        "4",
        "--dataset",
        path(&train),
        "--test-dataset",
        path(&test),
        "--epsilon",
        "2",
        "--seeds",
        "0,1",
        "--allow-uncertified",
        "--out",
        path(&run),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run.join("trace_seed0.csv").exists() && run.join("trace_seed1.csv").exists());

    let summary = run.join("summary.json");
    let out = dpsrgd(&[
        "eval",
        "--theta",
        path(&summary),
        "--seed",
        "1",
        "--dataset",
        path(&test),
    ]);
    assert_eq!(code(&out), 0);
    let err: f64 = String::from_utf8_lossy(&out.stdout).trim().parse().unwrap();
    let stored: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&summary).unwrap()).unwrap();
    let recorded = stored["per_seed"][1]["test_error"].as_f64().unwrap();
    assert_eq!(err, recorded);

    // Without the opt-in the theoretical plan is refused.
    let refused = dpsrgd(&["train", "--dataset", path(&train), "--epsilon", "0.5"]);
    assert_eq!(code(&refused), 2);

    std::fs::write(dir.path().join("bad.txt"), "+1 9:1\n").unwrap();
    let bad = dpsrgd(&[
        "eval",
        "--theta",
        path(&summary),
        "--seed",
        "0",
        "--dataset",
        path(&dir.path().join("bad.txt")),
    ]);
    assert_eq!(code(&bad), 3);
}
