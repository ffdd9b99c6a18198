use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn prbnn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prbnn"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = prbnn(dir, args);
    assert_eq!(code(&o), 0, "{args:?}\n{}", stderr(&o));
    stdout(&o)
}

fn read(dir: &Path, f: &str) -> String {
    std::fs::read_to_string(dir.join(f)).unwrap()
}

fn history(dir: &Path, f: &str) -> Vec<Value> {
    read(dir, f)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn simulate_writes_default_sim2_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let line = ok(d, &["simulate", "--out", "a"]);
    assert!(
        line.starts_with("sim2: 40 train rows, 200 test rows, 3 constraints"),
        "{line}"
    );
    ok(d, &["simulate", "--out", "b"]);
    for f in ["train.csv", "test.csv", "constraints.json"] {
        assert_eq!(
            read(d, &format!("a/{f}")),
            read(d, &format!("b/{f}")),
            "{f}"
        );
    }
    let test = read(d, "a/test.csv");
    let rows: Vec<&str> = test
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .collect();
    assert_eq!(rows.len(), 200);
    let hash = line.rsplit("config_hash=").next().unwrap().trim();
    assert!(test.starts_with(&format!("# config_hash={hash}")));
    let cons: Value = serde_json::from_str(&read(d, "a/constraints.json")).unwrap();
    assert_eq!(cons["config_hash"], hash);
    assert_eq!(cons["constraints"].as_array().unwrap().len(), 3);

    let other = ok(d, &["simulate", "--out", "c", "--seed", "1"]);
    assert_ne!(read(d, "a/train.csv"), read(d, "c/train.csv"));
    assert_eq!(
        read(d, "a/test.csv").lines().skip(1).collect::<Vec<_>>(),
        read(d, "c/test.csv").lines().skip(1).collect::<Vec<_>>()
    );
    assert!(!other.contains(hash));
}

#[test]
fn config_and_io_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("file"), "x").unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["simulate", "--set", "data.sim.train_range=[0.65,0.1]"],
        vec!["simulate", "--set", "data.sim.test_range=[1.0,0.08]"],
        vec!["simulate", "--out", "file/sub"],
        vec!["simulate", "--set", "train.epochz=3"],
        vec!["simulate", "--set", "nonsense"],
        vec!["simulate", "--config", "missing.json"],
        vec!["simulate", "--preset", "sim9"],
        vec![
            "train",
            "--set",
            "train.mode=hard",
            "--set",
            "train.backend=svgd",
        ],
        vec!["evaluate", "--out", "nothing-here"],
    ];
    for args in cases {
        let o = prbnn(d, &args);
        assert_eq!(code(&o), 2, "{args:?}: {}", stderr(&o));
        assert!(stderr(&o).starts_with("error: "), "{args:?}");
    }
    std::fs::write(d.join("bad.json"), "{\"seed\": 1, \"network\": ").unwrap();
    assert_eq!(code(&prbnn(d, &["train", "--config", "bad.json"])), 2);
}

#[test]
fn config_file_matches_preset() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for preset in ["sim1", "sim2"] {
        let cfg = root.join(format!("{preset}.json"));
        let a = ok(d, &["simulate", "--preset", preset, "--out", "p"]);
        let b = ok(
            d,
            &["simulate", "--config", cfg.to_str().unwrap(), "--out", "c"],
        );
        assert_eq!(a, b, "configs/{preset}.json drifted from the preset");
    }
}

#[test]
fn train_history_and_hard_mode_duals() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = ok(d, &["train", "--set", "train.epochs=40", "--out", "h"]);
    assert!(out.starts_with("trained 40 epochs"), "{out}");
    let h = history(d, "h/history.jsonl");
    assert_eq!(h.len(), 40);
    let ckpt: Value = serde_json::from_str(&read(d, "h/checkpoint.json")).unwrap();
    for (i, row) in h.iter().enumerate() {
        assert_eq!(row["epoch"], i + 1);
        assert_eq!(row["config_hash"], ckpt["config_hash"]);
        for k in ["s", "rho", "z", "ef"] {
            assert_eq!(row[k].as_array().unwrap().len(), 3, "{k}");
        }
    }
    assert_eq!(ckpt["dual"]["s"], h[39]["s"]);
}

#[test]
fn soft_with_zero_lambda_matches_unconstrained() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let common = ["--preset", "sim1", "--set", "train.epochs=200"];
    let mut a = vec!["train", "--out", "u", "--set", "train.mode=unconstrained"];
    a.extend(common);
    let mut b = vec![
        "train",
        "--out",
        "s",
        "--set",
        "train.mode=soft",
        "--set",
        "train.lambda=0",
    ];
    b.extend(common);
    ok(d, &a);
    ok(d, &b);
    let lu = history(d, "u/history.jsonl").last().unwrap()["loss"]
        .as_f64()
        .unwrap();
    let ls = history(d, "s/history.jsonl").last().unwrap()["loss"]
        .as_f64()
        .unwrap();
    assert!((lu - ls).abs() <= 1e-12, "{lu} vs {ls}");
}

#[test]
fn numerical_abort_exits_3_with_dump() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let o = prbnn(
        d,
        &[
            "train",
            "--preset",
            "sim1",
            "--out",
            "nan",
            "--set",
            "train.learning_rate=1e300",
            "--set",
            "train.optimizer=sgd",
            "--set",
            "train.epochs=20",
        ],
    );
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let err = stderr(&o);
    assert!(err.contains("diagnostic dump at"), "{err}");
    assert!(err.contains("abort_dump.json"));
    let dump: Value = serde_json::from_str(&read(d, "nan/abort_dump.json")).unwrap();
    assert!(dump.is_object());
}

#[test]
fn evaluate_writes_metrics_and_predictions() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let base = [
        "--preset",
        "sim1",
        "--out",
        "e",
        "--set",
        "train.epochs=100",
    ];
    let mut t = vec!["train"];
    t.extend(base);
    ok(d, &t);
    let mut e = vec!["evaluate", "--set", "eval.raw_samples=3"];
    e.extend(base);
    let row = ok(d, &e);
    assert!(
        row.starts_with("MSE ")
            && row.contains("STD ")
            && row.contains("CRPS ")
            && row.contains(" n ["),
        "{row}"
    );
    let m: Value = serde_json::from_str(&read(d, "e/metrics.json")).unwrap();
    let keys: Vec<&str> = m.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(
        keys,
        ["config_hash", "crps", "mse", "n", "n_test", "std", "v"]
    );
    assert_eq!(m["n_test"], 200);
    let p = read(d, "e/predictions.csv");
    let mut lines = p.lines();
    assert_eq!(
        lines.next().unwrap(),
        format!("# config_hash={}", m["config_hash"].as_str().unwrap())
    );
    assert_eq!(
        lines.next().unwrap(),
        "x,mean,std,sample_0,sample_1,sample_2"
    );
    assert_eq!(lines.count(), 200);

    // a sim1 checkpoint does not fit the sim2 network
    let o = prbnn(
        d,
        &[
            "evaluate",
            "--preset",
            "sim2",
            "--out",
            "other",
            "--checkpoint",
            "e/checkpoint.json",
        ],
    );
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("different network"));
}

#[test]
fn gradcheck_passes_and_catches_corruption() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = ok(d, &["gradcheck", "--out", "g"]);
    assert!(
        out.contains("mode:hard")
            && out.contains("phi:below")
            && out.trim_end().ends_with("gradient check passed")
    );
    let o = prbnn(
        d,
        &["gradcheck", "--out", "g2", "--corrupt-gradient", "1e-3"],
    );
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("worst offender"), "{}", stderr(&o));
    let rep: Value = serde_json::from_str(&read(d, "g2/gradcheck.json")).unwrap();
    assert_eq!(rep["passed"], false);
}

#[test]
fn repro_table_order_and_thread_env() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let o = Command::new(env!("CARGO_BIN_EXE_prbnn"))
        .args([
            "repro",
            "--preset",
            "sim2",
            "--out",
            "r",
            "--set",
            "train.epochs=5",
        ])
        .env("CBNN_THREADS", "3")
        .current_dir(d)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let md = read(d, "r/repro.md");
    let labels: Vec<&str> = md
        .lines()
        .filter(|l| l.starts_with("| ") && !l.starts_with("| Method"))
        .map(|l| l[2..].split(" |").next().unwrap())
        .collect();
    assert_eq!(
        labels,
        [
            "BNN",
            "OC-BNN c=[1,1,1]",
            "OC-BNN c=[1,1,2]",
            "OC-BNN c=[1,2,1]",
            "OC-BNN c=[2,1,1]",
            "OC-BNN c=[1,1,4]",
            "OC-BNN c=[1,1,8]",
            "PR-BNN"
        ]
    );
    assert_eq!(stdout(&o), md);
    let bad = Command::new(env!("CARGO_BIN_EXE_prbnn"))
        .args(["repro", "--preset", "sim2", "--set", "train.epochs=5"])
        .env("CBNN_THREADS", "zero")
        .current_dir(d)
        .output()
        .unwrap();
    assert_eq!(code(&bad), 2);
}
