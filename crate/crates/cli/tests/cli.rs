use std::process::Command;

fn risjrc() -> Command {
    Command::new(env!("CARGO_BIN_EXE_risjrc"))
}

#[test]
fn fig2_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fig2.csv");
    let status = risjrc()
        .args(["fig2", "--profile", "desk", "--seed", "7", "--out"])
        .arg(&out)
        .args(["--set", "run.seeds=1", "--set", "run.n_mc=5", "--set", "sweeps.n_rf=[20]", "--set", "sweeps.pilot_dbm=[30]"])
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "experiment,sweep_var,sweep_val,tag,metric_name,metric_value,unit,seed,iters,wall_ms"
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&row[..5], ["fig2", "pilot_dbm", "30", "nrf20", "max_mse"]);
    assert_eq!(row[7], "7");
    assert!(lines.next().is_none());
}

#[test]
fn sequential_flag_gives_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let status = risjrc()
            .args(["fig2", "--set", "run.seeds=1", "--set", "run.n_mc=5", "--set", "sweeps.n_rf=[10]", "--out"])
            .arg(&out)
            .args(extra)
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(out).unwrap()
    };
    assert_eq!(run("a.csv", &[]), run("b.csv", &["--sequential"]));
}

#[test]
fn bad_input_is_reported() {
    let bad_key = risjrc().args(["fig2", "--set", "run.nope=1"]).output().unwrap();
    assert_eq!(bad_key.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad_key.stderr).contains("nope"));
    let bad_strategy = risjrc().args(["fig3", "--strategy", "xyz"]).output().unwrap();
    assert!(!bad_strategy.status.success());
    let missing = risjrc().args(["fig4", "--config", "/nonexistent/cfg.json"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));
}
