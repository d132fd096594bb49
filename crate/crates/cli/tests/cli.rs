use std::process::{Command, Output};

fn lcc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lccbound")).args(args).env_remove("LCCBOUND_BUDGET").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn design_passes() {
    let o = lcc(&["design", "--t", "2"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("\"blocks\": 20"));
}

#[test]
fn chain_count() {
    let o = lcc(&["chains", "--t", "2", "--r", "1", "--count"]);
    assert_eq!(stdout(&o).trim(), "30");
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.toml");
    std::fs::write(&p, "t = 2\nr = 3\nell = 2\nseed = 1\n").unwrap();
    let o = lcc(&["pipeline", "--config", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_decoder_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.toml");
    std::fs::write(&p, "ell = 1\nr = 0\nseed = 1\n").unwrap();
    let o = lcc(&["pipeline", "--config", p.to_str().unwrap(), "--decoder", "/nonexistent.json", "--code", "/nonexistent.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("No such file"));
}

#[test]
fn budget_exits_3() {
    let o = Command::new(env!("CARGO_BIN_EXE_lccbound"))
        .args(["chains", "--t", "2", "--r", "3"])
        .env("LCCBOUND_BUDGET", "5")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn nonsmooth_exits_1() {
    let o = lcc(&["decoder", "--toy", "parity4", "--delta", "1/3"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn xor_oracle_refute_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("phi1.jsonl");
    let o = lcc(&["xor", "--toy", "parity4", "--kind", "phi_1", "--r", "0", "--b=1,-1,1", "--out", inst.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let p = inst.to_str().unwrap();
    let o = lcc(&["oracle", "val", "--instance", p, "--k", "3", "--r", "0", "--nvars", "16"]);
    let val: f64 = stdout(&o).trim().parse().unwrap();
    let o = lcc(&["refute", "graph-tail", "--instance", p, "--k", "3", "--r", "0", "--nvars", "16", "--ell", "2", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let cert: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(cert["val_bound"].as_f64().unwrap() >= val);
}

#[test]
fn pipeline_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "t = 2\nr = 1\nell = 2\nseed = 9\n").unwrap();
    let out = dir.path().join("run");
    let o = lcc(&["pipeline", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    for f in ["report.json", "design.json", "chains.txt", "moments.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let o = lcc(&["report", out.join("report.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("design PASS"));
}

#[test]
fn nonlinear_pipeline_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let toy = lccbound::decoder::toy_parity4();
    let dp = dir.path().join("dec.json");
    let cp = dir.path().join("code.json");
    std::fs::write(&dp, toy.decoder.to_json()).unwrap();
    std::fs::write(&cp, toy.code.to_json()).unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "ell = 2\nr = 0\nd = 16\nhyper_tail = true\nseed = 4\n").unwrap();
    let args = ["pipeline", "--config", cfg.to_str().unwrap(), "--decoder", dp.to_str().unwrap(), "--code", cp.to_str().unwrap()];
    let a = lcc(&args);
    assert_eq!(a.status.code(), Some(0), "{}", stdout(&a));
    assert_eq!(stdout(&a), stdout(&lcc(&args)));
}
