use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gpcm::io::{parse_items, parse_responses, parse_thetas, read_manifest, write_items, write_responses, write_thetas};

fn gpcm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gpcm"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = gpcm(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn error_json(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().rev().find(|l| l.starts_with('{')).expect("a JSON error line");
    serde_json::from_str(line).unwrap()
}

#[test]
fn simulate_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(&["simulate", "--condition", "skewed,500,5", "--seed", "7", "--replications", "2", "--out", path(d)]);
    }
    let (ta, tb) = (tree(&a), tree(&b));
    let names: Vec<&str> = ta.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(
        names,
        ["manifest.json", "responses_r001.csv", "responses_r002.csv", "true_abilities.csv", "true_items.csv"]
    );
    assert_eq!(ta, tb);
    let manifest = read_manifest(&a.join("manifest.json")).unwrap();
    assert_eq!(manifest.command, "simulate");
    assert_eq!(manifest.seeds["base"], 7);
    assert_eq!(manifest.outputs.len(), 4);
}

#[test]
fn generated_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["simulate", "--condition", "normal,500,10", "--seed", "3", "--out", path(dir.path())]);
    let resp = fs::read(dir.path().join("responses_r001.csv")).unwrap();
    let table = parse_responses(resp.as_slice(), None).unwrap();
    assert_eq!((table.matrix.n_persons(), table.matrix.n_items()), (500, 10));
    let mut buf = Vec::new();
    write_responses(&mut buf, &table).unwrap();
    assert_eq!(buf, resp);

    let items = fs::read(dir.path().join("true_items.csv")).unwrap();
    let bank = parse_items(items.as_slice()).unwrap();
    assert_eq!(bank, gpcm::simulation::generating_bank().prefix(10).unwrap());
    let mut buf = Vec::new();
    write_items(&mut buf, &bank).unwrap();
    assert_eq!(buf, items);

    let abil = fs::read(dir.path().join("true_abilities.csv")).unwrap();
    let thetas = parse_thetas(abil.as_slice()).unwrap();
    let mut buf = Vec::new();
    write_thetas(&mut buf, &thetas, None).unwrap();
    assert_eq!(buf, abil);
    assert!(!String::from_utf8(abil).unwrap().contains('\r'));
}

#[test]
fn recover_smoke_and_report_replay() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rec");
    ok(&["recover", "--condition", "normal,500,5", "--replications", "1", "--seed", "4", "--out", path(&out)]);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert!(lines[0].starts_with("condition_id,distribution,SS,TL,estimator,param_class"));
    assert_eq!(lines.len(), 1 + 6, "{summary}");
    let tidy = fs::read_to_string(out.join("tidy.csv")).unwrap();
    assert!(tidy.starts_with("condition_id,distribution,SS,TL,replication,estimator,param_class,param_name,truth,estimate\n"));

    let rep = dir.path().join("rep");
    ok(&[
        "report",
        "--tidy",
        path(&out.join("tidy.csv")),
        "--fits",
        path(&out.join("fits.csv")),
        "--out",
        path(&rep),
    ]);
    assert_eq!(fs::read(rep.join("summary.csv")).unwrap(), summary.as_bytes());
}

#[test]
fn manifest_config_replays_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    ok(&["simulate", "--condition", "uniform,500,5", "--seed", "12", "--out", path(&first)]);
    let manifest = read_manifest(&first.join("manifest.json")).unwrap();
    let config = dir.path().join("replay.json");
    fs::write(&config, manifest.config.to_json()).unwrap();
    let second = dir.path().join("second");
    ok(&["--config", path(&config), "simulate", "--out", path(&second)]);
    assert_eq!(tree(&first), tree(&second));
}

#[test]
fn fit_both_agrees_across_estimators() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    ok(&["simulate", "--condition", "normal,500,5", "--seed", "9", "--out", path(&sim)]);
    let fit = dir.path().join("fit");
    ok(&["fit", "--data", path(&sim.join("responses_r001.csv")), "--method", "both", "--seed", "2", "--out", path(&fit)]);
    for f in ["mmle_items.csv", "mmle_abilities.csv", "mcmc_items.csv", "mcmc_abilities.csv", "mcmc_summary.csv", "compare_params.csv"] {
        assert!(fit.join(f).is_file(), "{f} missing");
    }
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(fit.join("compare_summary.json")).unwrap()).unwrap();
    assert!(summary["ability_correlation"].as_f64().unwrap() > 0.99, "{summary}");

    let cmp = dir.path().join("cmp");
    ok(&[
        "compare",
        "--first-items",
        path(&fit.join("mmle_items.csv")),
        "--first-abilities",
        path(&fit.join("mmle_abilities.csv")),
        "--second-items",
        path(&fit.join("mcmc_items.csv")),
        "--second-abilities",
        path(&fit.join("mcmc_abilities.csv")),
        "--out",
        path(&cmp),
    ]);
    assert_eq!(fs::read(cmp.join("compare_params.csv")).unwrap(), fs::read(fit.join("compare_params.csv")).unwrap());
}

#[test]
fn errors_carry_exit_codes_and_json() {
    let out = gpcm(&["simulate", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "usage");

    let dir = tempfile::tempdir().unwrap();
    let bad: PathBuf = dir.path().join("bad.csv");
    fs::write(&bad, "i1,i2\n0,NA\n1,0\n").unwrap();
    let out = gpcm(&["fit", "--data", path(&bad), "--method", "mmle", "--out", path(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(3));
    let err = error_json(&out);
    assert_eq!(err["error"], "parse");
    assert_eq!(err["exit_code"], 3);
    assert!(err["message"].as_str().unwrap().contains("row 1, column 2"), "{err}");

    let out = gpcm(&["fit", "--data", path(&dir.path().join("missing.csv")), "--out", path(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "config");

    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"schema_version": 99}"#).unwrap();
    let out = gpcm(&["--config", path(&cfg), "recover", "--condition", "normal,500,5"]);
    assert_eq!(out.status.code(), Some(2));

    let out = gpcm(&["simulate", "--condition", "normal,500,25", "--out", path(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn mcmc_nonconvergence_exits_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let mut body = String::from("i1,i2\n");
    for i in 0..30 {
        body.push_str(&format!("{},{}\n", i % 2, (i / 2) % 2));
    }
    fs::write(&data, body).unwrap();
    // an unreachable cutoff with no retries forces the failure path
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"schema_version": 1, "hmc": {"psrf_cutoff": 1.0000001, "max_retries": 0, "iters_per_chain": 40, "warmup": 20}}"#,
    )
    .unwrap();
    let out = gpcm(&["--config", path(&cfg), "fit", "--data", path(&data), "--method", "mcmc", "--out", path(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(error_json(&out)["error"], "nonconvergence");
}
