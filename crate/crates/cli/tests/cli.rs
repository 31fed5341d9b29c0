use std::process::{Command, Output};

use babylon::estimator::{formula_free_energy, EstimatorConfig};
use babylon::oracle::{exact_free_energy, EnumOptions};
use babylon::{load_couplings, ExternalField};
use serde_json::Value;
use tempfile::TempDir;

fn babylon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_babylon"))
        .args(args)
        .output()
        .unwrap()
}

fn json(args: &[&str]) -> Value {
    let out = babylon(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    babylon(args).status.code().unwrap()
}

fn file(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_string_lossy().into_owned()
}

fn gen_sk(dir: &TempDir, n: usize, seed: u64) -> String {
    let path = file(dir, &format!("sk{n}_{seed}.txt"));
    let out = babylon(&["gen", "--model", "sk", "--n", &n.to_string(), "--seed", &seed.to_string(), "--out", &path]);
    assert!(out.status.success());
    path
}

fn lines(path: &str) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn gen_writes_expected_line_counts_and_metadata() {
    let dir = TempDir::new().unwrap();
    let sk = gen_sk(&dir, 6, 1);
    assert_eq!(lines(&sk), 1 + 15);
    let meta: Value = serde_json::from_str(&std::fs::read_to_string(format!("{sk}.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 1);
    assert_eq!(meta["model"]["kind"], "sk");

    let ea = file(&dir, "ea.txt");
    babylon(&["gen", "--model", "ea", "--dims", "3,3", "--seed", "2", "--out", &ea]);
    assert_eq!(lines(&ea), 1 + 12);
    let eap = file(&dir, "eap.txt");
    babylon(&["gen", "--model", "ea", "--dims", "3,3", "--boundary", "periodic", "--seed", "2", "--out", &eap]);
    assert_eq!(lines(&eap), 1 + 18);

    let t = file(&dir, "t.txt");
    babylon(&["gen", "--model", "pspin3", "--n", "5", "--seed", "3", "--out", &t]);
    assert_eq!(lines(&t), 1 + 10);
}

#[test]
fn gen_reports_a_fresh_seed_when_none_is_given() {
    let dir = TempDir::new().unwrap();
    let path = file(&dir, "g.txt");
    assert!(babylon(&["gen", "--model", "sk", "--n", "4", "--out", &path]).status.success());
    let meta: Value = serde_json::from_str(&std::fs::read_to_string(format!("{path}.meta.json")).unwrap()).unwrap();
    assert!(meta["seed"].is_u64());
}

#[test]
fn exact_and_estimate_wrap_the_library() {
    let dir = TempDir::new().unwrap();
    let path = gen_sk(&dir, 7, 4);
    let g = load_couplings(std::io::BufReader::new(std::fs::File::open(&path).unwrap())).unwrap();
    let h = ExternalField::Uniform(0.2);

    let exact = json(&["exact", "--couplings", &path, "--beta", "0.9", "--h", "0.2"]);
    let lib = exact_free_energy(&g, 0.9, &h, &EnumOptions::default()).unwrap();
    assert_eq!(exact["free_energy"].as_f64().unwrap(), lib);
    assert_eq!(exact["magnetizations"].as_array().unwrap().len(), 7);

    let est = json(&["estimate", "--couplings", &path, "--beta", "0.9", "--h", "0.2", "--samples", "30000", "--seed", "5"]);
    let lib = formula_free_energy(&g, 0.9, &h, &EstimatorConfig::new(30_000, 5)).unwrap();
    assert_eq!(est["value"].as_f64().unwrap(), lib.value);
    assert_eq!(est["std_error"].as_f64().unwrap(), lib.std_error);
    assert_eq!(est["seed"], 5);
    assert_eq!(est["proposal"], "adaptive");
}

#[test]
fn per_site_field_file_is_accepted() {
    let dir = TempDir::new().unwrap();
    let path = gen_sk(&dir, 3, 6);
    let hfile = file(&dir, "h.txt");
    std::fs::write(&hfile, "0.1\n-0.2\n0.3\n").unwrap();
    let v = json(&["exact", "--couplings", &path, "--beta", "0.0", "--h", &hfile]);
    let expect: f64 = [0.1f64, -0.2, 0.3].iter().map(|h| h.cosh().ln()).sum();
    assert!((v["free_energy"].as_f64().unwrap() - expect).abs() < 1e-12);
    std::fs::write(&hfile, "0.1\n").unwrap();
    assert_eq!(code(&["exact", "--couplings", &path, "--beta", "1", "--h", &hfile]), 3);
}

#[test]
fn sweep_csv_has_one_row_per_grid_point() {
    let dir = TempDir::new().unwrap();
    let path = gen_sk(&dir, 5, 7);
    let out = babylon(&[
        "sweep", "--couplings", &path, "--beta-min", "0.1", "--beta-max", "0.5", "--steps", "5", "--samples", "4000", "--seed", "1",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows[0], "beta,f_per_site,std_error,ess");
    assert_eq!(rows.len(), 6);
    assert!(rows[1].starts_with("0.1,"));
    assert!(rows[5].starts_with("0.5,"));
}

#[test]
fn observables_and_pspin3_report_json() {
    let dir = TempDir::new().unwrap();
    let path = gen_sk(&dir, 4, 8);
    let obs = json(&["observables", "--couplings", &path, "--beta", "0.7", "--samples", "8000", "--seed", "2"]);
    assert_eq!(obs["correlations"].as_array().unwrap().len(), 4);
    assert!(obs["magnetizations"].as_array().unwrap().iter().all(|m| m.as_f64() == Some(0.0)));

    let t = file(&dir, "t.txt");
    babylon(&["gen", "--model", "pspin3", "--n", "5", "--density", "0.5", "--seed", "3", "--out", &t]);
    let r = json(&["pspin3", "--tensor", &t, "--beta", "0.5", "--samples", "20000", "--seed", "4", "--exact"]);
    let (v, se, ex) = (r["value"].as_f64().unwrap(), r["std_error"].as_f64().unwrap(), r["exact"].as_f64().unwrap());
    assert!((v - ex).abs() < 4.0 * se, "{v} vs {ex} ± {se}");
}

#[test]
fn out_flag_writes_a_file() {
    let dir = TempDir::new().unwrap();
    let path = gen_sk(&dir, 3, 9);
    let out = file(&dir, "report.json");
    assert!(babylon(&["exact", "--couplings", &path, "--beta", "1", "--out", &out]).stdout.is_empty());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["n"], 3);
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let path = gen_sk(&dir, 3, 10);
    // usage
    assert_eq!(code(&["exact", "--couplings", &path]), 2);
    assert_eq!(code(&["exact", "--couplings", &path, "--beta=-1"]), 2);
    assert_eq!(code(&["estimate", "--couplings", &path, "--beta", "1", "--samples", "1"]), 2);
    assert_eq!(code(&["verify", "--trials", "0"]), 2);
    // validation
    let bad = file(&dir, "bad.txt");
    std::fs::write(&bad, "3\n0 1 0.5\n1 0 0.7\n").unwrap();
    assert_eq!(code(&["exact", "--couplings", &bad, "--beta", "1"]), 3);
    std::fs::write(&bad, "3\n0 1 x\n").unwrap();
    assert_eq!(code(&["exact", "--couplings", &bad, "--beta", "1"]), 3);
    assert_eq!(code(&["exact", "--couplings", &file(&dir, "missing.txt"), "--beta", "1"]), 3);
    let big = gen_sk(&dir, 30, 1);
    assert_eq!(code(&["exact", "--couplings", &big, "--beta", "1"]), 3);
    // verification
    assert_eq!(code(&["verify", "--seed", "1", "--trials", "5", "--samples", "20000", "--inject-sign-flip"]), 5);
    assert_eq!(code(&["verify", "--seed", "1", "--trials", "5", "--samples", "20000"]), 0);
}

#[test]
fn enumeration_cap_follows_the_environment() {
    let dir = TempDir::new().unwrap();
    let path = gen_sk(&dir, 6, 11);
    let out = Command::new(env!("CARGO_BIN_EXE_babylon"))
        .args(["exact", "--couplings", &path, "--beta", "1"])
        .env("BABYLON_ENUM_CAP", "4")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("BABYLON_ENUM_CAP"));
}
