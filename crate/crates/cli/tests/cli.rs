use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn platoon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_platoon"))
        .args(args)
        .env("PLATOON_LOG", "error")
        .output()
        .expect("spawn platoon")
}

fn shipped_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/paper-table2.cfg")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

fn listed(dir: &Path) -> Vec<String> {
    manifest(dir)["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a["file"].as_str().unwrap().to_string())
        .collect()
}

#[test]
fn synthesize_feasible_p_writes_gain_and_certificate() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = shipped_config();
    let out = tmp.path().join("s");
    let o = platoon(&[
        "synthesize", "--config", cfg.to_str().unwrap(), "--p", "3", "--theorem", "2", "--grid", "21",
        "--out-dir", out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let res: serde_json::Value = serde_json::from_slice(&fs::read(out.join("synthesis_p3.json")).unwrap()).unwrap();
    assert_eq!(res["feasible"], true);
    assert_eq!(res["gain"].as_array().unwrap().len(), 3);
    let cert: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("certification_p3.json")).unwrap()).unwrap();
    assert_eq!(cert["verdict"], true);
    let files = listed(&out);
    assert_eq!(files, vec!["synthesis_p3.json", "certification_p3.json"]);
    for f in files {
        assert!(out.join(f).exists());
    }

    // The saved result is itself a valid gain file.
    let c = tmp.path().join("c");
    let o = platoon(&[
        "certify", "--gain", out.join("synthesis_p3.json").to_str().unwrap(), "--grid", "11",
        "--out-dir", c.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn infeasible_p_exits_two_with_verdict_file() {
    let tmp = tempfile::tempdir().unwrap();
    let o = platoon(&["synthesize", "--p", "12", "--out-dir", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stdout));
    let res: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("synthesis_p12.json")).unwrap()).unwrap();
    assert_eq!(res["feasible"], false);
    assert!(res["gain"].is_null());
    assert!(!tmp.path().join("certification_p12.json").exists());
    assert_eq!(manifest(tmp.path())["exit_code"], 2);
}

#[test]
fn missing_field_names_it_and_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(shipped_config()).unwrap();
    let broken: String = text.lines().filter(|l| !l.trim_start().starts_with("eps =")).collect::<Vec<_>>().join("\n");
    assert_ne!(broken, text);
    let path = tmp.path().join("bad.cfg");
    fs::write(&path, broken).unwrap();
    let o = platoon(&["synthesize", "--config", path.to_str().unwrap(), "--out-dir", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("`eps`"), "{err}");
}

#[test]
fn bad_flags_and_presets_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_str().unwrap();
    assert_eq!(code(&platoon(&["simulate", "--preset", "nope", "--out-dir", dir])), 1);
    // Rejected before anything runs or gets written.
    let o = platoon(&["synthesize", "--theorem", "3", "--out-dir", dir]);
    assert_eq!(code(&o), 1);
    assert!(!Path::new(dir).join("manifest.json").exists());
    assert_eq!(code(&platoon(&["certify", "--gain", "/no/such/file", "--out-dir", dir])), 1);
}

#[test]
fn sweep_table_and_empty_range() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("a");
    let o = platoon(&["sweep", "--p-min", "1", "--p-max", "2", "--jobs", "2", "--out-dir", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let table = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("p,feasible,k1,k2,k3"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("1,true,") && rows[1].starts_with("2,true,"));

    let empty = tmp.path().join("b");
    let o = platoon(&["sweep", "--p-min", "4", "--p-max", "3", "--out-dir", empty.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read_to_string(empty.join("sweep.csv")).unwrap(), "p,feasible,k1,k2,k3\n");
    assert_eq!(listed(&empty), vec!["sweep.csv"]);
}

#[test]
fn gamma_bisection_bracket_width() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("g.cfg");
    let mut c = platoon_cfg(&fs::read_to_string(shipped_config()).unwrap());
    c["sweep"]["gamma_lo"] = toml_f(1.0);
    c["sweep"]["gamma_hi"] = toml_f(400.0);
    c["sweep"]["gamma_iters"] = toml_i(4);
    fs::write(&cfg, c.to_string()).unwrap();
    let o = platoon(&[
        "sweep", "--config", cfg.to_str().unwrap(), "--p-min", "1", "--p-max", "1", "--gamma-at", "1",
        "--out-dir", tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let b: serde_json::Value = serde_json::from_slice(&fs::read(tmp.path().join("gamma_p1.json")).unwrap()).unwrap();
    let (lo, hi) = (b["lo"].as_f64().unwrap(), b["hi"].as_f64().unwrap());
    assert!(hi - lo <= 399.0 / 16.0 + 1e-9 && lo < hi);
    assert_eq!(b["at_hi"]["feasible"], true);
}

fn platoon_cfg(text: &str) -> toml::Table {
    text.parse().unwrap()
}

fn toml_f(v: f64) -> toml::Value {
    toml::Value::Float(v)
}

fn toml_i(v: i64) -> toml::Value {
    toml::Value::Integer(v)
}

#[test]
fn certify_zero_gain_fails_and_point_grid_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let zero = tmp.path().join("zero.json");
    fs::write(&zero, "[0, 0, 0]").unwrap();
    let o = platoon(&["certify", "--gain", zero.to_str().unwrap(), "--p", "7", "--out-dir", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let rep: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("certification.json")).unwrap()).unwrap();
    assert_eq!(rep["verdict"], false);
    assert!(rep["radius"]["max_radius"].as_f64().unwrap() >= 1.0 - 1e-9);

    let tagged = tmp.path().join("k.json");
    fs::write(&tagged, r#"{"k": [-1.305269e-3, 1.312937e-2, 9.788645e-2], "p": 3}"#).unwrap();
    let o = platoon(&["certify", "--gain", tagged.to_str().unwrap(), "--grid", "1", "--out-dir", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn simulate_is_byte_identical_on_rerun() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("short.cfg");
    let mut c = platoon_cfg(&fs::read_to_string(shipped_config()).unwrap());
    c["simulation"]["horizon"] = toml_f(100.0);
    c["simulation"]["p"] = toml_i(3);
    fs::write(&cfg, c.to_string()).unwrap();
    let run = |dir: &str, seed: &str| {
        let out = tmp.path().join(dir);
        let o = platoon(&[
            "simulate", "--config", cfg.to_str().unwrap(), "--preset", "attack_with_disturbance", "--seed", seed,
            "--out-dir", out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let (a, b, other) = (run("a", "5"), run("b", "5"), run("c", "6"));
    for f in ["trace.csv", "delays.csv", "summary.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_ne!(fs::read(a.join("delays.csv")).unwrap(), fs::read(other.join("delays.csv")).unwrap());
    assert_eq!(manifest(&a)["config_digest"], manifest(&b)["config_digest"]);
    assert_eq!(listed(&a), vec!["trace.csv", "delays.csv", "summary.json"]);
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["l2"]["ratios"].as_array().unwrap().len(), 8);
}

#[test]
fn baseline_preset_flags_a_violation() {
    let tmp = tempfile::tempdir().unwrap();
    let o = platoon(&["simulate", "--preset", "baseline_besselink", "--out-dir", tmp.path().to_str().unwrap()]);
    // Either the run completes with a violation or stops early (exit 3) with
    // the partial trace and a summary that says why.
    assert!(matches!(code(&o), 0 | 3));
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(tmp.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["violation"], true);
    assert_eq!(summary["aborted"].is_string(), code(&o) == 3);
    assert!(tmp.path().join("trace.csv").exists());
}

#[test]
fn digest_is_stable_under_reserialization() {
    let tmp = tempfile::tempdir().unwrap();
    let reformatted = tmp.path().join("re.cfg");
    let c = platoon_cfg(&fs::read_to_string(shipped_config()).unwrap());
    fs::write(&reformatted, c.to_string()).unwrap();
    let digest = |cfg: &Path, dir: &str| {
        let out = tmp.path().join(dir);
        let o = platoon(&["sweep", "--config", cfg.to_str().unwrap(), "--p-min", "2", "--p-max", "1", "--out-dir", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0);
        manifest(&out)["config_digest"].as_str().unwrap().to_string()
    };
    assert_eq!(digest(&shipped_config(), "a"), digest(&reformatted, "b"));
}
