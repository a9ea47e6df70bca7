use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn uvlab(args: &[&str], cfg: Option<&Path>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_uvlab"));
    c.env_remove("UVLAB_THREADS");
    if let Some(p) = cfg {
        c.arg("--config").arg(p);
    }
    c.args(args).output().expect("spawn uvlab")
}

fn write_cfg(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path).unwrap().lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

fn out_arg(dir: &Path) -> String {
    dir.to_string_lossy().into_owned()
}

#[test]
fn thresholds_d3_is_infeasible() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("t");
    let o = uvlab(&["thresholds", "--out", &out_arg(&out)], None);
    assert_eq!(o.status.code(), Some(0));
    let rows = csv_rows(&out.join("thresholds.csv"));
    assert_eq!(rows[0][0], "d");
    let d3 = rows.iter().find(|r| r[0] == "3").unwrap();
    assert_eq!(d3[5], "false");
    assert_eq!(rows.iter().find(|r| r[0] == "1").unwrap()[5], "true");
}

#[test]
fn enumerate_k1_counts_four() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("e");
    let o = uvlab(&["enumerate", "--k", "1", "--out", &out_arg(&out)], None);
    assert_eq!(o.status.code(), Some(0));
    let rows = csv_rows(&out.join("enumerate.csv"));
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[2][..2], ["1".to_string(), "4".to_string()]);
}

#[test]
fn sweep_at_zero_coupling_is_all_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "z.toml", "[model]\nlambda = 0.0\n");
    let out = tmp.path().join("s");
    let o = uvlab(&["sweep", "--out", &out_arg(&out)], Some(&cfg));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&out.join("sweep.csv"));
    assert_eq!(rows[0][1..4], ["energy", "e2", "renormalized"]);
    for r in &rows[1..] {
        for v in &r[1..4] {
            assert_eq!(v.parse::<f64>().unwrap(), 0.0);
        }
    }
}

#[test]
fn invalid_config_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        "[cutoffs]\nlambda_list = [1.0, 10.0]\n",
        "[model]\nd = 7\n",
        "[solver]\ntol = -1.0\n",
        "[model\n",
        "[model]\nunknown_key = 3\n",
    ];
    for (i, text) in cases.iter().enumerate() {
        let cfg = write_cfg(tmp.path(), &format!("bad{i}.toml"), text);
        let o = uvlab(&["build", "--out", &out_arg(&tmp.path().join(format!("b{i}")))], Some(&cfg));
        assert_eq!(o.status.code(), Some(1), "{text}");
    }
    let o = uvlab(&["build", "--lambda-list", "3,2", "--out", &out_arg(&tmp.path().join("bl"))], None);
    assert_eq!(o.status.code(), Some(1));
    let o = uvlab(&["build", "--config", "/nonexistent/x.toml"], None);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn outside_half_plane_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = uvlab(&["neumann", "--z", "2", "--out", &out_arg(&tmp.path().join("n"))], None);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn repeated_runs_are_byte_identical_and_replayable() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "c.toml", "[solver]\naudit_batch = 6\nhidden_study = false\n");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for cmd in ["audit", "sweep", "build"] {
        let (da, db) = (a.join(cmd), b.join(cmd));
        assert_eq!(uvlab(&[cmd, "--seed", "42", "--out", &out_arg(&da)], Some(&cfg)).status.code(), Some(0));
        assert_eq!(uvlab(&[cmd, "--seed", "42", "--threads", "1", "--out", &out_arg(&db)], Some(&cfg)).status.code(), Some(0));
        let replay = tmp.path().join("r").join(cmd);
        let m = da.join("manifest.json");
        assert_eq!(uvlab(&["replay", "--manifest", &out_arg(&m), "--out", &out_arg(&replay)], None).status.code(), Some(0));
        let mut names: Vec<_> = fs::read_dir(&da).unwrap().map(|e| e.unwrap().file_name()).filter(|n| n.to_string_lossy().ends_with(".csv")).collect();
        names.sort();
        assert!(!names.is_empty());
        for n in names {
            let x = fs::read(da.join(&n)).unwrap();
            assert_eq!(x, fs::read(db.join(&n)).unwrap(), "{cmd} {n:?}");
            assert_eq!(x, fs::read(replay.join(&n)).unwrap(), "{cmd} replay {n:?}");
        }
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("audit/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 42);
    assert_eq!(manifest["command"], "audit");
    assert_eq!(manifest["config"]["solver"]["audit_batch"], 6);
}

#[test]
fn audit_writes_explicit_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "c.toml", "[solver]\naudit_batch = 5\nhidden_study = false\n");
    let out = tmp.path().join("a");
    let o = uvlab(&["audit", "--out", &out_arg(&out)], Some(&cfg));
    assert_eq!(o.status.code(), Some(0));
    let rows = csv_rows(&out.join("audit.csv"));
    assert_eq!(rows.len(), 6);
    assert!(rows[1..].iter().all(|r| r[4] == "true"));
}

#[test]
fn threads_env_is_a_fallback() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("t");
    let o = Command::new(env!("CARGO_BIN_EXE_uvlab")).env("UVLAB_THREADS", "2").args(["thresholds", "--out", &out_arg(&out)]).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["threads"], 2);
}

#[test]
fn algebra_neumann_and_counterterm_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "c.toml", "[cutoffs]\nlambda_list = [1.0, 2.0, 4.0]\n[discretization]\ncells_per_axis = 4\n");
    for cmd in ["algebra-check", "neumann", "counterterm"] {
        let out = tmp.path().join(cmd);
        let o = uvlab(&[cmd, "--out", &out_arg(&out)], Some(&cfg));
        assert_eq!(o.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let n = csv_rows(&tmp.path().join("neumann/neumann.csv"));
    for r in &n[1..] {
        assert!(r[5].parse::<f64>().unwrap() < 1e-8);
        assert!(r[8].parse::<f64>().unwrap() < 1e-8);
    }
    let fit = csv_rows(&tmp.path().join("counterterm/counterterm_fit.csv"));
    assert_eq!(fit.len(), 3);
}
