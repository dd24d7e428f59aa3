use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn rcdcm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rcdcm"))
        .current_dir(dir)
        .args(args)
        .env_clear()
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ladder(sections: usize, r: f64, c_ff: f64) -> String {
    let mut s = String::from("* ladder\n");
    let mut prev = "out".to_string();
    for k in 1..=sections {
        s += &format!("R{k} {prev} n{k} {r}\nC{k} n{k} 0 {c_ff}f\n");
        prev = format!("n{k}");
    }
    s
}

/// Temp dir with `ladder.sp` (20 fF) and a thevenin table set up to 40 fF.
fn setup() -> TempDir {
    let d = TempDir::new().unwrap();
    fs::write(d.path().join("ladder.sp"), ladder(10, 100.0, 2.0)).unwrap();
    let o = rcdcm(d.path(), &["characterize", "--driver", "thv", "--c-max", "40f", "--slews", "30p", "--out", "tables"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    d
}

fn run_args<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec!["--netlist", "ladder.sp", "--port", "out", "--tables", "tables"];
    v.extend_from_slice(extra);
    v
}

fn respond(d: &Path, extra: &[&str]) -> Output {
    let mut a = vec!["respond"];
    a.extend(run_args(extra));
    rcdcm(d, &a)
}

fn files_under(p: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(p).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files_under(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn characterize_writes_one_file_per_slew_and_direction() {
    let d = TempDir::new().unwrap();
    let o = rcdcm(
        d.path(),
        &["characterize", "--model", "mos", "--driver", "inv", "--slews", "20p,40p", "--direction", "both", "--c-max", "30f", "--out", "lib"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let names: Vec<String> = files_under(&d.path().join("lib"))
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(
        names,
        ["inv_falling_20ps.json", "inv_falling_40ps.json", "inv_rising_20ps.json", "inv_rising_40ps.json"]
    );
    assert!(stdout(&o).contains("22 caps"));
}

#[test]
fn characterize_is_deterministic() {
    let d = TempDir::new().unwrap();
    for out in ["a", "b"] {
        let o = rcdcm(d.path(), &["characterize", "--model", "mos", "--slews", "25p", "--c-max", "20f", "--out", out]);
        assert_eq!(code(&o), 0);
    }
    let a = fs::read(d.path().join("a/drv_rising_25ps.json")).unwrap();
    let b = fs::read(d.path().join("b/drv_rising_25ps.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn descending_grid_is_a_usage_error() {
    let d = TempDir::new().unwrap();
    let o = rcdcm(d.path(), &["characterize", "--grid", "10f,5f,1f", "--out", "lib"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("ascending"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let d = TempDir::new().unwrap();
    assert_eq!(code(&rcdcm(d.path(), &["respond", "--bogus"])), 2);
}

#[test]
fn respond_writes_artifacts_under_out() {
    let d = setup();
    let o = respond(d.path(), &["--out", "res"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.path().join("res/ladder/metrics.json")).unwrap()).unwrap();
    for k in ["avg_A", "avg_abs_A", "rms_A", "peak_A", "runtime_s", "residual_max"] {
        assert!(m[k].is_f64(), "{k} missing");
    }
    assert!(m["peak_A"].as_f64().unwrap() > m["rms_A"].as_f64().unwrap());
    let wave = fs::read_to_string(d.path().join("res/ladder/waveform.csv")).unwrap();
    assert!(wave.starts_with("t_s,v_V,i_A\n"));
    let trace = fs::read_to_string(d.path().join("res/ladder/trace.csv")).unwrap();
    assert!(trace.starts_with("step,t_ps,v_V,i_mA,C_step_fF\n"));

    let mut top: Vec<String> = fs::read_dir(d.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    top.sort();
    assert_eq!(top, ["ladder.sp", "res", "tables"]);
}

#[test]
fn net_above_table_range_is_a_domain_error() {
    let d = setup();
    fs::write(d.path().join("big.sp"), ladder(10, 100.0, 8.0)).unwrap();
    let o = rcdcm(d.path(), &["respond", "--netlist", "big.sp", "--port", "out", "--tables", "tables", "--out", "res"]);
    assert_eq!(code(&o), 3);
    let e = stderr(&o);
    assert!(e.contains("big") && e.contains("--c-max"), "{e}");
}

#[test]
fn malformed_netlist_is_a_usage_error() {
    let d = setup();
    fs::write(d.path().join("bad.sp"), "R1 out n1 1x\n").unwrap();
    let o = rcdcm(d.path(), &["respond", "--netlist", "bad.sp", "--port", "out", "--tables", "tables"]);
    assert_eq!(code(&o), 2);
}

fn trace_rows(d: &Path, out: &str) -> Vec<Vec<f64>> {
    fs::read_to_string(d.join(out).join("ladder/trace.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect()
}

fn metrics(d: &Path, out: &str) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(d.join(out).join("ladder/metrics.json")).unwrap()).unwrap()
}

#[test]
fn step_count_changes_granularity_not_answer() {
    let d = setup();
    assert_eq!(code(&respond(d.path(), &["--n-steps", "50", "--out", "n50"])), 0);
    assert_eq!(code(&respond(d.path(), &["--n-steps", "100", "--out", "n100"])), 0);
    // head rows are step 0, tail rows step N + 1
    let matched = |rows: &[Vec<f64>], n: f64| rows.iter().filter(|r| r[0] >= 1.0 && r[0] <= n).count();
    let (a, b) = (trace_rows(d.path(), "n50"), trace_rows(d.path(), "n100"));
    assert_eq!(matched(&a, 50.0), 50);
    assert_eq!(matched(&b, 100.0), 100);
    let (ma, mb) = (metrics(d.path(), "n50"), metrics(d.path(), "n100"));
    for k in ["avg_A", "rms_A", "peak_A"] {
        let (x, y) = (ma[k].as_f64().unwrap(), mb[k].as_f64().unwrap());
        assert!(((x - y) / y).abs() < 0.01, "{k}: {x} vs {y}");
    }
}

#[test]
fn env_overrides_flags() {
    let d = setup();
    let o = Command::new(env!("CARGO_BIN_EXE_rcdcm"))
        .current_dir(d.path())
        .args(["respond", "--netlist", "ladder.sp", "--tables", "tables", "--out", "env"])
        .env_clear()
        .env("RCDCM_PORT", "out")
        .env("RCDCM_N_STEPS", "30")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = trace_rows(d.path(), "env");
    assert_eq!(rows.iter().filter(|r| r[0] == 30.0).count(), 1);
    assert!(rows.iter().all(|r| r[0] <= 31.0));
}

#[test]
fn verify_passes_default_threshold() {
    let d = setup();
    let o = rcdcm(d.path(), &[&["verify"][..], &run_args(&["--out", "v"])].concat());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s = stdout(&o);
    assert!(s.contains("oracle") && s.contains("speedup"));
    assert!(!s.contains("c_total"));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.path().join("v/ladder/verify.json")).unwrap()).unwrap();
    assert!(r["dcm_error"]["peak_A"].as_f64().unwrap() < 0.05);
    assert!(d.path().join("v/ladder/oracle.csv").exists());
}

#[test]
fn verify_fails_a_tight_threshold() {
    let d = setup();
    let o = rcdcm(d.path(), &[&["verify"][..], &run_args(&["--out", "v", "--max-err", "0.0001"])].concat());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--max-err"));
}

#[test]
fn verify_baseline_adds_rows() {
    let d = setup();
    let o = rcdcm(d.path(), &[&["verify"][..], &run_args(&["--out", "v", "--baseline"])].concat());
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).lines().any(|l| l.contains("c_total")));
}

#[test]
fn several_nets_run_in_parallel() {
    let d = setup();
    fs::write(d.path().join("short.sp"), ladder(3, 200.0, 3.0)).unwrap();
    let o = rcdcm(
        d.path(),
        &["respond", "--netlist", "ladder.sp", "--netlist", "short.sp", "--port", "out", "--tables", "tables", "--jobs", "2", "--out", "par"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(d.path().join("par/ladder/metrics.json").exists());
    assert!(d.path().join("par/short/metrics.json").exists());
    let s = stdout(&o);
    assert!(s.find("ladder").unwrap() < s.find("short").unwrap());
}

#[test]
fn sweep_writes_one_row_per_step_count() {
    let d = setup();
    let o = rcdcm(d.path(), &[&["sweep"][..], &run_args(&["--ns", "20,40", "--out", "sw"])].concat());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(d.path().join("sw/sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "net,n_steps,avg_err,rms_err,peak_err,runtime_s,residual_max");
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("ladder,20,") && rows[2].starts_with("ladder,40,"));
}

#[test]
fn suite_writes_a_report() {
    let d = TempDir::new().unwrap();
    let o = rcdcm(d.path(), &["suite", "--sizes", "10", "--ns", "25", "--out", "s"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.path().join("s/report.json")).unwrap()).unwrap();
    let results = r["results"].as_array().unwrap();
    assert!(!results.is_empty());
    assert_eq!(r["totals"]["benchmarks"].as_u64().unwrap() as usize, results.len());
    assert_eq!(r["n_sweep"].as_array().unwrap().len(), 1);
}
