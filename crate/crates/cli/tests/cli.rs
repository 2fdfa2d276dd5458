use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use urnedge::numeric::normal_cdf;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_urnedge"))
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str], files: &[(&str, &Path)]) -> Output {
    let mut cmd = bin();
    cmd.args(args);
    for (flag, path) in files {
        cmd.arg(flag).arg(path);
    }
    cmd.output().unwrap()
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// Data rows of a CSV body: lines after the header that are not comments.
fn data_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn parse(s: &str) -> f64 {
    s.parse().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "two.json", r#"{"family":"poisson","shapes":[0.5,0.5],"n":2}"#);
        let shapes = vec!["1"; 50].join(",");
        write(dir.path(), "fifty.json", &format!(r#"{{"family":"poisson","shapes":[{shapes}],"n":100}}"#));
        write(dir.path(), "square.json", r#"{"builtin":"power","k":2}"#);
        write(dir.path(), "linear.json", r#"{"builtin":"power","k":1}"#);
        Fixture { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

#[test]
fn exact_on_two_cells_has_two_rows() {
    let f = Fixture::new();
    let out = run(&["exact"], &[("--model", &f.path("two.json")), ("--kernel", &f.path("square.json"))]);
    let rows = data_rows(&stdout(&out));
    assert_eq!(rows.len(), 2);
    for (row, z) in rows.iter().zip([2.0, 4.0]) {
        assert_eq!(parse(&row[0]), z);
        assert!((parse(&row[1]) - 0.5).abs() < 1e-12);
    }
}

#[test]
fn expand_with_s3_is_the_normal_cdf() {
    let f = Fixture::new();
    let out = run(
        &["expand", "--s", "3", "--umin", "-3", "--umax", "3", "--usteps", "13"],
        &[("--model", &f.path("fifty.json")), ("--kernel", &f.path("square.json"))],
    );
    let rows = data_rows(&stdout(&out));
    assert_eq!(rows.len(), 13);
    for row in rows {
        let u = parse(&row[0]);
        assert!((parse(&row[2]) - normal_cdf(u)).abs() < 1e-15, "u = {u}");
    }
}

#[test]
fn compare_orders_the_expansions() {
    let f = Fixture::new();
    let out = run(&["compare"], &[("--model", &f.path("fifty.json")), ("--kernel", &f.path("square.json"))]);
    let text = stdout(&out);
    let header = text.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(header, "u,z,exact,W3,W4,W5,err3,err4,err5");
    let sup = text.lines().find(|l| l.starts_with("sup,")).expect("sup row");
    let e: Vec<f64> = sup.split(',').skip(6).map(parse).collect();
    assert!(e[2] < e[1] && e[1] < e[0], "{e:?}");
    // Per-row errors never exceed the sup row.
    for row in data_rows(&text).iter().filter(|r| r[0] != "sup") {
        for k in 0..3 {
            assert!(parse(&row[6 + k]) <= e[k] + 1e-12);
        }
    }
}

#[test]
fn simulate_is_deterministic_and_records_the_seed() {
    let f = Fixture::new();
    let files = [("--model", f.path("fifty.json")), ("--kernel", f.path("square.json"))];
    let files: Vec<(&str, &Path)> = files.iter().map(|(a, p)| (*a, p.as_path())).collect();
    let a = stdout(&run(&["simulate", "--reps", "2000", "--seed", "7"], &files));
    let b = stdout(&run(&["simulate", "--reps", "2000", "--seed", "7"], &files));
    let c = stdout(&run(&["simulate", "--reps", "2000", "--seed", "8"], &files));
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(a.contains("# seed: 7"));
    let last = data_rows(&a).pop().unwrap();
    assert!((parse(&last[2]) - 1.0).abs() < 1e-12);
}

#[test]
fn metadata_hash_tracks_the_config() {
    let f = Fixture::new();
    let hash = |args: &[&str], model: &str| {
        let out = run(args, &[("--model", &f.path(model)), ("--kernel", &f.path("square.json"))]);
        let text = stdout(&out);
        text.lines().find_map(|l| l.strip_prefix("# config_sha256: ").map(str::to_string)).unwrap()
    };
    let base = hash(&["exact"], "two.json");
    assert_eq!(base.len(), 64);
    assert_eq!(base, hash(&["exact"], "two.json"));
    assert_ne!(base, hash(&["exact", "--tail-eps", "1e-12"], "two.json"));
    assert_ne!(base, hash(&["exact"], "fifty.json"));
    // A copy of the model under another name hashes the same.
    let copy = write(f.dir.path(), "copy.json", &std::fs::read_to_string(f.path("two.json")).unwrap());
    let out = run(&["exact"], &[("--model", &copy), ("--kernel", &f.path("square.json"))]);
    assert!(stdout(&out).contains(&base));
}

#[test]
fn json_output_has_meta_and_body() {
    let f = Fixture::new();
    let out = run(
        &["diagnose", "--format", "json"],
        &[("--model", &f.path("fifty.json")), ("--kernel", &f.path("square.json"))],
    );
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["meta"]["command"], "diagnose");
    assert!(v["report"]["upsilon"].as_f64().unwrap() > 0.0);
    assert!(v["report"]["expansion_bound_omitted"].is_string());
}

#[test]
fn catalog_reports_flagged_fields() {
    let f = Fixture::new();
    let params = write(f.dir.path(), "dixon.json", r#"{"dixon":{"m":12,"n":12,"k":2}}"#);
    let text = stdout(&run(&["catalog"], &[("--params", &params)]));
    let row = text.lines().find(|l| l.starts_with("alpha_30,") && l.ends_with(",false")).expect("flagged row");
    assert!(row.contains("suspected_typo"));
    assert!(text.lines().any(|l| l.starts_with("sigma2_N,") && l.ends_with(",true")));

    let chisq = write(f.dir.path(), "chisq.json", r#"{"chisq":{"n":25,"p":[0.1,0.2,0.3,0.4]}}"#);
    let v: serde_json::Value =
        serde_json::from_str(&stdout(&run(&["catalog", "--format", "json"], &[("--params", &chisq)]))).unwrap();
    assert!(v["diff"]["rows"].as_array().unwrap().len() >= 5);
}

#[test]
fn out_flag_writes_the_file() {
    let f = Fixture::new();
    let target = f.path("out.csv");
    let out = run(
        &["exact"],
        &[("--model", &f.path("two.json")), ("--kernel", &f.path("square.json")), ("--out", &target)],
    );
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    assert!(std::fs::read_to_string(target).unwrap().contains("value,prob"));
}

#[test]
fn config_errors_exit_with_one() {
    let f = Fixture::new();
    let bad_order = run(&["expand", "--s", "6"], &[("--model", &f.path("two.json")), ("--kernel", &f.path("square.json"))]);
    assert_eq!(bad_order.status.code(), Some(1));

    let missing = run(&["exact"], &[("--kernel", &f.path("square.json"))]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("ConfigError"));

    let infeasible = write(f.dir.path(), "full.json", r#"{"family":"binomial","shapes":[1,1],"n":3}"#);
    let out = run(&["exact"], &[("--model", &infeasible), ("--kernel", &f.path("square.json"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("InfeasibleTotal"));
}

#[test]
fn numerical_errors_exit_with_two() {
    let f = Fixture::new();
    // Σ η_m = n is constant, so the residual variance vanishes.
    let out = run(&["expand"], &[("--model", &f.path("fifty.json")), ("--kernel", &f.path("linear.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("DegenerateStatistic"));
}
