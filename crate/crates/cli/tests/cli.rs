use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: [&str; 14] = [
    "--set", "data.per_class=20",
    "--set", "data.test_per_class=10",
    "--set", "data.height=8",
    "--set", "data.width=8",
    "--set", "model.hidden=[8]",
    "--t-max", "10",
    "--t-c", "5",
];

fn inscorr(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_inscorr"))
        .env("INSCORR_OUT", out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn run_dirs(root: &Path) -> Vec<std::path::PathBuf> {
    let mut dirs: Vec<_> = fs::read_dir(root)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with("run-"))
        .collect();
    dirs.sort();
    dirs
}

#[test]
fn repeated_runs_write_identical_metrics() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for root in [a.path(), b.path()] {
        let o = inscorr(root, &[&["run"][..], &TINY[..]].concat());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).contains("last-ten test accuracy"));
    }
    let (da, db) = (run_dirs(a.path()), run_dirs(b.path()));
    assert_eq!(da.len(), 1);
    assert_eq!(da[0].file_name(), db[0].file_name());
    for f in ["metrics.jsonl", "metrics.csv", "summary.json", "config.toml", "model.ckpt"] {
        assert_eq!(fs::read(da[0].join(f)).unwrap(), fs::read(db[0].join(f)).unwrap(), "{f}");
    }
}

#[test]
fn out_flag_beats_environment() {
    let (env_root, flag_root) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let flag = flag_root.path().to_str().unwrap();
    let o = inscorr(env_root.path(), &[&["--out", flag, "run"][..], &TINY[..]].concat());
    assert!(o.status.success());
    assert_eq!(run_dirs(flag_root.path()).len(), 1);
    assert!(run_dirs(env_root.path()).is_empty());
}

#[test]
fn config_errors_name_the_key() {
    let root = tempfile::tempdir().unwrap();
    let o = inscorr(root.path(), &["run", "--lambda", "1.5"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("`lambda`"));

    let cfg = root.path().join("bad.toml");
    fs::write(&cfg, "[attack]\nbudgett = 0.1\n").unwrap();
    let o = inscorr(root.path(), &["run", "--config", cfg.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("attack.budgett"));
}

#[test]
fn named_flags_beat_file_values() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("c.toml");
    fs::write(&cfg, "[schedule]\ntau = 0.1\n").unwrap();
    let args = [&["run", "--config", cfg.to_str().unwrap(), "--tau", "0.3"][..], &TINY[..]].concat();
    assert!(inscorr(root.path(), &args).status.success());
    let text = fs::read_to_string(run_dirs(root.path())[0].join("config.toml")).unwrap();
    assert!(text.contains("tau = 0.3"), "{text}");
}

#[test]
fn single_cell_campaign_equals_its_run() {
    let root = tempfile::tempdir().unwrap();
    let args = [
        &["campaign", "--kinds", "fog", "--rates", "0.4", "--trials", "0", "--methods", "inscorr"][..],
        &TINY[..],
    ]
    .concat();
    let o = inscorr(root.path(), &args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv_path = fs::read_dir(root.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "csv"))
        .unwrap();
    let csv = fs::read_to_string(csv_path).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    let mean: f64 = row[4].parse().unwrap();
    assert_eq!(row[5], "0");

    let dirs = run_dirs(root.path());
    assert_eq!(dirs.len(), 1);
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(dirs[0].join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["last_ten_mean"].as_f64().unwrap(), mean);
}

#[test]
fn ablation_rows_sorted() {
    let root = tempfile::tempdir().unwrap();
    let args = [
        &["ablate", "--method", "mix", "--lambdas", "0.3,0.05,0.15", "--trials", "0"][..],
        &TINY[..],
    ]
    .concat();
    let o = inscorr(root.path(), &args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let path = fs::read_dir(root.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.to_string_lossy().ends_with("clean-weight.csv"))
        .unwrap();
    let csv = fs::read_to_string(path).unwrap();
    let lambdas: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(lambdas, ["0.05", "0.15", "0.3"]);
    assert!(csv.starts_with("lambda,mean_acc,std_acc"));
}

#[test]
fn make_data_files_load() {
    let root = tempfile::tempdir().unwrap();
    let o = inscorr(root.path(), &["make-data", "--set", "data.per_class=10", "--noise-kind", "occlusion"]);
    assert!(o.status.success());
    let paths: Vec<String> = stdout(&o).lines().map(str::to_string).collect();
    assert_eq!(paths.len(), 3);
    let train = inscorr::data::load_dataset(Path::new(&paths[0])).unwrap();
    let val = inscorr::data::load_dataset(Path::new(&paths[1])).unwrap();
    assert_eq!(train.len() + val.len(), 40);
}

#[test]
fn verify_prints_one_line_per_criterion() {
    let root = tempfile::tempdir().unwrap();
    let o = inscorr(root.path(), &["verify", "A2", "a3"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.lines().next().unwrap().starts_with("A2 PASS"));
    assert!(out.lines().nth(1).unwrap().starts_with("A3 PASS"));
    let o = inscorr(root.path(), &["verify", "A0"]);
    assert!(!o.status.success());
}
