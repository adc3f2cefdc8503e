//! Command-line behaviour: golden outputs, exit codes, diagnostics.
//!
//! Set `PARAMSYNC_UPDATE_GOLDEN=1` to rewrite the files under
//! `tests/golden/` after an intentional output change.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use paramsync::config::{validate_config, ExperimentConfig};
use paramsync::simnet::run_simulation;

const SCENARIO: &str = "\
paradigm = dssp
s_lower = 1
r_max = 3
worker_count = 3
timing = gtx-mix
compute = uniform(0.5, 1.5)
comm_delay = const(0.1)
model_kind = linear_regression
dimension = 3
dataset_size = 48
batch_size = 4
learning_rate = 0.05
epochs = 2
seed = 5
loss_every = 4
";

/// Two workers at compute 1 and 4, SSP with threshold 3.
const SSP_PAIR: &str = "\
paradigm = ssp
s_lower = 3
worker_count = 2
timing = custom
compute_per_worker = const(1); const(4)
model_kind = quadratic_bowl
dimension = 2
dataset_size = 16
batch_size = 1
epochs = 4
loss_every = 4
";

fn paramsync(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_paramsync")).args(args).output().expect("spawn paramsync")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn check_golden(produced: &Path, golden: &str) {
    let want = golden_dir().join(golden);
    let got = fs::read_to_string(produced).unwrap();
    if std::env::var_os("PARAMSYNC_UPDATE_GOLDEN").is_some() {
        fs::create_dir_all(golden_dir()).unwrap();
        fs::write(&want, &got).unwrap();
        return;
    }
    let expected = fs::read_to_string(&want).unwrap_or_else(|e| panic!("{}: {e}", want.display()));
    assert_eq!(got, expected, "{golden} changed");
}

#[test]
fn ssp_pair_trace_by_hand() {
    // Worker 0 runs three free iterations, then both push at t=4 in one
    // batch. Its fifth push leads by 4 and waits for worker 1 at t=8.
    let expected = "\
time\tworker\tkind\tt_p\tdecision
0\t0\tpull_return\t0\t-
0\t1\tpull_return\t0\t-
1\t0\tcompute_done\t0\t-
1\t0\tpush_arrive\t1\tgrant
1\t0\tgrant_deliver\t1\tok
1\t0\tpull_arrive\t1\t-
1\t0\tpull_return\t1\t-
2\t0\tcompute_done\t1\t-
2\t0\tpush_arrive\t2\tgrant
2\t0\tgrant_deliver\t2\tok
2\t0\tpull_arrive\t2\t-
2\t0\tpull_return\t2\t-
3\t0\tcompute_done\t2\t-
3\t0\tpush_arrive\t3\tgrant
3\t0\tgrant_deliver\t3\tok
3\t0\tpull_arrive\t3\t-
3\t0\tpull_return\t3\t-
4\t1\tcompute_done\t0\t-
4\t0\tcompute_done\t3\t-
4\t1\tpush_arrive\t1\tgrant
4\t1\tgrant_deliver\t1\tok
4\t0\tpush_arrive\t4\tgrant
4\t0\tgrant_deliver\t4\tok
4\t1\tpull_arrive\t1\t-
4\t0\tpull_arrive\t4\t-
4\t1\tpull_return\t1\t-
4\t0\tpull_return\t4\t-
5\t0\tcompute_done\t4\t-
5\t0\tpush_arrive\t5\tdefer
8\t1\tcompute_done\t1\t-
8\t1\tpush_arrive\t2\tgrant
8\t1\tgrant_deliver\t2\tok
8\t0\tgrant_deliver\t5\trelease
";
    let config = validate_config(ExperimentConfig::parse(SSP_PAIR).unwrap()).unwrap();
    let tsv = run_simulation(&config).unwrap().trace.to_tsv();
    let head: Vec<&str> = tsv.lines().take(expected.lines().count()).collect();
    assert_eq!(head, expected.lines().collect::<Vec<_>>());
}

#[test]
fn run_outputs_match_golden() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "s.conf", SCENARIO);
    let out = dir.path().join("out");
    let res = paramsync(&["run", &config, "--trace", "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    for name in ["report.csv", "loss.csv", "regret.csv", "trace.tsv"] {
        check_golden(&out.join(name), &format!("run_{name}"));
    }
}

#[test]
fn compare_and_sweep_match_golden() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "s.conf", SCENARIO);
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    let res = paramsync(&["compare", &config, "--out", out_s]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    check_golden(&out.join("compare.csv"), "compare.csv");

    let res = paramsync(&["sweep-ssp", &config, "--s", "0..3", "--out", out_s]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    check_golden(&out.join("sweep_ssp.csv"), "sweep_ssp.csv");
    let csv = fs::read_to_string(out.join("sweep_ssp.csv")).unwrap();
    let labels: Vec<&str> = csv.lines().skip(1).filter_map(|l| l.split(',').next()).collect();
    assert_eq!(labels, ["ssp-0", "ssp-1", "ssp-2", "ssp-3"]);

    // A zero threshold is a barrier, so its row matches the bsp row.
    let compare = fs::read_to_string(out.join("compare.csv")).unwrap();
    let tail = |line: &str| line.split_once(',').unwrap().1.to_string();
    let bsp = compare.lines().find(|l| l.starts_with("bsp,")).map(tail).unwrap();
    let ssp0 = csv.lines().find(|l| l.starts_with("ssp-0,")).map(tail).unwrap();
    assert_eq!(bsp, ssp0);
}

#[test]
fn check_reports_the_normalized_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "s.conf", SCENARIO);
    let res = paramsync(&["check", &config]);
    assert!(res.status.success());
    let stdout = String::from_utf8(res.stdout).unwrap();
    assert_eq!(
        stdout.trim(),
        "ok: dssp with 3 workers, s_lower=1 r_max=3, linear_regression on 48 examples, simulated mode"
    );
}

#[test]
fn negative_r_max_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "bad.conf", &SCENARIO.replace("r_max = 3", "r_max = -2"));
    let res = paramsync(&["check", &config]);
    assert_eq!(res.status.code(), Some(2));
    let stderr = String::from_utf8(res.stderr).unwrap();
    assert!(stderr.starts_with("error: "), "{stderr}");
    assert!(stderr.contains("staleness"), "{stderr}");
}

#[test]
fn invalid_combination_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "bad.conf", &SCENARIO.replace("worker_count = 3", "worker_count = 0"));
    let res = paramsync(&["run", &config, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("worker_count"));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn divergence_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "hot.conf", &SCENARIO.replace("learning_rate = 0.05", "learning_rate = 1e200"));
    let res = paramsync(&["run", &config, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(4), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(String::from_utf8_lossy(&res.stderr).contains("divergence"));
}

#[test]
fn missed_deadline_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let text = SCENARIO.replace("compute = uniform(0.5, 1.5)", "compute = const(0.05)") + "mode = threaded\n";
    let config = write_config(dir.path(), "slow.conf", &text);
    let res = paramsync(&["run", &config, "--deadline", "0.1", "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(3), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(String::from_utf8_lossy(&res.stderr).contains("did not finish"));
}

#[test]
fn threaded_run_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let text = SCENARIO.replace("compute = uniform(0.5, 1.5)", "compute = const(0.001)")
        .replace("comm_delay = const(0.1)", "comm_delay = const(0.0001)")
        + "mode = threaded\n";
    let config = write_config(dir.path(), "fast.conf", &text);
    let out = dir.path().join("o");
    let res = paramsync(&["run", &config, "--trace", "--deadline", "30", "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    for name in ["report.csv", "loss.csv", "regret.csv", "trace.tsv"] {
        assert!(out.join(name).exists(), "{name} missing");
    }
}
