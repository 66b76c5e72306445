//! Acceptance suite: one test per criterion, each printing a single
//! `criterion N name: PASS|FAIL ...` line. Run with `--nocapture` to see them.
//!
//! Every tolerance, instance count and runtime budget is pinned here, so a
//! loosened constant in the library fails this suite.

use std::path::Path;
use std::process::Command;
use std::sync::Mutex;

use ndarray::{array, Array2};
use splinelens::batchnorm::{compute_stats_with, StatsOptions, StatsSource};
use splinelens::checks::{self, run_check, CheckConfig, CheckReport};
use splinelens::geometry::THEOREM2_TOL;
use splinelens::training::{each_side_check, FD_STEP, GRAD_CHECK_FLOOR};
use splinelens::{Activation, BNState, Layer, NetworkSpec};

/// Heavy checks run one at a time so their runtimes mean something.
static SERIAL: Mutex<()> = Mutex::new(());

fn run(id: u32, name: &'static str, budget_s: Option<f64>) -> (CheckReport, bool) {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let report = run_check(name, &CheckConfig::default()).expect("check errored");
    let in_time = budget_s.is_none_or(|b| report.seconds < b);
    let ok = report.passed && in_time;
    let budget = budget_s.map_or(String::new(), |b| format!(", budget {b}s"));
    println!("criterion {id:>2} {name}: {} {} ({:.2}s{budget})", if ok { "PASS" } else { "FAIL" }, report.summary, report.seconds);
    for f in &report.findings {
        println!("    finding: {f}");
    }
    (report, ok)
}

fn require(id: u32, name: &'static str, budget_s: Option<f64>) -> CheckReport {
    let (report, ok) = run(id, name, budget_s);
    assert!(ok, "criterion {id} failed: {}", report.line());
    report
}

#[test]
fn c01_theorem1() {
    assert_eq!(checks::THEOREM1_INSTANCES, 100);
    assert_eq!(checks::THEOREM1_GAP_TOL, 1e-9);
    assert_eq!(checks::THEOREM1_IDENTITY_TOL, 1e-10);
    require(1, "theorem1", Some(5.0));
}

#[test]
fn c01_theorem1_detects_a_shifted_mean() {
    let r = run_check("theorem1", &CheckConfig { seed: 0, mu_offset: 1.0 }).unwrap();
    assert!(!r.passed);
}

#[test]
fn c02_central_arrangement() {
    assert_eq!(checks::CENTRAL_NETS, 20);
    assert_eq!(checks::CENTRAL_TOL, 1e-10);
    require(2, "central_arrangement", Some(5.0));
}

#[test]
fn c03_gamma_absorption() {
    assert_eq!(checks::ABSORB_NETS, 20);
    assert_eq!(checks::ABSORB_INPUTS, 100);
    assert_eq!(checks::ABSORB_TOL, 1e-12);
    require(3, "gamma_absorption", Some(5.0));
}

#[test]
fn c04_partition_exactness() {
    assert_eq!(checks::EXACTNESS_NETS, 30);
    assert_eq!(checks::EXACTNESS_GRID, 1500);
    assert_eq!(checks::TILING_TOL, 1e-7);
    require(4, "partition_exactness", Some(120.0));
}

#[test]
fn c05_theorem3() {
    assert_eq!(checks::DIHEDRAL_INSTANCES, 50);
    assert_eq!(checks::DIHEDRAL_TOL, 1e-6);
    assert_eq!(checks::DIHEDRAL_HAND_TOL, 1e-12);
    require(5, "theorem3", None);
}

#[test]
fn c06_theorem2() {
    assert_eq!(checks::THEOREM2_INSTANCES, 200);
    assert_eq!(checks::THEOREM2_ON_PLANE, 20);
    assert_eq!(THEOREM2_TOL, 1e-8);
    let r = require(6, "theorem2", None);
    // each violated ordering in the CSV has its own logged finding
    let violations: usize = r
        .csv
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[10] == "false") as usize + (f[14] == "false") as usize
        })
        .sum();
    assert_eq!(r.csv.lines().count(), checks::THEOREM2_INSTANCES + 1);
    assert_eq!(violations, r.findings.len());
}

#[test]
fn c07_facet_distance() {
    assert_eq!(checks::FACET_PAIRS, 500);
    assert_eq!(checks::FACET_TOL, 1e-6);
    assert_eq!(checks::FACET_MATCH_RATE, 0.95);
    require(7, "facet_distance", None);
}

#[test]
fn c08_bn_variance() {
    assert_eq!(checks::MC_DRAWS, 1_000_000);
    assert_eq!(checks::MC_BATCH_SIZES, [16, 64, 256]);
    assert_eq!(checks::MC_MU_TOL, 0.02);
    assert_eq!(checks::MC_SIGMA2_TOL, 0.05);
    assert_eq!((checks::FIG7_SAMPLES, checks::FIG7_BATCH, checks::FIG7_DRAWS), (1000, 64, 10_000));
    assert_eq!(checks::FIG7_TOL, 0.10);
    require(8, "bn_variance", Some(60.0));
}

/// Two inputs, two BN units with opposite weights, head `(1, 1)`: each unit
/// normalizes to `(-1, 1)` and `(1, -1)`, so both outputs equal `1 - alpha`.
fn hand_counterexample() -> (NetworkSpec, BNState, Array2<f64>) {
    let net = NetworkSpec::new(
        Activation::LeakyRelu(0.2),
        vec![Layer::zero_bias(array![[1.0], [-1.0]]), Layer::zero_bias(array![[1.0, 1.0]])],
        &[1],
    )
    .unwrap();
    let batch = array![[0.0], [1.0]];
    let template = BNState::for_network(&net);
    let stats = compute_stats_with(&net, &template, batch.view(), StatsOptions::default(), StatsSource::FullSet { size: 2 }).unwrap();
    (net.clone(), stats.to_bn_state(&template), batch)
}

/// The each-side property is false in general, so this criterion is expected
/// to print FAIL. The test passes when every failing trial is a genuine
/// counterexample: its head outputs, evaluated point by point, all lie on
/// one side of zero.
#[test]
fn c09_each_side() {
    assert_eq!(checks::EACH_SIDE_TRIALS, 500);
    let (report, ok) = run(9, "each_side", None);
    let mut failures = 0;
    for line in report.csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let holds: bool = f[4].parse().unwrap();
        let (lo, hi): (f64, f64) = (f[5].parse().unwrap(), f[6].parse().unwrap());
        let batch: usize = f[3].parse().unwrap();
        assert!(batch >= 2);
        if !holds {
            failures += 1;
            assert!(lo >= 0.0 || hi <= 0.0, "trial {} flagged but outputs straddle zero: {line}", f[0]);
        } else {
            assert!(lo < 0.0 && hi > 0.0, "trial {} passed but outputs do not straddle zero: {line}", f[0]);
        }
    }
    assert_eq!(ok, failures == 0);
    let (net, bn, batch) = hand_counterexample();
    assert_eq!(each_side_check(&net, &bn, batch.view()).unwrap(), vec![false]);
    println!("    {failures} failing trials verified as genuine counterexamples; hand-built counterexample confirmed");
}

#[test]
fn c10_concentration() {
    assert_eq!(checks::CONCENTRATION_SEEDS, 10);
    assert_eq!((checks::CONCENTRATION_HIDDEN, checks::CONCENTRATION_WIDTH), (11, 64));
    assert_eq!(checks::CONCENTRATION_EPSILON, 0.1);
    require(10, "concentration", Some(300.0));
}

#[test]
fn c11_jitter() {
    assert_eq!(checks::JITTER_SEEDS, 10);
    assert_eq!((checks::JITTER_SMALL, checks::JITTER_LARGE), (16, 256));
    require(11, "jitter", None);
}

#[test]
fn c12_smart_init() {
    assert_eq!(checks::SMART_SEEDS, 10);
    assert_eq!(checks::SMART_EPOCHS, 20);
    assert_eq!(checks::SMART_RATES.len(), 3);
    require(12, "smart_init", None);
}

#[test]
fn c13_gradients() {
    assert_eq!(checks::GRAD_POINTS, 50);
    assert_eq!(checks::GRAD_TOL, 1e-5);
    assert_eq!((FD_STEP, GRAD_CHECK_FLOOR), (1e-3, 1e-6));
    require(13, "gradients", None);
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_splinelens")
}

fn invoke(args: &[&str], out: &Path, threads: usize) {
    let status = Command::new(bin())
        .args(args)
        .arg("--out")
        .arg(out)
        .arg("--threads")
        .arg(threads.to_string())
        .stdout(std::process::Stdio::null())
        .status()
        .unwrap();
    assert!(status.success(), "{args:?} exited with {status}");
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

const SMALL_RUNS: [&[&str]; 6] = [
    &["partition"],
    &["verify", "--only", "theorem1,central_arrangement,gamma_absorption,theorem3"],
    &["concentration", "--set", "network.depth=3", "--set", "network.width=16", "--set", "concentration.resolution=32"],
    &["jitter", "--set", "dataset.n=256", "--set", "jitter.batch_sizes=16,64", "--set", "jitter.draws=4"],
    &["train", "--set", "train.epochs=3", "--set", "train.snapshot_every=1", "--set", "train.holdout_n=64"],
    &["stats", "--set", "stats.draws=200"],
];

#[test]
fn c14_determinism() {
    let (report, library_ok) = {
        let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
        let r = run_check("determinism", &CheckConfig::default()).unwrap();
        let ok = r.passed;
        (r, ok)
    };
    let tmp = tempfile::tempdir().unwrap();
    let mut mismatched = vec![];
    for args in SMALL_RUNS {
        let name = args[0];
        let runs: Vec<_> = [(1, "a"), (4, "b"), (4, "c")]
            .into_iter()
            .map(|(threads, tag)| {
                let dir = tmp.path().join(format!("{name}_{tag}"));
                invoke(args, &dir, threads);
                snapshot(&dir)
            })
            .collect();
        assert!(runs[0].iter().any(|(f, _)| f == "config.resolved"));
        if runs[0] != runs[1] || runs[1] != runs[2] {
            mismatched.push(name);
        }
    }
    let ok = library_ok && mismatched.is_empty();
    println!(
        "criterion 14 determinism: {} library {}; CLI byte comparison over {} commands at 1 and 4 threads, mismatches: {mismatched:?}",
        if ok { "PASS" } else { "FAIL" },
        report.summary,
        SMALL_RUNS.len()
    );
    assert!(ok);
}
