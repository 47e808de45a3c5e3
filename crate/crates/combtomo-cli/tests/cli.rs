//! End-to-end tests of the binary: flag parsing, file formats, exit codes,
//! and reproducibility of the emitted artifacts.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_combtomo"));
    // The workspace fold order depends on the worker count, so pin it.
    cmd.env_remove("COMBTOMO_THREADS");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&read(path)).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Standard fixture: a 2-step single-qubit comb with one memory qubit.
fn gen_fixture(dir: &Path, seed: u64) -> PathBuf {
    let out = dir.join(format!("truth_{seed}.json"));
    let out_str = out.to_str().unwrap().to_string();
    let o = run(&[
        "gen-comb",
        "--steps",
        "2",
        "--in-dims",
        "2,2",
        "--out-dims",
        "2,2",
        "--anc-dims",
        "1,2,2",
        "--seed",
        &seed.to_string(),
        "--out",
        &out_str,
    ]);
    assert_exit(&o, 0);
    out
}

#[test]
fn gen_comb_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen_fixture(dir.path(), 7);
    let first = read(&a);
    std::fs::remove_file(&a).unwrap();
    let b = gen_fixture(dir.path(), 7);
    assert_eq!(first, read(&b));

    let doc = json(&b);
    assert!(doc["comb"]["dims"].is_object() || doc["comb"]["isometries"].is_array());
    assert_eq!(doc["metadata"]["command"], "gen-comb");
    assert_eq!(doc["metadata"]["flags"]["seed"], "7");
    assert!(doc["metadata"]["comb_hash"].as_str().unwrap().len() == 64);
}

#[test]
fn gen_comb_rejects_an_infeasible_ancilla_chain() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bad.json");
    // Implied leading 1 makes this [1,2,1]: the final step would have to
    // compress two qubits into one output qubit isometrically.
    let o = run(&[
        "gen-comb",
        "--steps",
        "2",
        "--in-dims",
        "2,2",
        "--out-dims",
        "2,2",
        "--anc-dims",
        "2,1",
        "--seed",
        "7",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_exit(&o, 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("cannot host an isometry"), "stderr: {err}");
    assert!(!out.exists());
}

#[test]
fn simulate_exact_probabilities_are_complete_per_setting() {
    let dir = tempfile::tempdir().unwrap();
    // 1-step comb: probabilities over the completeness group {E_0, E_1}
    // must sum to 1 for every preparation.
    let truth = dir.path().join("one.json");
    let o = run(&[
        "gen-comb",
        "--steps",
        "1",
        "--in-dims",
        "2",
        "--out-dims",
        "2",
        "--anc-dims",
        "1,1",
        "--seed",
        "3",
        "--out",
        truth.to_str().unwrap(),
    ]);
    assert_exit(&o, 0);

    let records = dir.path().join("records.json");
    let o = run(&[
        "simulate",
        "--comb",
        truth.to_str().unwrap(),
        "--exact",
        "--out",
        records.to_str().unwrap(),
    ]);
    assert_exit(&o, 0);

    let doc = json(&records);
    assert_eq!(doc["metadata"]["shots"], Value::Null);
    assert_eq!(doc["metadata"]["design_size"], 16);
    assert!(doc["metadata"]["comb_hash"].as_str().unwrap().len() == 64);
    let recs = doc["records"].as_array().unwrap();
    assert_eq!(recs.len(), 16);
    for alpha in 0..4 {
        let total: f64 = recs
            .iter()
            .filter(|r| r["alpha"][0] == alpha && r["beta"][0].as_u64().unwrap() < 2)
            .map(|r| r["prob"].as_f64().unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-9, "alpha {alpha}: total {total}");
    }
}

#[test]
fn simulate_requires_a_mode_and_rejects_zero_shots() {
    let dir = tempfile::tempdir().unwrap();
    let truth = gen_fixture(dir.path(), 1);
    let out = dir.path().join("r.json");
    let o = run(&[
        "simulate",
        "--comb",
        truth.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_exit(&o, 2);
    let o = run(&[
        "simulate",
        "--comb",
        truth.to_str().unwrap(),
        "--shots",
        "0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_exit(&o, 2);
    // clap rejects the conflicting pair itself.
    let o = run(&[
        "simulate",
        "--comb",
        truth.to_str().unwrap(),
        "--shots",
        "10",
        "--exact",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_exit(&o, 2);
}

#[test]
fn simulate_sampled_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let truth = gen_fixture(dir.path(), 5);
    let r1 = dir.path().join("r1.json");
    let r2 = dir.path().join("r2.json");
    for out in [&r1, &r2] {
        let o = run(&[
            "simulate",
            "--comb",
            truth.to_str().unwrap(),
            "--shots",
            "500",
            "--seed",
            "11",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_exit(&o, 0);
    }
    assert_eq!(read(&r1), read(&r2));
    let doc = json(&r1);
    assert_eq!(doc["metadata"]["shots"], 500);
    assert_eq!(doc["records"][0]["shots"], 500);
    assert!(doc["records"][0]["counts"].is_u64());
}

#[test]
fn missing_input_files_exit_2() {
    let o = run(&["simulate", "--comb", "/nonexistent.json", "--exact", "--out", "/tmp/x.json"]);
    assert_exit(&o, 2);
    let o = run(&[
        "tomograph",
        "--records",
        "/nonexistent.json",
        "--anc-dims",
        "1,1",
        "--out",
        "/tmp/x.json",
    ]);
    assert_exit(&o, 2);
}

#[test]
fn recovery_from_exact_records_reaches_machine_cost() {
    let dir = tempfile::tempdir().unwrap();
    let truth = gen_fixture(dir.path(), 42);
    let records = dir.path().join("records.json");
    let o = run(&[
        "simulate",
        "--comb",
        truth.to_str().unwrap(),
        "--exact",
        "--out",
        records.to_str().unwrap(),
    ]);
    assert_exit(&o, 0);

    let rec = dir.path().join("rec.json");
    let o = run(&[
        "tomograph",
        "--records",
        records.to_str().unwrap(),
        "--anc-dims",
        "1,2,2",
        "--seed",
        "0",
        "--out",
        rec.to_str().unwrap(),
    ]);
    assert_exit(&o, 0);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("step 0: cost="), "stdout: {stdout}");
    assert!(stdout.contains("step 1: cost="), "stdout: {stdout}");

    let reports = json(&dir.path().join("rec.reports.json"));
    let steps = reports["reports"].as_array().unwrap();
    assert_eq!(steps.len(), 2);
    for s in steps {
        assert!(s["final_cost"].as_f64().unwrap() <= 1e-8);
        assert!(s["elapsed_ms"].as_f64().unwrap() >= 0.0);
    }

    // The recovered comb reproduces the truth's Choi operator.
    let o = run(&[
        "metrics",
        "--a",
        truth.to_str().unwrap(),
        "--b",
        rec.to_str().unwrap(),
        "--which",
        "fidelity",
    ]);
    assert_exit(&o, 0);
    let f: f64 = String::from_utf8_lossy(&o.stdout).trim().parse().unwrap();
    assert!(f > 1.0 - 1e-6, "fidelity {f}");
}

#[test]
fn undersized_models_finish_with_a_positive_misfit_cost() {
    let dir = tempfile::tempdir().unwrap();
    let truth = gen_fixture(dir.path(), 9);
    let records = dir.path().join("records.json");
    let o = run(&[
        "simulate",
        "--comb",
        truth.to_str().unwrap(),
        "--exact",
        "--out",
        records.to_str().unwrap(),
    ]);
    assert_exit(&o, 0);

    let rec = dir.path().join("memoryless.json");
    let o = run(&[
        "tomograph",
        "--records",
        records.to_str().unwrap(),
        "--anc-dims",
        "1,1,1",
        "--out",
        rec.to_str().unwrap(),
    ]);
    assert_exit(&o, 0);
    let reports = json(&dir.path().join("memoryless.reports.json"));
    let worst = reports["reports"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["final_cost"].as_f64().unwrap())
        .fold(0.0f64, f64::max);
    assert!(worst > 1e-6, "memoryless fit suspiciously good: {worst}");
}

#[test]
fn tomograph_reruns_reproduce_the_comb_file() {
    let dir = tempfile::tempdir().unwrap();
    let truth = gen_fixture(dir.path(), 13);
    let records = dir.path().join("records.json");
    let o = run(&[
        "simulate",
        "--comb",
        truth.to_str().unwrap(),
        "--shots",
        "400",
        "--seed",
        "2",
        "--out",
        records.to_str().unwrap(),
    ]);
    assert_exit(&o, 0);

    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for out in [&a, &b] {
        let o = run(&[
            "tomograph",
            "--records",
            records.to_str().unwrap(),
            "--anc-dims",
            "1,2,2",
            "--seed",
            "6",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_exit(&o, 0);
    }
    // Wall times differ only in the report sidecars; the comb is identical.
    assert_eq!(read(&a), read(&b));
}

#[test]
fn under_covered_records_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let truth = gen_fixture(dir.path(), 21);
    let records = dir.path().join("records.json");
    let o = run(&[
        "simulate",
        "--comb",
        truth.to_str().unwrap(),
        "--exact",
        "--out",
        records.to_str().unwrap(),
    ]);
    assert_exit(&o, 0);

    // Keep only two of the four step-0 preparations: rank 2 of 4.
    let doc = json(&records);
    let kept: Vec<Value> = doc["records"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|r| r["alpha"][0].as_u64().unwrap() < 2)
        .cloned()
        .collect();
    let thin = dir.path().join("thin.json");
    std::fs::write(&thin, serde_json::to_string(&kept).unwrap()).unwrap();

    let o = run(&[
        "tomograph",
        "--records",
        thin.to_str().unwrap(),
        "--anc-dims",
        "1,2,2",
        "--out",
        dir.path().join("x.json").to_str().unwrap(),
    ]);
    assert_exit(&o, 3);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("rank"), "stderr: {err}");
}

#[test]
fn bound_table_has_the_fixed_header_and_monotone_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("table.csv");
    let o = run(&[
        "bound",
        "--dim",
        "16",
        "--purity-grid",
        "0.0625:1.0:16",
        "--ranks",
        "1,2,4,8,15",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_exit(&o, 0);

    let text = read(&out);
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "purity,rank,bound,branch,K,oracle_max,dominates"
    );
    let mut by_rank: std::collections::BTreeMap<usize, Vec<f64>> = Default::default();
    let mut rows = 0;
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f.len(), 7);
        let rank: usize = f[1].parse().unwrap();
        let bound: f64 = f[2].parse().unwrap();
        assert!(f[3] == "low" || f[3] == "high");
        let _k: usize = f[4].parse().unwrap();
        assert!(f[5].is_empty() && f[6].is_empty(), "oracle off: {line}");
        by_rank.entry(rank).or_default().push(bound);
        rows += 1;
    }
    assert_eq!(rows, 16 * 5);
    for (rank, column) in by_rank {
        assert_eq!(column.len(), 16);
        for w in column.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-12,
                "rank {rank} column rises: {} -> {}",
                w[0],
                w[1]
            );
        }
        // Purity 1 sits at the end of the grid and costs nothing.
        assert!(column[15].abs() < 1e-15);
    }

    let meta = json(&dir.path().join("table.meta.json"));
    assert_eq!(meta["rows"], 80);
    assert_eq!(meta["command"], "bound");
}

#[test]
fn bound_oracle_column_stays_dominated() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("oracle.csv");
    let o = run(&[
        "bound",
        "--dim",
        "4",
        "--purity-grid",
        "0.3:0.9:4",
        "--ranks",
        "1,2",
        "--oracle-samples",
        "3000",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_exit(&o, 0);
    let text = read(&out);
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let bound: f64 = f[2].parse().unwrap();
        let oracle: f64 = f[5].parse().unwrap();
        assert_eq!(f[6], "true", "row {line}");
        assert!(oracle <= bound + 1e-8, "row {line}");
    }
}

#[test]
fn bound_scales_with_the_squared_trace() {
    let dir = tempfile::tempdir().unwrap();
    let unit = dir.path().join("unit.csv");
    let doubled = dir.path().join("doubled.csv");
    for (out, trace) in [(&unit, "1.0"), (&doubled, "2.0")] {
        let o = run(&[
            "bound",
            "--dim",
            "8",
            "--purity-grid",
            "0.2:0.8:3",
            "--ranks",
            "1,3",
            "--trace",
            trace,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_exit(&o, 0);
    }
    let parse = |p: &Path| -> Vec<f64> {
        read(p)
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
            .collect()
    };
    let (u, d) = (parse(&unit), parse(&doubled));
    assert_eq!(u.len(), d.len());
    for (a, b) in u.iter().zip(&d) {
        assert!((b - 4.0 * a).abs() <= 4e-12 * a.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn bound_rejects_an_infeasible_purity_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    // 0.05 < 1/16
    let o = run(&[
        "bound",
        "--dim",
        "16",
        "--purity-grid",
        "0.05:1.0:4",
        "--ranks",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_exit(&o, 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("infeasible"), "stderr: {err}");
}

#[test]
fn metrics_of_a_comb_against_itself_are_the_identity_values() {
    let dir = tempfile::tempdir().unwrap();
    let truth = gen_fixture(dir.path(), 30);
    let parse_metric = |which: &str| -> f64 {
        let o = run(&[
            "metrics",
            "--a",
            truth.to_str().unwrap(),
            "--b",
            truth.to_str().unwrap(),
            "--which",
            which,
        ]);
        assert_exit(&o, 0);
        String::from_utf8_lossy(&o.stdout).trim().parse().unwrap()
    };
    assert_eq!(parse_metric("hs"), 0.0);
    assert!((parse_metric("fidelity") - 1.0).abs() < 1e-12);
    assert_eq!(parse_metric("relcost"), 0.0);

    let sidecar = json(&dir.path().join("truth_30.metrics.json"));
    assert_eq!(sidecar["metric"], "relcost");
    assert_eq!(sidecar["comb_hash_a"], sidecar["comb_hash_b"]);
}

#[test]
fn metrics_see_through_a_gauge_transformation() {
    use combtomo::comb::{gauge_transform, random_comb, CombDims};
    use combtomo::linalg::hermitian_eig;
    use combtomo::{C64, ComplexMatrix};

    let dir = tempfile::tempdir().unwrap();
    let dims = CombDims::new(vec![2, 2], vec![2, 2], vec![1, 2, 2]).unwrap();
    let truth = random_comb(&dims, 77).unwrap();
    // Any unitary works; take the eigenbasis of a fixed Hermitian matrix.
    let h = ComplexMatrix::from_rows(&[
        vec![C64::new(0.3, 0.0), C64::new(0.1, 0.2)],
        vec![C64::new(0.1, -0.2), C64::new(-0.4, 0.0)],
    ]);
    let (_, u) = hermitian_eig(&h).unwrap();
    let gauged = gauge_transform(&truth, 0, &u).unwrap();

    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    std::fs::write(&a, serde_json::to_string(&truth).unwrap()).unwrap();
    std::fs::write(&b, serde_json::to_string(&gauged).unwrap()).unwrap();

    let parse_metric = |which: &str| -> f64 {
        let o = run(&[
            "metrics",
            "--a",
            a.to_str().unwrap(),
            "--b",
            b.to_str().unwrap(),
            "--which",
            which,
        ]);
        assert_exit(&o, 0);
        String::from_utf8_lossy(&o.stdout).trim().parse().unwrap()
    };
    assert!(parse_metric("hs") < 1e-9);
    assert!((parse_metric("fidelity") - 1.0).abs() < 1e-9);
    assert!(parse_metric("relcost") < 1e-9);
}

#[test]
fn metrics_reject_mismatched_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let two = gen_fixture(dir.path(), 2);
    let one = dir.path().join("one.json");
    let o = run(&[
        "gen-comb",
        "--steps",
        "1",
        "--in-dims",
        "2",
        "--out-dims",
        "2",
        "--anc-dims",
        "1,1",
        "--seed",
        "2",
        "--out",
        one.to_str().unwrap(),
    ]);
    assert_exit(&o, 0);
    let o = run(&[
        "metrics",
        "--a",
        two.to_str().unwrap(),
        "--b",
        one.to_str().unwrap(),
        "--which",
        "hs",
    ]);
    assert_exit(&o, 2);
}

#[test]
fn scaling_writes_the_fixed_header_and_an_exact_row() {
    let dir = tempfile::tempdir().unwrap();
    // 1-step comb keeps this quick.
    let truth = dir.path().join("one.json");
    let o = run(&[
        "gen-comb",
        "--steps",
        "1",
        "--in-dims",
        "2",
        "--out-dims",
        "2",
        "--anc-dims",
        "1,1",
        "--seed",
        "8",
        "--out",
        truth.to_str().unwrap(),
    ]);
    assert_exit(&o, 0);

    let out = dir.path().join("scaling.csv");
    let o = run(&[
        "scaling",
        "--comb",
        truth.to_str().unwrap(),
        "--shots-list",
        "1e2,1000,exact",
        "--seeds",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_exit(&o, 0);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("log-log slope"), "stdout: {stdout}");

    let text = read(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "shots,seed,fidelity,hs_distance");
    let rows: Vec<Vec<String>> = lines
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[0][0], "100");
    assert_eq!(rows[2][0], "1000");
    // Exact runs are recorded under shots 0 and recover the comb outright.
    for row in &rows[4..] {
        assert_eq!(row[0], "0");
        let f: f64 = row[2].parse().unwrap();
        assert!(1.0 - f <= 1e-6, "exact-mode fidelity {f}");
    }
    let meta = json(&dir.path().join("scaling.meta.json"));
    assert_eq!(meta["restarts"], 3);
    assert!(meta["slope"].is_number());
}

#[test]
fn scaling_with_one_budget_warns_and_reports_nan() {
    let dir = tempfile::tempdir().unwrap();
    let truth = dir.path().join("one.json");
    let o = run(&[
        "gen-comb",
        "--steps",
        "1",
        "--in-dims",
        "2",
        "--out-dims",
        "2",
        "--anc-dims",
        "1,1",
        "--seed",
        "8",
        "--out",
        truth.to_str().unwrap(),
    ]);
    assert_exit(&o, 0);
    let out = dir.path().join("single.csv");
    let o = run(&[
        "scaling",
        "--comb",
        truth.to_str().unwrap(),
        "--shots-list",
        "300",
        "--seeds",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_exit(&o, 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("NaN"));
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
}

#[test]
fn worker_override_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let truth = gen_fixture(dir.path(), 4);
    let records = dir.path().join("records.json");
    let o = run(&[
        "simulate",
        "--comb",
        truth.to_str().unwrap(),
        "--exact",
        "--out",
        records.to_str().unwrap(),
    ]);
    assert_exit(&o, 0);

    for bad in ["abc", "0", "-2"] {
        let o = bin()
            .env("COMBTOMO_THREADS", bad)
            .args([
                "tomograph",
                "--records",
                records.to_str().unwrap(),
                "--anc-dims",
                "1,2,2",
                "--out",
                dir.path().join("x.json").to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert_exit(&o, 2);
    }

    let o = bin()
        .env("COMBTOMO_THREADS", "2")
        .args([
            "tomograph",
            "--records",
            records.to_str().unwrap(),
            "--anc-dims",
            "1,2,2",
            "--out",
            dir.path().join("w2.json").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_exit(&o, 0);
    let doc = json(&dir.path().join("w2.json"));
    assert_eq!(doc["metadata"]["workers"], 2);
}
