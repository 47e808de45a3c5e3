//! Command implementations and the file formats they read and write.
//!
//! Output files carry no timestamps; rerunning a command with the same flags
//! and seed reproduces them byte for byte. The one exception is the step
//! report sidecar written by `tomograph`, whose `elapsed_ms` fields measure
//! wall time. Worker counts change the floating-point reduction order, so
//! they are part of the recorded configuration (`COMBTOMO_THREADS`).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::{json, Value};

use combtomo::bounds::{simplex_worst_case_oracle, theorem1_bound};
use combtomo::comb::{
    choi_of_comb, comb_hash, comb_purity, random_comb, CombDims, DensityOperator, QuantumComb,
};
use combtomo::stiefel::OptimizerConfig;
use combtomo::tomo::instrument::{
    default_measure_prepare_set, full_instrument_design, relative_cost, InstrumentSet,
};
use combtomo::tomo::metrics::{hs_distance, log_log_slope, uhlmann_fidelity};
use combtomo::tomo::{
    default_recovery_config, default_single_qubit_sets, design_experiments, iqct_run,
    simulate_experiments, DataSource, ExperimentRecord, MeasurementSet, PreparationSet,
    TempStateCache, DEFAULT_WORKERS,
};
use combtomo::ComplexMatrix;

use crate::{
    BoundArgs, CliError, GenCombArgs, MetricsArgs, ScalingArgs, SimulateArgs, TomographArgs,
    WhichMetric,
};

/// Restart count for every recovery; fixed so that runs are comparable.
const RESTARTS: usize = 3;
/// Seed for the worst-case search behind `bound --oracle-samples`.
const BOUND_ORACLE_SEED: u64 = 0;
/// Slack when deciding whether the analytic bound dominates the search.
const DOMINANCE_SLACK: f64 = 1e-8;

const VERSION: &str = env!("CARGO_PKG_VERSION");

// --------------------------------------------------------------- utilities

fn input_err(msg: impl Into<String>) -> CliError {
    CliError::Input(msg.into())
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| input_err(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| input_err(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Numeric(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    write_text(path, &text)
}

fn parse_json(path: &Path, text: &str) -> Result<Value, CliError> {
    serde_json::from_str(text).map_err(|e| input_err(format!("{}: {e}", path.display())))
}

/// Worker count for parallel sections: `COMBTOMO_THREADS` when set.
fn workers() -> Result<usize, CliError> {
    match std::env::var("COMBTOMO_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(input_err(format!(
                "COMBTOMO_THREADS must be a positive integer, got {v:?}"
            ))),
        },
        Err(std::env::VarError::NotPresent) => Ok(DEFAULT_WORKERS),
        Err(e) => Err(input_err(format!("COMBTOMO_THREADS: {e}"))),
    }
}

fn parse_dims(flag: &str, text: &str) -> Result<Vec<usize>, CliError> {
    let dims: Vec<usize> = text
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| input_err(format!("{flag}: {t:?} is not a dimension")))
        })
        .collect::<Result<_, _>>()?;
    if dims.is_empty() {
        return Err(input_err(format!("{flag} is empty")));
    }
    Ok(dims)
}

/// N+1 ancilla dimensions, or N values with the mandatory leading 1 implied.
fn parse_anc_dims(text: &str, steps: usize) -> Result<Vec<usize>, CliError> {
    let mut dims = parse_dims("--anc-dims", text)?;
    if dims.len() == steps {
        dims.insert(0, 1);
    }
    if dims.len() != steps + 1 {
        return Err(input_err(format!(
            "--anc-dims needs {} or {} values for {steps} steps, got {}",
            steps,
            steps + 1,
            dims.len()
        )));
    }
    Ok(dims)
}

fn flags_value(flags: &[(&str, String)]) -> Value {
    let map: BTreeMap<&str, &str> = flags.iter().map(|(k, v)| (*k, v.as_str())).collect();
    json!(map)
}

/// Metadata block embedded in every output: enough to rerun the command.
fn metadata(command: &str, flags: &[(&str, String)], extra: Value) -> Value {
    let mut meta = json!({
        "command": command,
        "version": VERSION,
        "flags": flags_value(flags),
    });
    if let (Some(base), Value::Object(extra)) = (meta.as_object_mut(), extra) {
        base.extend(extra);
    }
    meta
}

/// `rec.json` -> `rec.reports.json`, `table.csv` -> `table.meta.json`.
fn sidecar(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

// -------------------------------------------------------------- file formats

fn read_comb(path: &Path) -> Result<QuantumComb, CliError> {
    let value = parse_json(path, &read_text(path)?)?;
    let inner = match value {
        Value::Object(mut m) if m.contains_key("comb") => m.remove("comb").unwrap(),
        other => other,
    };
    serde_json::from_value(inner).map_err(|e| input_err(format!("{}: {e}", path.display())))
}

fn read_records(path: &Path) -> Result<Vec<ExperimentRecord>, CliError> {
    let value = parse_json(path, &read_text(path)?)?;
    let inner = match value {
        Value::Object(mut m) if m.contains_key("records") => m.remove("records").unwrap(),
        other => other,
    };
    let records: Vec<ExperimentRecord> =
        serde_json::from_value(inner).map_err(|e| input_err(format!("{}: {e}", path.display())))?;
    for r in &records {
        r.validate()?;
    }
    Ok(records)
}

#[derive(Deserialize)]
struct DesignEntry {
    alpha: Vec<usize>,
    beta: Vec<usize>,
}

fn read_design(path: &Path) -> Result<Vec<(Vec<usize>, Vec<usize>)>, CliError> {
    let text = read_text(path)?;
    let entries: Vec<DesignEntry> =
        serde_json::from_str(&text).map_err(|e| input_err(format!("{}: {e}", path.display())))?;
    Ok(entries.into_iter().map(|e| (e.alpha, e.beta)).collect())
}

#[derive(Deserialize)]
struct PrepsFile {
    states: Vec<ComplexMatrix>,
}

fn read_preps(path: &Path) -> Result<PreparationSet, CliError> {
    let text = read_text(path)?;
    let file: PrepsFile =
        serde_json::from_str(&text).map_err(|e| input_err(format!("{}: {e}", path.display())))?;
    let states = file
        .states
        .into_iter()
        .map(DensityOperator::single)
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PreparationSet::new(0, states)?)
}

#[derive(Deserialize)]
struct MeasFile {
    effects: Vec<ComplexMatrix>,
    #[serde(default)]
    completeness_group: Option<Vec<usize>>,
}

fn read_meas(path: &Path) -> Result<MeasurementSet, CliError> {
    let text = read_text(path)?;
    let file: MeasFile =
        serde_json::from_str(&text).map_err(|e| input_err(format!("{}: {e}", path.display())))?;
    Ok(MeasurementSet::new(0, file.effects, file.completeness_group)?)
}

fn replicate_sets(
    preps: &PreparationSet,
    meas: &MeasurementSet,
    n: usize,
) -> (Vec<PreparationSet>, Vec<MeasurementSet>) {
    (
        (0..n).map(|k| preps.at_step(k)).collect(),
        (0..n).map(|k| meas.at_step(k)).collect(),
    )
}

fn require_qubit_external(dims: &CombDims, context: &str) -> Result<(), CliError> {
    if dims.in_dims().iter().chain(dims.out_dims()).any(|&d| d != 2) {
        return Err(input_err(format!(
            "{context}: the built-in sets are single-qubit; this comb has external \
             dimensions in {:?}, out {:?}",
            dims.in_dims(),
            dims.out_dims()
        )));
    }
    Ok(())
}

// ----------------------------------------------------------------- gen-comb

pub fn gen_comb(args: &GenCombArgs) -> Result<(), CliError> {
    if args.steps == 0 {
        return Err(input_err("--steps must be at least 1"));
    }
    let in_dims = parse_dims("--in-dims", &args.in_dims)?;
    let out_dims = parse_dims("--out-dims", &args.out_dims)?;
    if in_dims.len() != args.steps || out_dims.len() != args.steps {
        return Err(input_err(format!(
            "--steps {} but {} input and {} output dimensions",
            args.steps,
            in_dims.len(),
            out_dims.len()
        )));
    }
    let anc_dims = parse_anc_dims(&args.anc_dims, args.steps)?;
    let dims = CombDims::new(in_dims, out_dims, anc_dims)?;
    let comb = random_comb(&dims, args.seed)?;
    let hash = comb_hash(&comb);

    let flags = [
        ("steps", args.steps.to_string()),
        ("in-dims", args.in_dims.clone()),
        ("out-dims", args.out_dims.clone()),
        ("anc-dims", args.anc_dims.clone()),
        ("seed", args.seed.to_string()),
    ];
    let meta = metadata(
        "gen-comb",
        &flags,
        json!({ "seed": args.seed, "comb_hash": hash }),
    );
    write_json(&args.out, &json!({ "metadata": meta, "comb": comb }))?;

    println!(
        "comb: {} steps, in {:?}, out {:?}, anc {:?}",
        comb.steps(),
        comb.dims().in_dims(),
        comb.dims().out_dims(),
        comb.dims().anc_dims()
    );
    match comb_purity(&comb, None) {
        Ok(p) => println!("choi purity: {p:.6}"),
        Err(_) => println!("choi purity: skipped (space too large)"),
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

// ----------------------------------------------------------------- simulate

/// One design pass per step, each against the truth prefix, concatenated in
/// step order. This is the same schedule a live recovery would ask for.
fn auto_design(
    truth: &QuantumComb,
    preps: &[PreparationSet],
    meas: &[MeasurementSet],
) -> Result<Vec<(Vec<usize>, Vec<usize>)>, CliError> {
    let mut cache = TempStateCache::new();
    let mut design = Vec::new();
    for k in 0..truth.steps() {
        let step = design_experiments(&truth.isometries()[..k], preps, meas, k, &mut cache, None)?;
        design.extend(step);
    }
    Ok(design)
}

pub fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let truth = read_comb(&args.comb)?;
    require_qubit_external(truth.dims(), "simulate")?;
    let shots = match (args.shots, args.exact) {
        (Some(0), _) => return Err(input_err("--shots must be at least 1")),
        (Some(s), _) => Some(s),
        (None, true) => None,
        (None, false) => {
            return Err(input_err("choose a shot budget with --shots or ask for --exact"))
        }
    };

    let n = truth.steps();
    let (p0, m0) = default_single_qubit_sets();
    let (preps, meas) = replicate_sets(&p0, &m0, n);
    let design = if args.design == "auto" {
        auto_design(&truth, &preps, &meas)?
    } else {
        read_design(Path::new(&args.design))?
    };
    let records = simulate_experiments(&truth, &preps, &meas, &design, shots, args.seed)?;

    let flags = [
        ("comb", args.comb.display().to_string()),
        (
            "shots",
            args.shots.map_or_else(|| "exact".into(), |s| s.to_string()),
        ),
        ("seed", args.seed.to_string()),
        ("design", args.design.clone()),
    ];
    let meta = metadata(
        "simulate",
        &flags,
        json!({
            "seed": args.seed,
            "shots": shots,
            "design_size": design.len(),
            "comb_hash": comb_hash(&truth),
        }),
    );
    write_json(&args.out, &json!({ "metadata": meta, "records": records }))?;

    let mode = if shots.is_some() { "sampled" } else { "exact" };
    println!("simulated {} records ({mode})", records.len());
    println!("wrote {}", args.out.display());
    Ok(())
}

// ---------------------------------------------------------------- tomograph

fn read_opt_config(path: &Path) -> Result<OptimizerConfig, CliError> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| input_err(format!("{}: {e}", path.display())))
}

pub fn tomograph(args: &TomographArgs) -> Result<(), CliError> {
    let records = read_records(&args.records)?;
    if records.is_empty() {
        return Err(input_err("records file holds no experiments"));
    }
    let n = records.iter().map(|r| r.alpha.len()).max().unwrap();

    let p0 = if args.preps == "default" {
        default_single_qubit_sets().0
    } else {
        read_preps(Path::new(&args.preps))?
    };
    let m0 = if args.meas == "default" {
        default_single_qubit_sets().1
    } else {
        read_meas(Path::new(&args.meas))?
    };
    let (preps, meas) = replicate_sets(&p0, &m0, n);
    let anc = parse_anc_dims(&args.anc_dims, n)?;
    let cfg = match &args.opt {
        Some(path) => read_opt_config(path)?,
        None => default_recovery_config(),
    };
    let workers = workers()?;

    let outcome = iqct_run(
        DataSource::Records(&records),
        &preps,
        &meas,
        &anc,
        &cfg,
        RESTARTS,
        workers,
        args.seed,
    )?;
    for r in &outcome.reports {
        println!(
            "step {}: cost={:.3e}, grad_norm={:.3e}, time={:.1}ms",
            r.step, r.final_cost, r.grad_norm, r.elapsed_ms
        );
    }

    let flags = [
        ("records", args.records.display().to_string()),
        ("preps", args.preps.clone()),
        ("meas", args.meas.clone()),
        ("anc-dims", args.anc_dims.clone()),
        (
            "opt",
            args.opt
                .as_ref()
                .map_or_else(|| "default".into(), |p| p.display().to_string()),
        ),
        ("seed", args.seed.to_string()),
    ];
    let extra = json!({
        "seed": args.seed,
        "workers": workers,
        "restarts": RESTARTS,
        "comb_hash": comb_hash(&outcome.comb),
    });
    let meta = metadata("tomograph", &flags, extra.clone());
    write_json(&args.out, &json!({ "metadata": meta, "comb": outcome.comb }))?;

    // Wall times live only here, never in the comb file, so the comb file
    // stays byte-identical across reruns.
    let reports_meta = metadata("tomograph", &flags, extra);
    let reports_path = sidecar(&args.out, "reports.json");
    write_json(
        &reports_path,
        &json!({ "metadata": reports_meta, "reports": outcome.reports }),
    )?;
    println!("wrote {}", args.out.display());
    println!("wrote {}", reports_path.display());
    Ok(())
}

// -------------------------------------------------------------------- bound

/// Inclusive linspace written `start:end:count`; a single point when count
/// is 1.
fn parse_grid(text: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return Err(input_err("--purity-grid must be start:end:count"));
    }
    let start: f64 = parts[0]
        .trim()
        .parse()
        .map_err(|_| input_err(format!("--purity-grid start {:?}", parts[0])))?;
    let end: f64 = parts[1]
        .trim()
        .parse()
        .map_err(|_| input_err(format!("--purity-grid end {:?}", parts[1])))?;
    let count: usize = parts[2]
        .trim()
        .parse()
        .map_err(|_| input_err(format!("--purity-grid count {:?}", parts[2])))?;
    if count == 0 {
        return Err(input_err("--purity-grid count must be at least 1"));
    }
    if !start.is_finite() || !end.is_finite() {
        return Err(input_err("--purity-grid endpoints must be finite"));
    }
    if count == 1 {
        return Ok(vec![start]);
    }
    Ok((0..count)
        .map(|i| start + (end - start) * i as f64 / (count - 1) as f64)
        .collect())
}

pub fn bound(args: &BoundArgs) -> Result<(), CliError> {
    if args.dim == 0 {
        return Err(input_err("--dim must be at least 1"));
    }
    let purities = parse_grid(&args.purity_grid)?;
    let ranks = parse_dims("--ranks", &args.ranks)?;
    for &r in &ranks {
        if r == 0 || r > args.dim {
            return Err(input_err(format!(
                "--ranks: {r} is outside 1..={}",
                args.dim
            )));
        }
    }
    if !args.trace.is_finite() || args.trace <= 0.0 {
        return Err(input_err("--trace must be positive and finite"));
    }
    let min_purity = 1.0 / args.dim as f64;
    for &p in &purities {
        if !p.is_finite() || p < min_purity - 1e-12 || p > 1.0 + 1e-12 {
            return Err(input_err(format!(
                "purity {p} is infeasible for dimension {}: the range is [{min_purity:.6}, 1]",
                args.dim
            )));
        }
    }
    let workers = workers()?;
    let scale = args.trace * args.trace;

    let mut csv = String::from("purity,rank,bound,branch,K,oracle_max,dominates\n");
    for &p in &purities {
        for &r in &ranks {
            let b = theorem1_bound(p, r, args.dim)?;
            let branch = b.branch.to_string();
            let (oracle_cell, dominates_cell) = if args.oracle_samples > 0 {
                let o = simplex_worst_case_oracle(
                    p,
                    r,
                    args.dim,
                    args.oracle_samples,
                    BOUND_ORACLE_SEED,
                    workers,
                )?;
                let dominates = o.max_distance <= b.bound + DOMINANCE_SLACK;
                (
                    format!("{:.11e}", o.max_distance * scale),
                    dominates.to_string(),
                )
            } else {
                (String::new(), String::new())
            };
            csv.push_str(&format!(
                "{:.11e},{r},{:.11e},{branch},{},{oracle_cell},{dominates_cell}\n",
                p,
                b.bound * scale,
                b.k,
            ));
        }
    }
    write_text(&args.out, &csv)?;

    let flags = [
        ("dim", args.dim.to_string()),
        ("purity-grid", args.purity_grid.clone()),
        ("ranks", args.ranks.clone()),
        ("trace", args.trace.to_string()),
        ("oracle-samples", args.oracle_samples.to_string()),
    ];
    let meta = metadata(
        "bound",
        &flags,
        json!({
            "workers": workers,
            "oracle_seed": BOUND_ORACLE_SEED,
            "dominance_slack": DOMINANCE_SLACK,
            "rows": purities.len() * ranks.len(),
        }),
    );
    write_json(&sidecar(&args.out, "meta.json"), &meta)?;
    println!(
        "wrote {} rows to {}",
        purities.len() * ranks.len(),
        args.out.display()
    );
    Ok(())
}

// ------------------------------------------------------------------ metrics

#[derive(Deserialize)]
struct InstrumentDesignEntry {
    alpha: usize,
    xs: Vec<usize>,
    beta: usize,
}

fn read_instrument_design(path: &Path) -> Result<Vec<(usize, Vec<usize>, usize)>, CliError> {
    let text = read_text(path)?;
    let entries: Vec<InstrumentDesignEntry> =
        serde_json::from_str(&text).map_err(|e| input_err(format!("{}: {e}", path.display())))?;
    Ok(entries.into_iter().map(|e| (e.alpha, e.xs, e.beta)).collect())
}

pub fn metrics(args: &MetricsArgs) -> Result<(), CliError> {
    let a = read_comb(&args.a)?;
    let b = read_comb(&args.b)?;
    let (name, value) = match args.which {
        WhichMetric::Hs => {
            let ca = choi_of_comb(&a, None)?;
            let cb = choi_of_comb(&b, None)?;
            ("hs", hs_distance(&ca, &cb)?)
        }
        WhichMetric::Fidelity => {
            let ca = choi_of_comb(&a, None)?;
            let cb = choi_of_comb(&b, None)?;
            ("fidelity", uhlmann_fidelity(&ca, &cb)?)
        }
        WhichMetric::Relcost => {
            require_qubit_external(a.dims(), "metrics --which relcost")?;
            require_qubit_external(b.dims(), "metrics --which relcost")?;
            let n = a.steps();
            let preps0 = default_single_qubit_sets().0;
            let sets = (0..n.saturating_sub(1))
                .map(default_measure_prepare_set)
                .collect::<Result<Vec<InstrumentSet>, _>>()?;
            let final_meas = default_single_qubit_sets().1.at_step(n.saturating_sub(1));
            let design = match &args.design {
                Some(path) => read_instrument_design(path)?,
                None => full_instrument_design(&preps0, &sets, &final_meas),
            };
            (
                "relcost",
                relative_cost(&a, &b, &preps0, &sets, &final_meas, &design)?,
            )
        }
    };
    println!("{value:.11e}");

    let flags = [
        ("a", args.a.display().to_string()),
        ("b", args.b.display().to_string()),
        (
            "which",
            match args.which {
                WhichMetric::Hs => "hs".to_string(),
                WhichMetric::Fidelity => "fidelity".to_string(),
                WhichMetric::Relcost => "relcost".to_string(),
            },
        ),
        (
            "design",
            args.design
                .as_ref()
                .map_or_else(|| "full".into(), |p| p.display().to_string()),
        ),
    ];
    let meta = metadata(
        "metrics",
        &flags,
        json!({
            "metric": name,
            "value": value,
            "comb_hash_a": comb_hash(&a),
            "comb_hash_b": comb_hash(&b),
        }),
    );
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| sidecar(&args.a, "metrics.json"));
    write_json(&out, &meta)?;
    Ok(())
}

// ------------------------------------------------------------------ scaling

/// Shot budgets: integers, scientific floats like `1e4`, or the token
/// `exact` for a no-sampling run (recorded under shots 0, excluded from the
/// slope fit).
fn parse_shots_list(text: &str) -> Result<Vec<Option<u64>>, CliError> {
    let mut out = Vec::new();
    for tok in text.split(',') {
        let t = tok.trim();
        if t.eq_ignore_ascii_case("exact") {
            out.push(None);
            continue;
        }
        let n = if let Ok(n) = t.parse::<u64>() {
            n
        } else {
            let f: f64 = t
                .parse()
                .map_err(|_| input_err(format!("--shots-list: {t:?} is not a shot count")))?;
            if !f.is_finite() || f < 1.0 || f > u64::MAX as f64 || f.fract() != 0.0 {
                return Err(input_err(format!(
                    "--shots-list: {t:?} is not a positive integer"
                )));
            }
            f as u64
        };
        if n == 0 {
            return Err(input_err("--shots-list entries must be at least 1"));
        }
        out.push(Some(n));
    }
    if out.is_empty() {
        return Err(input_err("--shots-list is empty"));
    }
    Ok(out)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn scaling(args: &ScalingArgs) -> Result<(), CliError> {
    let truth = read_comb(&args.comb)?;
    require_qubit_external(truth.dims(), "scaling")?;
    if args.seeds == 0 {
        return Err(input_err("--seeds must be at least 1"));
    }
    let budgets = parse_shots_list(&args.shots_list)?;

    let n = truth.steps();
    let (p0, m0) = default_single_qubit_sets();
    let (preps, meas) = replicate_sets(&p0, &m0, n);
    let cfg = default_recovery_config();
    let workers = workers()?;
    let model_anc = truth.dims().anc_dims().to_vec();
    let truth_choi = choi_of_comb(&truth, None)?;

    let mut csv = String::from("shots,seed,fidelity,hs_distance\n");
    let mut fit_points: Vec<(f64, f64)> = Vec::new();
    for &budget in &budgets {
        let mut infidelities = Vec::with_capacity(args.seeds as usize);
        for seed in 0..args.seeds {
            let outcome = iqct_run(
                DataSource::Simulated { truth: &truth, shots: budget },
                &preps,
                &meas,
                &model_anc,
                &cfg,
                RESTARTS,
                workers,
                seed,
            )?;
            let rec_choi = choi_of_comb(&outcome.comb, None)?;
            let f = uhlmann_fidelity(&truth_choi, &rec_choi)?;
            let d = hs_distance(&truth_choi, &rec_choi)?;
            csv.push_str(&format!(
                "{},{seed},{f:.11e},{d:.11e}\n",
                budget.unwrap_or(0)
            ));
            infidelities.push(1.0 - f);
        }
        if let Some(s) = budget {
            fit_points.push((s as f64, median(&mut infidelities)));
        }
    }
    write_text(&args.out, &csv)?;

    let xs: Vec<f64> = fit_points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = fit_points.iter().map(|p| p.1).collect();
    let slope = log_log_slope(&xs, &ys);
    if slope.is_nan() {
        eprintln!(
            "warning: the slope fit needs at least two distinct shot budgets \
             with positive median infidelity"
        );
    }
    println!("log-log slope of median infidelity vs shots: {slope}");

    let flags = [
        ("comb", args.comb.display().to_string()),
        ("shots-list", args.shots_list.clone()),
        ("seeds", args.seeds.to_string()),
    ];
    let meta = metadata(
        "scaling",
        &flags,
        json!({
            "workers": workers,
            "restarts": RESTARTS,
            "comb_hash": comb_hash(&truth),
            "slope": slope,
        }),
    );
    write_json(&sidecar(&args.out, "meta.json"), &meta)?;
    println!("wrote {}", args.out.display());
    Ok(())
}
