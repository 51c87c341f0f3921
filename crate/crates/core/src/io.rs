//! Configuration loading, CSV ingestion and result emission.
//!
//! Series are CSV with 12 significant digits; configs, diagnostics and
//! manifests are JSON. Column layouts are documented in `schemas/`.

use std::collections::HashMap;
use std::fs::{self, File};
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::AttackTrace;
use crate::error::{Error, Result};
use crate::estimators::{split_outputs, SolverConfig, SolverDiagnostics, SplitOutputs, StateTrajectory};
use crate::measurement::{MeasurementEpoch, SatelliteEpoch};
use crate::scenario::{compare, ComparisonTable, ScenarioConfig, ScenarioResult, SweepRow};

/// Shipped scenario presets, by name.
pub const PRESETS: &[(&str, &str)] = &[
    ("clean", include_str!("../presets/clean.json")),
    ("synthetic-order-1", include_str!("../presets/synthetic-order-1.json")),
    ("synthetic-order-2", include_str!("../presets/synthetic-order-2.json")),
    ("synthetic-order-3", include_str!("../presets/synthetic-order-3.json")),
    ("integrity-violation", include_str!("../presets/integrity-violation.json")),
    ("order-1-with-multipath", include_str!("../presets/order-1-with-multipath.json")),
];

pub fn preset(name: &str) -> Result<ScenarioConfig> {
    let text = PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| {
            let known: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
            Error::ConfigParse(format!("unknown preset {name:?}; known: {}", known.join(", ")))
        })?;
    parse_config(text)
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::ConfigParse(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

/// Parses and validates a JSON config. Syntax errors, schema violations
/// (unknown keys, wrong types) and cross-field inconsistencies map to
/// distinct error variants.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
    let named = match &value {
        serde_json::Value::Object(map) => map.contains_key("name"),
        _ => return Err(Error::ConfigSchema("top level must be an object".into())),
    };
    let mut cfg: ScenarioConfig = serde_json::from_value(value).map_err(|e| Error::ConfigSchema(e.to_string()))?;
    if !named {
        cfg.name = default_name(&cfg);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn default_name(cfg: &ScenarioConfig) -> String {
    match (&cfg.attack, &cfg.multipath) {
        (None, None) => "clean".into(),
        (None, Some(_)) => "multipath".into(),
        (Some(a), None) => format!("synthetic-order-{}", a.order),
        (Some(a), Some(_)) => format!("order-{}-with-multipath", a.order),
    }
}

/// Pretty JSON snapshot, newline-terminated.
pub fn config_snapshot(cfg: &ScenarioConfig) -> Result<String> {
    Ok(serde_json::to_string_pretty(cfg)? + "\n")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Decimal text with 12 significant digits, shortest form.
pub fn fmt_num(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let rounded: f64 = format!("{v:.11e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

/// Writes equally long columns under `headers`.
pub fn write_series(path: &Path, headers: &[&str], columns: &[&[f64]]) -> Result<()> {
    Error::check_len("series columns", headers.len(), columns.len())?;
    let rows = columns.first().map_or(0, |c| c.len());
    for c in columns {
        Error::check_len("series column length", rows, c.len())?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(headers)?;
    for i in 0..rows {
        w.write_record(columns.iter().map(|c| fmt_num(c[i])))?;
    }
    w.flush()?;
    Ok(())
}

/// Numeric CSV read back by column name.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub headers: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Series {
    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.headers
            .iter()
            .position(|h| h == name)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| Error::Ingest(format!("missing column {name:?}")))
    }

    pub fn len(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn read_series(path: &Path) -> Result<Series> {
    let mut r = open_csv(path)?;
    let headers: Vec<String> = r.headers().map_err(ingest)?.iter().map(str::to_owned).collect();
    let mut columns = vec![Vec::new(); headers.len()];
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(ingest)?;
        for (i, field) in rec.iter().enumerate() {
            columns[i].push(parse_f64(field, &headers[i], line + 2)?);
        }
    }
    Ok(Series { headers, columns })
}

fn open_csv(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::Ingest(format!("{}: {e}", path.display())))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn ingest(e: csv::Error) -> Error {
    Error::Ingest(e.to_string())
}

fn parse_f64(field: &str, column: &str, line: usize) -> Result<f64> {
    field
        .parse::<f64>()
        .map_err(|_| Error::Ingest(format!("line {line}, column {column}: not a number: {field:?}")))
}

/// Measurement CSV columns, one row per (epoch, satellite).
pub const MEASUREMENT_COLUMNS: [&str; 14] = [
    "t_s",
    "sat_id",
    "pr_m",
    "prr_mps",
    "var_pr",
    "var_prr",
    "sat_x",
    "sat_y",
    "sat_z",
    "sat_vx",
    "sat_vy",
    "sat_vz",
    "sat_cb_m",
    "sat_cdrift_mps",
];

pub fn write_measurements_csv(path: &Path, epochs: &[MeasurementEpoch]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(MEASUREMENT_COLUMNS)?;
    for e in epochs {
        for (i, s) in e.sats.iter().enumerate() {
            let nums = [
                e.pr_m[i],
                e.prr_mps[i],
                e.var_pr_m2[i],
                e.var_prr_m2ps2[i],
                s.pos_ecef_m.x,
                s.pos_ecef_m.y,
                s.pos_ecef_m.z,
                s.vel_ecef_mps.x,
                s.vel_ecef_mps.y,
                s.vel_ecef_mps.z,
                s.clock_bias_m,
                s.clock_drift_mps,
            ];
            let mut rec = vec![fmt_num(e.t_s), s.sat_id.to_string()];
            rec.extend(nums.iter().map(|v| fmt_num(*v)));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a measurement CSV. Rows of one epoch must be contiguous but may
/// come in any order; they are sorted by satellite id. Epoch times must
/// increase strictly. Extra columns are ignored.
pub fn ingest_measurements_csv(path: &Path) -> Result<Vec<MeasurementEpoch>> {
    let mut r = open_csv(path)?;
    let headers = r.headers().map_err(ingest)?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let mut cols = [0usize; 14];
    let missing: Vec<&str> = MEASUREMENT_COLUMNS
        .iter()
        .copied()
        .filter(|c| !index.contains_key(c))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Ingest(format!("missing columns: {}", missing.join(", "))));
    }
    for (slot, name) in cols.iter_mut().zip(MEASUREMENT_COLUMNS) {
        *slot = index[name];
    }

    let mut epochs: Vec<Vec<(SatelliteEpoch, [f64; 4])>> = Vec::new();
    let mut times: Vec<f64> = Vec::new();
    for (n, rec) in r.records().enumerate() {
        let rec = rec.map_err(ingest)?;
        let line = n + 2;
        let get = |j: usize| -> Result<f64> {
            let field = rec
                .get(cols[j])
                .ok_or_else(|| Error::Ingest(format!("line {line}: too few fields")))?;
            let v = parse_f64(field, MEASUREMENT_COLUMNS[j], line)?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Ingest(format!("line {line}, column {}: not finite", MEASUREMENT_COLUMNS[j])))
            }
        };
        let t = get(0)?;
        let id_field = rec.get(cols[1]).unwrap_or("");
        let sat_id: u32 = id_field
            .parse()
            .map_err(|_| Error::Ingest(format!("line {line}, column sat_id: not an id: {id_field:?}")))?;
        let sat = SatelliteEpoch {
            sat_id,
            pos_ecef_m: Vector3::new(get(6)?, get(7)?, get(8)?),
            vel_ecef_mps: Vector3::new(get(9)?, get(10)?, get(11)?),
            clock_bias_m: get(12)?,
            clock_drift_mps: get(13)?,
        };
        let obs = [get(2)?, get(3)?, get(4)?, get(5)?];
        if !(obs[2] > 0.0 && obs[3] > 0.0) {
            return Err(Error::Ingest(format!("line {line}: variances must be > 0")));
        }
        match times.last() {
            Some(&last) if t == last => epochs.last_mut().expect("epoch open").push((sat, obs)),
            Some(&last) if t < last => {
                return Err(Error::Ingest(format!("line {line}: epoch time {t} after {last} is not monotone")))
            }
            _ => {
                times.push(t);
                epochs.push(vec![(sat, obs)]);
            }
        }
    }
    if epochs.is_empty() {
        return Err(Error::Ingest(format!("{}: no measurement rows", path.display())));
    }
    let mut out = Vec::with_capacity(epochs.len());
    for (t_s, mut rows) in times.into_iter().zip(epochs) {
        rows.sort_by_key(|(s, _)| s.sat_id);
        if rows.windows(2).any(|w| w[0].0.sat_id == w[1].0.sat_id) {
            return Err(Error::Ingest(format!("epoch {t_s}: duplicate satellite id")));
        }
        let epoch = MeasurementEpoch {
            t_s,
            pr_m: rows.iter().map(|r| r.1[0]).collect(),
            prr_mps: rows.iter().map(|r| r.1[1]).collect(),
            var_pr_m2: rows.iter().map(|r| r.1[2]).collect(),
            var_prr_m2ps2: rows.iter().map(|r| r.1[3]).collect(),
            sats: rows.into_iter().map(|r| r.0).collect(),
        };
        epoch.validate().map_err(|e| Error::Ingest(format!("epoch {t_s}: {e}")))?;
        out.push(epoch);
    }
    Ok(out)
}

pub const ATTACK_COLUMNS: [&str; 5] = ["t_s", "s_rho_m", "s_rhodot_mps", "s_rhoddot", "s_jerk"];

pub fn write_attack_csv(path: &Path, trace: &AttackTrace) -> Result<()> {
    write_series(
        path,
        &ATTACK_COLUMNS,
        &[&trace.t_s, &trace.s_rho_m, &trace.s_rhodot_mps, &trace.s_rhoddot, &trace.s_jerk],
    )
}

pub const SOLUTION_COLUMNS: [&str; 6] = ["t_s", "bias_est_m", "drift_est_mps", "s_bias_m", "s_drift_mps", "s_jerk"];

pub fn write_solution_csv(path: &Path, out: &SplitOutputs) -> Result<()> {
    write_series(
        path,
        &SOLUTION_COLUMNS,
        &[&out.t_s, &out.bias_m, &out.drift_mps, &out.s_bias_m, &out.s_drift_mps, &out.s_jerk],
    )
}

/// Estimated clock at the measurement epochs.
pub fn write_states_csv(path: &Path, t_s: &[f64], states: &StateTrajectory) -> Result<()> {
    write_series(path, &["t_s", "bias_est_m", "drift_est_mps"], &[t_s, &states.bias(), &states.drift()])
}

/// True clock at the measurement epochs.
pub fn write_truth_csv(path: &Path, t_s: &[f64], truth: &StateTrajectory) -> Result<()> {
    write_series(path, &["t_s", "bias_m", "drift_mps"], &[t_s, &truth.bias(), &truth.drift()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub solver: SolverConfig,
    pub diagnostics: SolverDiagnostics,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn write_comparison(dir: &Path, table: &ComparisonTable) -> Result<Vec<PathBuf>> {
    let csv_path = dir.join("comparison.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(["scenario", "ekf_rmse_m", "tsarm_rmse_m"])?;
    for r in &table.rows {
        w.write_record([r.scenario.clone(), fmt_num(r.ekf_rmse_m), fmt_num(r.tsarm_rmse_m)])?;
    }
    w.flush()?;
    let txt_path = dir.join("comparison.txt");
    fs::write(&txt_path, table.render_text())?;
    Ok(vec![csv_path, txt_path])
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["lambda", "rmse_tsarm_m", "rmse_ekf_m", "d2_l1", "converged"])?;
    for r in rows {
        w.write_record([
            fmt_num(r.lambda),
            fmt_num(r.rmse_tsarm_m),
            fmt_num(r.rmse_ekf_m),
            fmt_num(r.d2_l1),
            r.converged.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Everything needed to reproduce a run: the config snapshot next to it
/// plus the seed it recorded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    /// SHA-256 of `config.json` as written.
    pub config_sha256: String,
    pub seed: u64,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub started_utc: String,
    pub finished_utc: String,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.json";

pub fn now_utc() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Writes the config snapshot and returns its hash.
pub fn write_config_snapshot(dir: &Path, cfg: &ScenarioConfig) -> Result<(PathBuf, String)> {
    let snapshot = config_snapshot(cfg)?;
    let path = dir.join(CONFIG_FILE);
    fs::write(&path, &snapshot)?;
    Ok((path, sha256_hex(snapshot.as_bytes())))
}

pub fn write_manifest(
    dir: &Path,
    cfg: &ScenarioConfig,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
    started_utc: String,
) -> Result<RunManifest> {
    let (cfg_path, hash) = write_config_snapshot(dir, cfg)?;
    let mut outs: Vec<String> = outputs.iter().map(|p| p.display().to_string()).collect();
    outs.push(cfg_path.display().to_string());
    outs.push(dir.join(MANIFEST_FILE).display().to_string());
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config_sha256: hash,
        seed: cfg.seed,
        inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        outputs: outs,
        started_utc,
        finished_utc: now_utc(),
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Recomputes the config hash of a run directory and reloads its config.
pub fn verify_run_dir(dir: &Path) -> Result<ScenarioConfig> {
    let manifest: RunManifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    let snapshot = fs::read(dir.join(CONFIG_FILE))?;
    let hash = sha256_hex(&snapshot);
    if hash != manifest.config_sha256 {
        return Err(Error::ConfigInconsistent(format!(
            "config hash {hash} does not match manifest {}",
            manifest.config_sha256
        )));
    }
    let cfg = load_config(&dir.join(CONFIG_FILE))?;
    if cfg.seed != manifest.seed {
        return Err(Error::ConfigInconsistent("manifest seed differs from config seed".into()));
    }
    Ok(cfg)
}

#[derive(Debug, Clone, Serialize)]
struct RunDiagnostics<'a> {
    scenario: &'a str,
    rmse_ekf_m: f64,
    rmse_tsarm_m: f64,
    solver: SolverConfig,
    diagnostics: SolverDiagnostics,
    measurement_tolerance_mps: f64,
    flagged_epochs_s: Vec<f64>,
    clock_tolerance_mps: Option<f64>,
    clock_flagged_epochs_s: Vec<f64>,
    tsarm_clock_flagged_epochs_s: Vec<f64>,
}

fn flagged_clock_times(t_s: &[f64], flags: &[bool]) -> Vec<f64> {
    flags
        .iter()
        .enumerate()
        .filter(|(_, f)| **f)
        .map(|(i, _)| t_s[i + 1])
        .collect()
}

/// Writes the full result bundle for one scenario into `out_dir`.
pub fn emit_results(
    result: &ScenarioResult,
    cfg: &ScenarioConfig,
    out_dir: &Path,
    started_utc: String,
) -> Result<RunManifest> {
    fs::create_dir_all(out_dir)?;
    let d = &result.data;
    let t = &d.t_s;
    let mut outputs = Vec::new();
    let mut out = |name: &str| {
        let p = out_dir.join(name);
        outputs.push(p.clone());
        p
    };

    write_measurements_csv(&out("measurements.csv"), &d.measurements)?;
    let truth = StateTrajectory {
        states: d.truth.clone(),
    };
    write_truth_csv(&out("truth.csv"), t, &truth)?;
    write_attack_csv(&out("attack.csv"), &d.attack)?;
    write_states_csv(&out("ekf.csv"), t, &result.ekf)?;
    let split = split_outputs(&result.tsarm, t, cfg.dt_s)?;
    write_solution_csv(&out("solution.csv"), &split)?;

    let (ekf_b, ekf_d) = (result.ekf.bias(), result.ekf.drift());
    write_series(
        &out("clock_series.csv"),
        &[
            "t_s",
            "true_bias_m",
            "true_drift_mps",
            "spoofed_bias_m",
            "spoofed_drift_mps",
            "ekf_bias_m",
            "ekf_drift_mps",
            "tsarm_bias_m",
            "tsarm_drift_mps",
            "reference_bias_m",
        ],
        &[
            t,
            &truth.bias(),
            &truth.drift(),
            &result.spoofed_bias_m,
            &result.spoofed_drift_mps,
            &ekf_b,
            &ekf_d,
            &split.bias_m,
            &split.drift_mps,
            &result.reference_bias_m,
        ],
    )?;
    let injected_rate: Vec<f64> = (0..d.attack.len()).map(|k| d.attack.injected_rate(k)).collect();
    write_series(
        &out("alterations.csv"),
        &[
            "t_s",
            "injected_s_bias_m",
            "injected_s_drift_mps",
            "injected_s_jerk",
            "est_s_bias_m",
            "est_s_drift_mps",
            "est_s_accel",
            "est_s_jerk",
        ],
        &[
            t,
            &d.attack.s_rho_m,
            &injected_rate,
            &d.attack.s_jerk,
            &split.s_bias_m,
            &split.s_drift_mps,
            &split.s_accel,
            &split.s_jerk,
        ],
    )?;

    let ig = &result.integrity;
    let it: Vec<f64> = ig.epochs.iter().map(|e| e.t_s).collect();
    let checked: Vec<f64> = ig.epochs.iter().map(|e| e.channels.len() as f64).collect();
    let flagged: Vec<f64> = ig
        .epochs
        .iter()
        .map(|e| e.channels.iter().filter(|c| c.flagged).count() as f64)
        .collect();
    let worst: Vec<f64> = ig
        .epochs
        .iter()
        .map(|e| e.channels.iter().fold(0.0_f64, |a, c| a.max(c.residual_mps)))
        .collect();
    write_series(
        &out("integrity.csv"),
        &["t_s", "channels_checked", "channels_flagged", "max_channel_residual_mps"],
        &[&it, &checked, &flagged, &worst],
    )?;

    let clock = ig.clock.as_ref();
    let diag = RunDiagnostics {
        scenario: &result.name,
        rmse_ekf_m: result.rmse_ekf_m,
        rmse_tsarm_m: result.rmse_tsarm_m,
        solver: cfg.solver,
        diagnostics: result.tsarm.diagnostics.clone(),
        measurement_tolerance_mps: ig.tolerance_mps,
        flagged_epochs_s: ig.flagged_times(),
        clock_tolerance_mps: clock.map(|c| c.tolerance_mps),
        clock_flagged_epochs_s: clock.map_or_else(Vec::new, |c| flagged_clock_times(t, &c.flags)),
        tsarm_clock_flagged_epochs_s: flagged_clock_times(t, &result.tsarm_clock_check.flags),
    };
    write_json(&out("diagnostics.json"), &diag)?;
    let table = compare(std::slice::from_ref(result))?;
    outputs.extend(write_comparison(out_dir, &table)?);
    write_manifest(out_dir, cfg, &[], &outputs, started_utc)
}
