use std::fs;
use std::path::Path;
use std::process::Command;

use tsa_core::io::{
    config_snapshot, emit_results, ingest_measurements_csv, parse_config, preset, read_series, verify_run_dir,
    write_measurements_csv, CONFIG_FILE, MANIFEST_FILE, PRESETS,
};
use tsa_core::measurement::MeasurementEpoch;
use tsa_core::scenario::{run_scenario, simulate_scenario, ScenarioConfig};
use tsa_core::Error;

fn short_config() -> ScenarioConfig {
    ScenarioConfig {
        duration_s: 20.0,
        n_sats: 6,
        ..ScenarioConfig::default()
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-11 * a.abs().max(b.abs()).max(1.0)
}

fn assert_epochs_close(a: &[MeasurementEpoch], b: &[MeasurementEpoch]) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert_eq!(x.t_s, y.t_s);
        assert_eq!(x.n_sats(), y.n_sats());
        for i in 0..x.n_sats() {
            assert_eq!(x.sats[i].sat_id, y.sats[i].sat_id);
            assert!(close(x.pr_m[i], y.pr_m[i]));
            assert!(close(x.prr_mps[i], y.prr_mps[i]));
            assert!(close(x.var_pr_m2[i], y.var_pr_m2[i]));
            assert!(close(x.sats[i].pos_ecef_m.x, y.sats[i].pos_ecef_m.x));
            assert!(close(x.sats[i].vel_ecef_mps.z, y.sats[i].vel_ecef_mps.z));
            assert!(close(x.sats[i].clock_bias_m, y.sats[i].clock_bias_m));
        }
    }
}

#[test]
fn measurement_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_scenario(&short_config()).unwrap();
    let path = dir.path().join("m.csv");
    write_measurements_csv(&path, &data.measurements).unwrap();
    let back = ingest_measurements_csv(&path).unwrap();
    assert_epochs_close(&data.measurements, &back);

    // rows within an epoch may come in any order
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    let header = lines.remove(0);
    let mut shuffled = vec![header.to_string()];
    for chunk in lines.chunks(6) {
        shuffled.extend(chunk.iter().rev().map(|s| s.to_string()));
    }
    let path2 = dir.path().join("shuffled.csv");
    fs::write(&path2, shuffled.join("\n") + "\n").unwrap();
    assert_eq!(ingest_measurements_csv(&path2).unwrap(), back);
}

#[test]
fn full_length_export_has_every_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_scenario(&preset("clean").unwrap()).unwrap();
    let path = dir.path().join("m.csv");
    write_measurements_csv(&path, &data.measurements).unwrap();
    let back = ingest_measurements_csv(&path).unwrap();
    assert_eq!(back.len(), 241);
    assert!(back.iter().all(|e| e.n_sats() == 8));
    assert_epochs_close(&data.measurements, &back);
}

fn ingest_text(text: &str) -> Result<Vec<MeasurementEpoch>, Error> {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    fs::write(&path, text).unwrap();
    ingest_measurements_csv(&path)
}

#[test]
fn malformed_measurements_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    write_measurements_csv(&path, &simulate_scenario(&short_config()).unwrap().measurements).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let header = lines[0];

    let no_prr = text.replacen("prr_mps", "rate", 1);
    assert!(matches!(ingest_text(&no_prr), Err(Error::Ingest(m)) if m.contains("prr_mps")));

    let backwards = [header, lines[7], lines[1]].join("\n");
    assert!(matches!(ingest_text(&backwards), Err(Error::Ingest(m)) if m.contains("monotone")));

    assert!(matches!(ingest_text(&format!("{header}\n")), Err(Error::Ingest(_))));

    let dup = [header, lines[1], lines[1]].join("\n");
    assert!(matches!(ingest_text(&dup), Err(Error::Ingest(m)) if m.contains("duplicate")));

    let fields: Vec<&str> = lines[1].split(',').collect();
    let mut bad = fields.clone();
    bad[4] = "0";
    assert!(matches!(ingest_text(&[header, &bad.join(",")].join("\n")), Err(Error::Ingest(_))));
    let mut nan = fields;
    nan[2] = "NaN";
    assert!(matches!(ingest_text(&[header, &nan.join(",")].join("\n")), Err(Error::Ingest(_))));

    // extra columns are ignored
    let extra: Vec<String> = lines
        .iter()
        .enumerate()
        .map(|(i, l)| if i == 0 { format!("{l},note") } else { format!("{l},x") })
        .collect();
    assert_eq!(ingest_text(&extra.join("\n")).unwrap(), ingest_measurements_csv(&path).unwrap());
}

#[test]
fn presets_survive_snapshot_round_trip() {
    for (name, _) in PRESETS {
        let cfg = preset(name).unwrap();
        assert_eq!(&cfg.name, name);
        let again = parse_config(&config_snapshot(&cfg).unwrap()).unwrap();
        assert_eq!(again, cfg);
    }
}

#[test]
fn run_directory_is_verifiable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ScenarioConfig {
        duration_s: 40.0,
        ..ScenarioConfig::synthetic(1)
    };
    let cfg = ScenarioConfig {
        attack: cfg.attack.map(|a| tsa_core::scenario::AttackConfig {
            start_s: Some(20.0),
            ..a
        }),
        ..cfg
    };
    let result = run_scenario(&cfg).unwrap();
    let manifest = emit_results(&result, &cfg, dir.path(), "start".into()).unwrap();
    assert_eq!(manifest.seed, cfg.seed);
    for out in &manifest.outputs {
        assert!(Path::new(out).exists(), "{out}");
    }
    assert_eq!(verify_run_dir(dir.path()).unwrap(), cfg);

    let alt = read_series(&dir.path().join("alterations.csv")).unwrap();
    let jerk = alt.column("injected_s_jerk").unwrap();
    let t = alt.column("t_s").unwrap();
    let onset = jerk.iter().position(|v| *v != 0.0).unwrap();
    assert_eq!(t[onset], 20.0);
    assert_eq!(jerk.iter().filter(|v| **v != 0.0).count(), 3);

    let cfg_path = dir.path().join(CONFIG_FILE);
    let tampered = fs::read_to_string(&cfg_path).unwrap().replace("\"seed\": 1", "\"seed\": 2");
    fs::write(&cfg_path, tampered).unwrap();
    assert!(matches!(verify_run_dir(dir.path()), Err(Error::ConfigInconsistent(_))));
}

#[test]
fn clean_run_reports_no_injected_alteration() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config();
    emit_results(&run_scenario(&cfg).unwrap(), &cfg, dir.path(), "start".into()).unwrap();
    let alt = read_series(&dir.path().join("alterations.csv")).unwrap();
    for col in ["injected_s_bias_m", "injected_s_drift_mps", "injected_s_jerk"] {
        assert!(alt.column(col).unwrap().iter().all(|&v| v == 0.0), "{col}");
    }
}

// ---------------------------------------------------------------------------
// Command line

fn tsa(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_tsa")).args(args).output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = d.join("out");
    let write = |name: &str, text: &str| {
        let path = d.join(name);
        fs::write(&path, text).unwrap();
        path
    };

    assert_eq!(tsa(&["simulate", "--config", p(&d.join("missing.json")), "--out", p(&out)]).0, 2);
    let syntax = write("syntax.json", "{\"seed\": ");
    assert_eq!(tsa(&["simulate", "--config", p(&syntax), "--out", p(&out)]).0, 2);
    let schema = write("schema.json", "{\"sede\": 3}");
    assert_eq!(tsa(&["simulate", "--config", p(&schema), "--out", p(&out)]).0, 2);
    let inconsistent = write("inc.json", "{\"duration_s\": 10.5}");
    assert_eq!(tsa(&["simulate", "--config", p(&inconsistent), "--out", p(&out)]).0, 2);
    assert_eq!(tsa(&["simulate", "--preset", "nope", "--out", p(&out)]).0, 2);

    assert_eq!(tsa(&["estimate", "--input", p(&d.join("none.csv")), "--out", p(&out)]).0, 3);
    let garbage = write("garbage.csv", "t_s,pr_m\n1,2\n");
    assert_eq!(tsa(&["estimate", "--input", p(&garbage), "--out", p(&out)]).0, 3);

    let cfg = write("short.json", "{\"duration_s\": 30, \"attack\": {\"order\": 1, \"start_s\": 15}}");
    let (code, err) = tsa(&["simulate", "--config", p(&cfg), "--out", p(&out), "--quiet"]);
    assert_eq!(code, 0, "{err}");
    let clean = out.join("measurements.csv");

    let clean_cfg = write("clean.json", "{\"duration_s\": 30}");
    assert_eq!(tsa(&["attack", "--config", p(&clean_cfg), "--input", p(&clean), "--out", p(&d.join("a"))]).0, 2);
    let wrong_grid = write("grid.json", "{\"duration_s\": 60, \"dt_s\": 2, \"attack\": {\"order\": 1, \"start_s\": 10}}");
    assert_eq!(tsa(&["attack", "--config", p(&wrong_grid), "--input", p(&clean), "--out", p(&d.join("a"))]).0, 3);
}

#[test]
fn cli_pipeline_matches_file_contract() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("cfg.json");
    fs::write(&cfg, "{\"duration_s\": 30, \"attack\": {\"order\": 1, \"start_s\": 15}, \"solver\": {\"lambda\": 10}}").unwrap();
    let c = p(&cfg);
    let sim = d.join("sim");
    let att = d.join("att");
    let est = d.join("est");
    let ev = d.join("ev");
    assert_eq!(tsa(&["simulate", "--config", c, "--out", p(&sim), "--quiet"]).0, 0);
    assert_eq!(tsa(&["attack", "--config", c, "--input", p(&sim.join("measurements.csv")), "--out", p(&att), "--quiet"]).0, 0);
    let (code, err) = tsa(&[
        "estimate", "--config", c, "--input", p(&att.join("measurements.csv")), "--out", p(&est), "--quiet",
    ]);
    assert_eq!(code, 0, "{err}");
    for f in ["ekf.csv", "solution.csv", "diagnostics.json", MANIFEST_FILE, CONFIG_FILE] {
        assert!(est.join(f).exists(), "{f}");
    }
    let (code, err) = tsa(&[
        "evaluate",
        "--truth",
        p(&sim.join("truth.csv")),
        "--estimate",
        p(&est.join("ekf.csv")),
        "--estimate",
        p(&est.join("solution.csv")),
        "--out",
        p(&ev),
        "--quiet",
    ]);
    assert_eq!(code, 0, "{err}");
    let table = fs::read_to_string(ev.join("evaluation.csv")).unwrap();
    let rmses: Vec<f64> = table.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(rmses.len(), 2);
    assert!(rmses.iter().all(|v| v.is_finite() && *v > 0.0));

    let solution = read_series(&est.join("solution.csv")).unwrap();
    assert_eq!(solution.len(), 30);
    let attack = read_series(&att.join("attack.csv")).unwrap();
    assert_eq!(attack.column("s_rho_m").unwrap()[20], 1500.0);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let (code, err) = tsa(&["run", "--preset", "order-1-with-multipath", "--out", p(out), "--quiet"]);
        assert_eq!(code, 0, "{err}");
    }
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 10);
    for name in names {
        let (x, y) = (fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap());
        if name == MANIFEST_FILE {
            let strip = |bytes: &[u8], root: &Path| {
                let mut v: serde_json::Value = serde_json::from_slice(bytes).unwrap();
                let m = v.as_object_mut().unwrap();
                m.remove("started_utc");
                m.remove("finished_utc");
                serde_json::to_string(&v).unwrap().replace(p(root), "<dir>")
            };
            assert_eq!(strip(&x, &a), strip(&y, &b));
        } else {
            assert!(x == y, "{name:?} differs");
        }
    }
}
