use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tsa_core::attack::{inject, inject_multipath, synth_attack};
use tsa_core::clock::{process_noise, transition_matrix};
use tsa_core::estimators::{ekf_run, split_outputs, tsarm_solve};
use tsa_core::io::{self, SolverReport};
use tsa_core::measurement::{residuals, MeasurementEpoch};
use tsa_core::scenario::{
    compare, rmse, run_scenario, run_scenarios, simulate_scenario, sweep_lambda, ComparisonRow, ComparisonTable,
    ScenarioConfig,
};
use tsa_core::{Error, Result};

/// Clock-bias estimation under time synchronization attacks.
#[derive(Debug, Parser)]
#[command(name = "tsa", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Scenario config (JSON).
    #[arg(long, global = true, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in scenario preset instead of a config file.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Suppress summaries on stdout.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the true clock and clean measurements.
    Simulate,
    /// Inject the configured attack (and multipath) into a measurement file.
    Attack {
        #[arg(long)]
        input: PathBuf,
    },
    /// Estimate the clock from a measurement file.
    Estimate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Method::Both)]
        method: Method,
        /// Overrides the configured sparsity weight.
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Bias RMSE of estimate files against a truth file.
    Evaluate {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long = "estimate", required = true)]
        estimates: Vec<PathBuf>,
    },
    /// Sweep the sparsity weight on one simulated data set.
    Sweep {
        #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.3, 1.0, 3.0, 10.0, 30.0, 100.0, 300.0, 1000.0])]
        lambdas: Vec<f64>,
    },
    /// Full pipeline with a result bundle.
    Run {
        /// Run every built-in preset and write a combined comparison.
        #[arg(long)]
        all_presets: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Ekf,
    Tsarm,
    Both,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Simulate => simulate(g),
        Command::Attack { input } => attack(g, input),
        Command::Estimate { input, method, lambda } => estimate(g, input, *method, *lambda),
        Command::Evaluate { truth, estimates } => evaluate(g, truth, estimates),
        Command::Sweep { lambdas } => sweep(g, lambdas),
        Command::Run { all_presets } => run(g, *all_presets),
    }
}

fn load(g: &Global) -> Result<ScenarioConfig> {
    let mut cfg = match (&g.config, &g.preset) {
        (Some(path), _) => io::load_config(path)?,
        (None, Some(name)) => io::preset(name)?,
        (None, None) => ScenarioConfig::default(),
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn config_inputs(g: &Global) -> Vec<PathBuf> {
    g.config.iter().cloned().collect()
}

fn say(g: &Global, msg: impl AsRef<str>) {
    if !g.quiet {
        println!("{}", msg.as_ref());
    }
}

fn simulate(g: &Global) -> Result<()> {
    let started = io::now_utc();
    let cfg = load(g)?;
    let data = simulate_scenario(&cfg)?;
    fs::create_dir_all(&g.out)?;
    let meas = g.out.join("measurements.csv");
    let truth = g.out.join("truth.csv");
    io::write_measurements_csv(&meas, &data.clean)?;
    let traj = tsa_core::estimators::StateTrajectory { states: data.truth };
    io::write_truth_csv(&truth, &data.t_s, &traj)?;
    io::write_manifest(&g.out, &cfg, &config_inputs(g), &[meas, truth], started)?;
    say(g, format!("simulated {} epochs into {}", data.t_s.len(), g.out.display()));
    Ok(())
}

fn ingest_on_grid(path: &Path, dt_s: f64) -> Result<Vec<MeasurementEpoch>> {
    let meas = io::ingest_measurements_csv(path)?;
    for w in meas.windows(2) {
        let step = w[1].t_s - w[0].t_s;
        if (step - dt_s).abs() > 1e-6 * dt_s {
            return Err(Error::Ingest(format!(
                "epoch spacing {step} s at t = {} s differs from configured dt {dt_s} s",
                w[1].t_s
            )));
        }
    }
    Ok(meas)
}

fn attack(g: &Global, input: &Path) -> Result<()> {
    let started = io::now_utc();
    let cfg = load(g)?;
    let spec = cfg
        .attack
        .as_ref()
        .ok_or_else(|| Error::ConfigInconsistent("config has no attack section".into()))?
        .resolve()
        .map_err(|e| Error::ConfigInconsistent(e.to_string()))?;
    let clean = ingest_on_grid(input, cfg.dt_s)?;
    let trace = synth_attack(&spec, clean.len(), cfg.dt_s)?;
    let mut meas = inject(&clean, &trace)?;
    if let Some(mp) = &cfg.multipath {
        let duration = clean.len() as f64 * cfg.dt_s;
        meas = inject_multipath(&meas, &mp.resolve(&clean[0], duration))?;
    }
    fs::create_dir_all(&g.out)?;
    let meas_path = g.out.join("measurements.csv");
    let attack_path = g.out.join("attack.csv");
    io::write_measurements_csv(&meas_path, &meas)?;
    io::write_attack_csv(&attack_path, &trace)?;
    let mut inputs = config_inputs(g);
    inputs.push(input.to_path_buf());
    io::write_manifest(&g.out, &cfg, &inputs, &[meas_path, attack_path], started)?;
    say(g, format!("order-{} attack injected into {} epochs", spec.order, meas.len()));
    Ok(())
}

fn estimate(g: &Global, input: &Path, method: Method, lambda: Option<f64>) -> Result<()> {
    let started = io::now_utc();
    let mut cfg = load(g)?;
    if let Some(l) = lambda {
        cfg.solver.lambda = l;
        cfg.validate()?;
    }
    let meas = ingest_on_grid(input, cfg.dt_s)?;
    let res = residuals(&meas, &cfg.site.to_ecef())?;
    let t_s: Vec<f64> = meas.iter().map(|m| m.t_s).collect();
    fs::create_dir_all(&g.out)?;
    let mut outputs = Vec::new();
    if method != Method::Tsarm {
        let params = cfg.clock_params();
        let phi = transition_matrix(cfg.dt_s)?;
        let (x0, p0) = cfg.solver.prior.around_first_epoch(&res, &phi)?;
        let ekf = ekf_run(&res, &process_noise(&params)?, &phi, x0, &p0)?;
        let path = g.out.join("ekf.csv");
        io::write_states_csv(&path, &t_s, &ekf)?;
        outputs.push(path);
        say(g, format!("EKF: {} epochs", ekf.epochs()));
    }
    let mut status = Ok(());
    if method != Method::Ekf {
        let sol = tsarm_solve(&res, &cfg.clock_params(), &cfg.solver)?;
        let path = g.out.join("solution.csv");
        io::write_solution_csv(&path, &split_outputs(&sol, &t_s, cfg.dt_s)?)?;
        outputs.push(path);
        let report = SolverReport {
            solver: cfg.solver,
            diagnostics: sol.diagnostics.clone(),
        };
        let path = g.out.join("diagnostics.json");
        io::write_json(&path, &report)?;
        outputs.push(path);
        let d = &sol.diagnostics;
        say(
            g,
            format!(
                "TSARM: lambda {} iterations {} objective {:.6e} kkt {:.3e} converged {}",
                cfg.solver.lambda, d.iterations, d.objective, d.kkt_residual, d.converged
            ),
        );
        if !d.converged {
            status = Err(Error::NotConverged(d.iterations));
        }
    }
    let mut inputs = config_inputs(g);
    inputs.push(input.to_path_buf());
    io::write_manifest(&g.out, &cfg, &inputs, &outputs, started)?;
    status
}

fn evaluate(g: &Global, truth: &Path, estimates: &[PathBuf]) -> Result<()> {
    let truth = io::read_series(truth)?;
    let (tt, tb) = (truth.column("t_s")?, truth.column("bias_m")?);
    let mut rows = Vec::new();
    for path in estimates {
        let est = io::read_series(path)?;
        let (et, eb) = (est.column("t_s")?, est.column("bias_est_m")?);
        if et.len() != tt.len() || et.iter().zip(tt).any(|(a, b)| (a - b).abs() > 1e-9 * b.abs().max(1.0)) {
            return Err(Error::Ingest(format!("{}: epochs differ from the truth file", path.display())));
        }
        rows.push((path.display().to_string(), rmse(eb, tb)?));
    }
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(8);
    let mut text = format!("{:<width$}  {:>12}\n", "estimate", "RMSE (m)");
    for (name, v) in &rows {
        text.push_str(&format!("{name:<width$}  {v:>12.2}\n"));
    }
    say(g, text.trim_end());
    fs::create_dir_all(&g.out)?;
    let mut w = csv::Writer::from_path(g.out.join("evaluation.csv"))?;
    w.write_record(["estimate", "bias_rmse_m"])?;
    for (name, v) in &rows {
        w.write_record([name.clone(), io::fmt_num(*v)])?;
    }
    w.flush()?;
    Ok(())
}

fn sweep(g: &Global, lambdas: &[f64]) -> Result<()> {
    let started = io::now_utc();
    let cfg = load(g)?;
    let rows = sweep_lambda(&cfg, lambdas)?;
    fs::create_dir_all(&g.out)?;
    let path = g.out.join("sweep.csv");
    io::write_sweep_csv(&path, &rows)?;
    io::write_manifest(&g.out, &cfg, &config_inputs(g), &[path], started)?;
    let mut text = format!("{:>10}  {:>12}  {:>12}  {}\n", "lambda", "TSARM (m)", "EKF (m)", "converged");
    for r in &rows {
        text.push_str(&format!(
            "{:>10}  {:>12.2}  {:>12.2}  {}\n",
            r.lambda, r.rmse_tsarm_m, r.rmse_ekf_m, r.converged
        ));
    }
    say(g, text.trim_end());
    Ok(())
}

fn run(g: &Global, all_presets: bool) -> Result<()> {
    let started = io::now_utc();
    if !all_presets {
        let cfg = load(g)?;
        let result = run_scenario(&cfg)?;
        io::emit_results(&result, &cfg, &g.out, started)?;
        say(g, compare(std::slice::from_ref(&result))?.render_text().trim_end());
        return converged(&[&result.tsarm.diagnostics]);
    }
    if g.config.is_some() || g.preset.is_some() {
        return Err(Error::ConfigInconsistent("--all-presets takes no --config or --preset".into()));
    }
    let mut cfgs = Vec::new();
    for (name, _) in io::PRESETS {
        let mut cfg = io::preset(name)?;
        if let Some(seed) = g.seed {
            cfg.seed = seed;
        }
        cfgs.push(cfg);
    }
    let results = run_scenarios(&cfgs).into_iter().collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(&g.out)?;
    let mut rows = Vec::new();
    for (cfg, result) in cfgs.iter().zip(&results) {
        io::emit_results(result, cfg, &g.out.join(&cfg.name), io::now_utc())?;
        rows.push(ComparisonRow {
            scenario: result.name.clone(),
            ekf_rmse_m: result.rmse_ekf_m,
            tsarm_rmse_m: result.rmse_tsarm_m,
        });
    }
    let table = ComparisonTable { rows };
    io::write_comparison(&g.out, &table)?;
    say(g, table.render_text().trim_end());
    converged(&results.iter().map(|r| &r.tsarm.diagnostics).collect::<Vec<_>>())
}

fn converged(diags: &[&tsa_core::estimators::SolverDiagnostics]) -> Result<()> {
    match diags.iter().find(|d| !d.converged) {
        Some(d) => Err(Error::NotConverged(d.iterations)),
        None => Ok(()),
    }
}
