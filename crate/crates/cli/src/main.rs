//! `diffquant`: command-line driver for quantized-policy experiments.
//!
//! Exit codes: 0 on success, 1 for configuration errors, 2 for numerical
//! failures. Errors are also written to stderr as one JSON object.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use diffquant_core::borkar::{pairings, PairingResult};
use diffquant_core::config::{ExperimentConfig, OutputFormat};
use diffquant_core::grid::{format_f64, Grid};
use diffquant_core::model::ControlModel;
use diffquant_core::pde::{
    evaluate_parabolic, solve_discounted, solve_ergodic, solve_exit, solve_hjb_discounted, solve_hjb_ergodic,
    solve_hjb_exit, solve_hjb_parabolic,
};
use diffquant_core::policy::{
    build_action_grid, discretize_policy_time, quantize_policy_actions, quantize_policy_space, Policy, PolicyJson,
    SimplexGrid,
};
use diffquant_core::simulate::{mc_discounted, mc_ergodic, mc_exit, mc_finite_horizon, CostReport, Criterion};
use diffquant_core::study::run_study;
use diffquant_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "diffquant", version, about = "Quantized policies for controlled diffusions")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `sim.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; falls back to DIFFQUANT_THREADS. Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Write results here instead of stdout.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Overrides `criterion.kind`.
    #[arg(long, global = true)]
    criterion: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Copy, Clone, Debug, PartialEq, ValueEnum)]
enum Method {
    Mc,
    Pde,
    Both,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse a config and run assumption spot checks.
    Validate { path: Option<PathBuf> },
    /// Cost of the `[policy]` section under the configured criterion.
    Eval {
        #[arg(long, value_enum, default_value = "both")]
        method: Method,
    },
    /// HJB solve; emits the value field and the optimal policy.
    Solve {
        /// Action-grid resolution.
        #[arg(long, default_value_t = 64)]
        n: usize,
    },
    /// Quantize a policy in actions (`--n`), space (`--m`) and time (`--dt`).
    Quantize {
        /// Policy JSON; the `[policy]` section when absent.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        /// Simplex resolution on the cells of `schedule.cell_grid` (or the state grid).
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Borkar pairings of the `[policy]` section against the test-pair bank.
    Pairing {
        /// Also pair the action quantizations at these resolutions.
        #[arg(long, value_delimiter = ',')]
        n: Vec<usize>,
    },
    /// Near-optimality study for one criterion.
    Study {
        #[arg(value_parser = ["discounted", "ergodic", "exit", "finite_horizon"])]
        kind: String,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let body = json!({"error": "usage", "message": e.to_string().trim_end()});
            eprintln!("{body}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let field = match &e {
                Error::Config { field, .. } => Some(field.clone()),
                _ => None,
            };
            let body = json!({"error": e.kind(), "field": field, "message": e.to_string()});
            eprintln!("{body}");
            ExitCode::from(if e.is_config_error() { 1 } else { 2 })
        }
    }
}

fn init_threads(flag: Option<usize>) -> Result<()> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("DIFFQUANT_THREADS") {
            Ok(v) => Some(v.trim().parse().map_err(|_| Error::Config {
                field: "DIFFQUANT_THREADS".into(),
                message: format!("expected a thread count, got `{v}`"),
            })?),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(Error::Config { field: "threads".into(), message: "must be at least 1".into() });
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config { field: "threads".into(), message: e.to_string() })?;
    }
    Ok(())
}

/// Loads the config, applies command-line overrides, then validates.
fn load_config(cli: &Cli, positional: Option<&Path>) -> Result<ExperimentConfig> {
    let path = positional.or(cli.config.as_deref()).ok_or_else(|| Error::Config {
        field: "config".into(),
        message: "no config file given (use --config)".into(),
    })?;
    let mut cfg = ExperimentConfig::load_unvalidated(path)?;
    if let Some(kind) = &cli.criterion {
        cfg.criterion.kind = kind.clone();
    }
    if let (Some(seed), Some(sim)) = (cli.seed, cfg.sim.as_mut()) {
        sim.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.output.dir = Some(dir.clone());
    }
    if let Some(f) = cli.format {
        cfg.output.format = match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Writes `contents` to `<dir>/<name>` when an output directory is set,
/// otherwise to stdout.
fn emit(cfg: &ExperimentConfig, name: &str, contents: &[u8]) -> Result<()> {
    match &cfg.output.dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join(name), contents)?;
        }
        None => io::stdout().write_all(contents)?,
    }
    Ok(())
}

fn extension(cfg: &ExperimentConfig) -> &'static str {
    match cfg.output.format {
        OutputFormat::Csv => "csv",
        OutputFormat::Json => "json",
    }
}

fn to_json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(v)?;
    out.push(b'\n');
    Ok(out)
}

fn run(cli: Cli) -> Result<()> {
    init_threads(cli.threads)?;
    match &cli.command {
        Command::Validate { path } => validate(&load_config(&cli, path.as_deref())?),
        Command::Eval { method } => eval(&load_config(&cli, None)?, *method),
        Command::Solve { n } => solve(&load_config(&cli, None)?, *n),
        Command::Quantize { input, n, m, dt } => quantize(&load_config(&cli, None)?, input.as_deref(), *n, *m, *dt),
        Command::Pairing { n } => pairing(&load_config(&cli, None)?, n),
        Command::Study { kind } => {
            let mut cfg = load_config(&cli, None)?;
            if cfg.criterion.kind != *kind {
                if cli.criterion.is_some() {
                    return Err(Error::Config {
                        field: "criterion.kind".into(),
                        message: format!("`study {kind}` conflicts with --criterion {}", cfg.criterion.kind),
                    });
                }
                cfg.criterion.kind = kind.clone();
                cfg.validate()?;
            }
            let result = run_study(&cfg)?;
            let mut out = Vec::new();
            result.write(&mut out, cfg.output.format)?;
            emit(&cfg, &format!("study_{kind}.{}", extension(&cfg)), &out)
        }
    }
}

/// Sampled states for the spot checks: at most 9 per axis of the state grid.
fn sample_states(grid: &Grid) -> Vec<Vec<f64>> {
    let axes: Vec<Vec<f64>> = (0..grid.dim())
        .map(|a| {
            let p = grid.points()[a];
            let k = p.min(9);
            (0..k).map(|i| grid.axis_coord(a, if k == 1 { 0 } else { i * (p - 1) / (k - 1) })).collect()
        })
        .collect();
    let mut states = vec![Vec::new()];
    for axis in &axes {
        states = states.into_iter().flat_map(|s| axis.iter().map(move |&c| [s.clone(), vec![c]].concat())).collect();
    }
    states
}

fn validate(cfg: &ExperimentConfig) -> Result<()> {
    let model = cfg.model()?;
    let grid = cfg.grid()?;
    let atoms = build_action_grid(model.action_box(), 4);
    let report = model.validate(&sample_states(&grid), &atoms)?;
    if let Some(x) = &report.negative_cost_at {
        return Err(Error::Config {
            field: "model.cost".into(),
            message: format!("cost is negative at (x, u) = {x:?}"),
        });
    }
    if let Some(x) = &report.degenerate_at {
        return Err(Error::NondegeneracyViolation(x.clone()));
    }
    let body = json!({
        "ok": true,
        "model": model.id(),
        "criterion": cfg.criterion()?.as_str(),
        "states": grid.len(),
        "spot_checks": report,
    });
    emit(cfg, "validate.json", &to_json_bytes(&body)?)
}

fn mc_report(cfg: &ExperimentConfig, model: &ControlModel, policy: &Policy) -> Result<CostReport> {
    let sim = cfg.sim()?;
    let sc = sim.sim_config();
    let x0 = &cfg.criterion.x0;
    let missing = |f: &str| Error::Config { field: f.into(), message: "required for Monte Carlo".into() };
    match cfg.criterion()? {
        Criterion::Discounted => mc_discounted(model, policy, x0, &sc, sim.t_max.ok_or_else(|| missing("sim.t_max"))?),
        Criterion::Ergodic => mc_ergodic(
            model,
            policy,
            x0,
            &sc,
            sim.burn_in.unwrap_or(0.0),
            sim.t_avg.ok_or_else(|| missing("sim.t_avg"))?,
        ),
        Criterion::Exit => mc_exit(model, policy, x0, &sc),
        Criterion::FiniteHorizon => mc_finite_horizon(model, policy, x0, &sc),
    }
}

#[derive(Serialize)]
struct PdeValue {
    criterion: Criterion,
    value: f64,
    residual_inf_norm: f64,
    policy_id: String,
    model_id: String,
}

fn pde_value(cfg: &ExperimentConfig, model: &ControlModel, policy: &Policy) -> Result<PdeValue> {
    let grid = cfg.grid()?;
    let x0 = &cfg.criterion.x0;
    let criterion = cfg.criterion()?;
    let (value, residual_inf_norm) = match criterion {
        Criterion::Discounted => {
            let r = solve_discounted(model, policy, &grid)?;
            (r.value_at(x0), r.residual_inf_norm)
        }
        Criterion::Ergodic => {
            let r = solve_ergodic(model, policy, &grid)?;
            (r.scalar_out.unwrap_or(f64::NAN), r.residual_inf_norm)
        }
        Criterion::Exit => {
            let r = solve_exit(model, policy, &grid)?;
            (r.value_at(x0), r.residual_inf_norm)
        }
        Criterion::FiniteHorizon => {
            let r = evaluate_parabolic(model, policy, &grid, time_step(cfg)?)?;
            (r.initial().value_at(x0), r.residual_inf_norm)
        }
    };
    Ok(PdeValue {
        criterion,
        value,
        residual_inf_norm,
        policy_id: policy.id().to_string(),
        model_id: model.id().to_string(),
    })
}

/// Time step of the parabolic solver: `schedule.reference_dt`, else `sim.dt`.
fn time_step(cfg: &ExperimentConfig) -> Result<f64> {
    if let Some(d) = cfg.schedule.as_ref().and_then(|s| s.reference_dt()) {
        return Ok(d);
    }
    cfg.sim.as_ref().map(|s| s.dt).ok_or_else(|| Error::Config {
        field: "sim.dt".into(),
        message: "a finite-horizon solve needs a time step (sim.dt or schedule.reference_dt)".into(),
    })
}

fn eval(cfg: &ExperimentConfig, method: Method) -> Result<()> {
    let model = cfg.model()?;
    let policy = cfg.policy(&model)?;
    let mc = if method != Method::Pde { Some(mc_report(cfg, &model, &policy)?) } else { None };
    let pde = if method != Method::Mc { Some(pde_value(cfg, &model, &policy)?) } else { None };
    let out = match cfg.output.format {
        OutputFormat::Json => to_json_bytes(&json!({"mc": mc, "pde": pde}))?,
        OutputFormat::Csv => {
            let mut s = String::from("method,criterion,estimate,std_error,residual_inf_norm,policy_id,model_id\n");
            if let Some(r) = &mc {
                s += &format!(
                    "mc,{},{},{},,{},{}\n",
                    r.criterion,
                    format_f64(r.estimate),
                    format_f64(r.std_error),
                    r.policy_id,
                    r.model_id
                );
            }
            if let Some(p) = &pde {
                s += &format!(
                    "pde,{},{},,{},{},{}\n",
                    p.criterion,
                    format_f64(p.value),
                    format_f64(p.residual_inf_norm),
                    p.policy_id,
                    p.model_id
                );
            }
            s.into_bytes()
        }
    };
    emit(cfg, &format!("eval.{}", extension(cfg)), &out)
}

fn solve(cfg: &ExperimentConfig, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Config { field: "n".into(), message: "must be positive".into() });
    }
    let model = cfg.model()?;
    let grid = cfg.grid()?;
    let actions = Arc::new(build_action_grid(model.action_box(), n));
    let x0 = &cfg.criterion.x0;
    let criterion = cfg.criterion()?;
    let (field, policy, summary) = if criterion == Criterion::FiniteHorizon {
        let s = solve_hjb_parabolic(&model, actions, &grid, time_step(cfg)?)?;
        let field = s.values.initial().clone();
        let summary = json!({
            "criterion": criterion,
            "value_at_x0": field.value_at(x0),
            "residual_inf_norm": s.values.residual_inf_norm,
            "time_steps": s.values.times.len() - 1,
        });
        (field, s.policy, summary)
    } else {
        let s = match criterion {
            Criterion::Discounted => solve_hjb_discounted(&model, actions, &grid)?,
            Criterion::Ergodic => solve_hjb_ergodic(&model, actions, &grid)?,
            _ => solve_hjb_exit(&model, actions, &grid)?,
        };
        let summary = json!({
            "criterion": criterion,
            "value_at_x0": s.report.value_at(x0),
            "rho": s.report.scalar_out,
            "residual_inf_norm": s.report.residual_inf_norm,
            "iterations": s.report.iterations,
        });
        (s.report.field, s.policy, summary)
    };
    let policy_json = to_json_bytes(&policy.to_json()?)?;
    match &cfg.output.dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let mut csv = Vec::new();
            field.write_csv(&mut csv)?;
            fs::write(dir.join("value.csv"), csv)?;
            fs::write(dir.join("policy.json"), policy_json)?;
            fs::write(dir.join("solve.json"), to_json_bytes(&summary)?)?;
        }
        None => io::stdout().write_all(&to_json_bytes(&json!({"summary": summary, "policy": policy.to_json()?}))?)?,
    }
    Ok(())
}

fn quantize(
    cfg: &ExperimentConfig,
    input: Option<&Path>,
    n: Option<usize>,
    m: Option<usize>,
    dt: Option<f64>,
) -> Result<()> {
    let model = cfg.model()?;
    let mut policy = match input {
        Some(path) => {
            let src = fs::read_to_string(path)
                .map_err(|e| Error::Config { field: "input".into(), message: format!("{}: {e}", path.display()) })?;
            let json: PolicyJson = serde_json::from_str(&src)?;
            json.into_policy()?
        }
        None => cfg.policy(&model)?,
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(Error::Config { field: "n".into(), message: "must be positive".into() });
        }
        policy = quantize_policy_actions(&policy, Arc::new(build_action_grid(model.action_box(), n)))?;
    }
    if let Some(m) = m {
        let cells = match cfg.schedule.as_ref().and_then(|s| s.cell_grid.clone()) {
            Some(spec) => Grid::new(spec)?,
            None => cfg.grid()?,
        };
        let simplex = SimplexGrid::new(policy.action_grid().len(), m)?;
        policy = Policy::Cell(quantize_policy_space(&policy, Arc::new(cells), Some(&simplex))?);
    }
    if let Some(dt) = dt {
        let horizon = model.horizon().ok_or_else(|| Error::Config {
            field: "model.horizon".into(),
            message: "time discretization needs a horizon".into(),
        })?;
        policy = Policy::TimeCell(discretize_policy_time(&policy, dt, horizon)?);
    }
    // callback-backed policies are tabulated on the state-grid cells
    let json = match policy.to_json() {
        Ok(j) => j,
        Err(_) if policy.is_stationary() => {
            Policy::Cell(quantize_policy_space(&policy, Arc::new(cfg.grid()?), None)?).to_json()?
        }
        Err(e) => return Err(e),
    };
    emit(cfg, "policy.json", &to_json_bytes(&json)?)
}

fn pairing(cfg: &ExperimentConfig, ns: &[usize]) -> Result<()> {
    let model = cfg.model()?;
    let policy = cfg.policy(&model)?;
    let bank = cfg.bank(&model)?;
    let horizon = if policy.is_stationary() { None } else { model.horizon().filter(|t| *t > 0.0) };
    let mut results: Vec<(Option<usize>, PairingResult)> =
        pairings(&bank, &policy, horizon)?.into_iter().map(|r| (None, r)).collect();
    for &n in ns {
        if n == 0 {
            return Err(Error::Config { field: "n".into(), message: "must be positive".into() });
        }
        let q = quantize_policy_actions(&policy, Arc::new(build_action_grid(model.action_box(), n)))?;
        results.extend(pairings(&bank, &q, horizon)?.into_iter().map(|r| (Some(n), r)));
    }
    let out = match cfg.output.format {
        OutputFormat::Json => {
            let rows: Vec<_> = results.iter().map(|(n, r)| json!({"n": n, "pairing": r})).collect();
            to_json_bytes(&rows)?
        }
        OutputFormat::Csv => {
            let mut s = String::from("n,pair_id,policy_id,value,quadrature_error,abs_f_integral,g_sup\n");
            for (n, r) in &results {
                s += &format!(
                    "{},{},{},{},{},{},{}\n",
                    n.map(|v| v.to_string()).unwrap_or_default(),
                    r.pair_id,
                    r.policy_id,
                    format_f64(r.value),
                    r.quadrature_error.map(format_f64).unwrap_or_default(),
                    format_f64(r.abs_f_integral),
                    format_f64(r.g_sup)
                );
            }
            s.into_bytes()
        }
    };
    emit(cfg, &format!("pairing.{}", extension(cfg)), &out)
}
