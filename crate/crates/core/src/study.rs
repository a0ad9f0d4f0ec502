//! Near-optimality studies: gap between quantized policies and a fine-grid
//! optimum, as a function of the quantization resolution.
//!
//! Every study computes a reference optimum on a fine action grid (and, for
//! the finite horizon, a fine time step), quantizes its policy at each
//! schedule entry, evaluates the quantized policy with the same
//! finite-difference scheme and optionally by Monte Carlo, and records the
//! gap and the Borkar pseudo-distance to the reference policy.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::borkar::{pseudo_distance, TestPair};
use crate::config::{ExperimentConfig, OutputFormat};
use crate::error::{Error, Result};
use crate::grid::{format_f64, Grid};
use crate::model::ControlModel;
use crate::pde::{
    evaluate_parabolic, solve_discounted, solve_ergodic, solve_exit, solve_hjb_discounted, solve_hjb_ergodic,
    solve_hjb_exit, solve_hjb_parabolic_with, ArgminRefresh, HjbSolution,
};
use crate::policy::{
    build_action_grid, discretize_policy_time, quantize_policy_actions, quantize_policy_space, ActionGrid, Policy,
    SimplexGrid,
};
use crate::simulate::{
    discounted_samples, ergodic_samples, exit_samples, finite_horizon_samples, mean_and_se, paired_difference,
    Criterion, PathSamples,
};

/// Tolerance for `gap ≥ −GAP_TOLERANCE (1 + |reference|)`.
pub const GAP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    /// `n` (action grid), `m` (space cells and simplex) or `dt` (time step).
    pub kind: String,
    pub resolution: f64,
    pub cost_pde: f64,
    pub cost_mc: Option<f64>,
    pub mc_se: Option<f64>,
    pub reference: f64,
    pub gap: f64,
    /// Paired Monte Carlo difference against the reference policy.
    pub gap_mc: Option<f64>,
    pub gap_mc_se: Option<f64>,
    pub pseudo_distance: f64,
    /// Wall-clock seconds.
    pub runtime: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub criterion: Criterion,
    pub model_id: String,
    pub x0: Vec<f64>,
    pub reference: f64,
    pub reference_n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_mc: Option<f64>,
    pub seed: u64,
    pub rows: Vec<StudyRow>,
    pub runtime: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map(format_f64).unwrap_or_default()
}

impl StudyResult {
    pub const CSV_HEADER: &'static str =
        "kind,resolution,cost_pde,cost_mc,mc_se,reference,gap,gap_mc,gap_mc_se,pseudo_distance";

    /// First line is a `#` comment carrying the timings; everything after it
    /// depends only on the configuration and the seed.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let rows: Vec<String> = self.rows.iter().map(|r| format!("{:.3}", r.runtime)).collect();
        writeln!(
            w,
            "# diffquant study {} model={} runtime_s={:.3} row_runtime_s={}",
            self.criterion,
            self.model_id,
            self.runtime,
            rows.join(";")
        )?;
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                r.kind,
                format_f64(r.resolution),
                format_f64(r.cost_pde),
                opt(r.cost_mc),
                opt(r.mc_se),
                format_f64(r.reference),
                format_f64(r.gap),
                opt(r.gap_mc),
                opt(r.gap_mc_se),
                format_f64(r.pseudo_distance)
            )?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = Vec::new();
        self.write_csv(&mut out).expect("writing to memory");
        String::from_utf8(out).expect("csv is utf-8")
    }

    pub fn write<W: Write>(&self, mut w: W, format: OutputFormat) -> Result<()> {
        match format {
            OutputFormat::Csv => self.write_csv(w),
            OutputFormat::Json => {
                serde_json::to_writer_pretty(&mut w, self)?;
                writeln!(w)?;
                Ok(())
            }
        }
    }

    /// Rows violating `gap ≥ −GAP_TOLERANCE (1 + |reference|)`.
    pub fn negative_gaps(&self) -> Vec<&StudyRow> {
        self.rows.iter().filter(|r| r.gap < -GAP_TOLERANCE * (1.0 + r.reference.abs())).collect()
    }
}

/// Runs the study matching the configured criterion.
pub fn run_study(config: &ExperimentConfig) -> Result<StudyResult> {
    match config.criterion()? {
        Criterion::Discounted => run_discounted_study(config),
        Criterion::Ergodic => run_ergodic_study(config),
        Criterion::Exit => run_exit_study(config),
        Criterion::FiniteHorizon => run_finite_horizon_study(config),
    }
}

pub fn run_discounted_study(config: &ExperimentConfig) -> Result<StudyResult> {
    run_stationary(config, Criterion::Discounted)
}

pub fn run_ergodic_study(config: &ExperimentConfig) -> Result<StudyResult> {
    run_stationary(config, Criterion::Ergodic)
}

pub fn run_exit_study(config: &ExperimentConfig) -> Result<StudyResult> {
    run_stationary(config, Criterion::Exit)
}

/// Everything a study needs, resolved from the config once.
struct Setup {
    model: ControlModel,
    grid: Grid,
    x0: Vec<f64>,
    bank: Vec<TestPair>,
    reference_grid: Arc<ActionGrid>,
    mc: bool,
}

fn setup(config: &ExperimentConfig, criterion: Criterion) -> Result<Setup> {
    let actual = config.criterion()?;
    if actual != criterion {
        return Err(Error::config(
            "criterion.kind",
            format!("a {criterion} study needs kind = \"{criterion}\", got {actual}"),
        ));
    }
    let schedule = config.schedule()?;
    let model = config.model()?;
    if schedule.mc {
        let sim = config.sim()?;
        let missing = match criterion {
            Criterion::Discounted => sim.t_max.is_none().then_some("sim.t_max"),
            Criterion::Ergodic => sim.t_avg.is_none().then_some("sim.t_avg"),
            _ => None,
        };
        if let Some(field) = missing {
            return Err(Error::config(field, "required for Monte Carlo rows"));
        }
    }
    Ok(Setup {
        grid: config.grid()?,
        x0: config.criterion.x0.clone(),
        bank: config.bank(&model)?,
        reference_grid: Arc::new(build_action_grid(model.action_box(), schedule.reference_n)),
        model,
        mc: schedule.mc,
    })
}

/// Quantized grids must use reference atoms only, so that the reference is
/// optimal among every policy the study evaluates.
fn nested_grid(setup: &Setup, n: usize) -> Result<Arc<ActionGrid>> {
    let g = build_action_grid(setup.model.action_box(), n);
    let r = &setup.reference_grid;
    let scale = setup
        .model
        .action_box()
        .high()
        .iter()
        .chain(setup.model.action_box().low())
        .fold(1.0f64, |a, v| a.max(v.abs()));
    for atom in g.atoms() {
        let near = r.atom(r.nearest_unchecked(atom));
        let dist = atom.iter().zip(near).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        if dist > 1e-12 * scale {
            return Err(Error::config(
                "schedule.reference_n",
                format!(
                    "the action grid for n = {n} is not contained in the reference grid (n = {})",
                    r.resolution().unwrap_or(0)
                ),
            ));
        }
    }
    Ok(Arc::new(g))
}

fn mc_samples(config: &ExperimentConfig, setup: &Setup, criterion: Criterion, policy: &Policy) -> Result<PathSamples> {
    let sim = config.sim()?;
    let cfg = sim.sim_config();
    let (m, x0) = (&setup.model, &setup.x0);
    match criterion {
        Criterion::Discounted => discounted_samples(m, policy, x0, &cfg, sim.t_max.unwrap_or_default()),
        Criterion::Ergodic => {
            ergodic_samples(m, policy, x0, &cfg, sim.burn_in.unwrap_or(0.0), sim.t_avg.unwrap_or_default())
        }
        Criterion::Exit => exit_samples(m, policy, x0, &cfg),
        Criterion::FiniteHorizon => finite_horizon_samples(m, policy, x0, &cfg),
    }
}

/// One row, with its Monte Carlo part paired against the reference samples.
#[allow(clippy::too_many_arguments)]
fn row(
    config: &ExperimentConfig,
    setup: &Setup,
    criterion: Criterion,
    kind: &str,
    resolution: f64,
    policy: &Policy,
    reference_policy: &Policy,
    reference: f64,
    reference_samples: Option<&PathSamples>,
    horizon: Option<f64>,
    cost_pde: impl FnOnce(&Policy) -> Result<f64>,
) -> Result<StudyRow> {
    let start = Instant::now();
    let cost_pde = cost_pde(policy)?;
    let (mut cost_mc, mut mc_se, mut gap_mc, mut gap_mc_se) = (None, None, None, None);
    if let Some(base) = reference_samples {
        let s = mc_samples(config, setup, criterion, policy)?;
        let (m, se) = mean_and_se(&s.values);
        let (d, dse) = paired_difference(&s, base);
        (cost_mc, mc_se, gap_mc, gap_mc_se) = (Some(m), Some(se), Some(d), Some(dse));
    }
    let pseudo_distance = pseudo_distance(policy, reference_policy, &setup.bank, horizon)?;
    Ok(StudyRow {
        kind: kind.into(),
        resolution,
        cost_pde,
        cost_mc,
        mc_se,
        reference,
        gap: cost_pde - reference,
        gap_mc,
        gap_mc_se,
        pseudo_distance,
        runtime: start.elapsed().as_secs_f64(),
    })
}

fn run_stationary(config: &ExperimentConfig, criterion: Criterion) -> Result<StudyResult> {
    let start = Instant::now();
    let setup = setup(config, criterion)?;
    let schedule = config.schedule()?;
    if schedule.n.is_empty() {
        return Err(Error::config("schedule.n", format!("a {criterion} study needs at least one action resolution")));
    }
    let (model, grid) = (&setup.model, &setup.grid);
    let hjb: HjbSolution = match criterion {
        Criterion::Discounted => solve_hjb_discounted(model, setup.reference_grid.clone(), grid)?,
        Criterion::Ergodic => solve_hjb_ergodic(model, setup.reference_grid.clone(), grid)?,
        _ => solve_hjb_exit(model, setup.reference_grid.clone(), grid)?,
    };
    let value = |report: &crate::pde::SolveReport| match criterion {
        Criterion::Ergodic => report.scalar_out.expect("ergodic solves report rho"),
        _ => report.value_at(&setup.x0),
    };
    let reference = value(&hjb.report);
    let evaluate = |p: &Policy| -> Result<f64> {
        let report = match criterion {
            Criterion::Discounted => solve_discounted(model, p, grid)?,
            Criterion::Ergodic => solve_ergodic(model, p, grid)?,
            _ => solve_exit(model, p, grid)?,
        };
        Ok(value(&report))
    };
    let reference_samples = if setup.mc { Some(mc_samples(config, &setup, criterion, &hjb.policy)?) } else { None };

    let quantized = schedule
        .n
        .iter()
        .map(|&n| Ok((n, quantize_policy_actions(&hjb.policy, nested_grid(&setup, n)?)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut entries: Vec<(&str, f64, Policy)> = quantized.iter().map(|(n, p)| ("n", *n as f64, p.clone())).collect();
    if !schedule.m.is_empty() {
        let finest = &quantized.last().expect("schedule.n is nonempty").1;
        let spec = schedule
            .cell_grid
            .clone()
            .ok_or_else(|| Error::config("schedule.cell_grid", "required when schedule.m is set"))?;
        let cells = Arc::new(Grid::new(spec)?);
        for &m in &schedule.m {
            let simplex = SimplexGrid::new(finest.action_grid().len(), m)?;
            let p = quantize_policy_space(finest, cells.clone(), Some(&simplex))?;
            entries.push(("m", m as f64, Policy::Cell(p)));
        }
    }
    let rows = entries
        .par_iter()
        .map(|(kind, res, p)| {
            row(
                config,
                &setup,
                criterion,
                kind,
                *res,
                p,
                &hjb.policy,
                reference,
                reference_samples.as_ref(),
                None,
                evaluate,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StudyResult {
        criterion,
        model_id: model.id().to_string(),
        x0: setup.x0.clone(),
        reference,
        reference_n: schedule.reference_n,
        reference_dt: None,
        reference_mc: reference_samples.as_ref().map(|s| s.mean_and_se().0),
        seed: config.sim.as_ref().map(|s| s.seed).unwrap_or(0),
        rows,
        runtime: start.elapsed().as_secs_f64(),
    })
}

/// Reference by the parabolic HJB at `reference_dt` with the argmin refreshed
/// until stable; each `dt` row freezes the reference policy on intervals of
/// length `dt`, each `n` row quantizes its actions. All rows are evaluated by
/// the same implicit scheme at `reference_dt`.
pub fn run_finite_horizon_study(config: &ExperimentConfig) -> Result<StudyResult> {
    let start = Instant::now();
    let criterion = Criterion::FiniteHorizon;
    let setup = setup(config, criterion)?;
    let schedule = config.schedule()?;
    if schedule.dt.is_empty() && schedule.n.is_empty() {
        return Err(Error::config("schedule.dt", "a finite_horizon study needs at least one time step"));
    }
    let (model, grid) = (&setup.model, &setup.grid);
    let horizon =
        model.horizon().ok_or_else(|| Error::config("model.horizon", "required by the finite_horizon criterion"))?;
    let fine_dt = match schedule.reference_dt() {
        Some(d) => d,
        None => config.sim()?.dt,
    };
    let hjb = solve_hjb_parabolic_with(model, setup.reference_grid.clone(), grid, fine_dt, ArgminRefresh::UntilStable)?;
    let reference = hjb.values.initial().value_at(&setup.x0);
    let evaluate =
        |p: &Policy| -> Result<f64> { Ok(evaluate_parabolic(model, p, grid, fine_dt)?.initial().value_at(&setup.x0)) };
    let reference_samples = if setup.mc { Some(mc_samples(config, &setup, criterion, &hjb.policy)?) } else { None };
    let pairing_horizon = (horizon > 0.0).then_some(horizon);

    let mut entries: Vec<(&str, f64, Policy)> = Vec::new();
    for &n in &schedule.n {
        entries.push(("n", n as f64, quantize_policy_actions(&hjb.policy, nested_grid(&setup, n)?)?));
    }
    for &dt in &schedule.dt {
        entries.push(("dt", dt, Policy::TimeCell(discretize_policy_time(&hjb.policy, dt, horizon)?)));
    }
    let rows = entries
        .par_iter()
        .map(|(kind, res, p)| {
            row(
                config,
                &setup,
                criterion,
                kind,
                *res,
                p,
                &hjb.policy,
                reference,
                reference_samples.as_ref(),
                pairing_horizon,
                evaluate,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StudyResult {
        criterion,
        model_id: model.id().to_string(),
        x0: setup.x0.clone(),
        reference,
        reference_n: schedule.reference_n,
        reference_dt: Some(fine_dt),
        reference_mc: reference_samples.as_ref().map(|s| s.mean_and_se().0),
        seed: config.sim.as_ref().map(|s| s.seed).unwrap_or(0),
        rows,
        runtime: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lq(extra: &str) -> ExperimentConfig {
        let src = format!(
            r#"
[model]
id = "lq"
dim_x = 1
action_low = [-4.0]
action_high = [4.0]
drift = ["-x1 + u1"]
sigma = [["sqrt(2)"]]
cost = "x1^2 + u1^2"
alpha = 1.0
horizon = 1.0

[criterion]
kind = "discounted"
x0 = [0.5]

[grid]
low = [-4.0]
high = [4.0]
points = [161]

{extra}
"#
        );
        ExperimentConfig::from_toml_str(&src).unwrap()
    }

    #[test]
    fn discounted_gaps_shrink() {
        let cfg = lq("[schedule]\nn = [1, 2, 4, 8]\nreference_n = 16\n");
        let r = run_discounted_study(&cfg).unwrap();
        assert_eq!(r.rows.len(), 4);
        assert!(r.negative_gaps().is_empty(), "{:?}", r.rows);
        for w in r.rows.windows(2) {
            assert!(w[1].gap <= w[0].gap + 1e-9, "{:?}", r.rows);
        }
        assert!(r.rows[3].gap < r.rows[0].gap);
        assert!(r.rows.iter().all(|row| row.cost_mc.is_none()));
    }

    #[test]
    fn control_free_cost_gives_zero_gaps() {
        let mut cfg = lq("[schedule]\nn = [1, 2]\nreference_n = 8\n");
        cfg.model.cost = "x1^2".into();
        cfg.model.drift = vec!["-x1".into()];
        let r = run_discounted_study(&cfg).unwrap();
        for row in &r.rows {
            assert!(row.gap.abs() < 1e-9, "{row:?}");
        }
    }

    #[test]
    fn criterion_mismatch_names_the_field() {
        let cfg = lq("[schedule]\nn = [1]\nreference_n = 4\n");
        match run_ergodic_study(&cfg).unwrap_err() {
            Error::Config { field, .. } => assert_eq!(field, "criterion.kind"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn non_nested_schedule_is_rejected() {
        let cfg = lq("[schedule]\nn = [3]\nreference_n = 4\n");
        assert!(matches!(run_discounted_study(&cfg), Err(Error::Config { .. })));
    }

    #[test]
    fn space_rows_and_mc_columns() {
        let cfg = lq("[sim]\ndt = 0.05\nn_paths = 200\nseed = 3\nt_max = 5.0\n\
             [schedule]\nn = [2]\nm = [1, 2]\nreference_n = 4\nmc = true\n\
             [schedule.cell_grid]\nlow = [-4.0]\nhigh = [4.0]\npoints = [33]\n");
        let r = run_discounted_study(&cfg).unwrap();
        assert_eq!(r.rows.iter().map(|row| row.kind.as_str()).collect::<Vec<_>>(), ["n", "m", "m"]);
        assert!(r.negative_gaps().is_empty());
        assert!(r.rows.iter().all(|row| row.cost_mc.is_some() && row.gap_mc_se.is_some()));
        let again = run_discounted_study(&cfg).unwrap();
        let strip = |s: String| s.lines().skip(1).collect::<Vec<_>>().join("\n");
        assert_eq!(strip(r.to_csv()), strip(again.to_csv()));
    }

    #[test]
    fn finite_horizon_gaps_are_nonnegative() {
        let mut cfg = lq("[schedule]\ndt = [0.5, 0.25]\nreference_dt = 0.05\nreference_n = 8\n");
        cfg.criterion.kind = "finite_horizon".into();
        let r = run_finite_horizon_study(&cfg).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert!(r.negative_gaps().is_empty(), "{:?}", r.rows);
        assert!(r.rows[1].gap <= r.rows[0].gap + 1e-9);
    }

    #[test]
    fn zero_horizon_gives_terminal_cost() {
        let mut cfg = lq("[schedule]\ndt = [0.5]\nreference_dt = 0.1\nreference_n = 4\n");
        cfg.criterion.kind = "finite_horizon".into();
        cfg.model.horizon = Some(0.0);
        cfg.model.terminal = Some("x1^2".into());
        let r = run_finite_horizon_study(&cfg).unwrap();
        assert!((r.reference - 0.25).abs() < 1e-12);
        assert_eq!(r.rows[0].gap, 0.0);
    }
}
