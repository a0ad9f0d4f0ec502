//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

use std::path::PathBuf;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestError, TestRng, TestRunner};

use diffquant_core::borkar::{build_bank, default_bank, pairing, pseudo_distance};
use diffquant_core::config::ExperimentConfig;
use diffquant_core::grid::Grid;
use diffquant_core::model::{ControlModel, ExitSpec, ModelSpec};
use diffquant_core::pde::{
    riccati_oracle, solve_discounted, solve_ergodic, solve_exit, solve_hjb_discounted, vanishing_discount,
};
use diffquant_core::policy::{
    build_action_grid, quantize_policy_actions, total_variation, ActionGrid, Policy, ProbabilityVector, SimplexGrid,
};
use diffquant_core::simulate::{mc_exit, SimConfig};
use diffquant_core::study::{run_discounted_study, run_finite_horizon_study, StudyRow};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&configs_dir().join(name)).expect("shipped config loads")
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Riccati feedback `u = κx` for the LQ config, on a fine action grid.
fn lq_optimal(model: &ControlModel) -> Result<(Policy, f64), String> {
    let s = riccati_oracle(-1.0, 1.0, 1.0, 1.0, 1.0, 2f64.sqrt()).map_err(err)?;
    let grid = Arc::new(build_action_grid(model.action_box(), 256));
    let p = Policy::feedback("riccati", grid, 1, &[format!("{:.17} * x1", s.kappa)]).map_err(err)?;
    Ok((p, s.m))
}

fn criterion_1() -> Outcome {
    let cfg = load("lq.toml");
    let model = cfg.model().map_err(err)?;
    let grid = Grid::uniform(&[-6.0], &[6.0], &[1201]).map_err(err)?;
    let (policy, m) = lq_optimal(&model)?;
    let start = Instant::now();
    let v0 = solve_discounted(&model, &policy, &grid).map_err(err)?.value_at(&[0.0]);
    let secs = start.elapsed().as_secs_f64();
    let rel = (v0 - m).abs() / m;
    check(rel < 1e-2 && secs < 5.0, format!("V(0) = {v0:.6}, Riccati m = {m:.6}, rel err {rel:.2e}, {secs:.2} s"))
}

fn criterion_2() -> Outcome {
    let cfg = load("lq.toml");
    let model = cfg.model().map_err(err)?;
    let grid = cfg.grid().map_err(err)?;
    let actions = Arc::new(build_action_grid(model.action_box(), 256));
    let hjb = solve_hjb_discounted(&model, actions, &grid).map_err(err)?;
    let re = solve_discounted(&model, &hjb.policy, &grid).map_err(err)?;
    let sup = re.field.values.iter().zip(&hjb.report.field.values).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
    let it = hjb.report.iterations;
    check(sup <= 1e-9 && it <= 50, format!("sup |V_policy - V_hjb| = {sup:.2e}, {it} policy-iteration rounds"))
}

fn criterion_3() -> Outcome {
    let cfg = load("brownian_exit.toml");
    let model = cfg.model().map_err(err)?;
    let grid = cfg.grid().map_err(err)?;
    let policy = cfg.policy(&model).map_err(err)?;
    let pde = solve_exit(&model, &policy, &grid).map_err(err)?;
    let pde_err = (0..grid.len()).fold(0.0f64, |a, i| {
        let x = grid.node(i)[0];
        a.max((pde.field.values[i] - (1.0 - x * x)).abs())
    });
    let x0 = cfg.criterion.x0.clone();
    let exact = 1.0 - x0[0] * x0[0];
    let sim = SimConfig::new(1e-4, 100_000, cfg.sim().map_err(err)?.seed);
    let start = Instant::now();
    let mc = mc_exit(&model, &policy, &x0, &sim).map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    let mc_err = (mc.estimate - exact).abs();
    let bound = 3.0 * mc.std_error + 0.01;
    check(
        pde_err <= 1e-4 && mc_err <= bound && secs < 60.0,
        format!(
            "PDE sup err {pde_err:.2e}; MC at x = {}: {:.5} vs {exact} (|err| {mc_err:.4} <= {bound:.4}, \
             discrete-monitoring bias O(sqrt(dt)) overestimates E[tau]), {secs:.1} s",
            x0[0], mc.estimate
        ),
    )
}

fn criterion_4() -> Outcome {
    let spec = ModelSpec {
        id: "ou".into(),
        dim_x: 1,
        action_low: vec![-1.0],
        action_high: vec![1.0],
        drift: vec!["-x1".into()],
        sigma: vec![vec!["sqrt(2)".into()]],
        cost: "x1^2".into(),
        terminal: None,
        alpha: None,
        horizon: None,
        exit: None,
    };
    let model = ControlModel::from_spec(spec).map_err(err)?;
    let grid = Grid::uniform(&[-6.0], &[6.0], &[601]).map_err(err)?;
    let policy = Policy::constant_atom(Arc::new(build_action_grid(model.action_box(), 1)), 0);
    let sol = solve_ergodic(&model, &policy, &grid).map_err(err)?;
    let rho = sol.scalar_out.ok_or("no rho reported")?;
    let vd = vanishing_discount(&model, &policy, &grid, &[1e-3]).map_err(err)?;
    let av = vd[0].1;
    check(
        (0.99..=1.01).contains(&rho) && (av - rho).abs() <= 2e-2,
        format!("rho = {rho:.6} (residual {:.1e}), alpha V_alpha(0) at alpha = 1e-3: {av:.6}", sol.residual_inf_norm),
    )
}

fn nonincreasing(
    rows: &[&StudyRow],
    slack: impl Fn(&StudyRow, &StudyRow) -> f64,
    gap: impl Fn(&StudyRow) -> f64,
) -> bool {
    rows.windows(2).all(|w| gap(w[1]) <= gap(w[0]) + slack(w[0], w[1]))
}

fn criterion_5() -> Outcome {
    let cfg = load("lq.toml");
    let start = Instant::now();
    let r = run_discounted_study(&cfg).map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    let rows: Vec<&StudyRow> = r.rows.iter().filter(|row| row.kind == "n").collect();
    let ns: Vec<f64> = rows.iter().map(|row| row.resolution).collect();
    let scale = 1.0 + r.reference.abs();
    let nonneg = rows.iter().all(|row| row.gap >= -1e-9 * scale);
    let mono = nonincreasing(&rows, |_, _| 1e-9, |row| row.gap);
    let last = rows.last().map(|row| row.gap).unwrap_or(f64::NAN);
    let gaps: Vec<String> = rows.iter().map(|row| format!("{:.2e}", row.gap)).collect();
    check(
        ns == [2.0, 4.0, 8.0, 16.0, 32.0] && nonneg && mono && last < 1e-2 * scale && secs < 600.0,
        format!("gaps over n = 2..32: [{}], reference {:.6}, {secs:.1} s", gaps.join(", "), r.reference),
    )
}

fn criterion_6() -> Outcome {
    let cfg = load("lq.toml");
    let model = cfg.model().map_err(err)?;
    let (v, _) = lq_optimal(&model)?;
    let quadrature = cfg.grid().map_err(err)?;
    let specs = default_bank(1, 1);
    let bank = build_bank(&specs, 1, 1, &quadrature).map_err(err)?;
    let mut worst_slack = f64::INFINITY;
    let mut checked = 0;
    for pair in &bank {
        let Some(lip) = pair.spec.lip_u else { continue };
        let base = pairing(pair, &v).map_err(err)?;
        for n in [4usize, 16, 64] {
            let vn = quantize_policy_actions(&v, Arc::new(build_action_grid(model.action_box(), n))).map_err(err)?;
            let pn = pairing(pair, &vn).map_err(err)?;
            let bound = lip / n as f64 * base.abs_f_integral + 1e-6;
            worst_slack = worst_slack.min(bound - (pn.value - base.value).abs());
            checked += 1;
        }
    }
    let v256 = quantize_policy_actions(&v, Arc::new(build_action_grid(model.action_box(), 256))).map_err(err)?;
    let d = pseudo_distance(&v256, &v, &bank, None).map_err(err)?;
    check(
        checked > 0 && worst_slack >= 0.0 && d < 1e-3,
        format!(
            "{checked} (pair, n) checks, smallest bound slack {worst_slack:.2e}; pseudo_distance(v_256, v) = {d:.2e}"
        ),
    )
}

fn criterion_7() -> Outcome {
    let cfg = load("lq_finite.toml");
    let r = run_finite_horizon_study(&cfg).map_err(err)?;
    let rows: Vec<&StudyRow> = r.rows.iter().filter(|row| row.kind == "dt").collect();
    let at = rows.iter().find(|row| (row.resolution - 0.025).abs() < 1e-12).ok_or("no dt = 0.025 row")?;
    let pde_mono = nonincreasing(&rows, |_, _| 1e-9, |row| row.gap);
    let mc_mono = nonincreasing(
        &rows,
        |a, b| 3.0 * a.gap_mc_se.unwrap_or(0.0).max(b.gap_mc_se.unwrap_or(0.0)),
        |row| row.gap_mc.unwrap_or(row.gap),
    );
    let gaps: Vec<String> = rows
        .iter()
        .map(|row| format!("{}: {:.2e} (mc {:.2e})", row.resolution, row.gap, row.gap_mc.unwrap_or(f64::NAN)))
        .collect();
    check(at.gap < 2e-2 && pde_mono && mc_mono, format!("gaps by dt: [{}]", gaps.join(", ")))
}

fn run_cli(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_diffquant")).args(args).output().map_err(err)?;
    if !out.status.success() {
        return Err(String::from_utf8_lossy(&out.stderr).into_owned());
    }
    Ok(out.stdout)
}

fn strip_header(csv: &[u8]) -> &[u8] {
    match csv.iter().position(|&b| b == b'\n') {
        Some(i) if csv.starts_with(b"#") => &csv[i + 1..],
        _ => csv,
    }
}

fn criterion_8() -> Outcome {
    let mut details = Vec::new();
    for (kind, file) in
        [("discounted", "lq.toml"), ("finite_horizon", "lq_finite.toml"), ("ergodic", "ou_ergodic.toml")]
    {
        let path = configs_dir().join(file);
        let path = path.to_str().ok_or("non-utf8 path")?;
        let one = run_cli(&["study", kind, "--config", path, "--threads", "1", "--seed", "7"])?;
        let four = run_cli(&["study", kind, "--config", path, "--threads", "4", "--seed", "7"])?;
        if strip_header(&one) != strip_header(&four) {
            return Err(format!("{kind}: outputs differ between --threads 1 and --threads 4"));
        }
        details.push(format!("{kind} ({} bytes)", one.len()));
    }
    Ok(format!("byte-identical below the header at 1 and 4 threads: {}", details.join(", ")))
}

fn runner(cases: u32) -> TestRunner {
    let config = Config { cases, failure_persistence: None, ..Config::default() };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn property<S: Strategy>(
    name: &str,
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<String, String> {
    match runner(cases).run(&strategy, test) {
        Ok(()) => Ok(format!("{name}: {cases} cases")),
        Err(TestError::Fail(why, input)) => Err(format!("{name} failed: {why} on {input:?}")),
        Err(TestError::Abort(why)) => Err(format!("{name} aborted: {why}")),
    }
}

fn action_grid_property() -> Result<String, String> {
    // 200 grids x 50 points = 10^4 samples
    let strategy = (
        1usize..=3,
        1usize..=12,
        prop::collection::vec((-2.0f64..2.0, 0.1f64..3.0), 3),
        prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 3), 50),
    );
    property("action covering radius < 1/n and cell diameter <= 2/n", 200, strategy, |(k, n, bounds, pts)| {
        let low: Vec<f64> = bounds[..k].iter().map(|b| b.0).collect();
        let high: Vec<f64> = bounds[..k].iter().map(|b| b.0 + b.1).collect();
        let bbox = diffquant_core::model::ActionBox::new(low.clone(), high.clone()).unwrap();
        let g: ActionGrid = build_action_grid(&bbox, n);
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let mut by_atom: Vec<(usize, Vec<f64>)> = Vec::new();
        for p in &pts {
            let z: Vec<f64> = (0..k).map(|i| low[i] + p[i] * (high[i] - low[i])).collect();
            let j = g.nearest_unchecked(&z);
            let d = dist(&z, g.atom(j));
            prop_assert!(d < 1.0 / n as f64 + 1e-12, "distance {d} at n = {n}");
            let best = g.atoms().map(|a| dist(&z, a)).fold(f64::INFINITY, f64::min);
            prop_assert!(d <= best + 1e-12);
            for (i, other) in &by_atom {
                if *i == j {
                    prop_assert!(dist(&z, other) <= 2.0 / n as f64 + 1e-12);
                }
            }
            by_atom.push((j, z));
        }
        Ok(())
    })
}

fn state_cell_property() -> Result<String, String> {
    let strategy = (3usize..30, 3usize..30, prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 50));
    property("state cells contain their points within half a spacing", 200, strategy, |(p0, p1, pts)| {
        let g = Grid::uniform(&[-1.0, 0.0], &[2.0, 0.5], &[p0, p1]).unwrap();
        for (a, b) in pts {
            let x = [-1.0 + 3.0 * a, 0.5 * b];
            let c = g.cell_center(g.cell_index(&x));
            for i in 0..2 {
                prop_assert!((x[i] - c[i]).abs() <= g.spacing()[i] / 2.0 + 1e-12);
            }
        }
        Ok(())
    })
}

fn simplex_property() -> Result<String, String> {
    let strategy = (1usize..=4, 1usize..=6, prop::collection::vec(0.0f64..1.0, 4));
    property("simplex projection is nearest and within k/(2m) in TV", 2000, strategy, |(k, m, raw)| {
        let mut w: Vec<f64> = raw[..k].iter().map(|v| v + 1e-3).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        let s: f64 = w[..k - 1].iter().sum();
        w[k - 1] = (1.0 - s).max(0.0);
        let nu = ProbabilityVector::new(w).unwrap();
        let simplex = SimplexGrid::new(k, m).unwrap();
        let tv = total_variation(&nu, &simplex.project(&nu));
        prop_assert!(tv <= k as f64 / (2.0 * m as f64) + 1e-12);
        let best = (0..simplex.codebook_len())
            .map(|i| total_variation(&nu, &simplex.element(i)))
            .fold(f64::INFINITY, f64::min);
        prop_assert!(tv <= best + 1e-12, "tv {tv} vs best {best}");
        Ok(())
    })
}

fn lq_like(theta: f64, sigma: f64, cost: String, alpha: Option<f64>) -> ControlModel {
    ControlModel::from_spec(ModelSpec {
        id: "p".into(),
        dim_x: 1,
        action_low: vec![-1.0],
        action_high: vec![1.0],
        drift: vec![format!("-{theta} * x1 + u1")],
        sigma: vec![vec![format!("{sigma}")]],
        cost,
        terminal: None,
        alpha,
        horizon: None,
        exit: None,
    })
    .unwrap()
}

fn maximum_principle_property() -> Result<String, String> {
    let strategy = (0.1f64..2.0, 0.5f64..2.0, 0.2f64..3.0, -1.0f64..3.0, 0.0f64..2.0, 0usize..3);
    property("discrete maximum principle", 40, strategy, |(theta, sigma, alpha, c0, c1, atom)| {
        let m = lq_like(theta, sigma, format!("{c0} + {c1} * sin(3 * x1 + u1)"), Some(alpha));
        let grid = Grid::uniform(&[-3.0], &[3.0], &[121]).unwrap();
        let p = Policy::constant_atom(Arc::new(build_action_grid(m.action_box(), 1)), atom);
        let v = solve_discounted(&m, &p, &grid).unwrap();
        let (lo, hi) = ((c0 - c1) / alpha, (c0 + c1) / alpha);
        for &x in &v.field.values {
            prop_assert!(x >= lo - 1e-9 && x <= hi + 1e-9, "{x} outside [{lo}, {hi}]");
        }
        let e = ExitSpec { low: vec![-1.0], high: vec![1.0], discount: "0".into(), terminal: format!("{c0}") };
        let mut spec = m.spec().clone();
        spec.exit = Some(e);
        spec.cost = "0".into();
        let me = ControlModel::from_spec(spec).unwrap();
        let ve = solve_exit(&me, &p, &Grid::uniform(&[-1.0], &[1.0], &[81]).unwrap()).unwrap();
        prop_assert!(ve.field.values.iter().all(|x| (x - c0).abs() <= 1e-9 * (1.0 + c0.abs())));
        Ok(())
    })
}

fn policy_iteration_property() -> Result<String, String> {
    let strategy = (0.1f64..2.0, 0.5f64..2.0, 0.5f64..2.0, 0.1f64..2.0);
    property("policy iteration values are non-increasing", 20, strategy, |(theta, sigma, alpha, r)| {
        let m = lq_like(theta, sigma, format!("x1^2 + {r} * u1^2"), Some(alpha));
        let grid = Grid::uniform(&[-3.0], &[3.0], &[121]).unwrap();
        let hjb = solve_hjb_discounted(&m, Arc::new(build_action_grid(m.action_box(), 8)), &grid).unwrap();
        for w in hjb.history.windows(2) {
            prop_assert!(w[1].iter().zip(&w[0]).all(|(a, b)| *a <= b + 1e-12 * (1.0 + b.abs())));
        }
        Ok(())
    })
}

fn gauge_property() -> Result<String, String> {
    let strategy = (0.2f64..2.0, 0.5f64..2.0, -5.0f64..5.0, 0usize..3);
    property("ergodic gauge invariance c -> c + k", 30, strategy, |(theta, sigma, k, atom)| {
        let grid = Grid::uniform(&[-4.0], &[4.0], &[161]).unwrap();
        let base = lq_like(theta, sigma, "x1^2 + 0.5 * sin(x1 + u1)".into(), None);
        let shifted = lq_like(theta, sigma, format!("x1^2 + 0.5 * sin(x1 + u1) + {k}"), None);
        let p = Policy::constant_atom(Arc::new(build_action_grid(base.action_box(), 1)), atom);
        let a = solve_ergodic(&base, &p, &grid).unwrap();
        let b = solve_ergodic(&shifted, &p, &grid).unwrap();
        let (ra, rb) = (a.scalar_out.unwrap(), b.scalar_out.unwrap());
        prop_assert!((rb - ra - k).abs() <= 1e-8, "rho {ra} -> {rb} for k = {k}");
        let dv = a.field.values.iter().zip(&b.field.values).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        prop_assert!(dv <= 1e-7, "value fields differ by {dv}");
        Ok(())
    })
}

fn pseudometric_property() -> Result<String, String> {
    let model = lq_like(1.0, 1.0, "x1^2".into(), Some(1.0));
    let quadrature = Grid::uniform(&[-4.0], &[4.0], &[161]).unwrap();
    let bank = build_bank(&default_bank(1, 1), 1, 1, &quadrature).unwrap();
    let grid = Arc::new(build_action_grid(model.action_box(), 16));
    let feedback =
        |p: f64, q: f64| Policy::feedback("f", grid.clone(), 1, &[format!("min(max({p} * x1 + {q}, -1), 1)")]).unwrap();
    let coef = (-2.0f64..2.0, -1.0f64..1.0);
    property("pseudometric axioms", 30, (coef.clone(), coef.clone(), coef), |((p1, q1), (p2, q2), (p3, q3))| {
        let (a, b, c) = (feedback(p1, q1), feedback(p2, q2), feedback(p3, q3));
        let d = |x: &Policy, y: &Policy| pseudo_distance(x, y, &bank, None).unwrap();
        prop_assert_eq!(d(&a, &a), 0.0);
        let (ab, ba, bc, ac) = (d(&a, &b), d(&b, &a), d(&b, &c), d(&a, &c));
        prop_assert!(ab >= 0.0 && (ab - ba).abs() <= 1e-15);
        prop_assert!(ac <= ab + bc + 1e-15);
        Ok(())
    })
}

fn criterion_9() -> Outcome {
    let suites: [fn() -> Result<String, String>; 7] = [
        action_grid_property,
        state_cell_property,
        simplex_property,
        maximum_principle_property,
        policy_iteration_property,
        gauge_property,
        pseudometric_property,
    ];
    let passed = suites.iter().map(|suite| suite()).collect::<Result<Vec<_>, _>>()?;
    Ok(format!("zero failures; {}", passed.join("; ")))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("LQ discounted value matches Riccati", criterion_1),
        ("HJB optimality fixed point", criterion_2),
        ("exit-time oracle 1 - x^2", criterion_3),
        ("ergodic OU oracle and vanishing discount", criterion_4),
        ("action quantization near-optimality", criterion_5),
        ("Borkar pairing bound", criterion_6),
        ("time-discretization near-optimality", criterion_7),
        ("thread-count determinism", criterion_8),
        ("property suites", criterion_9),
    ];
    let mut failures = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {}: PASS  {name} ({secs:.1} s): {detail}", i + 1),
            Err(detail) => {
                failures += 1;
                println!("criterion {}: FAIL  {name} ({secs:.1} s): {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
