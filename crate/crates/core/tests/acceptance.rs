//! Acceptance suite: one pass/fail line per criterion, nonzero exit on any
//! failure. Every reference value is recomputed here from closed forms.

use std::time::{Duration, Instant};

use impulse_qvi::config::Config;
use impulse_qvi::levy::QuadratureBuilder;
use impulse_qvi::model::{estimate_beta, Drift, ModelConstants, RunningCost, TransactionCost, Volatility};
use impulse_qvi::operators::{apply_I, decompose_I};
use impulse_qvi::simulate::{coupled_sweep, CouplingStats, SimConfig};
use impulse_qvi::verify::{
    integrability, verify_coupling_bound, verify_eps_lp_estimate, verify_lipschitz_u, verify_semiconcavity,
    verify_uniform_convergence, verify_value_vs_montecarlo, TestFunction, VerifySettings,
};
use impulse_qvi::{solve_qvi, Grid1D, LevyMeasure1D, ProblemSpec, SmallJumpMode, ValueField};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg)
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    ensure(
        elapsed.as_secs_f64() < limit_s,
        format!("runtime {:.1} s exceeds {limit_s} s", elapsed.as_secs_f64()),
    )
}

fn e<T: std::fmt::Display>(err: T) -> String {
    err.to_string()
}

/// ∫_{|z|<=ε} z² dν and ∫_{|z|<=ε} z⁴ dν for c|z|^{-2.5} on |z| <= 1.
fn dropped_moments(eps: f64) -> (f64, f64) {
    (2.0 * eps.powf(0.5) / 0.5, 2.0 * eps.powf(2.5) / 2.5)
}

fn lambda_oracle(eps: f64) -> f64 {
    let (m2, m4) = dropped_moments(eps);
    m2.sqrt() + m4.powf(0.25)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let spec = ProblemSpec::reference();
    let quad = QuadratureBuilder::new(&spec.levy).build().map_err(e)?;
    let grid = Grid1D::new(-1.5, 1.5, 30001).map_err(e)?;
    let field = ValueField::from_fn(grid, |x| 0.5 * x * x).map_err(e)?;
    let value = apply_I(&spec, &field, &quad, SmallJumpMode::default(), grid.n / 2).map_err(e)?;
    let elapsed = start.elapsed();
    // Iφ = ½ ∫ z² dν = ½ · 2 ∫_0^1 z^{-1/2} dz
    let oracle = 0.5 * 2.0 * 2.0;
    let rel = (value - oracle).abs() / oracle;
    ensure(rel <= 1e-3, format!("Iφ = {value}, relative error {rel:.2e} > 1e-3"))?;
    within(elapsed, 1.0)?;
    Ok(format!("Iφ = {value:.6} vs 2, relative error {rel:.2e}, {:.2} s", elapsed.as_secs_f64()))
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let spec = ProblemSpec::reference();
    let quad = QuadratureBuilder::new(&spec.levy).build().map_err(e)?;
    let grid = Grid1D::new(-4.0, 4.0, 4001).map_err(e)?;
    let functions = TestFunction::standard();
    let etas = [0.05, 0.1, 0.25, 0.5, 1.0];
    let window = (-1.5, 1.5);
    let mut worst_sum = 0.0f64;
    for phi in &functions {
        let field = ValueField::from_fn(grid, |x| phi.value(x)).map_err(e)?;
        for &eta in &etas {
            for i in (0..grid.n).filter(|&i| grid.x(i) >= window.0 && grid.x(i) <= window.1).step_by(7) {
                let total = apply_I(&spec, &field, &quad, SmallJumpMode::default(), i).map_err(e)?;
                let (a, b, c) = decompose_I(&spec, &field, &quad, SmallJumpMode::default(), i, eta).map_err(e)?;
                worst_sum = worst_sum.max((a + b + c - total).abs() / total.abs().max(1.0));
            }
        }
    }
    ensure(worst_sum <= 1e-10, format!("I¹+I²+I³ − I = {worst_sum:.2e} > 1e-10"))?;
    // γ = 2: r(η) = ∫_{|z|<η} z² dν = 4√η
    for &eta in &etas {
        let r = integrability(&spec, 2.0, eta);
        ensure((r - 4.0 * eta.sqrt()).abs() <= 1e-12, format!("r({eta}) = {r} vs 4√η"))?;
    }
    let settings = VerifySettings::default();
    let (report, _) = verify_eps_lp_estimate(&spec, &quad, &grid, &functions, window, &etas, &[1.0, 2.0, f64::INFINITY], 2.0, &settings)
        .map_err(e)?;
    ensure(report.pass, format!("I³ bound: {}", report.note))?;
    let elapsed = start.elapsed();
    within(elapsed, 5.0)?;
    Ok(format!(
        "sum error {worst_sum:.1e}; largest ‖I³‖/bound {:.4} (slack 1%), {:.2} s",
        report.measured,
        elapsed.as_secs_f64()
    ))
}

fn criterion_3(cfg: &Config) -> Outcome {
    let start = Instant::now();
    let spec = cfg.problem_spec().map_err(e)?;
    let grid = cfg.grid().map_err(e)?;
    let quad = cfg.quadrature().map_err(e)?;
    let sol = solve_qvi(&spec, &grid, &quad, &cfg.solve).map_err(e)?;
    let res = sol.residual(&spec.transaction_cost).map_err(e)?;
    let tol = 5.0 * cfg.solve.tol_outer;
    ensure(res.r1 <= tol && res.r2 <= tol && res.r3 <= tol, format!("residuals {} {} {} > {tol}", res.r1, res.r2, res.r3))?;
    let sup_f = grid.nodes().into_iter().map(|x| spec.running_cost(x)).fold(0.0, f64::max);
    let (lo, hi) = (sol.u.inf(), sol.u.sup());
    ensure(lo >= 0.0 && hi <= sup_f / spec.discount, format!("u range [{lo}, {hi}] outside [0, {}]", sup_f / spec.discount))?;
    let excess = sol
        .u
        .values
        .iter()
        .zip(&sol.intervention.mu.values)
        .map(|(u, m)| u - m)
        .fold(f64::NEG_INFINITY, f64::max);
    ensure(excess <= tol, format!("u − Mu reaches {excess:.2e}"))?;
    ensure(sol.policy.violations == 0, format!("{} targets land in the action region", sol.policy.violations))?;
    let monotone = sol.trace.iter().all(|t| t.excess <= cfg.solve.tol_inner);
    ensure(monotone, "outer iterates not monotone nonincreasing".into())?;
    let elapsed = start.elapsed();
    within(elapsed, 60.0)?;
    Ok(format!(
        "r = ({:.1e}, {:.1e}, {:.1e}), u ∈ [{lo:.4}, {hi:.4}], max(u − Mu) = {excess:.1e}, {} action nodes, 0 violations, {} outer iterations, {:.2} s",
        res.r1,
        res.r2,
        res.r3,
        sol.policy.action_count(),
        sol.trace.len(),
        elapsed.as_secs_f64()
    ))
}

fn criterion_4(cfg: &Config) -> Outcome {
    let spec = cfg.problem_spec().map_err(e)?;
    let grid = cfg.grid().map_err(e)?;
    let quad = cfg.quadrature().map_err(e)?;
    let sol = solve_qvi(&spec, &grid, &quad, &cfg.solve).map_err(e)?;
    let start = Instant::now();
    let beta = estimate_beta(&spec, &cfg.assumptions, &quad, &cfg.sampling_plan(1), &grid.nodes()).map_err(e)?;
    // b̃ = −x/2, constant σ, state-independent jumps: β = 2·(−1/2) = −1
    ensure((beta.beta + 1.0).abs() <= 1e-12, format!("β = {} vs −1", beta.beta))?;
    let constants = ModelConstants::new(beta);
    let report = verify_lipschitz_u(&sol.u, &constants, cfg.assumptions.c_f, spec.discount, &cfg.verify.settings);
    ensure(report.pass, format!("Lipschitz quotient {} > {}", report.measured, report.bound))?;
    let elapsed = start.elapsed();
    within(elapsed, 5.0)?;
    Ok(format!(
        "β = {}, Lip(u) = {:.4} <= 1.05·C_u = {:.4}, {:.2} s",
        constants.beta.beta,
        report.measured,
        report.bound,
        elapsed.as_secs_f64()
    ))
}

fn coupling_config(cfg: &Config) -> SimConfig {
    SimConfig {
        paths: 100_000,
        dt: 1e-3,
        horizon: 2.0,
        ..cfg.coupling_sim(7)
    }
}

fn criterion_5(cfg: &Config, coupling: &[CouplingStats]) -> Outcome {
    let start = Instant::now();
    let spec = cfg.problem_spec().map_err(e)?;
    let grid = cfg.grid().map_err(e)?;
    let eps = [0.2, 0.1, 0.05];
    let quad = cfg.quadrature_for_levels(&eps).map_err(e)?;
    let (_, fits) = verify_coupling_bound(coupling, &cfg.verify.settings);
    let (report, sweep) = verify_uniform_convergence(&spec, &grid, &quad, &eps, &fits, -1.0, cfg.assumptions.c_f, &cfg.solve)
        .map_err(e)?;
    let sweep = sweep.ok_or(report.note.clone())?;
    for row in &sweep.rows {
        let oracle = lambda_oracle(row.eps);
        ensure((row.lambda - oracle).abs() <= 1e-4, format!("Λ({}) = {} vs {oracle}", row.eps, row.lambda))?;
    }
    ensure(report.pass, format!("uniform convergence: {} (measured {})", report.note, report.measured))?;
    let diffs: Vec<String> = sweep.rows.iter().filter_map(|r| r.diff_prev).map(|d| format!("{d:.4}")).collect();
    let bounds: Vec<String> = sweep.rows.iter().map(|r| format!("{:.3}", r.bound)).collect();
    let elapsed = start.elapsed();
    within(elapsed, 180.0)?;
    Ok(format!(
        "‖u_ε − u_ε'‖ = [{}], C(ε) = [{}], largest difference/bound {:.3}, {:.1} s",
        diffs.join(", "),
        bounds.join(", "),
        report.measured,
        elapsed.as_secs_f64()
    ))
}

fn criterion_6(cfg: &Config, coupling: &[CouplingStats], coupling_time: Duration) -> Outcome {
    let start = Instant::now();
    let (report, fits) = verify_coupling_bound(coupling, &cfg.verify.settings);
    ensure(report.pass, format!("coupling: {} (spread {})", report.note, report.measured))?;
    // σ = b̃ = 0: X_T − X^ε_T is the compensated dropped part, variance T·∫_{|z|<=ε} z² dν
    let control = ProblemSpec {
        drift: Drift::Zero,
        volatility: Volatility::Constant { sigma: 0.0 },
        ..cfg.problem_spec().map_err(e)?
    };
    let eps = [0.2, 0.1, 0.05];
    let quad = cfg.quadrature_for_levels(&eps).map_err(e)?;
    let sim = coupling_config(cfg);
    let stats = coupled_sweep(&control, &sim, &quad, &eps, &[1.0], 0.0).map_err(e)?;
    let mut worst = 0.0f64;
    for s in &stats {
        let oracle = sim.horizon * dropped_moments(s.eps).0;
        let z = (s.terminal_mean - oracle).abs() / s.terminal_half_width;
        worst = worst.max(z);
        ensure(z <= 3.0, format!("control ε = {}: {} vs {oracle} (±{})", s.eps, s.terminal_mean, s.terminal_half_width))?;
    }
    let elapsed = start.elapsed() + coupling_time;
    within(elapsed, 300.0)?;
    let ms: Vec<String> = fits.iter().map(|f| format!("{}:{:.3}", f.alpha, f.m)).collect();
    Ok(format!(
        "ε = 0 exactly 0; M(α) = [{}]; ratio spread {:.3}; control within {:.2} half-widths; {:.1} s",
        ms.join(", "),
        report.measured,
        worst,
        elapsed.as_secs_f64()
    ))
}

fn criterion_7(cfg: &Config) -> Outcome {
    let spec = cfg.problem_spec().map_err(e)?;
    let grid = cfg.grid().map_err(e)?;
    let quad = cfg.quadrature().map_err(e)?;
    let sol = solve_qvi(&spec, &grid, &quad, &cfg.solve).map_err(e)?;
    let start = Instant::now();
    let sc = &cfg.verify.semiconcave;
    let u = verify_semiconcavity(&sol.u, None, sc.radius, &sc.offsets, &cfg.verify.settings).map_err(e)?;
    ensure(u.pass, format!("u: {}", u.note))?;
    let mu = verify_semiconcavity(
        &sol.intervention.mu,
        Some((&sol.u, &sol.intervention, &sol.policy.action)),
        sc.radius,
        &sc.offsets,
        &cfg.verify.settings,
    )
    .map_err(e)?;
    ensure(mu.pass, format!("Mu: {}", mu.note))?;
    let elapsed = start.elapsed();
    within(elapsed, 10.0)?;
    Ok(format!(
        "u: spread {:.3}; Mu: spread {:.3}, {}; {:.2} s",
        u.measured,
        mu.measured,
        mu.note.split("; ").nth(1).unwrap_or(""),
        elapsed.as_secs_f64()
    ))
}

fn criterion_8(cfg: &Config) -> Outcome {
    let start = Instant::now();
    let spec = cfg.problem_spec().map_err(e)?;
    let grid = cfg.grid().map_err(e)?;
    let quad = cfg.quadrature().map_err(e)?;
    let sol = solve_qvi(&spec, &grid, &quad, &cfg.solve).map_err(e)?;
    let coarse_grid = Grid1D::new(grid.lower, grid.upper, (grid.n + 1) / 2).map_err(e)?;
    let coarse = solve_qvi(&spec, &coarse_grid, &quad, &cfg.solve).map_err(e)?;
    let sim = cfg.montecarlo_sim(11);
    let (report, rows) = verify_value_vs_montecarlo(&spec, &sol, Some(&coarse.u), &sim, &cfg.verify.montecarlo.points, &cfg.verify.settings)
        .map_err(e)?;
    ensure(report.pass, format!("Monte Carlo: largest normalized gap {:.3}", report.measured))?;
    let elapsed = start.elapsed();
    within(elapsed, 300.0)?;
    let pts: Vec<String> = rows.iter().map(|r| format!("x={}: u={:.4} J={:.4}±{:.4}", r.x, r.u, r.value, r.half_width)).collect();
    Ok(format!("{}; largest normalized gap {:.3}; {:.1} s", pts.join("; "), report.measured, elapsed.as_secs_f64()))
}

fn criterion_9(cfg: &Config) -> Outcome {
    let start = Instant::now();
    let base = cfg.problem_spec().map_err(e)?;
    let grid = cfg.grid().map_err(e)?;
    let quad = cfg.quadrature().map_err(e)?;

    // ν = 0: self-convergence under h → h/2 → h/4
    let diffusion = ProblemSpec {
        levy: LevyMeasure1D::Zero,
        ..base.clone()
    };
    let zero_quad = QuadratureBuilder::new(&LevyMeasure1D::Zero).build().map_err(e)?;
    let coarse_n = (grid.n - 1) / 4 + 1;
    let mut fields = Vec::new();
    for k in 0..3 {
        let g = Grid1D::new(grid.lower, grid.upper, (coarse_n - 1) * (1 << k) + 1).map_err(e)?;
        fields.push(solve_qvi(&diffusion, &g, &zero_quad, &cfg.solve).map_err(e)?.u);
    }
    let diff = |a: &ValueField, b: &ValueField, stride: usize| {
        (0..a.grid.n).map(|i| (a.values[i] - b.values[i * stride]).abs()).fold(0.0, f64::max)
    };
    let e1 = diff(&fields[0], &fields[1], 2);
    let e2 = (0..fields[0].grid.n)
        .map(|i| (fields[1].values[2 * i] - fields[2].values[4 * i]).abs())
        .fold(0.0, f64::max);
    let order = (e1 / e2).log2();
    ensure(order >= 1.0, format!("ν = 0 self-convergence order {order:.3} < 1 ({e1:.3e}, {e2:.3e})"))?;

    // f ≡ 0
    let idle = ProblemSpec {
        running_cost: RunningCost::Constant { value: 0.0 },
        ..base.clone()
    };
    let sol = solve_qvi(&idle, &grid, &quad, &cfg.solve).map_err(e)?;
    let sup = sol.u.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    ensure(sup == 0.0 && sol.policy.action_count() == 0, format!("f ≡ 0: sup|u| = {sup}, {} action nodes", sol.policy.action_count()))?;

    // K > sup f/r
    let sup_f = grid.nodes().into_iter().map(|x| base.running_cost(x)).fold(0.0, f64::max);
    let expensive = ProblemSpec {
        transaction_cost: TransactionCost::Affine {
            fixed: 1.01 * sup_f / base.discount,
            proportional: 0.1,
        },
        ..base
    };
    let sol = solve_qvi(&expensive, &grid, &quad, &cfg.solve).map_err(e)?;
    ensure(sol.policy.action_count() == 0, format!("K > sup f/r: {} action nodes", sol.policy.action_count()))?;

    let elapsed = start.elapsed();
    within(elapsed, 120.0)?;
    Ok(format!(
        "ν = 0 order {order:.3} ({e1:.2e} → {e2:.2e}); f ≡ 0 gives u ≡ 0 and no action; K > sup f/r gives no action; {:.1} s",
        elapsed.as_secs_f64()
    ))
}

fn main() {
    // libtest-style filters passed by `cargo test <filter>` select nothing here
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return;
    }
    let cfg = Config::reference();
    let mut failed = 0;
    let mut report = |n: usize, outcome: Outcome| match outcome {
        Ok(msg) => println!("criterion {n}: PASS  {msg}"),
        Err(msg) => {
            failed += 1;
            println!("criterion {n}: FAIL  {msg}");
        }
    };
    report(1, criterion_1());
    report(2, criterion_2());
    report(3, criterion_3(&cfg));
    report(4, criterion_4(&cfg));

    let t = Instant::now();
    let eps = [0.0, 0.2, 0.1, 0.05];
    let coupling = cfg
        .quadrature_for_levels(&eps)
        .and_then(|q| {
            coupled_sweep(
                &cfg.problem_spec()?,
                &coupling_config(&cfg),
                &q,
                &eps,
                &cfg.verify.coupling.alphas,
                cfg.verify.coupling.x0,
            )
        })
        .map_err(e);
    let coupling_time = t.elapsed();
    match &coupling {
        Ok(stats) => {
            report(5, criterion_5(&cfg, stats));
            report(6, criterion_6(&cfg, stats, coupling_time));
        }
        Err(msg) => {
            report(5, Err(format!("coupled sweep failed: {msg}")));
            report(6, Err(format!("coupled sweep failed: {msg}")));
        }
    }
    report(7, criterion_7(&cfg));
    report(8, criterion_8(&cfg));
    report(9, criterion_9(&cfg));
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
