//! Subcommand pipelines.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;

use clap::Args;
use impulse_qvi::config::Config;
use impulse_qvi::model::{estimate_beta, ModelConstants};
use impulse_qvi::qvi::QviSolution;
use impulse_qvi::simulate::{coupled_sweep, mean_half_width, simulate_paths, CouplingStats};
use impulse_qvi::verify::{
    eps_sweep, verify_coupling_bound, verify_eps_lp_estimate, verify_holder_I, verify_lipschitz_u, verify_semiconcavity,
    verify_uniform_convergence, verify_value_vs_montecarlo, MomentFit, ReportLog, VerificationReport,
};
use impulse_qvi::{solve_qvi, Grid1D, ProblemSpec};
use serde_json::{json, Value};

use crate::artifacts::{fmt, io_failure, manifest_name, now_unix, prepare_dir, write_csv, write_json, write_value_field, RunManifest};
use crate::{code, Common, Failure};

pub const EXPERIMENTS: [&str; 7] = ["lipschitz", "sweep-eps", "semiconcave", "lp", "holder", "coupling", "mc-cross"];
pub const SWEEP_HEADER: [&str; 5] = ["eps", "lambda", "c_eps", "alpha", "diff_prev"];

/// Experiment selection of `verify`; flags and `--experiments` are merged.
#[derive(Args, Debug, Clone, Default)]
pub struct Selection {
    #[arg(long)]
    pub lipschitz: bool,
    #[arg(long)]
    pub sweep_eps: bool,
    #[arg(long)]
    pub semiconcave: bool,
    #[arg(long)]
    pub lp: bool,
    #[arg(long)]
    pub holder: bool,
    #[arg(long)]
    pub coupling: bool,
    #[arg(long)]
    pub mc_cross: bool,
    /// Comma-separated experiment names.
    #[arg(long, value_delimiter = ',')]
    pub experiments: Vec<String>,
}

impl Selection {
    /// Selected names in canonical order.
    pub fn resolve(&self) -> Result<Vec<&'static str>, Failure> {
        for name in &self.experiments {
            if !EXPERIMENTS.contains(&name.trim()) {
                return Err(Failure::input(format!("unknown experiment {name:?}; expected one of {EXPERIMENTS:?}")));
            }
        }
        let flags = [self.lipschitz, self.sweep_eps, self.semiconcave, self.lp, self.holder, self.coupling, self.mc_cross];
        Ok(EXPERIMENTS
            .iter()
            .zip(flags)
            .filter(|(name, flag)| *flag || self.experiments.iter().any(|e| e.trim() == **name))
            .map(|(name, _)| *name)
            .collect())
    }
}

/// Config, seed and output directory of one run.
struct Run {
    command: &'static str,
    cfg: Config,
    common: Common,
    started: f64,
    outputs: BTreeMap<String, String>,
}

impl Run {
    fn start(command: &'static str, common: &Common) -> Result<Self, Failure> {
        let cfg = match &common.config {
            Some(path) => Config::from_path(path)?,
            None => Config::reference(),
        };
        if common.eps.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
            return Err(Failure::input("truncation levels must be finite and >= 0"));
        }
        prepare_dir(&common.out)?;
        Ok(Run {
            command,
            cfg,
            common: common.clone(),
            started: now_unix(),
            outputs: BTreeMap::new(),
        })
    }

    /// The single truncation level of solve and simulate.
    fn single_eps(&self) -> Result<f64, Failure> {
        match self.common.eps.as_slice() {
            [] => Ok(0.0),
            [e] => Ok(*e),
            _ => Err(Failure::input(format!("{} takes one truncation level", self.command))),
        }
    }

    /// The ε list of sweep and verify: `--eps` or the configured list.
    fn eps_list(&self) -> Vec<f64> {
        if self.common.eps.is_empty() {
            self.cfg.verify.eps.clone()
        } else {
            self.common.eps.clone()
        }
    }

    fn path(&mut self, name: &str, file: &str) -> std::path::PathBuf {
        self.outputs.insert(name.to_string(), file.to_string());
        self.common.out.join(file)
    }

    fn solve(&self, eps: f64) -> Result<(ProblemSpec, Grid1D, QviSolution), Failure> {
        let spec = self.cfg.problem_spec()?;
        let grid = self.cfg.grid()?;
        let quad = if eps > 0.0 { self.cfg.quadrature_for_levels(&[eps])? } else { self.cfg.quadrature()? };
        let sol = solve_qvi(&spec, &grid, &quad, &self.cfg.solve.clone().with_eps(eps))?;
        Ok((spec, grid, sol))
    }

    fn constants(&self, grid: &Grid1D) -> Result<ModelConstants, Failure> {
        let spec = self.cfg.problem_spec()?;
        let quad = self.cfg.quadrature()?;
        let beta = estimate_beta(&spec, &self.cfg.assumptions, &quad, &self.cfg.sampling_plan(self.common.seed), &grid.nodes())?;
        Ok(ModelConstants::new(beta))
    }

    fn finish(self, verdict: &str, summary: Value) -> Result<(), Failure> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: self.cfg.hash(),
            config: self.cfg.to_toml_string()?,
            seed: self.common.seed,
            eps: self.common.eps.clone(),
            started_unix: self.started,
            finished_unix: now_unix(),
            outputs: self.outputs,
            verdict: verdict.to_string(),
            summary,
        };
        write_json(&self.common.out.join(manifest_name(self.command)), &manifest)
    }
}

pub fn solve(common: &Common, dump_operator: bool) -> Result<u8, Failure> {
    let mut run = Run::start("solve", common)?;
    let eps = run.single_eps()?;
    let (spec, grid, sol) = run.solve(eps)?;
    let res = sol.residual(&spec.transaction_cost)?;
    let constants = run.constants(&grid)?;
    let lip = verify_lipschitz_u(&sol.u, &constants, run.cfg.assumptions.c_f, spec.discount, &run.cfg.verify.settings);

    let path = run.path("value_field", "value_field.csv");
    write_value_field(&path, &sol, &res)?;
    let path = run.path("trace", "trace.csv");
    let trace = sol.trace.iter().map(|t| {
        vec![t.iteration.to_string(), fmt(t.increment), fmt(t.excess), t.active.to_string(), t.inner_iterations.to_string()]
    });
    write_csv(&path, &["iteration", "increment", "excess", "active", "inner_iterations"], trace)?;
    if dump_operator {
        let path = run.path("operator", "operator.csv");
        let file = File::create(&path).map_err(|e| io_failure(&path, e))?;
        sol.operator.write_csv(BufWriter::new(file)).map_err(|e| io_failure(&path, e))?;
    }

    let action = sol.policy.action_count();
    println!(
        "solved N = {} in {} outer iterations: u(0) = {:.6}, {action} action nodes, residuals ({:.1e}, {:.1e}, {:.1e}), Lip(u) = {:.4} vs C_u bound {:.4}",
        grid.n,
        sol.trace.len(),
        sol.u.eval(0.0),
        res.r1,
        res.r2,
        res.r3,
        lip.measured,
        lip.bound
    );
    let summary = json!({
        "eps": eps,
        "grid": grid,
        "iterations": sol.trace.len(),
        "residuals": { "r1": res.r1, "r2": res.r2, "r3": res.r3, "supersolution": res.supersolution },
        "action_nodes": action,
        "violations": sol.policy.violations,
        "lipschitz": lip,
    });
    run.finish("ok", summary)?;
    Ok(code::OK)
}

pub fn simulate(common: &Common) -> Result<u8, Failure> {
    let mut run = Run::start("simulate", common)?;
    let eps = run.single_eps()?;
    let (spec, _, sol) = run.solve(eps)?;
    let sim = impulse_qvi::simulate::SimConfig {
        seed: common.seed,
        ..run.cfg.simulate.config.clone()
    };
    let x0 = run.cfg.simulate.x0;
    let ens = simulate_paths(&spec, &sim, Some(&sol.policy), x0)?;

    let path = run.path("paths", "paths.csv");
    let rows = (0..ens.terminal.len()).map(|p| {
        vec![p.to_string(), ens.streams[p].to_string(), fmt(ens.terminal[p]), ens.impulses[p].len().to_string(), fmt(ens.cost[p])]
    });
    write_csv(&path, &["path", "stream", "terminal", "impulses", "cost"], rows)?;
    if let Some(paths) = &ens.paths {
        let shown = paths.len().min(20);
        let path = run.path("trajectories", "trajectories.csv");
        let mut header = vec!["t".to_string()];
        header.extend((0..shown).map(|p| format!("path{p}")));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let rows = ens.times().into_iter().enumerate().map(|(k, t)| {
            let mut row = vec![fmt(t)];
            row.extend(paths[..shown].iter().map(|p| fmt(p[k])));
            row
        });
        write_csv(&path, &header, rows)?;
    }

    let (cost, cost_hw) = mean_half_width(&ens.cost);
    let counts: Vec<f64> = ens.impulses.iter().map(|i| i.len() as f64).collect();
    let (impulses, _) = mean_half_width(&counts);
    println!(
        "simulated {} paths from x0 = {x0} to T = {}: discounted cost {cost:.5} ± {cost_hw:.5} (u(x0) = {:.5}), {impulses:.3} impulses per path",
        ens.terminal.len(),
        sim.horizon,
        sol.u.eval(x0)
    );
    let summary = json!({
        "sim": sim, "x0": x0, "cost_mean": cost, "cost_half_width": cost_hw, "mean_impulses": impulses,
        "u_x0": sol.u.eval(x0),
    });
    run.finish("ok", summary)?;
    Ok(code::OK)
}

/// Coupled sweep over `{0} ∪ eps` at the configured coupling settings.
fn coupling_stats(run: &Run, eps: &[f64]) -> Result<Vec<CouplingStats>, Failure> {
    let c = &run.cfg.verify.coupling;
    let mut levels = vec![0.0];
    levels.extend(eps.iter().copied().filter(|&e| e > 0.0));
    let quad = run.cfg.quadrature_for_levels(&levels)?;
    Ok(coupled_sweep(&run.cfg.problem_spec()?, &run.cfg.coupling_sim(run.common.seed), &quad, &levels, &c.alphas, c.x0)?)
}

fn fits_from(run: &Run, stats: &[CouplingStats]) -> Result<Vec<MomentFit>, Failure> {
    let (report, fits) = verify_coupling_bound(stats, &run.cfg.verify.settings);
    if fits.is_empty() {
        return Err(Failure {
            code: code::NUMERICAL,
            message: format!("no usable coupling constant M: {}", report.note),
        });
    }
    Ok(fits)
}

pub fn sweep(common: &Common) -> Result<u8, Failure> {
    let mut run = Run::start("sweep", common)?;
    let eps = run.eps_list();
    if eps.is_empty() {
        return Err(Failure::input("empty ε list"));
    }
    let spec = run.cfg.problem_spec()?;
    let grid = run.cfg.grid()?;
    let stats = coupling_stats(&run, &eps)?;
    let fits = fits_from(&run, &stats)?;
    let beta = run.constants(&grid)?.beta.beta;
    let quad = run.cfg.quadrature_for_levels(&eps)?;
    let table = eps_sweep(&spec, &grid, &quad, &eps, &fits, beta, run.cfg.assumptions.c_f, &run.cfg.solve)?;

    println!("{:>10} {:>12} {:>12} {:>8} {:>14}", "eps", "Lambda", "C(eps)", "alpha", "|u_e - u_e'|");
    for r in &table.rows {
        let diff = r.diff_prev.map_or("-".to_string(), |d| format!("{d:.6e}"));
        println!("{:>10} {:>12.6} {:>12.6} {:>8} {:>14}", r.eps, r.lambda, r.bound, r.alpha, diff);
    }
    let path = run.path("sweep", "sweep.csv");
    let rows = table.rows.iter().map(|r| {
        vec![fmt(r.eps), fmt(r.lambda), fmt(r.bound), fmt(r.alpha), r.diff_prev.map_or(String::new(), fmt)]
    });
    write_csv(&path, &SWEEP_HEADER, rows)?;
    let summary = json!({ "rows": table.rows, "fits": fits, "beta": beta });
    run.finish("ok", summary)?;
    Ok(code::OK)
}

pub fn verify(common: &Common, selection: &Selection) -> Result<u8, Failure> {
    let mut run = Run::start("verify", common)?;
    let selected = selection.resolve()?;
    let mut log = ReportLog::default();
    let mut solved: Option<(ProblemSpec, Grid1D, QviSolution)> = None;
    let mut stats: Option<Vec<CouplingStats>> = None;
    let eps = run.eps_list();
    let cfg = run.cfg.clone();
    let settings = &cfg.verify.settings;

    for &name in &selected {
        let needs_solution = matches!(name, "lipschitz" | "semiconcave" | "mc-cross");
        if needs_solution && solved.is_none() {
            solved = Some(run.solve(0.0)?);
        }
        if matches!(name, "sweep-eps" | "coupling") && stats.is_none() {
            stats = Some(coupling_stats(&run, &eps)?);
        }
        let reports: Vec<VerificationReport> = match name {
            "lipschitz" => {
                let (spec, grid, sol) = solved.as_ref().unwrap();
                let constants = run.constants(grid)?;
                vec![verify_lipschitz_u(&sol.u, &constants, cfg.assumptions.c_f, spec.discount, settings)]
            }
            "sweep-eps" => {
                let fits = fits_from(&run, stats.as_deref().unwrap())?;
                let spec = cfg.problem_spec()?;
                let grid = cfg.grid()?;
                let beta = run.constants(&grid)?.beta.beta;
                let quad = cfg.quadrature_for_levels(&eps)?;
                let (report, _) = verify_uniform_convergence(&spec, &grid, &quad, &eps, &fits, beta, cfg.assumptions.c_f, &cfg.solve)?;
                vec![report]
            }
            "semiconcave" => {
                let (_, _, sol) = solved.as_ref().unwrap();
                let sc = &cfg.verify.semiconcave;
                let transfer = (&sol.u, &sol.intervention, sol.policy.action.as_slice());
                vec![
                    verify_semiconcavity(&sol.u, None, sc.radius, &sc.offsets, settings)?,
                    verify_semiconcavity(&sol.intervention.mu, Some(transfer), sc.radius, &sc.offsets, settings)?,
                ]
            }
            "lp" => {
                let lp = &cfg.verify.lp;
                let spec = cfg.problem_spec()?;
                let window = (lp.window[0], lp.window[1]);
                let (report, _) =
                    verify_eps_lp_estimate(&spec, &cfg.quadrature()?, &lp.grid.build()?, &lp.functions, window, &lp.etas, &lp.ps, lp.gamma, settings)?;
                vec![report]
            }
            "holder" => {
                let h = &cfg.verify.holder;
                let spec = cfg.problem_spec()?;
                let gamma = h
                    .gamma
                    .or(spec.levy.order())
                    .ok_or_else(|| Failure::input("holder: set verify.holder.gamma for a measure without a power-law order"))?;
                let (report, _) =
                    verify_holder_I(&spec, &cfg.quadrature()?, &h.grid.build()?, &h.functions, h.alpha, gamma, h.center, &h.half_widths, settings)?;
                vec![report]
            }
            "coupling" => vec![verify_coupling_bound(stats.as_deref().unwrap(), settings).0],
            "mc-cross" => {
                let (spec, grid, sol) = solved.as_ref().unwrap();
                let coarse_grid = Grid1D::new(grid.lower, grid.upper, (grid.n + 1) / 2)?;
                let coarse = solve_qvi(spec, &coarse_grid, &cfg.quadrature()?, &cfg.solve)?;
                let sim = cfg.montecarlo_sim(run.common.seed);
                let (report, _) =
                    verify_value_vs_montecarlo(spec, sol, Some(&coarse.u), &sim, &cfg.verify.montecarlo.points, settings)?;
                vec![report]
            }
            _ => unreachable!("resolved experiment names are canonical"),
        };
        for r in reports {
            println!(
                "{:<20} {}  measured {:.4e}  bound {:.4e}  {:.2} s  {}",
                r.name,
                if r.pass { "PASS" } else { "FAIL" },
                r.measured,
                r.bound,
                r.runtime_s,
                r.note
            );
            log.push(r);
        }
    }

    let path = run.path("report", "verify_report.json");
    write_json(&path, &log.reports())?;
    let pass = log.all_passed();
    let summary = json!({
        "experiments": selected,
        "passed": log.reports().iter().filter(|r| r.pass).count(),
        "failed": log.reports().iter().filter(|r| !r.pass).map(|r| r.name.clone()).collect::<Vec<_>>(),
    });
    run.finish(if pass { "pass" } else { "fail" }, summary)?;
    Ok(if pass { code::OK } else { code::VERIFICATION })
}
