//! Discrete QVI `max{A u − f, u − M u} = 0`.
//!
//! The outer loop freezes the obstacle: `u⁰` solves `A u = f`, and `u^{k+1}`
//! solves the obstacle problem with obstacle `M u^k`. Each obstacle problem is
//! solved by policy iteration on the active set, warm-started from the
//! previous outer step, with penalization as a fallback.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::levy::LevyQuadrature;
use crate::linalg::BandedLu;
use crate::model::{estimate_beta_on_pairs, AssumptionProfile, ProblemSpec, SamplingPlan, TransactionCost};
use crate::operators::{assemble_A, intervention_operator, Extension, Grid1D, Intervention, OperatorMatrix, SmallJumpMode, ValueField, XiGrid};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObstacleSolver {
    PolicyIteration,
    /// `A u + ρ (u − ψ)⁺ = f`; `rho = None` means `10³·r`.
    Penalization { rho: Option<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveConfig {
    pub tol_outer: f64,
    pub tol_inner: f64,
    pub max_outer: usize,
    /// Small-jump treatment of the solved operator.
    pub mode: SmallJumpMode,
    pub obstacle: ObstacleSolver,
    /// Outward extension slopes; derived from f and C_u when absent.
    pub extension: Option<Extension>,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            tol_outer: 1e-6,
            tol_inner: 1e-9,
            max_outer: 1000,
            mode: SmallJumpMode::StrictTruncation { eps: 0.0 },
            obstacle: ObstacleSolver::PolicyIteration,
            extension: None,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_outer > 0.0 && self.tol_inner > 0.0) {
            return Err(Error::invalid("tolerances must be positive"));
        }
        if self.max_outer == 0 {
            return Err(Error::invalid("max_outer must be positive"));
        }
        Ok(())
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.mode = SmallJumpMode::StrictTruncation { eps };
        self
    }
}

/// Running cost sampled on the grid.
pub fn cost_on_grid(spec: &ProblemSpec, grid: &Grid1D) -> Vec<f64> {
    grid.nodes().into_iter().map(|x| spec.running_cost(x)).collect()
}

/// Extension slopes `clamp(f'/r, ±C_u)` at the box ends with
/// `C_u = C_f/(r − β/2)`, β sampled on the grid.
pub fn default_extension(spec: &ProblemSpec, grid: &Grid1D, quad: &LevyQuadrature) -> Result<Extension> {
    let f = ValueField::new(*grid, cost_on_grid(spec, grid), Extension::default())?;
    let c_f = f.lipschitz_quotient();
    let stride = (grid.n / 256).max(1);
    let xs: Vec<f64> = grid.nodes().into_iter().step_by(stride).collect();
    let pairs = SamplingPlan::pairs(&xs);
    let beta = estimate_beta_on_pairs(spec, &AssumptionProfile::default(), quad, &pairs)?;
    let denom = spec.discount - beta.beta / 2.0;
    let cap = if denom > 0.0 { c_f / denom } else { f64::INFINITY };
    Ok(Extension::from_cost(spec, grid, cap))
}

fn relative_residual(op: &OperatorMatrix, u: &[f64], f: &[f64]) -> f64 {
    let au = op.apply(u);
    au.iter()
        .zip(f)
        .map(|(v, f)| (v - f).abs() / (1.0 + f.abs()))
        .fold(0.0, f64::max)
}

/// Solves `A u = f` (no intervention).
pub fn solve_pide(op: &OperatorMatrix, f: &[f64], tol_inner: f64) -> Result<ValueField> {
    let n = op.n();
    if f.len() != n {
        return Err(Error::invalid(format!("rhs has {} entries for {n} nodes", f.len())));
    }
    let lu = BandedLu::factor(&op.matrix, n)?;
    let rhs: Vec<f64> = f.iter().zip(&op.g_bc).map(|(a, g)| a - g).collect();
    let mut u = lu.solve(&rhs);
    // one step of iterative refinement
    let au = op.apply(&u);
    let corr: Vec<f64> = au.iter().zip(f).map(|(a, b)| b - a).collect();
    let du = lu.solve(&corr);
    for (x, d) in u.iter_mut().zip(du) {
        *x += d;
    }
    let res = relative_residual(op, &u, f);
    if !(res <= tol_inner.max(1e-10)) {
        return Err(Error::Singular {
            row: 0,
            condition: lu.condition_estimate(),
        });
    }
    ValueField::new(op.grid, u, op.extension)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObstacleSolution {
    pub field: ValueField,
    /// Nodes where `u = ψ`.
    pub active: Vec<bool>,
    pub iterations: usize,
    pub method: ObstacleSolver,
    /// `max (u − ψ)⁺`, the penalization bias (0 for policy iteration).
    pub penalty_bias: f64,
    /// `max_i min(A u − f, ψ − u)` magnitude, the complementarity residual.
    pub complementarity: f64,
}

fn complementarity(op: &OperatorMatrix, u: &[f64], f: &[f64], psi: &[f64]) -> f64 {
    let au = op.apply(u);
    au.iter()
        .zip(f)
        .zip(u.iter().zip(psi))
        .map(|((a, f), (u, p))| (a - f).max(u - p).abs())
        .fold(0.0, f64::max)
}

fn active_set_system(op: &OperatorMatrix, f: &[f64], psi: &[f64], active: &[bool], penalty: Option<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = op.n();
    let mut m = op.matrix.clone();
    let mut rhs: Vec<f64> = f.iter().zip(&op.g_bc).map(|(a, g)| a - g).collect();
    for i in 0..n {
        if !active[i] {
            continue;
        }
        match penalty {
            None => {
                m[i * n..(i + 1) * n].fill(0.0);
                m[i * n + i] = 1.0;
                rhs[i] = psi[i];
            }
            Some(rho) => {
                m[i * n + i] += rho;
                rhs[i] += rho * psi[i];
            }
        }
    }
    (m, rhs)
}

/// Solves `max{A u − f, u − ψ} = 0` for a frozen obstacle ψ.
pub fn solve_obstacle(
    op: &OperatorMatrix,
    f: &[f64],
    psi: &[f64],
    solver: ObstacleSolver,
    warm_start: Option<&[bool]>,
) -> Result<ObstacleSolution> {
    let n = op.n();
    if psi.len() != n || f.len() != n {
        return Err(Error::invalid("obstacle and rhs must match the grid"));
    }
    if let Some(k) = psi.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("obstacle at node {k}")));
    }
    match solver {
        ObstacleSolver::PolicyIteration => match policy_iteration(op, f, psi, warm_start)? {
            Some(sol) => Ok(sol),
            None => penalization(op, f, psi, 1e3 * op.discount, warm_start),
        },
        ObstacleSolver::Penalization { rho } => penalization(op, f, psi, rho.unwrap_or(1e3 * op.discount), warm_start),
    }
}

/// `None` when the active set cycles for more than `n` iterations.
fn policy_iteration(op: &OperatorMatrix, f: &[f64], psi: &[f64], warm_start: Option<&[bool]>) -> Result<Option<ObstacleSolution>> {
    let n = op.n();
    let mut active = warm_start.map(|w| w.to_vec()).unwrap_or_else(|| vec![false; n]);
    for it in 1..=n + 1 {
        let (m, rhs) = active_set_system(op, f, psi, &active, None);
        let u = BandedLu::factor(&m, n)?.solve(&rhs);
        let au = op.apply(&u);
        let next: Vec<bool> = (0..n)
            .map(|i| {
                let cont = au[i] - f[i];
                let stop = u[i] - psi[i];
                if active[i] {
                    stop >= cont
                } else {
                    stop > cont
                }
            })
            .collect();
        if next == active {
            let c = complementarity(op, &u, f, psi);
            return Ok(Some(ObstacleSolution {
                field: ValueField::new(op.grid, u, op.extension)?,
                active,
                iterations: it,
                method: ObstacleSolver::PolicyIteration,
                penalty_bias: 0.0,
                complementarity: c,
            }));
        }
        active = next;
    }
    Ok(None)
}

fn penalization(op: &OperatorMatrix, f: &[f64], psi: &[f64], rho: f64, warm_start: Option<&[bool]>) -> Result<ObstacleSolution> {
    let n = op.n();
    let mut active = warm_start.map(|w| w.to_vec()).unwrap_or_else(|| vec![false; n]);
    for it in 1..=4 * n + 4 {
        let (m, rhs) = active_set_system(op, f, psi, &active, Some(rho));
        let u = BandedLu::factor(&m, n)?.solve(&rhs);
        let next: Vec<bool> = (0..n).map(|i| u[i] > psi[i]).collect();
        if next == active {
            let bias = u.iter().zip(psi).map(|(u, p)| (u - p).max(0.0)).fold(0.0, f64::max);
            let c = complementarity(op, &u, f, psi);
            return Ok(ObstacleSolution {
                field: ValueField::new(op.grid, u, op.extension)?,
                active,
                iterations: it,
                method: ObstacleSolver::Penalization { rho: Some(rho) },
                penalty_bias: bias,
                complementarity: c,
            });
        }
        active = next;
    }
    Err(Error::NoConvergence {
        iterations: 4 * n + 4,
        increment: f64::NAN,
    })
}

/// Continuation/action regions with the displacement map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpulsePolicy {
    pub grid: Grid1D,
    /// `true` on action nodes.
    pub action: Vec<bool>,
    /// ξ*(x_i); meaningful on action nodes.
    pub xi_star: Vec<f64>,
    pub tol_region: f64,
    /// Action nodes whose target is not in the continuation region.
    pub violations: usize,
}

impl ImpulsePolicy {
    /// Classifies node i as action iff `u − Mu >= −tol_region` and ξ* != 0.
    pub fn from_fields(u: &ValueField, mu: &Intervention, tol_region: f64) -> Self {
        let grid = u.grid;
        let action: Vec<bool> = (0..grid.n)
            .map(|i| u.values[i] - mu.mu.values[i] >= -tol_region && mu.xi_star[i] != 0.0)
            .collect();
        let mut policy = ImpulsePolicy {
            grid,
            action,
            xi_star: mu.xi_star.clone(),
            tol_region,
            violations: 0,
        };
        policy.violations = policy.count_violations();
        policy
    }

    /// Never intervenes.
    pub fn inactive(grid: Grid1D) -> Self {
        ImpulsePolicy {
            grid,
            action: vec![false; grid.n],
            xi_star: vec![0.0; grid.n],
            tol_region: 0.0,
            violations: 0,
        }
    }

    pub fn count_violations(&self) -> usize {
        let h = self.grid.h();
        (0..self.grid.n)
            .filter(|&i| self.action[i])
            .filter(|&i| {
                let t = i as f64 + self.xi_star[i] / h;
                let k = t.round();
                k < 0.0 || k >= self.grid.n as f64 || self.action[k as usize]
            })
            .count()
    }

    pub fn action_count(&self) -> usize {
        self.action.iter().filter(|&&a| a).count()
    }

    /// Impulse at state `x`: the nearest node decides, and the state is moved
    /// to that node's target.
    pub fn impulse(&self, x: f64) -> Option<f64> {
        if x < self.grid.lower - 0.5 * self.grid.h() || x > self.grid.upper + 0.5 * self.grid.h() {
            // outside the box: move to the target of the nearest end node if it acts
            let i = self.grid.nearest(x);
            return self.action[i].then(|| self.grid.x(i) + self.xi_star[i] - x);
        }
        let i = self.grid.nearest(x);
        self.action[i].then(|| self.grid.x(i) + self.xi_star[i] - x)
    }

    /// Action region grown (`k > 0`) or shrunk (`k < 0`) by |k| nodes on each
    /// side of every component; new action nodes take the displacement of the
    /// nearest original action node, shifted to keep the same target.
    pub fn resized(&self, k: i64) -> Self {
        let n = self.grid.n;
        let mut out = self.clone();
        if k == 0 {
            return out;
        }
        let steps = k.unsigned_abs() as usize;
        for _ in 0..steps {
            let prev = out.clone();
            for i in 0..n {
                let left = i.checked_sub(1).map(|j| prev.action[j]);
                let right = (i + 1 < n).then(|| prev.action[i + 1]);
                if k > 0 && !prev.action[i] {
                    let src = match (left, right) {
                        (Some(true), _) => Some(i - 1),
                        (_, Some(true)) => Some(i + 1),
                        _ => None,
                    };
                    if let Some(j) = src {
                        out.action[i] = true;
                        out.xi_star[i] = prev.xi_star[j] + self.grid.x(j) - self.grid.x(i);
                    }
                } else if k < 0 && prev.action[i] && (left == Some(false) || right == Some(false)) {
                    out.action[i] = false;
                }
            }
        }
        out.violations = out.count_violations();
        out
    }

    /// Every displacement moved by `nodes` grid cells.
    pub fn offset(&self, nodes: i64) -> Self {
        let mut out = self.clone();
        let h = self.grid.h();
        for i in 0..self.grid.n {
            if out.action[i] {
                out.xi_star[i] += nodes as f64 * h;
            }
        }
        out.violations = out.count_violations();
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    /// `‖u^{k} − u^{k−1}‖_∞`
    pub increment: f64,
    /// `max (u^{k} − u^{k−1})⁺`, must stay <= tol_inner
    pub excess: f64,
    pub active: usize,
    pub inner_iterations: usize,
}

#[derive(Clone, Debug)]
pub struct QviSolution {
    pub u: ValueField,
    pub intervention: Intervention,
    pub policy: ImpulsePolicy,
    pub trace: Vec<TraceEntry>,
    pub operator: OperatorMatrix,
    pub f: Vec<f64>,
    pub xi_grid: XiGrid,
}

impl QviSolution {
    pub fn residual(&self, cost: &TransactionCost) -> Result<ResidualReport> {
        qvi_residual(&self.u, &self.operator, &self.f, cost, &self.xi_grid, self.policy.tol_region)
    }
}

pub fn solve_qvi(spec: &ProblemSpec, grid: &Grid1D, quad: &LevyQuadrature, config: &SolveConfig) -> Result<QviSolution> {
    config.validate()?;
    spec.validate()?;
    let ext = match config.extension {
        Some(e) => e,
        None => default_extension(spec, grid, quad)?,
    };
    let op = assemble_A(spec, grid, quad, config.mode, ext)?;
    let f = cost_on_grid(spec, grid);
    solve_qvi_with(spec, op, f, config)
}

/// Outer iteration on a pre-assembled operator.
pub fn solve_qvi_with(spec: &ProblemSpec, op: OperatorMatrix, f: Vec<f64>, config: &SolveConfig) -> Result<QviSolution> {
    let grid = op.grid;
    let xi = XiGrid::spanning(&grid);
    let cost = &spec.transaction_cost;
    let mut u = solve_pide(&op, &f, config.tol_inner.max(1e-10))?;
    let mut trace = vec![TraceEntry {
        iteration: 0,
        increment: f64::NAN,
        excess: 0.0,
        active: 0,
        inner_iterations: 1,
    }];
    let mut active: Option<Vec<bool>> = None;
    let mut converged = false;
    let mut increment = f64::INFINITY;
    let mono_tol = config.tol_inner.max(1e-9 * (1.0 + u.sup().abs()));
    for k in 1..=config.max_outer {
        let mu = intervention_operator(&u, cost, &xi)?;
        let sol = solve_obstacle(&op, &f, &mu.mu.values, config.obstacle, active.as_deref())?;
        let next = sol.field;
        let mut excess = f64::NEG_INFINITY;
        let mut node = 0;
        for i in 0..grid.n {
            let d = next.values[i] - u.values[i];
            if d > excess {
                excess = d;
                node = i;
            }
        }
        if excess > mono_tol {
            return Err(Error::NonMonotoneIterate {
                iteration: k,
                node,
                excess,
            });
        }
        increment = next.sup_distance(&u);
        trace.push(TraceEntry {
            iteration: k,
            increment,
            excess: excess.max(0.0),
            active: sol.active.iter().filter(|&&a| a).count(),
            inner_iterations: sol.iterations,
        });
        active = Some(sol.active);
        u = next;
        if increment < config.tol_outer {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            iterations: config.max_outer,
            increment,
        });
    }
    let intervention = intervention_operator(&u, cost, &xi)?;
    let policy = ImpulsePolicy::from_fields(&u, &intervention, 2.0 * config.tol_outer);
    Ok(QviSolution {
        u,
        intervention,
        policy,
        trace,
        operator: op,
        f,
        xi_grid: xi,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    /// max over continuation nodes of |Au − f|
    pub r1: f64,
    /// max over all nodes of (u − Mu)⁺
    pub r2: f64,
    /// max over action nodes of |u − Mu|
    pub r3: f64,
    /// max over all nodes of (Au − f)⁺
    pub supersolution: f64,
    pub action_nodes: usize,
    pub continuation_nodes: usize,
    /// `Au − f` per node
    pub au_minus_f: Vec<f64>,
}

/// Complementarity residuals of any field against the discrete QVI.
pub fn qvi_residual(
    u: &ValueField,
    op: &OperatorMatrix,
    f: &[f64],
    cost: &TransactionCost,
    xi: &XiGrid,
    tol_region: f64,
) -> Result<ResidualReport> {
    let mu = intervention_operator(u, cost, xi)?;
    let au = op.apply(&u.values);
    let mut rep = ResidualReport {
        r1: 0.0,
        r2: 0.0,
        r3: 0.0,
        supersolution: 0.0,
        action_nodes: 0,
        continuation_nodes: 0,
        au_minus_f: au.iter().zip(f).map(|(a, b)| a - b).collect(),
    };
    for i in 0..u.grid.n {
        let gap = u.values[i] - mu.mu.values[i];
        let res = rep.au_minus_f[i];
        rep.r2 = rep.r2.max(gap.max(0.0));
        rep.supersolution = rep.supersolution.max(res.max(0.0));
        if gap >= -tol_region {
            rep.action_nodes += 1;
            rep.r3 = rep.r3.max(gap.abs());
        } else {
            rep.continuation_nodes += 1;
            rep.r1 = rep.r1.max(res.abs());
        }
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::{LevyMeasure1D, QuadratureBuilder};
    use crate::model::{RunningCost, Volatility, Drift};

    fn setup(spec: &ProblemSpec, n: usize, half: f64) -> (Grid1D, LevyQuadrature) {
        (
            Grid1D::new(-half, half, n).unwrap(),
            QuadratureBuilder::new(&spec.levy).build().unwrap(),
        )
    }

    #[test]
    fn constant_cost_gives_constant_value() {
        let spec = ProblemSpec {
            running_cost: RunningCost::Constant { value: 3.0 },
            discount: 2.0,
            ..ProblemSpec::reference()
        };
        let (g, q) = setup(&spec, 81, 4.0);
        let op = assemble_A(&spec, &g, &q, SmallJumpMode::default(), Extension::default()).unwrap();
        let u = solve_pide(&op, &vec![3.0; g.n], 1e-10).unwrap();
        assert!(u.values.iter().all(|v| (v - 1.5).abs() < 1e-8));
    }

    #[test]
    fn pure_diffusion_cosine_response() {
        // u − u'' = cos x  ⇒  u = cos x / 2
        let spec = ProblemSpec {
            drift: Drift::Zero,
            volatility: Volatility::Constant { sigma: 2f64.sqrt() },
            levy: LevyMeasure1D::Zero,
            running_cost: RunningCost::Constant { value: 0.0 },
            ..ProblemSpec::reference()
        };
        let mut errs = Vec::new();
        for n in [101, 201, 401] {
            let g = Grid1D::new(-std::f64::consts::PI * 4.0, std::f64::consts::PI * 4.0, n).unwrap();
            let q = QuadratureBuilder::new(&spec.levy).build().unwrap();
            let op = assemble_A(&spec, &g, &q, SmallJumpMode::default(), Extension::default()).unwrap();
            let f: Vec<f64> = g.nodes().iter().map(|x| x.cos()).collect();
            let u = solve_pide(&op, &f, 1e-10).unwrap();
            let e = g.nodes().iter().zip(&u.values).map(|(x, v)| (v - 0.5 * x.cos()).abs()).fold(0.0, f64::max);
            errs.push(e);
        }
        // first order: the extension closes the boundary rows with a one-sided ghost
        assert!(errs[0] / errs[1] > 1.8 && errs[1] / errs[2] > 1.8, "{errs:?}");
    }

    #[test]
    fn inactive_obstacle_reduces_to_pide() {
        let spec = ProblemSpec::reference();
        let (g, q) = setup(&spec, 81, 4.0);
        let op = assemble_A(&spec, &g, &q, SmallJumpMode::default(), Extension::new(0.5, 0.5)).unwrap();
        let f = cost_on_grid(&spec, &g);
        let u0 = solve_pide(&op, &f, 1e-10).unwrap();
        let sol = solve_obstacle(&op, &f, &vec![1e6; g.n], ObstacleSolver::PolicyIteration, None).unwrap();
        assert!(sol.field.sup_distance(&u0) < 1e-10);
        assert!(sol.active.iter().all(|&a| !a));
    }

    #[test]
    fn obstacle_complementarity_and_monotonicity() {
        let spec = ProblemSpec::reference();
        let (g, q) = setup(&spec, 81, 4.0);
        let op = assemble_A(&spec, &g, &q, SmallJumpMode::default(), Extension::new(0.5, 0.5)).unwrap();
        let f = cost_on_grid(&spec, &g);
        let psi1: Vec<f64> = g.nodes().iter().map(|x| 0.3 + 0.05 * x * x).collect();
        let psi2: Vec<f64> = psi1.iter().map(|p| p + 0.1).collect();
        let a = solve_obstacle(&op, &f, &psi1, ObstacleSolver::PolicyIteration, None).unwrap();
        let b = solve_obstacle(&op, &f, &psi2, ObstacleSolver::PolicyIteration, None).unwrap();
        assert!(a.complementarity < 1e-9);
        assert!(a.active.iter().any(|&x| x));
        for i in 0..g.n {
            assert!(a.field.values[i] <= b.field.values[i] + 1e-10);
        }
        let p = solve_obstacle(&op, &f, &psi1, ObstacleSolver::Penalization { rho: Some(1e6) }, None).unwrap();
        assert!(p.field.sup_distance(&a.field) < 1e-4);
        assert!(p.penalty_bias < 1e-4);
    }

    #[test]
    fn zero_cost_gives_zero_value() {
        let spec = ProblemSpec {
            running_cost: RunningCost::Constant { value: 0.0 },
            ..ProblemSpec::reference()
        };
        let (g, q) = setup(&spec, 81, 4.0);
        let sol = solve_qvi(&spec, &g, &q, &SolveConfig::default()).unwrap();
        assert!(sol.u.values.iter().all(|&v| v.abs() < 1e-12));
        assert_eq!(sol.policy.action_count(), 0);
    }

    #[test]
    fn large_fixed_cost_never_intervenes() {
        let spec = ProblemSpec {
            transaction_cost: TransactionCost::Affine {
                fixed: 20.0,
                proportional: 0.1,
            },
            ..ProblemSpec::reference()
        };
        let (g, q) = setup(&spec, 161, 8.0);
        let sol = solve_qvi(&spec, &g, &q, &SolveConfig::default()).unwrap();
        let u0 = solve_pide(&sol.operator, &sol.f, 1e-10).unwrap();
        assert_eq!(sol.policy.action_count(), 0);
        assert!(sol.u.sup_distance(&u0) < 1e-12);
    }

    #[test]
    fn reference_instance_small_grid() {
        let spec = ProblemSpec::reference();
        let (g, q) = setup(&spec, 201, 10.0);
        let cfg = SolveConfig::default();
        let sol = solve_qvi(&spec, &g, &q, &cfg).unwrap();
        let n = g.n;
        for i in 0..n {
            assert!((sol.u.values[i] - sol.u.values[n - 1 - i]).abs() < 1e-6);
        }
        assert!(sol.policy.action_count() > 0);
        assert!(!sol.policy.action[n / 2]);
        assert_eq!(sol.policy.violations, 0);
        let res = sol.residual(&spec.transaction_cost).unwrap();
        assert!(res.r1 <= 5.0 * cfg.tol_outer, "{res:?}");
        assert!(res.r2 <= 5.0 * cfg.tol_outer);
        assert!(res.r3 <= 5.0 * cfg.tol_outer);
        for w in sol.trace.windows(2) {
            assert!(w[1].excess <= cfg.tol_inner.max(1e-9));
        }
    }

    #[test]
    fn residual_detects_violation() {
        let spec = ProblemSpec::reference();
        let (g, q) = setup(&spec, 41, 2.0);
        let op = assemble_A(&spec, &g, &q, SmallJumpMode::default(), Extension::default()).unwrap();
        let xi = XiGrid::spanning(&g);
        let zero = ValueField::constant(g, 0.0);
        let f0 = vec![0.0; g.n];
        let r = qvi_residual(&zero, &op, &f0, &spec.transaction_cost, &xi, 1e-6).unwrap();
        assert_eq!((r.r1, r.r2, r.r3), (0.0, 0.0, 0.0));
        let mut bumped = zero.clone();
        bumped.values[20] = 5.0;
        let r = qvi_residual(&bumped, &op, &f0, &spec.transaction_cost, &xi, 1e-6).unwrap();
        assert!(r.r2 > 0.0);
    }

    #[test]
    fn policy_resizing() {
        let g = Grid1D::new(0.0, 10.0, 11).unwrap();
        let mut p = ImpulsePolicy::inactive(g);
        for i in 0..3 {
            p.action[i] = true;
            p.xi_star[i] = 5.0 - i as f64;
        }
        let grown = p.resized(1);
        assert_eq!(grown.action_count(), 4);
        assert_eq!(grown.xi_star[3], 2.0);
        let shrunk = p.resized(-1);
        assert_eq!(shrunk.action_count(), 2);
        assert_eq!(p.offset(1).xi_star[0], 6.0);
        assert_eq!(p.impulse(0.2), Some(5.0 - 0.2));
        assert_eq!(p.impulse(7.0), None);
    }
}
