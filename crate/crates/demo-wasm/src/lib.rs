//! Browser demo: value field, truncation profile and a controlled sample path.
//! Each export takes plain numbers and returns a JSON string.

use impulse_qvi::levy::lambda_norms;
use impulse_qvi::simulate::{simulate_paths, SimConfig};
use impulse_qvi::{
    solve_qvi, Drift, Grid1D, LevyMeasure1D, ProblemSpec, QuadratureBuilder, QviSolution, SolveConfig, TransactionCost, Volatility,
};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const MAX_NODES: usize = 801;

/// Parameters exposed on the page; everything else is the reference instance.
#[derive(Clone, Copy, Debug)]
pub struct Params {
    pub sigma: f64,
    pub theta: f64,
    pub intensity: f64,
    pub order: f64,
    pub fixed: f64,
    pub proportional: f64,
    pub discount: f64,
    pub nodes: usize,
}

impl Params {
    pub fn spec(&self) -> Result<ProblemSpec, String> {
        let levy = LevyMeasure1D::power_law(self.intensity, self.order, 1.0).map_err(|e| e.to_string())?;
        let spec = ProblemSpec {
            drift: Drift::Linear {
                theta: self.theta,
                mean: 0.0,
            },
            volatility: Volatility::Constant { sigma: self.sigma },
            levy,
            transaction_cost: TransactionCost::Affine {
                fixed: self.fixed,
                proportional: self.proportional,
            },
            discount: self.discount,
            ..ProblemSpec::reference()
        };
        spec.validate().map_err(|e| e.to_string())?;
        Ok(spec)
    }

    fn solve(&self) -> Result<(ProblemSpec, QviSolution), String> {
        if !(11..=MAX_NODES).contains(&self.nodes) {
            return Err(format!("grid nodes must lie in [11, {MAX_NODES}]"));
        }
        let spec = self.spec()?;
        let grid = Grid1D::new(-10.0, 10.0, self.nodes).map_err(|e| e.to_string())?;
        let quad = QuadratureBuilder::new(&spec.levy).nodes(256).build().map_err(|e| e.to_string())?;
        let sol = solve_qvi(&spec, &grid, &quad, &SolveConfig::default()).map_err(|e| e.to_string())?;
        Ok((spec, sol))
    }
}

#[derive(Serialize)]
pub struct FieldView {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub mu: Vec<f64>,
    pub action: Vec<bool>,
    pub xi_star: Vec<f64>,
    pub u0: f64,
    pub iterations: usize,
}

pub fn value_field(p: &Params) -> Result<FieldView, String> {
    let (_, sol) = p.solve()?;
    let grid = sol.u.grid;
    Ok(FieldView {
        x: grid.nodes(),
        u: sol.u.values.clone(),
        mu: sol.intervention.mu.values.clone(),
        action: sol.policy.action.clone(),
        xi_star: sol.policy.xi_star.clone(),
        u0: sol.u.eval(0.0),
        iterations: sol.trace.len(),
    })
}

#[derive(Serialize)]
pub struct LambdaView {
    pub eps: Vec<f64>,
    pub lambda: Vec<f64>,
    /// ∫_{|z|<=ε} z² dν
    pub second_moment: Vec<f64>,
}

/// Λ(ε) for the identity jump at ε = 10^{k/8} in [1e-3, 0.42].
pub fn lambda_profile(intensity: f64, order: f64) -> Result<LambdaView, String> {
    let levy = LevyMeasure1D::power_law(intensity, order, 1.0).map_err(|e| e.to_string())?;
    let eps: Vec<f64> = (0..22).rev().map(|k| 10f64.powf(-3.0 + k as f64 / 8.0)).collect();
    let marks = eps.clone();
    let quad = QuadratureBuilder::new(&levy).breaks(&marks).build().map_err(|e| e.to_string())?;
    let spec = ProblemSpec {
        levy: levy.clone(),
        ..ProblemSpec::reference()
    };
    let mut view = LambdaView {
        eps: Vec::new(),
        lambda: Vec::new(),
        second_moment: Vec::new(),
    };
    for &e in &eps {
        let r = lambda_norms(&spec.jump, e, &quad, &[0.0]).map_err(|e| e.to_string())?;
        view.eps.push(e);
        view.lambda.push(r.lambda);
        view.second_moment.push(levy.abs_moment(2.0, 0.0, e));
    }
    Ok(view)
}

#[derive(Serialize)]
pub struct PathView {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    /// `(τ, ξ)` of each impulse.
    pub impulses: Vec<(f64, f64)>,
    pub cost: f64,
    /// Continuation band `[lo, hi]` around 0, if any.
    pub band: Option<(f64, f64)>,
}

pub fn sample_path(p: &Params, x0: f64, horizon: f64, seed: u64) -> Result<PathView, String> {
    let (spec, sol) = p.solve()?;
    let sim = SimConfig {
        horizon,
        dt: 2e-3,
        paths: 1,
        seed,
        delta_sim: 0.09,
        record_stride: Some(1),
        ..SimConfig::default()
    };
    let ens = simulate_paths(&spec, &sim, Some(&sol.policy), x0).map_err(|e| e.to_string())?;
    let grid = sol.u.grid;
    let centre = grid.nearest(0.0);
    let band = (!sol.policy.action[centre]).then(|| {
        let lo = (0..centre).rev().find(|&i| sol.policy.action[i]).map_or(0, |i| i + 1);
        let hi = (centre..grid.n).find(|&i| sol.policy.action[i]).map_or(grid.n - 1, |i| i - 1);
        (grid.x(lo), grid.x(hi))
    });
    Ok(PathView {
        t: ens.times(),
        x: ens.paths.map(|mut p| p.swap_remove(0)).unwrap_or_default(),
        impulses: ens.impulses[0].clone(),
        cost: ens.cost[0],
        band,
    })
}

fn to_json<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string())).map_err(|e| JsValue::from_str(&e))
}

#[allow(clippy::too_many_arguments)]
fn params(sigma: f64, theta: f64, intensity: f64, order: f64, fixed: f64, proportional: f64, discount: f64, nodes: usize) -> Params {
    Params {
        sigma,
        theta,
        intensity,
        order,
        fixed,
        proportional,
        discount,
        nodes,
    }
}

/// `{x, u, mu, action, xi_star, u0, iterations}`
#[wasm_bindgen(js_name = solveValueField)]
#[allow(clippy::too_many_arguments)]
pub fn solve_value_field_js(
    sigma: f64,
    theta: f64,
    intensity: f64,
    order: f64,
    fixed: f64,
    proportional: f64,
    discount: f64,
    nodes: usize,
) -> Result<String, JsValue> {
    to_json(value_field(&params(sigma, theta, intensity, order, fixed, proportional, discount, nodes)))
}

/// `{eps, lambda, second_moment}`
#[wasm_bindgen(js_name = lambdaProfile)]
pub fn lambda_profile_js(intensity: f64, order: f64) -> Result<String, JsValue> {
    to_json(lambda_profile(intensity, order))
}

/// `{t, x, impulses, cost, band}`
#[wasm_bindgen(js_name = samplePath)]
#[allow(clippy::too_many_arguments)]
pub fn sample_path_js(
    sigma: f64,
    theta: f64,
    intensity: f64,
    order: f64,
    fixed: f64,
    proportional: f64,
    discount: f64,
    nodes: usize,
    x0: f64,
    horizon: f64,
    seed: u32,
) -> Result<String, JsValue> {
    let p = params(sigma, theta, intensity, order, fixed, proportional, discount, nodes);
    to_json(sample_path(&p, x0, horizon, seed as u64))
}
