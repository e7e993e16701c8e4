//! Problem data for the controlled jump SDE
//!
//! ```text
//! dX = b̃(X−) dt + σ(X−) dW + ∫ j(X−, z) Ñ(dt, dz) + Σ δ(t − τ_i) ξ_i
//! ```
//!
//! with running cost f, transaction cost B and discount r, together with the
//! assumption checks and the comparison constants β, κ.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::levy::{LevyMeasure1D, LevyQuadrature, QuadratureBuilder};

/// Drift b̃.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Drift {
    Zero,
    Constant { value: f64 },
    /// `−θ (x − mean)`
    Linear { theta: f64, mean: f64 },
    /// `−θ x + amplitude·sin x`
    Nonlinear { theta: f64, amplitude: f64 },
}

impl Drift {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Drift::Zero => 0.0,
            Drift::Constant { value } => value,
            Drift::Linear { theta, mean } => -theta * (x - mean),
            Drift::Nonlinear { theta, amplitude } => -theta * x + amplitude * x.sin(),
        }
    }

    pub fn is_linear(&self) -> bool {
        !matches!(self, Drift::Nonlinear { amplitude, .. } if *amplitude != 0.0)
    }
}

/// Volatility σ (n = d = 1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Volatility {
    Constant { sigma: f64 },
    /// `σ (1 + amplitude·sin x)`
    Modulated { sigma: f64, amplitude: f64 },
}

impl Volatility {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Volatility::Constant { sigma } => sigma,
            Volatility::Modulated { sigma, amplitude } => sigma * (1.0 + amplitude * x.sin()),
        }
    }

    pub fn is_constant(&self) -> bool {
        match *self {
            Volatility::Constant { .. } => true,
            Volatility::Modulated { amplitude, .. } => amplitude == 0.0,
        }
    }
}

/// Jump amplitude j(x, z) with bound j0(z) = scale·|z|.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Jump {
    /// `j(x, z) = z`
    Identity,
    /// `j(x, z) = z (1 + a·min(|z|^0.6, 1)·sin x)`
    Modulated { amplitude: f64 },
}

fn modulation(z: f64) -> f64 {
    z.abs().powf(0.6).min(1.0)
}

impl Jump {
    pub fn eval(&self, x: f64, z: f64) -> f64 {
        match *self {
            Jump::Identity => z,
            Jump::Modulated { amplitude } => z * (1.0 + amplitude * modulation(z) * x.sin()),
        }
    }

    /// ∂_x j(x, z)
    pub fn dx(&self, x: f64, z: f64) -> f64 {
        match *self {
            Jump::Identity => 0.0,
            Jump::Modulated { amplitude } => z * amplitude * modulation(z) * x.cos(),
        }
    }

    pub fn bound_scale(&self) -> f64 {
        match *self {
            Jump::Identity => 1.0,
            Jump::Modulated { amplitude } => 1.0 + amplitude.abs(),
        }
    }

    /// j0(z) >= |j(x, z)| for every x.
    pub fn bound(&self, z: f64) -> f64 {
        self.bound_scale() * z.abs()
    }

    /// Mark magnitude `m` with `j0(z) > level ⇔ |z| > m`.
    pub fn mark_level(&self, level: f64) -> f64 {
        level / self.bound_scale()
    }

    /// Lipschitz envelope C_j(z) with |j(x,z) − j(y,z)| <= C_j(z)|x − y|.
    pub fn lipschitz_envelope(&self, z: f64) -> f64 {
        match *self {
            Jump::Identity => 0.0,
            Jump::Modulated { amplitude } => amplitude.abs() * z.abs() * modulation(z),
        }
    }

    pub fn is_state_independent(&self) -> bool {
        match *self {
            Jump::Identity => true,
            Jump::Modulated { amplitude } => amplitude == 0.0,
        }
    }
}

/// Running cost f >= 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunningCost {
    /// `√(δ² + x²) − δ`
    SmoothAbs { delta: f64 },
    /// `scale·x²`
    Quadratic { scale: f64 },
    Constant { value: f64 },
}

impl RunningCost {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            RunningCost::SmoothAbs { delta } => (delta * delta + x * x).sqrt() - delta,
            RunningCost::Quadratic { scale } => scale * x * x,
            RunningCost::Constant { value } => value,
        }
    }
}

/// Transaction cost B(ξ) = K + k|ξ|.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransactionCost {
    Affine { fixed: f64, proportional: f64 },
}

impl TransactionCost {
    pub fn eval(&self, xi: f64) -> f64 {
        match *self {
            TransactionCost::Affine {
                fixed,
                proportional,
            } => fixed + proportional * xi.abs(),
        }
    }

    /// inf_ξ B(ξ)
    pub fn floor(&self) -> f64 {
        match *self {
            TransactionCost::Affine {
                fixed,
                proportional,
            } => {
                if proportional >= 0.0 {
                    fixed
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }
}

/// Full problem instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub drift: Drift,
    pub volatility: Volatility,
    pub jump: Jump,
    pub levy: LevyMeasure1D,
    pub running_cost: RunningCost,
    pub transaction_cost: TransactionCost,
    /// r > 0
    pub discount: f64,
}

impl ProblemSpec {
    /// b̃(x) = −x/2, σ = 0.4, j = z, ν = power law (c = 1, order 1.5, z_max = 1),
    /// f(x) = √(0.01 + x²) − 0.1, B(ξ) = 1 + 0.1|ξ|, r = 1.
    pub fn reference() -> Self {
        ProblemSpec {
            drift: Drift::Linear {
                theta: 0.5,
                mean: 0.0,
            },
            volatility: Volatility::Constant { sigma: 0.4 },
            jump: Jump::Identity,
            levy: LevyMeasure1D::PowerLaw {
                intensity: 1.0,
                order: 1.5,
                z_max: 1.0,
            },
            running_cost: RunningCost::SmoothAbs { delta: 0.1 },
            transaction_cost: TransactionCost::Affine {
                fixed: 1.0,
                proportional: 0.1,
            },
            discount: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.levy.validate()?;
        if !(self.discount > 0.0 && self.discount.is_finite()) {
            return Err(Error::invalid(format!(
                "discount rate must be positive, got {}",
                self.discount
            )));
        }
        Ok(())
    }

    pub fn drift(&self, x: f64) -> f64 {
        self.drift.eval(x)
    }

    pub fn sigma(&self, x: f64) -> f64 {
        self.volatility.eval(x)
    }

    /// a(x) = σ(x)²/2
    pub fn diffusion(&self, x: f64) -> f64 {
        let s = self.sigma(x);
        0.5 * s * s
    }

    pub fn jump(&self, x: f64, z: f64) -> f64 {
        self.jump.eval(x, z)
    }

    pub fn running_cost(&self, x: f64) -> f64 {
        self.running_cost.eval(x)
    }

    pub fn transaction_cost(&self, xi: f64) -> f64 {
        self.transaction_cost.eval(xi)
    }
}

/// Declared constants of the hypotheses (H1)–(H9).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssumptionProfile {
    pub c_drift: f64,
    pub c_sigma: f64,
    pub c_f: f64,
    /// Exponent γ of the small-jump integrability condition; may differ from
    /// the power-law order of ν.
    pub gamma: f64,
    pub c0_integrability: f64,
    pub c0_nondegeneracy: f64,
    pub c1_jacobian: f64,
    pub big_c1_jacobian: f64,
    pub m_gamma: f64,
    pub lambda: f64,
    /// Semi-concavity constant C_r of f over the sampled box.
    pub c_r: f64,
    pub k_floor: f64,
}

impl Default for AssumptionProfile {
    fn default() -> Self {
        AssumptionProfile {
            c_drift: 0.5,
            c_sigma: 0.0,
            c_f: 1.0,
            gamma: 1.6,
            c0_integrability: 20.0,
            c0_nondegeneracy: 1.0,
            c1_jacobian: 1.0,
            big_c1_jacobian: 1.0,
            m_gamma: 1.0,
            lambda: 0.08,
            c_r: 5.0,
            k_floor: 1.0,
        }
    }
}

/// Point cloud for sampled suprema: stratified (Latin hypercube in 1-D)
/// samples over `[lower, upper]` plus the box endpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingPlan {
    pub lower: f64,
    pub upper: f64,
    pub points: usize,
    /// Size of the point subset used for the triple sup in κ.
    pub kappa_points: usize,
    pub seed: u64,
    /// Relative slack on declared constants.
    pub slack: f64,
}

impl Default for SamplingPlan {
    fn default() -> Self {
        SamplingPlan {
            lower: -10.0,
            upper: 10.0,
            points: 256,
            kappa_points: 20,
            seed: 7,
            slack: 1e-9,
        }
    }
}

impl SamplingPlan {
    pub fn new(lower: f64, upper: f64, points: usize, seed: u64) -> Self {
        SamplingPlan {
            lower,
            upper,
            points,
            seed,
            ..Default::default()
        }
    }

    /// Sorted sample points, deterministic in the seed.
    pub fn points(&self) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let n = self.points.max(1);
        let width = (self.upper - self.lower) / n as f64;
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(&mut rng);
        let mut xs: Vec<f64> = strata
            .into_iter()
            .map(|k| self.lower + (k as f64 + rng.gen::<f64>()) * width)
            .collect();
        xs.push(self.lower);
        xs.push(self.upper);
        xs.sort_by(|a, b| a.total_cmp(b));
        xs.dedup();
        xs
    }

    /// Pairs (x, x') with x != x': all pairs for small clouds, otherwise
    /// neighbours at dyadic strides.
    pub fn pairs(points: &[f64]) -> Vec<(f64, f64)> {
        let n = points.len();
        let mut out = Vec::new();
        if n <= 128 {
            for i in 0..n {
                for j in i + 1..n {
                    out.push((points[i], points[j]));
                }
            }
        } else {
            let mut stride = 1;
            while stride < n {
                for i in 0..n - stride {
                    out.push((points[i], points[i + stride]));
                }
                stride *= 2;
            }
        }
        out.retain(|(a, b)| a != b);
        out
    }
}

/// Outcome of one hypothesis check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisCheck {
    pub id: String,
    pub passed: bool,
    pub measured: f64,
    pub bound: f64,
    /// Worst violating (or extremal) sample.
    pub worst: Vec<f64>,
    /// Point with a non-finite coefficient evaluation, if any.
    pub non_finite_at: Option<Vec<f64>>,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub seed: u64,
    pub checks: Vec<HypothesisCheck>,
}

impl AssumptionReport {
    pub fn get(&self, id: &str) -> Option<&HypothesisCheck> {
        self.checks.iter().find(|c| c.id == id)
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Running maximum with the point where it is attained and the first
/// non-finite evaluation.
struct SupTracker {
    value: f64,
    at: Vec<f64>,
    non_finite: Option<Vec<f64>>,
}

impl SupTracker {
    fn new() -> Self {
        SupTracker {
            value: f64::NEG_INFINITY,
            at: Vec::new(),
            non_finite: None,
        }
    }

    fn push(&mut self, v: f64, at: &[f64]) {
        if !v.is_finite() {
            if self.non_finite.is_none() {
                self.non_finite = Some(at.to_vec());
            }
            return;
        }
        if v > self.value {
            self.value = v;
            self.at = at.to_vec();
        }
    }

    fn finish(self, id: &str, bound: f64, slack: f64, note: impl Into<String>) -> HypothesisCheck {
        let measured = if self.value == f64::NEG_INFINITY {
            0.0
        } else {
            self.value
        };
        HypothesisCheck {
            id: id.to_string(),
            passed: self.non_finite.is_none() && measured <= bound + slack * bound.abs().max(1.0),
            measured,
            bound,
            worst: self.at,
            non_finite_at: self.non_finite,
            note: note.into(),
        }
    }
}

fn lipschitz_quotient<F: Fn(f64) -> f64>(g: F, pairs: &[(f64, f64)]) -> SupTracker {
    let mut t = SupTracker::new();
    for &(x, y) in pairs {
        let q = (g(x) - g(y)).abs() / (x - y).abs();
        t.push(q, &[x, y]);
    }
    t
}

fn derivative<F: Fn(f64) -> f64>(g: &F, x: f64) -> f64 {
    let h = 1e-5 * (1.0 + x.abs());
    (g(x + h) - g(x - h)) / (2.0 * h)
}

/// Checks (H1)–(H9) on the sampled cloud. Non-finite evaluations are
/// recorded on the affected check without aborting the others.
pub fn check_assumptions(
    spec: &ProblemSpec,
    profile: &AssumptionProfile,
    plan: &SamplingPlan,
) -> Result<AssumptionReport> {
    spec.levy.validate()?;
    let xs = plan.points();
    let pairs = SamplingPlan::pairs(&xs);
    let quad = QuadratureBuilder::new(&spec.levy)
        .eta(spec.levy.support_radius().min(1.0).max(f64::MIN_POSITIVE))
        .exponent(profile.gamma)
        .build()?;
    let slack = plan.slack;
    let mut checks = Vec::new();

    // H1: Lipschitz coefficients.
    let b = lipschitz_quotient(|x| spec.drift(x), &pairs);
    checks.push(b.finish("H1.drift", profile.c_drift, slack, "sup |b̃(x)−b̃(y)|/|x−y|"));
    let s = lipschitz_quotient(|x| spec.sigma(x), &pairs);
    checks.push(s.finish("H1.sigma", profile.c_sigma, slack, "sup |σ(x)−σ(y)|/|x−y|"));
    let mut jt = SupTracker::new();
    for &(x, y) in pairs.iter().take(2048) {
        for (z, _) in quad.iter() {
            let env = spec.jump.lipschitz_envelope(z);
            let q = (spec.jump(x, z) - spec.jump(y, z)).abs() / (x - y).abs();
            jt.push(q - env, &[x, y, z]);
        }
    }
    checks.push(jt.finish(
        "H1.jump",
        0.0,
        slack,
        "sup over (x,y,z) of |j(x,z)−j(y,z)|/|x−y| − C_j(z)",
    ));
    let mut lq = SupTracker::new();
    for q in [1.0, 2.0, 4.0] {
        let v = quad.sum(|z| spec.jump.lipschitz_envelope(z).powf(q));
        lq.push(v, &[q]);
    }
    checks.push(lq.finish("H1.jump_envelope_Lq", f64::MAX, 0.0, "max_q ∫ C_j^q dν, q = 1, 2, 4"));

    // H2: Lipschitz first derivatives (finite differences; no constant declared).
    let db = lipschitz_quotient(|x| derivative(&|y| spec.drift(y), x), &pairs);
    let ds = lipschitz_quotient(|x| derivative(&|y| spec.sigma(y), x), &pairs);
    let mut h2 = SupTracker::new();
    h2.push(db.value.max(ds.value), &db.at);
    if let Some(p) = db.non_finite.or(ds.non_finite) {
        h2.non_finite = Some(p);
    }
    checks.push(h2.finish("H2", f64::MAX, 0.0, "finite-difference Lipschitz quotient of b̃', σ'"));

    // H3: Lipschitz running cost.
    let f = lipschitz_quotient(|x| spec.running_cost(x), &pairs);
    checks.push(f.finish("H3", profile.c_f, slack, "sup |f(x)−f(y)|/|x−y|"));

    // H4: f − C_r|x|² concave ⇔ second difference quotient <= 2 C_r.
    let mut h4 = SupTracker::new();
    let mut fmin = SupTracker::new();
    for &x in &xs {
        let h = 1e-3 * (plan.upper - plan.lower).abs().max(1e-9);
        let d2 = (spec.running_cost(x + h) - 2.0 * spec.running_cost(x) + spec.running_cost(x - h)) / (h * h);
        h4.push(d2, &[x]);
        fmin.push(-spec.running_cost(x), &[x]);
    }
    checks.push(h4.finish("H4", 2.0 * profile.c_r, slack.max(1e-6), "sup f''(x) vs 2 C_r"));
    checks.push(fmin.finish("H3.nonnegative", 0.0, 0.0, "sup −f(x) (f >= 0)"));

    // H5: jump bounds and small/big jump moments.
    let mut bound_t = SupTracker::new();
    for &x in xs.iter().step_by((xs.len() / 64).max(1)) {
        for (z, _) in quad.iter() {
            bound_t.push(spec.jump(x, z).abs() - spec.jump.bound(z), &[x, z]);
        }
    }
    checks.push(bound_t.finish("H5.bound", 0.0, 1e-12, "sup |j(x,z)| − j0(z)"));
    let scale = spec.jump.bound_scale();
    let big = quad.bound_moment_between(&spec.jump, 1.0, f64::INFINITY, 2.0);
    let small = match spec.levy {
        LevyMeasure1D::PowerLaw { .. } => {
            scale.powf(profile.gamma) * spec.levy.abs_moment(profile.gamma, 0.0, 1.0 / scale)
        }
        _ => quad.bound_moment_below(&spec.jump, 1.0, profile.gamma),
    };
    let mut h5 = SupTracker::new();
    h5.push(big.max(small), &[big, small]);
    checks.push(h5.finish(
        "H5.moments",
        profile.c0_integrability,
        slack,
        "max(∫_{j0>=1} j0² dν, ∫_{j0<1} j0^γ dν)",
    ));

    // H6: non-degeneracy of x -> x + θ j(x, z).
    let mut lo = SupTracker::new();
    let mut hi = SupTracker::new();
    let mut jac_lo = SupTracker::new();
    let mut jac_hi = SupTracker::new();
    for &(x, y) in pairs.iter().take(1024) {
        for (z, _) in quad.iter().step_by(4) {
            for theta in [0.0, 0.25, 0.5, 0.75, 1.0] {
                let r = ((x - y) + theta * (spec.jump(x, z) - spec.jump(y, z))).abs() / (x - y).abs();
                lo.push(-r, &[x, y, z, theta]);
                hi.push(r, &[x, y, z, theta]);
            }
        }
    }
    for &x in &xs {
        for (z, _) in quad.iter() {
            let det = 1.0 + spec.jump.dx(x, z);
            jac_lo.push(-det, &[x, z]);
            jac_hi.push(det, &[x, z]);
        }
    }
    let c0 = profile.c0_nondegeneracy;
    checks.push(lo.finish("H6.lower", -c0, slack, "sup −|(x−x')+θΔj|/|x−x'| vs −c_0"));
    checks.push(hi.finish("H6.upper", 1.0 / c0, slack, "sup |(x−x')+θΔj|/|x−x'| vs 1/c_0"));
    checks.push(jac_lo.finish(
        "H6.jacobian_lower",
        -1.0 / profile.c1_jacobian,
        slack,
        "sup −det(1+∇j) vs −1/c_1",
    ));
    checks.push(jac_hi.finish(
        "H6.jacobian_upper",
        profile.big_c1_jacobian,
        slack,
        "sup det(1+∇j) vs C_1",
    ));

    // H7: |∇j| <= M_γ j0^{γ−1}, |∇·j(x) − ∇·j(x + j)| <= M_γ j0^γ.
    let mut h7a = SupTracker::new();
    let mut h7b = SupTracker::new();
    for &x in xs.iter().step_by((xs.len() / 64).max(1)) {
        for (z, _) in quad.iter() {
            let j0 = spec.jump.bound(z);
            let g = spec.jump.dx(x, z).abs() - profile.m_gamma * j0.powf(profile.gamma - 1.0);
            h7a.push(g, &[x, z]);
            let shifted = x + spec.jump(x, z);
            let d = (spec.jump.dx(x, z) - spec.jump.dx(shifted, z)).abs() - profile.m_gamma * j0.powf(profile.gamma);
            h7b.push(d, &[x, z]);
        }
    }
    checks.push(h7a.finish("H7.gradient", 0.0, slack, "sup |∇j| − M_γ j0^{γ−1}"));
    checks.push(h7b.finish("H7.divergence", 0.0, slack, "sup |∇·j(x) − ∇·j(x+j)| − M_γ j0^γ"));

    // H8: uniform ellipticity.
    let mut h8 = SupTracker::new();
    for &x in &xs {
        h8.push(-spec.diffusion(x), &[x]);
    }
    checks.push(h8.finish("H8", -profile.lambda, slack, "sup −a(x) vs −λ"));

    // H9: transaction cost floor and subadditivity.
    let k = profile.k_floor;
    let span = plan.upper - plan.lower;
    let xis: Vec<f64> = xs.iter().map(|x| x - plan.lower - 0.5 * span).collect();
    let mut floor = SupTracker::new();
    for &xi in &xis {
        floor.push(k - spec.transaction_cost(xi), &[xi]);
    }
    let mut h9 = floor.finish("H9.floor", 0.0, slack, "sup K − B(ξ)");
    if k <= 0.0 {
        h9.passed = false;
        h9.note.push_str("; K must be positive");
    }
    checks.push(h9);
    let mut sub = SupTracker::new();
    for &a in xis.iter().step_by((xis.len() / 64).max(1)) {
        for &b in xis.iter().step_by((xis.len() / 64).max(1)) {
            let v = spec.transaction_cost(a + b) + k - spec.transaction_cost(a) - spec.transaction_cost(b);
            sub.push(v, &[a, b]);
        }
    }
    checks.push(sub.finish("H9.subadditive", 0.0, slack, "sup B(ξ1+ξ2)+K−B(ξ1)−B(ξ2)"));

    Ok(AssumptionReport {
        seed: plan.seed,
        checks,
    })
}

/// β and its parts at the maximizing pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaEstimate {
    pub beta: f64,
    pub drift: f64,
    pub sigma: f64,
    pub jump: f64,
    pub pair: (f64, f64),
    /// Certified upper bound 2C_b̃ + C_σ² + ∫(2C_j + C_j²) dν.
    pub cap: f64,
    pub pairs_used: usize,
}

/// κ and its parts at the maximizing triple.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaEstimate {
    pub kappa: f64,
    pub drift: f64,
    pub sigma: f64,
    pub jump: f64,
    /// (x, x', y, θ)
    pub triple: (f64, f64, f64, f64),
    pub triples_used: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConstants {
    pub beta: BetaEstimate,
    pub kappa: Option<KappaEstimate>,
    /// Comparison rate α.
    pub alpha: Option<f64>,
}

impl ModelConstants {
    pub fn new(beta: BetaEstimate) -> Self {
        ModelConstants {
            beta,
            kappa: None,
            alpha: None,
        }
    }

    /// `C_u = C_f/(r − β/2)`, recomputed on every call; `None` when r <= β/2.
    pub fn lipschitz_bound(&self, c_f: f64, r: f64) -> Option<f64> {
        let denom = r - self.beta.beta / 2.0;
        (denom > 0.0).then(|| c_f / denom)
    }
}

/// The three parts of the β integrand at one pair.
pub fn beta_terms(spec: &ProblemSpec, quad: &LevyQuadrature, x: f64, y: f64) -> (f64, f64, f64) {
    let d = x - y;
    let d2 = d * d;
    let drift = d * (spec.drift(x) - spec.drift(y)) / d2;
    let ds = spec.sigma(x) - spec.sigma(y);
    let sigma = ds * ds / d2;
    let jump = if spec.jump.is_state_independent() {
        0.0
    } else {
        quad.sum(|z| {
            let dj = spec.jump(x, z) - spec.jump(y, z);
            dj * dj / d2
        })
    };
    (drift, sigma, jump)
}

/// Sampled lower bound of β = sup_{x,x'} {2β_b̃ + β_σ + β_j} over the cloud of
/// `plan` together with `extra_points` (e.g. solver grid nodes).
pub fn estimate_beta(
    spec: &ProblemSpec,
    profile: &AssumptionProfile,
    quad: &LevyQuadrature,
    plan: &SamplingPlan,
    extra_points: &[f64],
) -> Result<BetaEstimate> {
    let mut xs = plan.points();
    xs.extend_from_slice(extra_points);
    xs.sort_by(|a, b| a.total_cmp(b));
    xs.dedup();
    let pairs = SamplingPlan::pairs(&xs);
    estimate_beta_on_pairs(spec, profile, quad, &pairs)
}

pub fn estimate_beta_on_pairs(
    spec: &ProblemSpec,
    profile: &AssumptionProfile,
    quad: &LevyQuadrature,
    pairs: &[(f64, f64)],
) -> Result<BetaEstimate> {
    let mut best: Option<BetaEstimate> = None;
    let mut used = 0;
    for &(x, y) in pairs {
        if x == y {
            continue;
        }
        used += 1;
        let (b, s, j) = beta_terms(spec, quad, x, y);
        let total = 2.0 * b + s + j;
        if !total.is_finite() {
            return Err(Error::NonFinite(format!("β integrand at ({x}, {y})")));
        }
        if best.as_ref().map_or(true, |e| total > e.beta) {
            best = Some(BetaEstimate {
                beta: total,
                drift: b,
                sigma: s,
                jump: j,
                pair: (x, y),
                cap: 0.0,
                pairs_used: 0,
            });
        }
    }
    let mut est = best.ok_or(Error::EmptyPairSet)?;
    est.pairs_used = used;
    est.cap = 2.0 * profile.c_drift
        + profile.c_sigma * profile.c_sigma
        + quad.sum(|z| {
            let c = spec.jump.lipschitz_envelope(z);
            2.0 * c + c * c
        });
    Ok(est)
}

/// The normalized κ integrand at (x, x', y, θ): `(2κ_b̃ + κ_σ + κ_j)/ψ_θ`
/// split into its three parts; `None` where ψ_θ vanishes.
pub fn kappa_terms(
    spec: &ProblemSpec,
    quad: &LevyQuadrature,
    x: f64,
    xp: f64,
    y: f64,
    theta: f64,
) -> Option<(f64, f64, f64)> {
    let d = x - xp;
    let q = theta * theta * (1.0 - theta) * (1.0 - theta);
    let e = theta * x + (1.0 - theta) * xp - y;
    let psi = q * d.powi(4) + e * e;
    if psi <= 1e-300 {
        return None;
    }
    let db = spec.drift(x) - spec.drift(xp);
    let db_mid = theta * spec.drift(x) + (1.0 - theta) * spec.drift(xp) - spec.drift(y);
    let drift = 2.0 * (q * 2.0 * d * d * d * db + e * db_mid);

    let ds = spec.sigma(x) - spec.sigma(xp);
    let ds_mid = theta * spec.sigma(x) + (1.0 - theta) * spec.sigma(xp) - spec.sigma(y);
    let sigma = q * 6.0 * d * d * ds * ds + ds_mid * ds_mid;

    let jump = if spec.jump.is_state_independent() {
        0.0
    } else {
        quad.sum(|z| {
            let dj = spec.jump(x, z) - spec.jump(xp, z);
            let dj_mid = theta * spec.jump(x, z) + (1.0 - theta) * spec.jump(xp, z) - spec.jump(y, z);
            let quartic = dj * dj * (6.0 * d * d + 4.0 * d * dj + dj * dj);
            q * quartic + dj_mid * dj_mid
        })
    };
    Some((drift / psi, sigma / psi, jump / psi))
}

const KAPPA_THETAS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// Sampled κ over triples from the first `plan.kappa_points` cloud points
/// (plus the β-maximizing pair) and θ ∈ {0, ¼, ½, ¾, 1}. Asserts β <= κ.
pub fn estimate_kappa(
    spec: &ProblemSpec,
    quad: &LevyQuadrature,
    plan: &SamplingPlan,
    beta: &BetaEstimate,
) -> Result<KappaEstimate> {
    let all = plan.points();
    let stride = (all.len() / plan.kappa_points.max(1)).max(1);
    let mut xs: Vec<f64> = all.iter().copied().step_by(stride).collect();
    xs.push(beta.pair.0);
    xs.push(beta.pair.1);
    xs.sort_by(|a, b| a.total_cmp(b));
    xs.dedup();

    let mut best: Option<KappaEstimate> = None;
    let mut used = 0;
    for &x in &xs {
        for &xp in &xs {
            for &y in &xs {
                for &theta in &KAPPA_THETAS {
                    let Some((b, s, j)) = kappa_terms(spec, quad, x, xp, y, theta) else {
                        continue;
                    };
                    used += 1;
                    let total = b + s + j;
                    if !total.is_finite() {
                        return Err(Error::NonFinite(format!("κ integrand at ({x}, {xp}, {y}, {theta})")));
                    }
                    if best.as_ref().map_or(true, |e| total > e.kappa) {
                        best = Some(KappaEstimate {
                            kappa: total,
                            drift: b,
                            sigma: s,
                            jump: j,
                            triple: (x, xp, y, theta),
                            triples_used: 0,
                        });
                    }
                }
            }
        }
    }
    let mut est = best.ok_or(Error::EmptyPairSet)?;
    est.triples_used = used;
    if est.kappa < beta.beta - 1e-9 * beta.beta.abs().max(1.0) {
        return Err(Error::invalid(format!(
            "sampled κ = {} below β = {}",
            est.kappa, beta.beta
        )));
    }
    Ok(est)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCheck {
    /// Required strict lower bound on r.
    pub threshold: f64,
    pub passed: bool,
    pub note: String,
}

/// Discount thresholds of the Lipschitz, uniform-convergence and
/// semi-concavity estimates. Failures are reported, never raised.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscountReport {
    pub r: f64,
    pub alpha: f64,
    pub lipschitz: ThresholdCheck,
    pub uniform_convergence: ThresholdCheck,
    pub semiconcavity: ThresholdCheck,
}

pub fn check_discount_rate(constants: &ModelConstants, r: f64, alpha: f64) -> DiscountReport {
    let beta = constants.beta.beta;
    let lipschitz = ThresholdCheck {
        threshold: beta / 2.0,
        passed: r > beta / 2.0,
        note: if r > beta / 2.0 {
            "C_u = C_f/(r − β/2) defined".into()
        } else {
            "r <= β/2: C_u undefined".into()
        },
    };
    let uc_ok = alpha > beta && r > alpha / 2.0;
    let uniform_convergence = ThresholdCheck {
        threshold: alpha / 2.0,
        passed: uc_ok,
        note: if alpha <= beta {
            format!("α = {alpha} must exceed β = {beta}")
        } else if !uc_ok {
            "r <= α/2".into()
        } else {
            "r > α/2 with α > β".into()
        },
    };
    let semiconcavity = match &constants.kappa {
        None => ThresholdCheck {
            threshold: f64::NAN,
            passed: false,
            note: "κ not estimated".into(),
        },
        Some(k) => {
            let ok = alpha >= k.kappa && r > alpha;
            ThresholdCheck {
                threshold: alpha,
                passed: ok,
                note: if alpha < k.kappa {
                    format!("unverifiable at this α: α = {alpha} < κ = {}", k.kappa)
                } else if !ok {
                    "r <= α".into()
                } else {
                    "r > α >= κ".into()
                },
            }
        }
    };
    DiscountReport {
        r,
        alpha,
        lipschitz,
        uniform_convergence,
        semiconcavity,
    }
}
