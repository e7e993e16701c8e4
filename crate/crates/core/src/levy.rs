//! Lévy measures on the real line, their quadratures and the small-jump
//! truncation `j^ε(x, z) = j(x, z)·1{j0(z) > ε}`.
//!
//! Every ν-integral used elsewhere in the crate (compensated drift, jump
//! stencils, β_j, Λ-norms) is a weighted sum over a [`LevyQuadrature`]. The
//! closed forms on [`LevyMeasure1D`] are kept for construction (moment
//! matching, r(η)) and for test oracles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Jump;

/// Lévy measure ν on R∖{0}.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LevyMeasure1D {
    /// Symmetric density `c |z|^{-1-order}` on `0 < |z| <= z_max`.
    PowerLaw { intensity: f64, order: f64, z_max: f64 },
    /// Finite list of atoms `(z_k, m_k)`.
    CompoundPoisson { atoms: Vec<(f64, f64)> },
    Zero,
}

impl LevyMeasure1D {
    pub fn power_law(intensity: f64, order: f64, z_max: f64) -> Result<Self> {
        let nu = LevyMeasure1D::PowerLaw {
            intensity,
            order,
            z_max,
        };
        nu.validate()?;
        Ok(nu)
    }

    pub fn compound_poisson(atoms: Vec<(f64, f64)>) -> Result<Self> {
        let nu = LevyMeasure1D::CompoundPoisson { atoms };
        nu.validate()?;
        Ok(nu)
    }

    /// Checks the Lévy condition `∫ min(1, z²) dν < ∞` and parameter ranges.
    pub fn validate(&self) -> Result<()> {
        match self {
            LevyMeasure1D::PowerLaw {
                intensity,
                order,
                z_max,
            } => {
                if !(order.is_finite() && intensity.is_finite() && z_max.is_finite()) {
                    return Err(Error::invalid("power-law parameters must be finite"));
                }
                if *order >= 2.0 {
                    return Err(Error::InfiniteSmallJumpMass(*order));
                }
                if *order <= 0.0 {
                    return Err(Error::invalid(format!(
                        "power-law order must be positive, got {order}"
                    )));
                }
                if *intensity <= 0.0 || *z_max <= 0.0 {
                    return Err(Error::invalid("power-law intensity and z_max must be positive"));
                }
                Ok(())
            }
            LevyMeasure1D::CompoundPoisson { atoms } => {
                for &(z, m) in atoms {
                    if !(z.is_finite() && m.is_finite()) || z == 0.0 || m <= 0.0 {
                        return Err(Error::invalid(format!(
                            "compound Poisson atom ({z}, {m}) must have z != 0 and mass > 0"
                        )));
                    }
                }
                Ok(())
            }
            LevyMeasure1D::Zero => Ok(()),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            LevyMeasure1D::Zero => true,
            LevyMeasure1D::CompoundPoisson { atoms } => atoms.is_empty(),
            LevyMeasure1D::PowerLaw { .. } => false,
        }
    }

    /// Largest |z| in the support.
    pub fn support_radius(&self) -> f64 {
        match self {
            LevyMeasure1D::PowerLaw { z_max, .. } => *z_max,
            LevyMeasure1D::CompoundPoisson { atoms } => {
                atoms.iter().map(|(z, _)| z.abs()).fold(0.0, f64::max)
            }
            LevyMeasure1D::Zero => 0.0,
        }
    }

    /// Power-law order, if the measure has one.
    pub fn order(&self) -> Option<f64> {
        match self {
            LevyMeasure1D::PowerLaw { order, .. } => Some(*order),
            _ => None,
        }
    }

    /// Closed form of `∫_{lo <= |z| < hi} |z|^p ν(dz)`; infinite when the
    /// integral diverges at the origin.
    pub fn abs_moment(&self, p: f64, lo: f64, hi: f64) -> f64 {
        match self {
            LevyMeasure1D::PowerLaw {
                intensity,
                order,
                z_max,
            } => {
                let hi = hi.min(*z_max);
                let lo = lo.max(0.0);
                if hi <= lo {
                    return 0.0;
                }
                let e = p - order;
                if lo == 0.0 && e <= 0.0 {
                    return f64::INFINITY;
                }
                if e.abs() < 1e-14 {
                    2.0 * intensity * (hi / lo).ln()
                } else {
                    2.0 * intensity * (hi.powf(e) - lo.powf(e)) / e
                }
            }
            LevyMeasure1D::CompoundPoisson { atoms } => atoms
                .iter()
                .filter(|(z, _)| z.abs() >= lo && z.abs() < hi)
                .map(|(z, m)| m * z.abs().powf(p))
                .sum(),
            LevyMeasure1D::Zero => 0.0,
        }
    }

    /// `ν(|z| > level)`.
    pub fn mass_above(&self, level: f64) -> f64 {
        match self {
            LevyMeasure1D::PowerLaw {
                intensity,
                order,
                z_max,
            } => {
                if level >= *z_max {
                    return 0.0;
                }
                if level <= 0.0 {
                    return f64::INFINITY;
                }
                2.0 * intensity * (level.powf(-order) - z_max.powf(-order)) / order
            }
            LevyMeasure1D::CompoundPoisson { atoms } => atoms
                .iter()
                .filter(|(z, _)| z.abs() > level)
                .map(|(_, m)| m)
                .sum(),
            LevyMeasure1D::Zero => 0.0,
        }
    }

    /// Draws a mark from ν restricted to `{|z| > level}` and normalized, by
    /// inverse CDF. `u_mag` and `u_sign` are independent uniforms on [0, 1).
    pub fn sample_mark_above(&self, level: f64, u_mag: f64, u_sign: f64) -> f64 {
        match self {
            LevyMeasure1D::PowerLaw { order, z_max, .. } => {
                let a = level.powf(-order);
                let b = z_max.powf(-order);
                let mag = (a - u_mag * (a - b)).powf(-1.0 / order);
                if u_sign < 0.5 {
                    -mag
                } else {
                    mag
                }
            }
            LevyMeasure1D::CompoundPoisson { atoms } => {
                let total: f64 = atoms
                    .iter()
                    .filter(|(z, _)| z.abs() > level)
                    .map(|(_, m)| m)
                    .sum();
                let mut acc = 0.0;
                let target = u_mag * total;
                let mut last = 0.0;
                for &(z, m) in atoms.iter().filter(|(z, _)| z.abs() > level) {
                    acc += m;
                    last = z;
                    if target < acc {
                        return z;
                    }
                }
                last
            }
            LevyMeasure1D::Zero => 0.0,
        }
    }
}

/// Gauss–Legendre nodes and weights on [-1, 1].
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = (n + 1) / 2;
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = 0.0;
            for k in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * k + 1) as f64 * z * p1 - k as f64 * p2) / (k + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

const POINTS_PER_PANEL: usize = 8;
const MAX_NODES: usize = 1 << 14;

/// Discretization of ν: `∫ g dν ≈ Σ_q w_q g(z_q)`.
#[derive(Clone, Debug)]
pub struct LevyQuadrature {
    measure: LevyMeasure1D,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    eta: f64,
    exponent: f64,
    small_second_moment: f64,
    integrability: f64,
}

/// Builder for [`LevyQuadrature`]. Extra breakpoints (truncation levels,
/// simulation thresholds) are placed on panel boundaries so that sums
/// restricted to `{|z| < level}` carry no partial-panel error.
#[derive(Clone, Debug)]
pub struct QuadratureBuilder {
    measure: LevyMeasure1D,
    eta: f64,
    n_nodes: usize,
    exponent: f64,
    breaks: Vec<f64>,
    tolerance: f64,
}

impl QuadratureBuilder {
    pub fn new(measure: &LevyMeasure1D) -> Self {
        QuadratureBuilder {
            measure: measure.clone(),
            eta: 1.0_f64.min(measure.support_radius().max(f64::MIN_POSITIVE)),
            n_nodes: 512,
            exponent: 2.0,
            breaks: Vec::new(),
            tolerance: 1e-6,
        }
    }

    pub fn eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn nodes(mut self, n_nodes: usize) -> Self {
        self.n_nodes = n_nodes;
        self
    }

    /// Exponent of the module of integrability `r(η) = ∫_{|z|<η} |z|^γ dν`.
    pub fn exponent(mut self, gamma: f64) -> Self {
        self.exponent = gamma;
        self
    }

    pub fn breaks(mut self, breaks: &[f64]) -> Self {
        self.breaks.extend_from_slice(breaks);
        self
    }

    pub fn build(self) -> Result<LevyQuadrature> {
        self.measure.validate()?;
        if self.n_nodes < 16 {
            return Err(Error::invalid(format!(
                "quadrature needs at least 16 nodes, got {}",
                self.n_nodes
            )));
        }
        match &self.measure {
            LevyMeasure1D::PowerLaw { z_max, .. } => {
                if !(self.eta > 0.0 && self.eta <= *z_max) {
                    return Err(Error::invalid(format!(
                        "split level η = {} must lie in (0, z_max = {z_max}]",
                        self.eta
                    )));
                }
                let mut n = self.n_nodes;
                loop {
                    let quad = self.power_law(n);
                    let exact = self.measure.abs_moment(2.0, 0.0, self.eta);
                    let approx = quad.sum_below(self.eta, |z| z * z);
                    if (approx - exact).abs() <= self.tolerance * exact || n >= MAX_NODES {
                        return Ok(quad);
                    }
                    n *= 2;
                }
            }
            LevyMeasure1D::CompoundPoisson { atoms } => {
                let mut sorted = atoms.clone();
                sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
                let nodes: Vec<f64> = sorted.iter().map(|a| a.0).collect();
                let weights: Vec<f64> = sorted.iter().map(|a| a.1).collect();
                Ok(self.finish(nodes, weights))
            }
            LevyMeasure1D::Zero => Ok(self.finish(Vec::new(), Vec::new())),
        }
    }

    fn finish(&self, nodes: Vec<f64>, weights: Vec<f64>) -> LevyQuadrature {
        let small_second_moment = self.measure.abs_moment(2.0, 0.0, self.eta);
        let integrability = self.measure.abs_moment(self.exponent, 0.0, self.eta);
        LevyQuadrature {
            measure: self.measure.clone(),
            nodes,
            weights,
            eta: self.eta,
            exponent: self.exponent,
            small_second_moment,
            integrability,
        }
    }

    fn power_law(&self, n_nodes: usize) -> LevyQuadrature {
        let (intensity, order, z_max) = match self.measure {
            LevyMeasure1D::PowerLaw {
                intensity,
                order,
                z_max,
            } => (intensity, order, z_max),
            _ => unreachable!(),
        };
        // geometric panels z_max·2^{-k}, plus the requested breakpoints
        let panels = ((n_nodes / 2).saturating_sub(1) / POINTS_PER_PANEL).max(1);
        let mut bounds: Vec<f64> = (0..=panels).map(|k| z_max * 0.5f64.powi(k as i32)).collect();
        let z_min = *bounds.last().unwrap();
        let mut extra: Vec<f64> = self.breaks.clone();
        extra.push(self.eta);
        extra.push(1.0);
        for b in extra {
            let b = b.abs();
            if b > z_min && b < z_max {
                bounds.push(b);
            }
        }
        bounds.sort_by(|a, b| a.total_cmp(b));
        bounds.dedup_by(|a, b| (*a - *b).abs() <= 1e-13 * b.abs());

        let (gx, gw) = gauss_legendre(POINTS_PER_PANEL);
        let density = |z: f64| intensity * z.powf(-1.0 - order);
        let mut half_nodes = Vec::with_capacity(bounds.len() * POINTS_PER_PANEL + 1);
        let mut half_weights = Vec::with_capacity(bounds.len() * POINTS_PER_PANEL + 1);

        // innermost panel (0, z_min]: one node carrying the exact second moment
        let inner = 0.5 * z_min;
        let inner_moment = intensity * z_min.powf(2.0 - order) / (2.0 - order);
        half_nodes.push(inner);
        half_weights.push(inner_moment / (inner * inner));

        for pair in bounds.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let mid = 0.5 * (a + b);
            let half = 0.5 * (b - a);
            for (t, w) in gx.iter().zip(&gw) {
                let z = mid + half * t;
                half_nodes.push(z);
                half_weights.push(half * w * density(z));
            }
        }

        let mut nodes = Vec::with_capacity(2 * half_nodes.len());
        let mut weights = Vec::with_capacity(2 * half_nodes.len());
        for (z, w) in half_nodes.iter().zip(&half_weights).rev() {
            nodes.push(-z);
            weights.push(*w);
        }
        for (z, w) in half_nodes.iter().zip(&half_weights) {
            nodes.push(*z);
            weights.push(*w);
        }
        self.finish(nodes, weights)
    }
}

/// Builds a quadrature with default options for the module of integrability
/// exponent (2) and no extra breakpoints.
pub fn build_quadrature(measure: &LevyMeasure1D, eta: f64, n_nodes: usize) -> Result<LevyQuadrature> {
    QuadratureBuilder::new(measure).eta(eta).nodes(n_nodes).build()
}

impl LevyQuadrature {
    pub fn measure(&self) -> &LevyMeasure1D {
        &self.measure
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    /// `s²(η) = ∫_{|z|<η} z² dν` (closed form).
    pub fn small_second_moment(&self) -> f64 {
        self.small_second_moment
    }

    /// Module of integrability `r(η) = ∫_{|z|<η} |z|^γ dν` (closed form).
    pub fn integrability(&self) -> f64 {
        self.integrability
    }

    /// Smallest node magnitude.
    pub fn smallest_node(&self) -> f64 {
        self.nodes.iter().map(|z| z.abs()).fold(f64::INFINITY, f64::min)
    }

    pub fn sum<F: Fn(f64) -> f64>(&self, g: F) -> f64 {
        self.iter().map(|(z, w)| w * g(z)).sum()
    }

    /// `Σ_{|z_q| < level} w_q g(z_q)`.
    pub fn sum_below<F: Fn(f64) -> f64>(&self, level: f64, g: F) -> f64 {
        self.iter()
            .filter(|(z, _)| z.abs() < level)
            .map(|(z, w)| w * g(z))
            .sum()
    }

    /// Quadrature value of `∫_{j0 < level} j0^p dν` for the given jump.
    pub fn bound_moment_below(&self, jump: &Jump, level: f64, p: f64) -> f64 {
        self.iter()
            .map(|(z, w)| (jump.bound(z), w))
            .filter(|(b, _)| *b < level)
            .map(|(b, w)| w * b.powf(p))
            .sum()
    }

    /// Quadrature value of `∫_{lo <= j0 < hi} j0^p dν`.
    pub fn bound_moment_between(&self, jump: &Jump, lo: f64, hi: f64, p: f64) -> f64 {
        self.iter()
            .map(|(z, w)| (jump.bound(z), w))
            .filter(|(b, _)| *b >= lo && *b < hi)
            .map(|(b, w)| w * b.powf(p))
            .sum()
    }
}

/// Anything that can act as a jump amplitude `(x, z) -> j(x, z)` with a
/// state-independent bound `j0(z) >= |j(x, z)|`.
pub trait JumpAmplitude {
    fn eval(&self, x: f64, z: f64) -> f64;
    fn bound(&self, z: f64) -> f64;
}

impl JumpAmplitude for Jump {
    fn eval(&self, x: f64, z: f64) -> f64 {
        Jump::eval(self, x, z)
    }

    fn bound(&self, z: f64) -> f64 {
        Jump::bound(self, z)
    }
}

/// `j^ε(x, z) = j(x, z)·1{j0(z) > ε}`, evaluated pointwise.
#[derive(Clone, Copy, Debug)]
pub struct TruncatedJump<J> {
    inner: J,
    eps: f64,
}

impl<J: JumpAmplitude> TruncatedJump<J> {
    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn keeps(&self, z: f64) -> bool {
        self.inner.bound(z) > self.eps
    }
}

impl<J: JumpAmplitude> JumpAmplitude for TruncatedJump<J> {
    fn eval(&self, x: f64, z: f64) -> f64 {
        if self.keeps(z) {
            self.inner.eval(x, z)
        } else {
            0.0
        }
    }

    fn bound(&self, z: f64) -> f64 {
        self.inner.bound(z)
    }
}

pub fn truncate_jump<J: JumpAmplitude>(jump: J, eps: f64) -> Result<TruncatedJump<J>> {
    if !(eps >= 0.0) {
        return Err(Error::invalid(format!("truncation level must be >= 0, got {eps}")));
    }
    Ok(TruncatedJump { inner: jump, eps })
}

/// Λ-norms of the truncation error `j − j^ε` and the resulting bound C(ε).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationReport {
    pub eps: f64,
    /// ‖j − j^ε‖_{0,2}
    pub norm2: f64,
    /// ‖j − j^ε‖_{0,4}
    pub norm4: f64,
    /// Λ_{0,2}(j − j^ε) = ‖·‖_{0,4} + ‖·‖_{0,2}
    pub lambda: f64,
    /// Sampled state attaining the sup in ‖·‖_{0,2}.
    pub argmax_x: f64,
}

/// Computes `‖j − j^ε‖_{0,p}` for p = 2, 4 as sampled sups over `sample_x`
/// of quadrature sums over `{j0 <= ε}`.
pub fn lambda_norms(
    jump: &Jump,
    eps: f64,
    quad: &LevyQuadrature,
    sample_x: &[f64],
) -> Result<TruncationReport> {
    if !(eps >= 0.0) {
        return Err(Error::invalid(format!("truncation level must be >= 0, got {eps}")));
    }
    let dropped: Vec<(f64, f64)> = quad.iter().filter(|(z, _)| jump.bound(*z) <= eps).collect();
    if eps > 0.0 && dropped.is_empty() && matches!(quad.measure(), LevyMeasure1D::PowerLaw { .. }) {
        return Err(Error::QuadratureTooCoarse(eps));
    }
    let xs: Vec<f64> = if jump.is_state_independent() || sample_x.is_empty() {
        vec![0.0]
    } else {
        sample_x.to_vec()
    };
    let mut best2 = (0.0, xs[0]);
    let mut best4 = 0.0f64;
    for &x in &xs {
        let mut s2 = 0.0;
        let mut s4 = 0.0;
        for &(z, w) in &dropped {
            let d = jump.eval(x, z);
            let d2 = d * d;
            s2 += w * d2;
            s4 += w * d2 * d2;
        }
        if s2 > best2.0 {
            best2 = (s2, x);
        }
        best4 = best4.max(s4);
    }
    let norm2 = best2.0.sqrt();
    let norm4 = best4.powf(0.25);
    Ok(TruncationReport {
        eps,
        norm2,
        norm4,
        lambda: norm2 + norm4,
        argmax_x: best2.1,
    })
}

/// `C(ε) = C_f·M^{1/2}·Λ_{0,2}(j − j^ε)/(r − α/2)`.
pub fn error_bound(report: &TruncationReport, c_f: f64, m: f64, r: f64, alpha: f64) -> Result<f64> {
    if r <= alpha / 2.0 {
        return Err(Error::DiscountTooSmall { r, alpha });
    }
    if !(m >= 0.0) {
        return Err(Error::invalid(format!("moment constant M must be >= 0, got {m}")));
    }
    Ok(c_f * m.sqrt() * report.lambda / (r - alpha / 2.0))
}
