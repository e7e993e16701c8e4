//! Monte Carlo for the jump SDE
//!
//! ```text
//! dX = b̃(X−) dt + σ(X−) dW + ∫ j(X−, z) Ñ(dt, dz)
//! ```
//!
//! by Euler–Maruyama with a marked Poisson process for the jumps with
//! `j0 > δ_sim`. Every simulated jump is compensated. Jumps below `δ_sim` are
//! either dropped or replaced by Gaussian noise of matching variance.
//!
//! Path `p` draws from a ChaCha stream selected by `p`, so results do not
//! depend on the number of worker threads; reductions run in path order.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::levy::{lambda_norms, LevyMeasure1D, LevyQuadrature};
use crate::model::{Jump, ProblemSpec};
use crate::qvi::ImpulsePolicy;

/// Treatment of the jumps with `j0 <= δ_sim`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Compensation {
    /// Dropped together with their compensator.
    CompensateDrift,
    /// Replaced by Gaussian noise with variance `dt·s²(δ_sim, x)`.
    DiffusionSurrogate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub horizon: f64,
    pub dt: f64,
    pub paths: usize,
    pub seed: u64,
    pub delta_sim: f64,
    pub compensation: Compensation,
    /// Keep every `k`-th state of each path (`None`: terminal state only).
    pub record_stride: Option<usize>,
    /// Impulses per path before the policy is declared Zeno.
    pub max_impulses: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            horizon: 2.0,
            dt: 1e-3,
            paths: 10_000,
            seed: 1,
            delta_sim: 0.06,
            compensation: Compensation::DiffusionSurrogate,
            record_stride: None,
            max_impulses: 1000,
        }
    }
}

impl SimConfig {
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.horizon >= self.dt && self.paths >= 1) {
            return Err(Error::invalid(format!(
                "need dt > 0, T >= dt, P >= 1 (dt = {}, T = {}, P = {})",
                self.dt, self.horizon, self.paths
            )));
        }
        if !(self.delta_sim >= 0.0) {
            return Err(Error::invalid("δ_sim must be >= 0"));
        }
        Ok(())
    }
}

/// Moments of ν over a band of marks `lo < |z| <= hi`, split by powers of
/// the jump modulation `m(z) = min(|z|^0.6, 1)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct BandMoments {
    /// `∫ z m^k dν`, k = 0, 1
    first: [f64; 2],
    /// `∫ z² m^k dν`, k = 0, 1, 2
    second: [f64; 3],
}

fn modulation(z: f64) -> f64 {
    z.abs().powf(0.6).min(1.0)
}

impl BandMoments {
    fn new(measure: &LevyMeasure1D, lo: f64, hi: f64) -> Self {
        if hi <= lo {
            return BandMoments::default();
        }
        match measure {
            LevyMeasure1D::PowerLaw { .. } => {
                // symmetric: odd moments vanish
                let split = |p: f64, k: f64| {
                    measure.abs_moment(p + 0.6 * k, lo, hi.min(1.0)) + measure.abs_moment(p, lo.max(1.0), hi)
                };
                BandMoments {
                    first: [0.0, 0.0],
                    second: [split(2.0, 0.0), split(2.0, 1.0), split(2.0, 2.0)],
                }
            }
            LevyMeasure1D::CompoundPoisson { atoms } => {
                let mut b = BandMoments::default();
                for &(z, w) in atoms.iter().filter(|(z, _)| z.abs() > lo && z.abs() <= hi) {
                    let m = modulation(z);
                    b.first[0] += w * z;
                    b.first[1] += w * z * m;
                    b.second[0] += w * z * z;
                    b.second[1] += w * z * z * m;
                    b.second[2] += w * z * z * m * m;
                }
                b
            }
            LevyMeasure1D::Zero => BandMoments::default(),
        }
    }

    /// `∫_band j(x, z) dν`
    fn mean(&self, a: f64, s: f64) -> f64 {
        self.first[0] + a * s * self.first[1]
    }

    /// `∫_band j(x, z)² dν`
    fn variance(&self, a: f64, s: f64) -> f64 {
        (self.second[0] + 2.0 * a * s * self.second[1] + a * a * s * s * self.second[2]).max(0.0)
    }
}

fn amplitude(jump: &Jump) -> f64 {
    match *jump {
        Jump::Identity => 0.0,
        Jump::Modulated { amplitude } => amplitude,
    }
}

/// One simulated component: which marks it applies and which Gaussian
/// surrogate bands it carries.
#[derive(Clone, Debug)]
struct Particle {
    keep_above: f64,
    bands: Vec<(usize, BandMoments)>,
    compensator: BandMoments,
}

/// Shared randomness of one step.
struct StepNoise<'a> {
    dw: f64,
    gauss: &'a [f64],
    marks: &'a [f64],
}

struct Stepper<'a> {
    spec: &'a ProblemSpec,
    dt: f64,
    sqrt_dt: f64,
    a: f64,
}

impl Stepper<'_> {
    fn step(&self, x: f64, p: &Particle, noise: &StepNoise) -> f64 {
        let spec = self.spec;
        let s = x.sin();
        let mut next = x + spec.drift(x) * self.dt + spec.sigma(x) * self.sqrt_dt * noise.dw;
        next -= p.compensator.mean(self.a, s) * self.dt;
        for (k, b) in &p.bands {
            next += (b.variance(self.a, s) * self.dt).sqrt() * noise.gauss[*k];
        }
        for &z in noise.marks {
            if z.abs() > p.keep_above {
                next += spec.jump(x, z);
            }
        }
        next
    }
}

/// Mark-space setup shared by all components of a coupled run. The
/// surrogate range `(0, m_δ]` is cut into bands at the truncation marks so
/// that every component sees the same Gaussian per band.
struct MarkSampler {
    level: f64,
    rate_dt: f64,
    cuts: Vec<f64>,
}

impl MarkSampler {
    fn new(spec: &ProblemSpec, config: &SimConfig, eps: &[f64]) -> Result<Self> {
        let level = spec.jump.mark_level(config.delta_sim);
        let rate = spec.levy.mass_above(level);
        let rate_dt = rate * config.dt;
        if !(rate_dt <= 0.1) {
            return Err(Error::StepTooLarge(rate_dt));
        }
        let surrogate = config.compensation == Compensation::DiffusionSurrogate;
        let mut cuts = vec![0.0];
        if surrogate && level > 0.0 {
            let mut inner: Vec<f64> = eps
                .iter()
                .map(|&e| spec.jump.mark_level(e))
                .filter(|&m| m > 0.0 && m < level)
                .collect();
            inner.sort_by(f64::total_cmp);
            inner.dedup();
            cuts.extend(inner);
            cuts.push(level);
        }
        Ok(MarkSampler {
            level,
            rate_dt,
            cuts,
        })
    }

    fn bands(&self) -> usize {
        self.cuts.len() - 1
    }

    fn draw<R: Rng>(&self, rng: &mut R, spec: &ProblemSpec, gauss: &mut [f64], marks: &mut Vec<f64>) -> f64 {
        let dw: f64 = rng.sample(StandardNormal);
        for g in gauss.iter_mut() {
            *g = rng.sample(StandardNormal);
        }
        marks.clear();
        if self.rate_dt > 0.0 {
            let u: f64 = rng.gen();
            let mut p = (-self.rate_dt).exp();
            let mut cdf = p;
            let mut k = 0usize;
            while u > cdf && k < 64 {
                k += 1;
                p *= self.rate_dt / k as f64;
                cdf += p;
            }
            for _ in 0..k {
                let um: f64 = rng.gen();
                let us: f64 = rng.gen();
                marks.push(spec.levy.sample_mark_above(self.level, um, us));
            }
        }
        dw
    }

    /// Component applying the jumps with `j0 > eps` (eps = 0: all of them).
    fn particle(&self, spec: &ProblemSpec, eps: f64) -> Particle {
        let keep = spec.jump.mark_level(eps);
        let nu = &spec.levy;
        let bands = self
            .cuts
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[0] >= keep)
            .map(|(k, w)| (k, BandMoments::new(nu, w[0], w[1])))
            .collect();
        Particle {
            keep_above: keep,
            bands,
            compensator: BandMoments::new(nu, keep.max(self.level), f64::INFINITY),
        }
    }
}

fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// Simulated ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathEnsemble {
    pub config: SimConfig,
    pub x0: f64,
    pub terminal: Vec<f64>,
    /// Discounted running plus impulse cost per path.
    pub cost: Vec<f64>,
    /// `(τ_i, ξ_i)` per path.
    pub impulses: Vec<Vec<(f64, f64)>>,
    /// States at `record_stride`, if requested.
    pub paths: Option<Vec<Vec<f64>>>,
    /// Stream index of each path.
    pub streams: Vec<u64>,
}

impl PathEnsemble {
    pub fn times(&self) -> Vec<f64> {
        let stride = self.config.record_stride.unwrap_or(self.config.steps());
        (0..=self.config.steps())
            .step_by(stride.max(1))
            .map(|n| n as f64 * self.config.dt)
            .collect()
    }
}

struct PathResult {
    terminal: f64,
    cost: f64,
    impulses: Vec<(f64, f64)>,
    states: Option<Vec<f64>>,
}

fn simulate_one(
    spec: &ProblemSpec,
    config: &SimConfig,
    sampler: &MarkSampler,
    particle: &Particle,
    policy: Option<&ImpulsePolicy>,
    x0: f64,
    path: usize,
) -> Result<PathResult> {
    let mut rng = path_rng(config.seed, path);
    let stepper = Stepper {
        spec,
        dt: config.dt,
        sqrt_dt: config.dt.sqrt(),
        a: amplitude(&spec.jump),
    };
    let r = spec.discount;
    let weight = if r > 0.0 { (1.0 - (-r * config.dt).exp()) / r } else { config.dt };
    let steps = config.steps();
    let mut marks = Vec::new();
    let mut gauss = vec![0.0; sampler.bands()];
    let mut disc = 1.0;
    let decay = (-r * config.dt).exp();
    let mut x = x0;
    let mut cost = 0.0;
    let mut impulses = Vec::new();
    let mut states = config.record_stride.map(|_| vec![x0]);
    for n in 0..steps {
        let t = n as f64 * config.dt;
        if let Some(p) = policy {
            if let Some(xi) = p.impulse(x) {
                if xi != 0.0 {
                    cost += disc * spec.transaction_cost(xi);
                    x += xi;
                    impulses.push((t, xi));
                    if impulses.len() > config.max_impulses {
                        return Err(Error::ZenoPolicy {
                            path,
                            limit: config.max_impulses,
                        });
                    }
                }
            }
        }
        cost += disc * spec.running_cost(x) * weight;
        disc *= decay;
        let dw = sampler.draw(&mut rng, spec, &mut gauss, &mut marks);
        let noise = StepNoise {
            dw,
            gauss: &gauss,
            marks: &marks,
        };
        x = stepper.step(x, particle, &noise);
        if !x.is_finite() {
            return Err(Error::NonFinite(format!("state on path {path} at step {n}")));
        }
        if let (Some(s), Some(k)) = (states.as_mut(), config.record_stride) {
            if (n + 1) % k.max(1) == 0 {
                s.push(x);
            }
        }
    }
    Ok(PathResult {
        terminal: x,
        cost,
        impulses,
        states,
    })
}

/// Simulates `config.paths` paths from `x0`, optionally under an impulse
/// policy applied at step boundaries (at most one impulse per step).
pub fn simulate_paths(spec: &ProblemSpec, config: &SimConfig, policy: Option<&ImpulsePolicy>, x0: f64) -> Result<PathEnsemble> {
    config.validate()?;
    spec.validate()?;
    let sampler = MarkSampler::new(spec, config, &[])?;
    let particle = sampler.particle(spec, 0.0);
    let results: Vec<Result<PathResult>> = (0..config.paths)
        .into_par_iter()
        .map(|p| simulate_one(spec, config, &sampler, &particle, policy, x0, p))
        .collect();
    let mut ens = PathEnsemble {
        config: config.clone(),
        x0,
        terminal: Vec::with_capacity(config.paths),
        cost: Vec::with_capacity(config.paths),
        impulses: Vec::with_capacity(config.paths),
        paths: config.record_stride.map(|_| Vec::with_capacity(config.paths)),
        streams: (0..config.paths as u64).collect(),
    };
    for r in results {
        let r = r?;
        ens.terminal.push(r.terminal);
        ens.cost.push(r.cost);
        ens.impulses.push(r.impulses);
        if let (Some(all), Some(s)) = (ens.paths.as_mut(), r.states) {
            all.push(s);
        }
    }
    Ok(ens)
}

/// Mean and 95% CLT half-width.
pub fn mean_half_width(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyValue {
    pub mean: f64,
    /// CLT half-width plus the horizon residual.
    pub half_width: f64,
    pub mc_half_width: f64,
    /// `e^{−rT}·sup f/r` over the policy grid.
    pub horizon_residual: f64,
    pub mean_impulses: f64,
    pub paths: usize,
}

/// Monte Carlo estimate of `J_x[policy]` truncated at the horizon.
pub fn evaluate_policy(spec: &ProblemSpec, config: &SimConfig, policy: &ImpulsePolicy, x0: f64) -> Result<PolicyValue> {
    if !(spec.discount > 0.0) {
        return Err(Error::invalid("policy evaluation needs r > 0"));
    }
    let ens = simulate_paths(spec, config, Some(policy), x0)?;
    let (mean, hw) = mean_half_width(&ens.cost);
    let sup_f = policy
        .grid
        .nodes()
        .into_iter()
        .map(|x| spec.running_cost(x))
        .fold(0.0, f64::max);
    let residual = (-spec.discount * config.horizon).exp() * sup_f / spec.discount;
    Ok(PolicyValue {
        mean,
        half_width: hw + residual,
        mc_half_width: hw,
        horizon_residual: residual,
        mean_impulses: ens.impulses.iter().map(|v| v.len()).sum::<usize>() as f64 / ens.impulses.len() as f64,
        paths: config.paths,
    })
}

/// Synchronous-coupling statistics of `X` (amplitude j) against `X^ε`
/// (amplitude `j^ε`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingStats {
    pub eps: f64,
    pub alpha: f64,
    /// `Λ_{0,2}(j − j^ε)`
    pub lambda: f64,
    /// `E sup_{s<=T} |X_s − X^ε_s|² e^{−αs}`
    pub sup_mean: f64,
    pub sup_half_width: f64,
    /// `E |X_T − X^ε_T|²`
    pub terminal_mean: f64,
    pub terminal_half_width: f64,
    /// `sup_mean / Λ²` (NaN when Λ = 0)
    pub ratio: f64,
    pub paths: usize,
}

/// Coupled run of `X` against `X^ε` for every ε in `eps` and every α in
/// `alphas`; all components share the Brownian increments and the marks.
pub fn coupled_sweep(
    spec: &ProblemSpec,
    config: &SimConfig,
    quad: &LevyQuadrature,
    eps: &[f64],
    alphas: &[f64],
    x0: f64,
) -> Result<Vec<CouplingStats>> {
    config.validate()?;
    spec.validate()?;
    if eps.iter().any(|e| !(*e >= 0.0)) {
        return Err(Error::invalid("truncation levels must be >= 0"));
    }
    let sampler = MarkSampler::new(spec, config, eps)?;
    let full = sampler.particle(spec, 0.0);
    let truncated: Vec<Particle> = eps.iter().map(|&e| sampler.particle(spec, e)).collect();
    let steps = config.steps();
    let discounts: Vec<Vec<f64>> = alphas
        .iter()
        .map(|&a| (0..=steps).map(|n| (-a * n as f64 * config.dt).exp()).collect())
        .collect();
    let stepper = Stepper {
        spec,
        dt: config.dt,
        sqrt_dt: config.dt.sqrt(),
        a: amplitude(&spec.jump),
    };
    let ne = eps.len();
    let na = alphas.len();
    let per_path: Vec<Result<Vec<f64>>> = (0..config.paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(config.seed, p);
            let mut marks = Vec::new();
            let mut gauss = vec![0.0; sampler.bands()];
            let mut x = x0;
            let mut xe = vec![x0; ne];
            // sup per (ε, α), then terminal square per ε
            let mut out = vec![0.0; ne * na + ne];
            for n in 0..steps {
                let dw = sampler.draw(&mut rng, spec, &mut gauss, &mut marks);
                let noise = StepNoise {
                    dw,
                    gauss: &gauss,
                    marks: &marks,
                };
                x = stepper.step(x, &full, &noise);
                for (k, part) in truncated.iter().enumerate() {
                    xe[k] = stepper.step(xe[k], part, &noise);
                    let d = x - xe[k];
                    let d2 = d * d;
                    for (ia, disc) in discounts.iter().enumerate() {
                        let v = d2 * disc[n + 1];
                        let slot = &mut out[k * na + ia];
                        if v > *slot {
                            *slot = v;
                        }
                    }
                }
            }
            if !x.is_finite() || xe.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("coupled state on path {p}")));
            }
            for k in 0..ne {
                out[ne * na + k] = (x - xe[k]).powi(2);
            }
            Ok(out)
        })
        .collect();
    let mut rows = Vec::with_capacity(config.paths);
    for r in per_path {
        rows.push(r?);
    }
    let sample_x: Vec<f64> = (0..64).map(|k| -std::f64::consts::PI + k as f64 * std::f64::consts::PI / 32.0).collect();
    let mut stats = Vec::with_capacity(ne * na);
    for (k, &e) in eps.iter().enumerate() {
        let lambda = if e == 0.0 {
            0.0
        } else {
            lambda_norms(&spec.jump, e, quad, &sample_x)?.lambda
        };
        let term: Vec<f64> = rows.iter().map(|r| r[ne * na + k]).collect();
        let (tm, thw) = mean_half_width(&term);
        for (ia, &alpha) in alphas.iter().enumerate() {
            let col: Vec<f64> = rows.iter().map(|r| r[k * na + ia]).collect();
            let (m, hw) = mean_half_width(&col);
            stats.push(CouplingStats {
                eps: e,
                alpha,
                lambda,
                sup_mean: m,
                sup_half_width: if config.paths > 1 { hw } else { 0.0 },
                terminal_mean: tm,
                terminal_half_width: if config.paths > 1 { thw } else { 0.0 },
                ratio: if lambda > 0.0 { m / (lambda * lambda) } else { f64::NAN },
                paths: config.paths,
            });
        }
    }
    Ok(stats)
}

/// Single-ε, single-α coupling estimate.
pub fn coupled_sup_difference(
    spec: &ProblemSpec,
    config: &SimConfig,
    quad: &LevyQuadrature,
    eps: f64,
    alpha: f64,
    x0: f64,
) -> Result<CouplingStats> {
    Ok(coupled_sweep(spec, config, quad, &[eps], &[alpha], x0)?.remove(0))
}

/// Conservative envelope `M = max (sup_mean + half_width)/Λ²` over entries
/// with Λ > 0.
pub fn fit_m(sweep: &[CouplingStats]) -> Result<f64> {
    sweep
        .iter()
        .filter(|s| s.lambda > 0.0)
        .map(|s| (s.sup_mean + s.sup_half_width) / (s.lambda * s.lambda))
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
        .ok_or(Error::EmptyPairSet)
}

/// `ψ_θ(x, x', z) = θ²(1−θ)²|x − x'|⁴ + |θx + (1−θ)x' − z|²`
pub fn psi_theta(x: f64, xp: f64, z: f64, theta: f64) -> f64 {
    let q = theta * theta * (1.0 - theta) * (1.0 - theta);
    let e = theta * x + (1.0 - theta) * xp - z;
    q * (x - xp).powi(4) + e * e
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsiStats {
    pub theta: f64,
    pub alpha: f64,
    pub kappa: f64,
    /// `ψ_θ` at the start
    pub initial: f64,
    /// `E sup_s ψ_θ(X, X', Z) e^{−αs}`
    pub sup_mean: f64,
    pub sup_half_width: f64,
    /// `E ∫_0^T ψ_θ e^{−αs} ds`
    pub integral_mean: f64,
    pub integral_half_width: f64,
    /// `sup_mean / (initial·(1 + 1/(α − κ)))`; NaN when `initial = 0`.
    pub ratio: f64,
}

/// Three synchronously coupled copies from `x`, `x'` and `θx + (1−θ)x'`.
pub fn psi_theta_stats(
    spec: &ProblemSpec,
    config: &SimConfig,
    x: f64,
    xp: f64,
    theta: f64,
    alpha: f64,
    kappa: f64,
) -> Result<PsiStats> {
    if alpha <= kappa {
        return Err(Error::RateBelowKappa { alpha, kappa });
    }
    config.validate()?;
    spec.validate()?;
    let sampler = MarkSampler::new(spec, config, &[])?;
    let part = sampler.particle(spec, 0.0);
    let stepper = Stepper {
        spec,
        dt: config.dt,
        sqrt_dt: config.dt.sqrt(),
        a: amplitude(&spec.jump),
    };
    let z0 = theta * x + (1.0 - theta) * xp;
    let initial = psi_theta(x, xp, z0, theta);
    let steps = config.steps();
    let rows: Vec<(f64, f64)> = (0..config.paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(config.seed, p);
            let mut marks = Vec::new();
            let mut gauss = vec![0.0; sampler.bands()];
            let (mut a, mut b, mut c) = (x, xp, z0);
            let mut sup = initial;
            let mut integral = 0.0;
            for n in 0..steps {
                let disc = (-alpha * n as f64 * config.dt).exp();
                integral += psi_theta(a, b, c, theta) * disc * config.dt;
                let dw = sampler.draw(&mut rng, spec, &mut gauss, &mut marks);
                let noise = StepNoise {
                    dw,
                    gauss: &gauss,
                    marks: &marks,
                };
                a = stepper.step(a, &part, &noise);
                b = stepper.step(b, &part, &noise);
                c = stepper.step(c, &part, &noise);
                let v = psi_theta(a, b, c, theta) * (-alpha * (n + 1) as f64 * config.dt).exp();
                sup = sup.max(v);
            }
            (sup, integral)
        })
        .collect();
    let sups: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let ints: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let (sm, shw) = mean_half_width(&sups);
    let (im, ihw) = mean_half_width(&ints);
    Ok(PsiStats {
        theta,
        alpha,
        kappa,
        initial,
        sup_mean: sm,
        sup_half_width: shw,
        integral_mean: im,
        integral_half_width: ihw,
        ratio: if initial > 0.0 {
            sm / (initial * (1.0 + 1.0 / (alpha - kappa)))
        } else {
            f64::NAN
        },
    })
}
