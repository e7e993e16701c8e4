//! TOML run configuration. Coefficients are given by name and parameters and
//! resolved through a registry, e.g.
//!
//! ```toml
//! [model]
//! discount = 1.0
//! drift = { name = "linear", theta = 0.5 }
//! volatility = { name = "constant", sigma = 0.4 }
//! jump = { name = "identity" }
//!
//! [levy]
//! name = "power_law"
//! intensity = 1.0
//! order = 1.5
//! z_max = 1.0
//!
//! [costs]
//! running = { name = "smooth_abs", delta = 0.1 }
//! fixed = 1.0
//! proportional = 0.1
//! ```
//!
//! Every section is optional and defaults to the reference instance.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::levy::{LevyMeasure1D, LevyQuadrature, QuadratureBuilder};
use crate::model::{AssumptionProfile, Drift, Jump, ProblemSpec, RunningCost, SamplingPlan, TransactionCost, Volatility};
use crate::operators::Grid1D;
use crate::qvi::SolveConfig;
use crate::simulate::SimConfig;
use crate::verify::{TestFunction, VerifySettings};

/// A registry entry: name plus scalar parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    #[serde(flatten)]
    pub params: BTreeMap<String, f64>,
}

impl Coefficient {
    pub fn new(name: &str, params: &[(&str, f64)]) -> Self {
        Coefficient {
            name: name.to_string(),
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    fn get(&self, kind: &str, key: &str) -> Result<f64> {
        self.params
            .get(key)
            .copied()
            .ok_or_else(|| Error::Config(format!("{kind} '{}' needs parameter '{key}'", self.name)))
    }

    fn get_or(&self, key: &str, default: f64) -> f64 {
        self.params.get(key).copied().unwrap_or(default)
    }

    fn only(&self, kind: &str, allowed: &[&str]) -> Result<()> {
        match self.params.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(Error::Config(format!(
                "{kind} '{}' has unknown parameter '{k}' (allowed: {})",
                self.name,
                allowed.join(", ")
            ))),
            None => Ok(()),
        }
    }
}

/// Registered coefficient names per kind.
pub fn registry() -> BTreeMap<&'static str, &'static [&'static str]> {
    BTreeMap::from([
        ("drift", &["zero", "constant", "linear", "nonlinear"][..]),
        ("volatility", &["constant", "modulated"][..]),
        ("jump", &["identity", "modulated"][..]),
        ("running_cost", &["smooth_abs", "quadratic", "constant"][..]),
        ("levy", &["power_law", "compound_poisson", "zero"][..]),
    ])
}

fn unknown(kind: &str, name: &str) -> Error {
    Error::Config(format!(
        "unknown {kind} '{name}' (known: {})",
        registry().get(kind).map(|v| v.join(", ")).unwrap_or_default()
    ))
}

pub fn resolve_drift(c: &Coefficient) -> Result<Drift> {
    let k = "drift";
    Ok(match c.name.as_str() {
        "zero" => {
            c.only(k, &[])?;
            Drift::Zero
        }
        "constant" => {
            c.only(k, &["value"])?;
            Drift::Constant { value: c.get(k, "value")? }
        }
        "linear" => {
            c.only(k, &["theta", "mean"])?;
            Drift::Linear {
                theta: c.get(k, "theta")?,
                mean: c.get_or("mean", 0.0),
            }
        }
        "nonlinear" => {
            c.only(k, &["theta", "amplitude"])?;
            Drift::Nonlinear {
                theta: c.get(k, "theta")?,
                amplitude: c.get(k, "amplitude")?,
            }
        }
        other => return Err(unknown(k, other)),
    })
}

pub fn resolve_volatility(c: &Coefficient) -> Result<Volatility> {
    let k = "volatility";
    Ok(match c.name.as_str() {
        "constant" => {
            c.only(k, &["sigma"])?;
            Volatility::Constant { sigma: c.get(k, "sigma")? }
        }
        "modulated" => {
            c.only(k, &["sigma", "amplitude"])?;
            Volatility::Modulated {
                sigma: c.get(k, "sigma")?,
                amplitude: c.get(k, "amplitude")?,
            }
        }
        other => return Err(unknown(k, other)),
    })
}

pub fn resolve_jump(c: &Coefficient) -> Result<Jump> {
    let k = "jump";
    Ok(match c.name.as_str() {
        "identity" => {
            c.only(k, &[])?;
            Jump::Identity
        }
        "modulated" => {
            c.only(k, &["amplitude"])?;
            Jump::Modulated {
                amplitude: c.get(k, "amplitude")?,
            }
        }
        other => return Err(unknown(k, other)),
    })
}

pub fn resolve_running_cost(c: &Coefficient) -> Result<RunningCost> {
    let k = "running_cost";
    Ok(match c.name.as_str() {
        "smooth_abs" => {
            c.only(k, &["delta"])?;
            RunningCost::SmoothAbs { delta: c.get(k, "delta")? }
        }
        "quadratic" => {
            c.only(k, &["scale"])?;
            RunningCost::Quadratic { scale: c.get(k, "scale")? }
        }
        "constant" => {
            c.only(k, &["value"])?;
            RunningCost::Constant { value: c.get(k, "value")? }
        }
        other => return Err(unknown(k, other)),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub discount: f64,
    pub drift: Coefficient,
    pub volatility: Coefficient,
    pub jump: Coefficient,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            discount: 1.0,
            drift: Coefficient::new("linear", &[("theta", 0.5)]),
            volatility: Coefficient::new("constant", &[("sigma", 0.4)]),
            jump: Coefficient::new("identity", &[]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LevySection {
    pub name: String,
    pub intensity: Option<f64>,
    pub order: Option<f64>,
    pub z_max: Option<f64>,
    /// `[z, mass]` pairs for `compound_poisson`.
    pub atoms: Option<Vec<[f64; 2]>>,
    /// Quadrature nodes.
    pub nodes: usize,
    /// Truncation level η of the quadrature.
    pub eta: f64,
    /// Exponent γ of the module of integrability.
    pub exponent: f64,
}

impl Default for LevySection {
    fn default() -> Self {
        LevySection {
            name: "power_law".to_string(),
            intensity: Some(1.0),
            order: Some(1.5),
            z_max: Some(1.0),
            atoms: None,
            nodes: 512,
            eta: 1.0,
            exponent: 2.0,
        }
    }
}

impl LevySection {
    pub fn measure(&self) -> Result<LevyMeasure1D> {
        let need = |v: Option<f64>, key: &str| v.ok_or_else(|| Error::Config(format!("levy '{}' needs '{key}'", self.name)));
        match self.name.as_str() {
            "power_law" => LevyMeasure1D::power_law(need(self.intensity, "intensity")?, need(self.order, "order")?, need(self.z_max, "z_max")?),
            "compound_poisson" => {
                let atoms = self
                    .atoms
                    .as_ref()
                    .ok_or_else(|| Error::Config("levy 'compound_poisson' needs 'atoms'".into()))?;
                LevyMeasure1D::compound_poisson(atoms.iter().map(|a| (a[0], a[1])).collect())
            }
            "zero" => Ok(LevyMeasure1D::Zero),
            other => Err(unknown("levy", other)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostSection {
    pub running: Coefficient,
    pub fixed: f64,
    pub proportional: f64,
}

impl Default for CostSection {
    fn default() -> Self {
        CostSection {
            running: Coefficient::new("smooth_abs", &[("delta", 0.1)]),
            fixed: 1.0,
            proportional: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub lower: f64,
    pub upper: f64,
    pub n: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            lower: -10.0,
            upper: 10.0,
            n: 801,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    #[serde(flatten)]
    pub config: SimConfig,
    pub x0: f64,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            config: SimConfig {
                paths: 1000,
                record_stride: Some(10),
                ..SimConfig::default()
            },
            x0: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CouplingSection {
    pub paths: usize,
    pub dt: f64,
    pub horizon: f64,
    pub delta_sim: f64,
    pub x0: f64,
    pub alphas: Vec<f64>,
}

impl Default for CouplingSection {
    fn default() -> Self {
        CouplingSection {
            paths: 20_000,
            dt: 1e-3,
            horizon: 2.0,
            delta_sim: 0.06,
            x0: 0.0,
            alphas: vec![0.25, 0.5, 1.0, 1.5],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloSection {
    pub paths: usize,
    pub dt: f64,
    pub horizon: f64,
    pub delta_sim: f64,
    pub points: Vec<f64>,
}

impl Default for MonteCarloSection {
    fn default() -> Self {
        MonteCarloSection {
            paths: 10_000,
            dt: 2e-3,
            horizon: 8.0,
            delta_sim: 0.09,
            points: vec![0.0, 2.0, 4.0, 4.5, 6.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LpSection {
    pub functions: Vec<TestFunction>,
    pub window: [f64; 2],
    pub etas: Vec<f64>,
    /// May contain `inf`.
    pub ps: Vec<f64>,
    pub gamma: f64,
    pub grid: GridSection,
}

impl Default for LpSection {
    fn default() -> Self {
        LpSection {
            functions: TestFunction::standard(),
            window: [-1.5, 1.5],
            etas: vec![0.05, 0.1, 0.25, 0.5, 1.0],
            ps: vec![1.0, 2.0, f64::INFINITY],
            gamma: 2.0,
            grid: GridSection {
                lower: -4.0,
                upper: 4.0,
                n: 4001,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HolderSection {
    pub functions: Vec<TestFunction>,
    pub alpha: f64,
    /// Order γ in the exponent `(2α − γ)/2`; the power-law order when absent.
    pub gamma: Option<f64>,
    pub center: f64,
    pub half_widths: Vec<f64>,
    pub grid: GridSection,
}

impl Default for HolderSection {
    fn default() -> Self {
        HolderSection {
            functions: vec![TestFunction::SignedSquare, TestFunction::Cosine { freq: 1.0 }],
            alpha: 1.0,
            gamma: None,
            center: 0.5,
            half_widths: vec![0.2, 0.3, 0.4],
            grid: GridSection {
                lower: -3.0,
                upper: 3.0,
                n: 6001,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SemiconcaveSection {
    pub radius: f64,
    pub offsets: Vec<usize>,
}

impl Default for SemiconcaveSection {
    fn default() -> Self {
        SemiconcaveSection {
            radius: 9.0,
            offsets: vec![1, 2, 4],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub settings: VerifySettings,
    pub eps: Vec<f64>,
    pub coupling: CouplingSection,
    pub montecarlo: MonteCarloSection,
    pub lp: LpSection,
    pub holder: HolderSection,
    pub semiconcave: SemiconcaveSection,
    /// Points of the β/κ sampling cloud.
    pub sample_points: usize,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            settings: VerifySettings::default(),
            eps: vec![0.2, 0.1, 0.05],
            coupling: CouplingSection::default(),
            montecarlo: MonteCarloSection::default(),
            lp: LpSection::default(),
            holder: HolderSection::default(),
            semiconcave: SemiconcaveSection::default(),
            sample_points: 64,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub model: ModelSection,
    pub levy: LevySection,
    pub costs: CostSection,
    pub assumptions: AssumptionProfile,
    pub grid: GridSection,
    pub solve: SolveConfig,
    pub simulate: SimulateSection,
    pub verify: VerifySection,
}

impl Config {
    pub fn reference() -> Self {
        Config::default()
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Config::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Resolves every coefficient and checks the solver settings.
    pub fn validate(&self) -> Result<()> {
        self.problem_spec()?;
        self.grid()?;
        self.solve.validate()?;
        self.simulate.config.validate()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn problem_spec(&self) -> Result<ProblemSpec> {
        let spec = ProblemSpec {
            drift: resolve_drift(&self.model.drift)?,
            volatility: resolve_volatility(&self.model.volatility)?,
            jump: resolve_jump(&self.model.jump)?,
            levy: self.levy.measure()?,
            running_cost: resolve_running_cost(&self.costs.running)?,
            transaction_cost: TransactionCost::Affine {
                fixed: self.costs.fixed,
                proportional: self.costs.proportional,
            },
            discount: self.model.discount,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn grid(&self) -> Result<Grid1D> {
        Grid1D::new(self.grid.lower, self.grid.upper, self.grid.n)
    }

    pub fn quadrature(&self) -> Result<LevyQuadrature> {
        QuadratureBuilder::new(&self.levy.measure()?)
            .nodes(self.levy.nodes)
            .eta(self.levy.eta)
            .exponent(self.levy.exponent)
            .build()
    }

    /// Quadrature with panel breaks at the marks of the truncation levels
    /// `levels`, so that the dropped sets `{j0 <= ε}` are integrated exactly.
    pub fn quadrature_for_levels(&self, levels: &[f64]) -> Result<LevyQuadrature> {
        let jump = resolve_jump(&self.model.jump)?;
        let marks: Vec<f64> = levels.iter().filter(|&&e| e > 0.0).map(|&e| jump.mark_level(e)).collect();
        QuadratureBuilder::new(&self.levy.measure()?)
            .nodes(self.levy.nodes)
            .eta(self.levy.eta)
            .exponent(self.levy.exponent)
            .breaks(&marks)
            .build()
    }

    /// β/κ sampling cloud over the grid box.
    pub fn sampling_plan(&self, seed: u64) -> SamplingPlan {
        SamplingPlan::new(self.grid.lower, self.grid.upper, self.verify.sample_points, seed)
    }

    pub fn coupling_sim(&self, seed: u64) -> SimConfig {
        let c = &self.verify.coupling;
        SimConfig {
            horizon: c.horizon,
            dt: c.dt,
            paths: c.paths,
            seed,
            delta_sim: c.delta_sim,
            ..self.simulate.config.clone()
        }
    }

    pub fn montecarlo_sim(&self, seed: u64) -> SimConfig {
        let m = &self.verify.montecarlo;
        SimConfig {
            horizon: m.horizon,
            dt: m.dt,
            paths: m.paths,
            seed,
            delta_sim: m.delta_sim,
            record_stride: None,
            ..self.simulate.config.clone()
        }
    }
}

impl GridSection {
    pub fn build(&self) -> Result<Grid1D> {
        Grid1D::new(self.lower, self.upper, self.n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_reference_instance() {
        let cfg = Config::from_toml_str("").unwrap();
        assert_eq!(cfg.problem_spec().unwrap(), ProblemSpec::reference());
        assert_eq!(cfg.grid().unwrap().n, 801);
        assert_eq!(cfg.quadrature().unwrap().len(), 498);
    }

    #[test]
    fn round_trip_through_toml() {
        let cfg = Config::reference();
        let text = cfg.to_toml_string().unwrap();
        let back = Config::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert!(back.verify.lp.ps[2].is_infinite());
    }

    #[test]
    fn registry_resolves_named_coefficients() {
        let cfg = Config::from_toml_str(
            r#"
            [model]
            discount = 2.0
            drift = { name = "nonlinear", theta = 1.0, amplitude = 0.2 }
            volatility = { name = "modulated", sigma = 0.3, amplitude = 0.5 }
            jump = { name = "modulated", amplitude = 0.25 }
            [levy]
            name = "compound_poisson"
            atoms = [[0.5, 1.0], [-0.5, 1.0]]
            [costs]
            running = { name = "quadratic", scale = 2.0 }
            fixed = 0.5
            "#,
        )
        .unwrap();
        let spec = cfg.problem_spec().unwrap();
        assert_eq!(spec.drift, Drift::Nonlinear { theta: 1.0, amplitude: 0.2 });
        assert_eq!(spec.jump, Jump::Modulated { amplitude: 0.25 });
        assert_eq!(spec.running_cost, RunningCost::Quadratic { scale: 2.0 });
        assert_eq!(spec.discount, 2.0);
        assert!(matches!(spec.levy, LevyMeasure1D::CompoundPoisson { .. }));
    }

    #[test]
    fn bad_entries_are_config_errors() {
        let unknown_name = Config::from_toml_str("[model]\ndrift = { name = \"cubic\" }\n");
        assert!(matches!(unknown_name, Err(Error::Config(m)) if m.contains("unknown drift 'cubic'")));
        let missing = Config::from_toml_str("[model]\nvolatility = { name = \"constant\" }\n");
        assert!(matches!(missing, Err(Error::Config(m)) if m.contains("needs parameter 'sigma'")));
        let extra = Config::from_toml_str("[model]\njump = { name = \"identity\", amplitude = 1.0 }\n");
        assert!(matches!(extra, Err(Error::Config(m)) if m.contains("unknown parameter 'amplitude'")));
        let section = Config::from_toml_str("[nonsense]\nx = 1\n");
        assert!(matches!(section, Err(Error::Config(_))));
    }

    #[test]
    fn infinite_small_jump_mass_is_rejected() {
        let r = Config::from_toml_str("[levy]\norder = 2.5\n");
        match r {
            Err(e) => assert!(e.to_string().contains("infinite quadratic small-jump mass")),
            Ok(_) => panic!("accepted γ = 2.5"),
        }
    }
}
