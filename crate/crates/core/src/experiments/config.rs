//! Scenario configuration files.
//!
//! One TOML file per run. Top-level keys pick the scenario, seed and output
//! location; every other section configures one building block and may be
//! omitted to take its defaults. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::control::{ControlSet, LqProblem, MfgConfig};
use crate::error::{Error, Result};
use crate::federated::FedConfig;
use crate::sde::NoiseMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    FedavgBaseline,
    FedsgdEquivalence,
    CoupledSde,
    PicardEquilibrium,
    LqHjbFp,
    CoupledMfg,
    NashCheck,
    GcDiagnostic,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 8] = [
        ScenarioKind::FedavgBaseline,
        ScenarioKind::FedsgdEquivalence,
        ScenarioKind::CoupledSde,
        ScenarioKind::PicardEquilibrium,
        ScenarioKind::LqHjbFp,
        ScenarioKind::CoupledMfg,
        ScenarioKind::NashCheck,
        ScenarioKind::GcDiagnostic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::FedavgBaseline => "fedavg-baseline",
            ScenarioKind::FedsgdEquivalence => "fedsgd-equivalence",
            ScenarioKind::CoupledSde => "coupled-sde",
            ScenarioKind::PicardEquilibrium => "picard-equilibrium",
            ScenarioKind::LqHjbFp => "lq-hjb-fp",
            ScenarioKind::CoupledMfg => "coupled-mfg",
            ScenarioKind::NashCheck => "nash-check",
            ScenarioKind::GcDiagnostic => "gc-diagnostic",
        }
    }
}

impl std::fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskFamily {
    #[default]
    Quadratic,
    Logistic,
}

/// Randomly generated client population.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientsConfig {
    pub family: TaskFamily,
    pub count: usize,
    /// Weight dimension for quadratic clients, feature dimension for logistic.
    pub dim: usize,
    /// Mean of the client optima (quadratic) or of the class-mean shift
    /// (logistic), per coordinate.
    pub center_mean: f64,
    /// Per-coordinate standard deviation of the client optima or shifts.
    pub center_spread: f64,
    /// Diagonal curvature entries are drawn uniformly from this range.
    pub curvature_min: f64,
    pub curvature_max: f64,
    /// Sample counts are drawn uniformly from `sample_min..=sample_max`.
    pub sample_min: usize,
    pub sample_max: usize,
    /// Logistic only.
    pub classes: usize,
    /// Logistic only: radius of the circle the class means sit on.
    pub separation: f64,
}

impl Default for ClientsConfig {
    fn default() -> Self {
        ClientsConfig {
            family: TaskFamily::Quadratic,
            count: 10,
            dim: 3,
            center_mean: 0.0,
            center_spread: 1.0,
            curvature_min: 0.5,
            curvature_max: 2.0,
            sample_min: 50,
            sample_max: 50,
            classes: 3,
            separation: 2.0,
        }
    }
}

/// Coupled federated SDE.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdeConfig {
    pub t_end: f64,
    pub steps: usize,
    pub sigma: f64,
    /// Constant per-client learning-rate modulation `Λ`.
    pub rate: f64,
    pub max_rate: f64,
    pub noise_mode: NoiseMode,
    /// Standard deviation of the initial client weights around zero.
    pub init_spread: f64,
    /// Tolerance on the final server risk above the mixture optimum's risk.
    pub risk_tolerance: f64,
}

impl Default for SdeConfig {
    fn default() -> Self {
        SdeConfig {
            t_end: 10.0,
            steps: 1000,
            sigma: 0.05,
            rate: 0.1,
            max_rate: 1.0,
            noise_mode: NoiseMode::IndependentPerClient,
            init_spread: 0.0,
            risk_tolerance: 5e-2,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PicardDriftKind {
    #[default]
    MeanReversion,
    Federated,
}

/// McKean–Vlasov fixed point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PicardSection {
    pub drift: PicardDriftKind,
    /// Mean-reversion strength, or `Λ` for the federated drift.
    pub rate: f64,
    pub sigma: f64,
    pub t_end: f64,
    pub steps: usize,
    /// Federated drift only: the optimum of the shared isotropic task. Its
    /// length sets the dimension.
    pub center: Vec<f64>,
    pub curvature: f64,
    /// Mean-reversion dimension.
    pub dim: usize,
    pub initial_mean: f64,
    pub initial_std: f64,
    pub paths: usize,
    pub tol: f64,
    pub max_iters: usize,
    pub damping: f64,
    pub projections: usize,
}

impl Default for PicardSection {
    fn default() -> Self {
        PicardSection {
            drift: PicardDriftKind::MeanReversion,
            rate: 1.0,
            sigma: 0.5,
            t_end: 5.0,
            steps: 250,
            center: vec![1.0],
            curvature: 1.0,
            dim: 1,
            initial_mean: 0.0,
            initial_std: 1.0,
            paths: 1000,
            tol: 1e-3,
            max_iters: 30,
            damping: 1.0,
            projections: 8,
        }
    }
}

/// Spatial mesh for the PDE scenarios. The time step is chosen from the
/// stability bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub dx: f64,
    /// Accuracy checks use nodes with `|x| ≤ interior`.
    pub interior: f64,
    /// Gaussian initial density.
    pub initial_mean: f64,
    pub initial_variance: f64,
    /// Number of time slices written to the matrix CSVs (at least two; the
    /// first and last slice are always included).
    pub output_slices: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            x_min: -3.0,
            x_max: 3.0,
            dx: 0.02,
            interior: 2.0,
            initial_mean: 0.0,
            initial_variance: 0.25,
            output_slices: 101,
        }
    }
}

impl GridConfig {
    pub fn node_count(&self) -> usize {
        ((self.x_max - self.x_min) / self.dx).round() as usize + 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfgSection {
    /// Weight `c` of the congestion term `−c (x − m_t)²`.
    pub coupling: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub damping: f64,
}

impl Default for MfgSection {
    fn default() -> Self {
        let solver = MfgConfig::default();
        MfgSection {
            coupling: 0.1,
            tol: solver.tol,
            max_iters: solver.max_iters,
            damping: solver.damping,
        }
    }
}

impl MfgSection {
    pub fn solver(&self) -> MfgConfig {
        MfgConfig {
            tol: self.tol,
            max_iters: self.max_iters,
            damping: self.damping,
        }
    }
}

/// Deviation and verification checks around the LQ equilibrium.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NashConfig {
    pub x0: f64,
    pub paths: usize,
    pub steps: usize,
    /// Number of random bounded deviations.
    pub perturbations: usize,
    pub magnitude: f64,
    /// Constant offset deviation that is always evaluated first.
    pub offset: f64,
    /// Grid-error allowance of the verification check.
    pub allowance: f64,
}

impl Default for NashConfig {
    fn default() -> Self {
        NashConfig {
            x0: 0.0,
            paths: 10_000,
            steps: 500,
            perturbations: 20,
            magnitude: 1.0,
            offset: 0.5,
            allowance: 2e-2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GcConfig {
    pub p_values: Vec<usize>,
    pub replicates: usize,
    /// Gaussian sampling law.
    pub mean: f64,
    pub std: f64,
    /// Size of the large-sample stand-in for the true law.
    pub reference_size: usize,
}

impl Default for GcConfig {
    fn default() -> Self {
        GcConfig {
            p_values: vec![10, 100, 1000],
            replicates: 20,
            mean: 0.0,
            std: 1.0,
            reference_size: 100_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Worker threads; 0 uses every available core.
    #[serde(default)]
    pub threads: usize,
    /// Exit with failure when an iterative solver does not converge.
    #[serde(default)]
    pub require_convergence: bool,
    #[serde(default)]
    pub clients: ClientsConfig,
    #[serde(default)]
    pub fed: FedConfig,
    #[serde(default)]
    pub sde: SdeConfig,
    #[serde(default)]
    pub picard: PicardSection,
    #[serde(default)]
    pub lq: LqProblem,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub controls: ControlSet,
    #[serde(default)]
    pub mfg: MfgSection,
    #[serde(default)]
    pub nash: NashConfig,
    #[serde(default)]
    pub gc: GcConfig,
}

fn bad(key: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        reason: reason.into(),
    }
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(key, "must be positive and finite"))
    }
}

fn at_least(key: &str, v: usize, min: usize) -> Result<()> {
    if v >= min {
        Ok(())
    } else {
        Err(bad(key, format!("must be at least {min}")))
    }
}

fn non_negative(key: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(bad(key, "must be non-negative and finite"))
    }
}

impl ScenarioConfig {
    pub fn new(scenario: ScenarioKind) -> Self {
        ScenarioConfig {
            scenario,
            seed: 0,
            output_dir: None,
            threads: 0,
            require_convergence: false,
            clients: ClientsConfig::default(),
            fed: FedConfig::default(),
            sde: SdeConfig::default(),
            picard: PicardSection::default(),
            lq: LqProblem::default(),
            grid: GridConfig::default(),
            controls: ControlSet::default(),
            mfg: MfgSection::default(),
            nash: NashConfig::default(),
            gc: GcConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| {
            let key = e.message().split('`').nth(1).unwrap_or("config").to_string();
            bad(&key, e.to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| bad("config", e.to_string()))
    }

    /// Checks every section, including ones the chosen scenario ignores, so
    /// that a file is either valid as a whole or rejected.
    pub fn validate(&self) -> Result<()> {
        self.fed.validate().map_err(|e| match e {
            Error::Config { key, reason } => bad(&format!("fed.{key}"), reason),
            other => other,
        })?;

        let c = &self.clients;
        at_least("clients.count", c.count, 1)?;
        at_least("clients.dim", c.dim, 1)?;
        non_negative("clients.center_spread", c.center_spread)?;
        positive("clients.curvature_min", c.curvature_min)?;
        if !(c.curvature_max >= c.curvature_min) {
            return Err(bad("clients.curvature_max", "must be at least curvature_min"));
        }
        at_least("clients.sample_min", c.sample_min, 1)?;
        at_least("clients.sample_max", c.sample_max, c.sample_min)?;
        at_least("clients.classes", c.classes, 2)?;
        positive("clients.separation", c.separation)?;

        let s = &self.sde;
        positive("sde.t_end", s.t_end)?;
        at_least("sde.steps", s.steps, 1)?;
        non_negative("sde.sigma", s.sigma)?;
        non_negative("sde.rate", s.rate)?;
        if !(s.max_rate >= s.rate) {
            return Err(bad("sde.max_rate", "must be at least rate"));
        }
        non_negative("sde.init_spread", s.init_spread)?;
        positive("sde.risk_tolerance", s.risk_tolerance)?;

        let p = &self.picard;
        non_negative("picard.rate", p.rate)?;
        non_negative("picard.sigma", p.sigma)?;
        positive("picard.t_end", p.t_end)?;
        at_least("picard.steps", p.steps, 1)?;
        if p.drift == PicardDriftKind::Federated && p.center.is_empty() {
            return Err(bad("picard.center", "must not be empty"));
        }
        positive("picard.curvature", p.curvature)?;
        at_least("picard.dim", p.dim, 1)?;
        non_negative("picard.initial_std", p.initial_std)?;
        at_least("picard.paths", p.paths, 2)?;
        positive("picard.tol", p.tol)?;
        at_least("picard.max_iters", p.max_iters, 1)?;
        if !(p.damping > 0.0 && p.damping <= 1.0) {
            return Err(bad("picard.damping", "must lie in (0, 1]"));
        }
        at_least("picard.projections", p.projections, 1)?;

        self.lq.validate().map_err(|e| match e {
            Error::InvalidParameter { name, reason } => bad(&format!("lq.{name}"), reason),
            other => other,
        })?;

        let g = &self.grid;
        if !(g.x_max > g.x_min) {
            return Err(bad("grid.x_max", "must exceed x_min"));
        }
        positive("grid.dx", g.dx)?;
        if g.node_count() < 3 {
            return Err(bad("grid.dx", "leaves fewer than three nodes"));
        }
        let span = (g.x_max - g.x_min) / g.dx;
        if (span - span.round()).abs() > 1e-9 * span.max(1.0) {
            return Err(bad("grid.dx", "must divide the domain length"));
        }
        non_negative("grid.interior", g.interior)?;
        positive("grid.initial_variance", g.initial_variance)?;
        at_least("grid.output_slices", g.output_slices, 2)?;

        ControlSet::new(self.controls.lo, self.controls.hi, self.controls.count)
            .map_err(|_| bad("controls", "need lo <= hi and count >= 1"))?;

        let m = &self.mfg;
        non_negative("mfg.coupling", m.coupling)?;
        positive("mfg.tol", m.tol)?;
        at_least("mfg.max_iters", m.max_iters, 1)?;
        if !(m.damping > 0.0 && m.damping <= 1.0) {
            return Err(bad("mfg.damping", "must lie in (0, 1]"));
        }

        let n = &self.nash;
        at_least("nash.paths", n.paths, 2)?;
        at_least("nash.steps", n.steps, 1)?;
        non_negative("nash.magnitude", n.magnitude)?;
        non_negative("nash.allowance", n.allowance)?;

        let gc = &self.gc;
        if gc.p_values.is_empty() || gc.p_values[0] == 0 || gc.p_values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(bad("gc.p_values", "must be positive and strictly increasing"));
        }
        at_least("gc.replicates", gc.replicates, 5)?;
        positive("gc.std", gc.std)?;
        at_least("gc.reference_size", gc.reference_size, 1)?;
        Ok(())
    }
}
