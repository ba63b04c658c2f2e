//! Run configuration, parsed from a single JSON file.
//!
//! Every section is optional and falls back to the documented defaults;
//! unknown keys anywhere are rejected. See `docs/config.schema.json`.

use std::path::{Path, PathBuf};

use qtmin_core::bloch::{bloch_to_cyl, density_to_bloch, mu_of_purity};
use qtmin_core::dynamics::System;
use qtmin_core::extremal::ShootConfig;
use qtmin_core::oracle::GridSpec;
use qtmin_core::{BlochState, DensityMatrix, Execution, PhasePoint, PhysParams};
use serde::{Deserialize, Serialize};

/// Seed for randomized suites when the config does not name one.
pub const DEFAULT_SEED: u64 = 20_240_601;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub params: PhysParams,
    pub problem: Problem,
    pub tolerances: Tolerances,
    pub output: OutputConfig,
    pub seed: u64,
    pub execution: Execution,
    pub protocol: ProtocolSection,
    pub simulate: SimulateSection,
    pub extremal: ShootConfig,
    pub oracle: OracleSection,
    pub figure1: Figure1Section,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            params: PhysParams {
                omega: 20.0,
                kappa: 1.0,
                gamma: 1.0,
            },
            problem: Problem::default(),
            tolerances: Tolerances::default(),
            output: OutputConfig::default(),
            seed: DEFAULT_SEED,
            execution: Execution::default(),
            protocol: ProtocolSection::default(),
            simulate: SimulateSection::default(),
            extremal: ShootConfig::default(),
            oracle: OracleSection::default(),
            figure1: Figure1Section::default(),
        }
    }
}

/// A state given as a Bloch vector, a density matrix, a purity or a Bloch
/// radius. The last two fix only the radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum StateSpec {
    Bloch([f64; 3]),
    Density(DensityMatrix),
    Purity(f64),
    Radius(f64),
}

impl StateSpec {
    /// The full Bloch vector, when the state is given in full.
    pub fn bloch(&self) -> Result<Option<BlochState>, String> {
        match *self {
            StateSpec::Bloch([x, y, z]) => BlochState::new(x, y, z)
                .map(Some)
                .map_err(|e| e.to_string()),
            StateSpec::Density(rho) => density_to_bloch(&rho).map(Some).map_err(|e| e.to_string()),
            StateSpec::Purity(_) | StateSpec::Radius(_) => Ok(None),
        }
    }

    pub fn radius(&self) -> Result<f64, String> {
        match *self {
            StateSpec::Purity(p) => mu_of_purity(p).map_err(|e| e.to_string()),
            StateSpec::Radius(mu) if (0.0..=1.0).contains(&mu) => Ok(mu),
            StateSpec::Radius(mu) => Err(format!("radius {mu} outside [0, 1]")),
            _ => Ok(self.bloch()?.expect("vector states").norm()),
        }
    }

    /// `(r_x, R)` of a full state.
    pub fn phase(&self) -> Result<Option<PhasePoint>, String> {
        Ok(self.bloch()?.map(|b| bloch_to_cyl(&b).phase()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Problem {
    pub start: Option<StateSpec>,
    pub target: Option<StateSpec>,
    /// Angles θ at the endpoints; default to those of the states.
    pub theta0: Option<f64>,
    pub theta1: Option<f64>,
}

impl Problem {
    pub fn start(&self) -> Result<StateSpec, String> {
        self.start
            .ok_or_else(|| "problem.start is required".to_string())
    }

    pub fn target(&self) -> Result<StateSpec, String> {
        self.target
            .ok_or_else(|| "problem.target is required".to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    /// Largest accepted protocol endpoint error.
    pub endpoint: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rtol: 1e-11,
            atol: 1e-13,
            endpoint: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Directory for result files; nothing is written when absent.
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolSection {
    /// When positive, validate this many random feasible pairs (drawn with
    /// `seed`) instead of the configured problem.
    pub random_pairs: usize,
    pub samples_per_phase: usize,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        Self {
            random_pairs: 0,
            samples_per_phase: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    /// JSON control schedule; relative paths resolve against the config file.
    pub schedule: Option<PathBuf>,
    pub system: System,
    /// Uniform output step; adaptive steps are reported when absent.
    pub dt: Option<f64>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            schedule: None,
            system: System::Bloch,
            dt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSection {
    /// Rungs of the refinement study, coarse to fine. A single rung skips
    /// the study.
    pub ladder: Vec<GridSpec>,
    /// Radius of the goal ball for point targets; one cell diameter when absent.
    pub goal_tol: Option<f64>,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self {
            ladder: vec![GridSpec::new(100), GridSpec::new(200), GridSpec::new(400)],
            goal_tol: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Figure1Section {
    pub n: usize,
}

impl Default for Figure1Section {
    fn default() -> Self {
        Self { n: 101 }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| format!("invalid config {}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(s) = &cfg.simulate.schedule {
            if s.is_relative() {
                cfg.simulate.schedule = Some(base.join(s));
            }
        }
        if let Some(d) = &cfg.output.dir {
            if d.is_relative() {
                cfg.output.dir = Some(base.join(d));
            }
        }
        cfg.params.validate().map_err(|e| e.to_string())?;
        cfg.extremal.execution = cfg.execution;
        Ok(cfg)
    }
}
