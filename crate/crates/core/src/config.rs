//! TOML experiment configuration.
//!
//! Every section and key is optional; missing keys take the defaults shown
//! in [`SAMPLE_CONFIG`]. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{load_ieee14, Ieee14Params, SetParams, UncertaintyKind};
use crate::detector::{MonteCarloConfig, SolverSettings};
use crate::error::{Error, Result};
use crate::model::{StateGenerator, SystemModel};

/// The annotated default configuration written by `sample-config`.
pub const SAMPLE_CONFIG: &str = include_str!("sample_config.toml");

/// Measurement model the experiments run on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Ieee14,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub preset: Preset,
    pub sigma_n: f64,
    pub rho_u: f64,
    pub delta: f64,
    pub delta_exact: f64,
    pub state: StateGenerator,
}

impl Default for ModelSection {
    fn default() -> Self {
        let p = Ieee14Params::default();
        Self {
            preset: Preset::Ieee14,
            sigma_n: p.sigma_n,
            rho_u: p.rho_u,
            delta: p.delta,
            delta_exact: p.delta_exact,
            state: StateGenerator::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UncertaintySection {
    /// Variants run by `experiment`; single-instance commands use the
    /// first.
    pub kinds: Vec<UncertaintyKind>,
    pub ellipsoid_radius: f64,
    pub dnorm_gamma: usize,
    pub dnorm_uhat: f64,
}

impl Default for UncertaintySection {
    fn default() -> Self {
        let s = SetParams::default();
        Self {
            kinds: UncertaintyKind::ALL.to_vec(),
            ellipsoid_radius: s.ellipsoid_radius,
            dnorm_gamma: s.dnorm_gamma,
            dnorm_uhat: s.dnorm_uhat,
        }
    }
}

/// How the detector computes `v_t`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    /// Centralized conic solve of the exact robust problem.
    #[default]
    Exact,
    /// The asynchronous cutting-plane primal-dual solver.
    Distributed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    pub engine: Engine,
    /// Also evaluate the detector that trusts the nominal matrix.
    pub baseline: bool,
    pub fap_targets: Vec<f64>,
    pub calibration_runs: usize,
    pub calibration_horizon: usize,
    pub evaluation_runs: usize,
    pub horizon: usize,
    pub change_time: usize,
    pub success_fap: f64,
    pub success_runs: usize,
    pub success_horizon: usize,
    /// Delay bounds of the success-rate table; empty spreads ten bounds
    /// over the observed delays.
    pub delay_bounds: Vec<usize>,
}

impl Default for DetectorSection {
    fn default() -> Self {
        Self {
            engine: Engine::Exact,
            baseline: true,
            fap_targets: vec![250.0, 500.0, 1000.0, 2000.0],
            calibration_runs: 20,
            calibration_horizon: 2500,
            evaluation_runs: 100,
            horizon: 2500,
            change_time: 10,
            success_fap: 250.0,
            success_runs: 200,
            success_horizon: 500,
            delay_bounds: Vec::new(),
        }
    }
}

/// Synthetic instance family of `async-bench`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub workers: usize,
    pub rows_per_worker: usize,
    pub columns: usize,
    pub delta: f64,
    pub active: usize,
    pub tau: usize,
    pub max_iters: usize,
    /// Stationarity level whose first-passage time is compared.
    pub epsilon: f64,
    pub instances: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self {
            workers: 10,
            rows_per_worker: 2,
            columns: 4,
            delta: 0.1,
            active: 5,
            tau: 10,
            max_iters: 3000,
            epsilon: 1e-3,
            instances: 10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedSection {
    /// Change-free calibration streams use `calibration + r`.
    pub calibration: u64,
    /// Attacked evaluation streams use `evaluation + r`; keep the two
    /// ranges disjoint.
    pub evaluation: u64,
    /// Observation and instance seed of `solve` and `async-bench`.
    pub instance: u64,
}

impl Default for SeedSection {
    fn default() -> Self {
        Self {
            calibration: 1_000_000,
            evaluation: 0,
            instance: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("results"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub uncertainty: UncertaintySection,
    pub solver: SolverSettings,
    pub detector: DetectorSection,
    pub bench: BenchSection,
    pub seeds: SeedSection,
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        let d = &self.detector;
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.uncertainty.kinds.is_empty() {
            return bad("uncertainty.kinds is empty".into());
        }
        if d.fap_targets.is_empty() || d.fap_targets.iter().any(|t| !(*t >= 1.0)) {
            return bad("detector.fap_targets must be nonempty and >= 1".into());
        }
        let max_fap = d.fap_targets.iter().copied().fold(d.success_fap, f64::max);
        if (d.calibration_horizon as f64) < 1.2 * max_fap {
            return bad(format!(
                "detector.calibration_horizon = {} is too short for FAP {max_fap}; use >= {}",
                d.calibration_horizon,
                (1.2 * max_fap).ceil()
            ));
        }
        if d.calibration_runs == 0 || d.evaluation_runs == 0 || d.success_runs == 0 {
            return bad("detector run counts must be >= 1".into());
        }
        if d.change_time == 0 || d.change_time > d.horizon.min(d.success_horizon) {
            return bad("detector.change_time must lie in 1..=horizon".into());
        }
        let b = &self.bench;
        if b.workers == 0 || b.rows_per_worker == 0 || b.columns == 0 || b.instances == 0 {
            return bad("bench sizes must be >= 1".into());
        }
        if b.columns >= b.workers * b.rows_per_worker {
            return bad("bench.columns must be below the number of rows".into());
        }
        Ok(())
    }

    pub fn ieee14_params(&self) -> Ieee14Params {
        let u = &self.uncertainty;
        Ieee14Params {
            sigma_n: self.model.sigma_n,
            rho_u: self.model.rho_u,
            delta: self.model.delta,
            delta_exact: self.model.delta_exact,
            sets: SetParams {
                ellipsoid_radius: u.ellipsoid_radius,
                dnorm_gamma: u.dnorm_gamma,
                dnorm_uhat: u.dnorm_uhat,
            },
        }
    }

    pub fn model(&self, kind: UncertaintyKind) -> Result<SystemModel> {
        match self.model.preset {
            Preset::Ieee14 => load_ieee14(kind, &self.ieee14_params()),
        }
    }

    /// The variant used by single-instance commands.
    pub fn primary_kind(&self) -> UncertaintyKind {
        self.uncertainty.kinds[0]
    }

    pub fn calibration_mc(&self) -> MonteCarloConfig {
        MonteCarloConfig {
            runs: self.detector.calibration_runs,
            horizon: self.detector.calibration_horizon,
            change_time: self.detector.change_time,
            seed_base: self.seeds.calibration,
            state: self.model.state,
        }
    }

    pub fn evaluation_mc(&self) -> MonteCarloConfig {
        MonteCarloConfig {
            runs: self.detector.evaluation_runs,
            horizon: self.detector.horizon,
            change_time: self.detector.change_time,
            seed_base: self.seeds.evaluation,
            state: self.model.state,
        }
    }

    pub fn success_mc(&self) -> MonteCarloConfig {
        MonteCarloConfig {
            runs: self.detector.success_runs,
            horizon: self.detector.success_horizon,
            ..self.evaluation_mc()
        }
    }
}
