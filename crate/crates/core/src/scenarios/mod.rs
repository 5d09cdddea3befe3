//! End-to-end experiment packs driven by a TOML configuration.

mod building;
mod siso;
mod supply_chain;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use building::{
    building_disturbance, building_nlp, hysteresis_inputs, BuildingConfig, BuildingPrices, HysteresisPolicy,
};
pub use siso::{scenario_siso, siso_certificate, ScheduleKind, SisoConfig, SisoExpectation};
pub use supply_chain::{
    draw_supply_chain, supply_chain_equilibrium, supply_chain_game, supply_chain_setup, vgne_enumerate, SupplyChainConfig,
    SupplyChainDraw, SupplyChainSetup, Vgne,
};

use crate::analysis::StabilityCertificate;
use crate::closed_loop::{ClosedLoopTrace, TrackingSummary};
use crate::error::{FesError, Result};

/// A scenario configuration; the `scenario` key selects the pack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scenario", rename_all = "snake_case")]
pub enum ScenarioConfig {
    Siso(SisoConfig),
    SupplyChain(SupplyChainConfig),
    Building(BuildingConfig),
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| FesError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| FesError::Config(e.to_string()))
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScenarioConfig::Siso(_) => "siso",
            ScenarioConfig::SupplyChain(_) => "supply_chain",
            ScenarioConfig::Building(_) => "building",
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            ScenarioConfig::Siso(c) => c.seed,
            ScenarioConfig::SupplyChain(c) => c.seed,
            ScenarioConfig::Building(c) => c.seed,
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            ScenarioConfig::Siso(c) => c.seed = seed,
            ScenarioConfig::SupplyChain(c) => c.seed = seed,
            ScenarioConfig::Building(c) => c.seed = seed,
        }
    }

    pub fn set_substeps(&mut self, n: usize) {
        match self {
            ScenarioConfig::Siso(c) => c.substeps = Some(n),
            ScenarioConfig::SupplyChain(c) => c.substeps = Some(n),
            ScenarioConfig::Building(c) => c.substeps = Some(n),
        }
    }

    /// Overrides a numeric parameter by name (used by sweeps).
    pub fn set_param(&mut self, name: &str, value: f64) -> Result<()> {
        if name == "seed" {
            if !(value >= 0.0 && value.fract() == 0.0) {
                return Err(FesError::Config(format!("seed must be a nonnegative integer, got {value}")));
            }
            self.set_seed(value as u64);
            return Ok(());
        }
        let ok = match (self, name) {
            (ScenarioConfig::Siso(c), "tau") => set(&mut c.tau, value),
            (ScenarioConfig::Siso(c), "gamma") => set(&mut c.gamma, value),
            (ScenarioConfig::Siso(c), "horizon") => set(&mut c.horizon, value),
            (ScenarioConfig::Siso(c), "ramp_slope") => set(&mut c.ramp_slope, value),
            (ScenarioConfig::Siso(c), "y_ref") => set(&mut c.y_ref, value),
            (ScenarioConfig::SupplyChain(c), "tau") => set(&mut c.tau, value),
            (ScenarioConfig::SupplyChain(c), "cap_factor") => set(&mut c.cap_factor, value),
            (ScenarioConfig::SupplyChain(c), "surge_factor") => set(&mut c.surge_factor, value),
            (ScenarioConfig::Building(c), "tau") => set(&mut c.tau, value),
            (ScenarioConfig::Building(c), "eta") => set(&mut c.eta, value),
            (ScenarioConfig::Building(c), "eps") => set(&mut c.eps, value),
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(FesError::Config(format!("parameter '{name}' cannot be swept for this scenario")))
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ScenarioConfig::Siso(c) => c.validate(),
            ScenarioConfig::SupplyChain(c) => c.validate(),
            ScenarioConfig::Building(c) => c.validate(),
        }
    }
}

fn set(slot: &mut f64, value: f64) -> bool {
    *slot = value;
    true
}

/// Outcome of one machine-checkable expectation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssertionResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl AssertionResult {
    pub fn new(name: &str, passed: bool, detail: String) -> Self {
        AssertionResult { name: name.to_string(), passed, detail }
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub name: String,
    pub trace: ClosedLoopTrace,
    pub summary: TrackingSummary,
    /// Scenario-specific scalar results.
    pub metrics: BTreeMap<String, f64>,
    pub assertions: Vec<AssertionResult>,
    /// Reference run of a baseline policy, when the scenario has one.
    pub baseline: Option<ClosedLoopTrace>,
}

impl ScenarioRun {
    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }

    /// Numerical fault: a controller error ended the run early.
    pub fn faulted(&self) -> bool {
        self.trace.failure.is_some()
    }
}

/// Capability of a certificate report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CertificateMode {
    Analytic,
    EmpiricalOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub scenario: String,
    pub mode: CertificateMode,
    pub certificate: Option<StabilityCertificate>,
    /// Empirical sup-ratio estimates (lower bounds of the true constants).
    pub empirical: BTreeMap<String, f64>,
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioRun> {
    cfg.validate()?;
    match cfg {
        ScenarioConfig::Siso(c) => siso::run(c),
        ScenarioConfig::SupplyChain(c) => supply_chain::run(c),
        ScenarioConfig::Building(c) => building::run(c),
    }
}

pub fn certify(cfg: &ScenarioConfig) -> Result<CertificateReport> {
    cfg.validate()?;
    match cfg {
        ScenarioConfig::Siso(c) => Ok(CertificateReport {
            scenario: "siso".into(),
            mode: CertificateMode::Analytic,
            certificate: Some(siso_certificate(c)?),
            empirical: siso::empirical_gains(c)?,
        }),
        ScenarioConfig::SupplyChain(c) => supply_chain::certify(c),
        ScenarioConfig::Building(c) => building::certify(c),
    }
}
