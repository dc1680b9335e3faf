//! Run configuration: one TOML file, unknown keys rejected, every omitted
//! block filled with the device defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use qpburst::fit::FitOptions;
use qpburst::geometry::ChipGeometry;
use qpburst::physics::{PhysicsConstants, QubitConfig};
use qpburst::readout::{ReadoutTiming, SourceSpectrum};
use qpburst::recon::{EfficiencyModel, SpectrumBinning, VertexOptions};
use qpburst::waveform::CutConfig;

use crate::error::{CliError, CliResult};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every random stream of a run derives from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub constants: PhysicsConstants,
    #[serde(default = "default_qubits")]
    pub qubits: Vec<QubitEntry>,
    #[serde(default)]
    pub geometry: ChipGeometry,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub io: IoConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config takes every default")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QubitEntry {
    pub name: String,
    pub freq_ghz: f64,
    pub fidelity: f64,
    pub p_ge: f64,
    /// Intrinsic relaxation time [s]; `inf` disables it.
    #[serde(default = "default_t1")]
    pub t1: f64,
}

fn default_t1() -> f64 {
    50.0e-6
}

fn default_qubits() -> Vec<QubitEntry> {
    qpburst::physics::source_run_qubits()
        .into_iter()
        .map(|q| QubitEntry {
            freq_ghz: q.frequency_ghz(),
            name: q.name,
            fidelity: q.fidelity,
            p_ge: q.p_ge,
            t1: q.t1,
        })
        .collect()
}

/// How deposits reach the qubit islands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepositMode {
    /// The source draws E_tot at a uniform impact point; islands receive
    /// E_tot·ε(R).
    Geometry,
    /// Every qubit draws its own E_dep from the source spectrum.
    Direct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub n_events: usize,
    pub timing: ReadoutTiming,
    pub source: SourceSpectrum,
    pub deposit: DepositMode,
    /// Recombination constant of the simulated bursts [ns⁻¹].
    pub r: f64,
    /// Linear-loss time of the simulated bursts [ms].
    pub tau_ss: f64,
    /// Event rate [s⁻¹]; zero spaces events by 1 s.
    pub rate: f64,
    pub efficiency: EfficiencyModel,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n_events: 100,
            timing: ReadoutTiming::default(),
            source: SourceSpectrum::Flat {
                e_min: 20.0e3,
                e_max: 80.0e3,
            },
            deposit: DepositMode::Geometry,
            r: 0.005,
            tau_ss: 6.0,
            rate: 0.0,
            efficiency: EfficiencyModel::reference(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub cuts: CutConfig,
    /// First n of the low-energy slices B + nσ_B < p_max < B + (n+1)σ_B.
    pub le_n_start: u32,
    /// Slices with fewer members are not fitted.
    pub le_min_members: usize,
    pub fit: FitOptions,
    /// Efficiency table (`R_mm,efficiency`) fitted for the vertex χ²; the
    /// bundled reference table when absent.
    pub efficiency_csv: Option<PathBuf>,
    /// Calibration artifact used by `fit`; the run's own `calibration.json`
    /// when absent. Spectrum runs rarely contain saturated pulses, so their
    /// r and τ_ss usually come from a separate calibration run.
    pub calibration: Option<PathBuf>,
    pub spectrum: SpectrumBinning,
    pub vertex: VertexOptions,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            cuts: CutConfig::default(),
            le_n_start: 3,
            le_min_members: 2,
            fit: FitOptions::default(),
            efficiency_csv: None,
            calibration: None,
            spectrum: SpectrumBinning {
                e_min: 10.0e3,
                e_max: 100.0e3,
                n_bins: 10,
            },
            vertex: VertexOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    /// Directory holding every artifact of the run.
    pub dir: PathBuf,
}

impl Default for IoConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("run") }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.constants.validate()?;
        self.geometry.validate()?;
        self.simulation.timing.validate()?;
        self.simulation.source.validate()?;
        self.simulation.efficiency.validate()?;
        self.analysis.fit.mcmc.validate()?;
        self.analysis.spectrum.validate()?;
        if self.qubits.is_empty() {
            return Err(CliError::Config("at least one qubit is required".into()));
        }
        let mut names: Vec<&str> = self.qubits.iter().map(|q| q.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(CliError::Config("qubit names must be unique".into()));
        }
        for q in self.qubit_configs() {
            q.validate()?;
        }
        if !(self.simulation.r > 0.0 && self.simulation.tau_ss > 0.0 && self.simulation.rate >= 0.0) {
            return Err(CliError::Config("simulation r, tau_ss must be positive and rate non-negative".into()));
        }
        if self.analysis.le_n_start < 3 {
            return Err(CliError::Config("analysis.le_n_start must be at least 3".into()));
        }
        Ok(())
    }

    /// Qubits with positions from the geometry and the baseline implied by
    /// T₁ over the configured wait.
    pub fn qubit_configs(&self) -> Vec<QubitConfig> {
        let wait = self.simulation.timing.dt_wait;
        self.qubits
            .iter()
            .map(|e| {
                let mut q = QubitConfig::new(&e.name, e.freq_ghz, e.fidelity, e.p_ge);
                if let Some(site) = self.geometry.site(&e.name) {
                    q.position = (site.x, site.y);
                }
                q.t1 = e.t1;
                let p_wait = -(-wait / e.t1).exp_m1();
                q.baseline_b = p_wait * e.fidelity + e.p_ge;
                q
            })
            .collect()
    }

    /// Canonical TOML of the fully resolved configuration.
    pub fn resolved_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// SHA-256 of the resolved configuration, hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.resolved_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
