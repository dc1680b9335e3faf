//! Quasiparticle-induced relaxation model of a transmon qubit.
//!
//! Everything inside this module is computed in SI units (seconds, joules,
//! cubic metres). The parameter types that face users carry the customary
//! units of the field instead (eV for energies, ns⁻¹ for the recombination
//! constant, ms for the linear-loss time) and convert at the boundary; the
//! field docs spell out which unit applies.

mod fidelity;
mod rothwarf_taylor;

pub use fidelity::{separation_fidelity, SeparationFidelity};
pub use rothwarf_taylor::{
    decay_rate_analytic, integrate_rothwarf_taylor, kaplan_recombination, rt_change_of_variables,
    RtInput, RtParams,
};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, ensure_probability, Error, Result};
use crate::geometry::default_site;

/// Reduced Planck constant [J s].
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant [J/K].
pub const K_B: f64 = 1.380_649e-23;
/// Elementary charge [C], i.e. joules per electronvolt.
pub const EV: f64 = 1.602_176_634e-19;

/// Material and device constants shared by all qubits of a chip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsConstants {
    /// Cooper-pair density [m⁻³].
    pub n_cp: f64,
    /// Superconducting gap [eV].
    pub delta_ev: f64,
    /// Island volume [m³].
    pub volume_m3: f64,
    /// Phonon-to-quasiparticle efficiency, in (0, 1].
    pub epsilon: f64,
    /// Effective measurement interval [s].
    pub delta_t: f64,
}

impl Default for PhysicsConstants {
    /// Aluminium transmon values: 4×10²⁴ m⁻³, 180 μeV, 6975 μm³, 0.57, 3 μs.
    fn default() -> Self {
        Self {
            n_cp: 4.0e24,
            delta_ev: 180.0e-6,
            volume_m3: 6975.0e-18,
            epsilon: 0.57,
            // 1 μs wait plus half of the 4 μs readout
            delta_t: 3.0e-6,
        }
    }
}

impl PhysicsConstants {
    pub fn validate(&self) -> Result<()> {
        ensure_positive("n_cp", self.n_cp)?;
        ensure_positive("delta_ev", self.delta_ev)?;
        ensure_positive("volume_m3", self.volume_m3)?;
        ensure_positive("epsilon", self.epsilon)?;
        ensure_positive("delta_t", self.delta_t)?;
        if self.epsilon > 1.0 {
            return Err(Error::Domain {
                name: "epsilon",
                value: self.epsilon,
                reason: "efficiency cannot exceed 1",
            });
        }
        Ok(())
    }

    /// Normalized injected quasiparticle density x_i for an island deposit [eV].
    pub fn injected_density(&self, e_dep_ev: f64) -> f64 {
        e_dep_ev * self.epsilon / (self.n_cp * self.volume_m3 * self.delta_ev)
    }
}

/// Per-qubit readout and placement data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QubitConfig {
    pub name: String,
    /// Angular frequency [rad/s].
    pub omega_q: f64,
    /// Separation fidelity 𝓕.
    pub fidelity: f64,
    /// Probability of reading an excited qubit as ground.
    pub p_ge: f64,
    /// Position on the chip [mm].
    pub position: (f64, f64),
    /// Mean pre-trigger error probability.
    pub baseline_b: f64,
    pub baseline_sigma: f64,
    /// Intrinsic relaxation time driving the simulated baseline [s].
    pub t1: f64,
}

impl QubitConfig {
    /// A qubit with the given frequency [GHz] and readout fidelities, placed at
    /// its default chip site when the name is known (origin otherwise), with
    /// T₁ = 50 μs and the baseline implied by that T₁ over a 4 μs wait.
    pub fn new(name: &str, freq_ghz: f64, fidelity: f64, p_ge: f64) -> Self {
        let t1: f64 = 50.0e-6;
        let p_wait = -(-4.0e-6 / t1).exp_m1();
        Self {
            name: name.to_string(),
            omega_q: 2.0 * std::f64::consts::PI * freq_ghz * 1.0e9,
            fidelity,
            p_ge,
            position: default_site(name).unwrap_or((0.0, 0.0)),
            baseline_b: p_wait * fidelity + p_ge,
            baseline_sigma: 0.0,
            t1,
        }
    }

    pub fn frequency_ghz(&self) -> f64 {
        self.omega_q / (2.0 * std::f64::consts::PI * 1.0e9)
    }

    /// Probability of reading a ground qubit as excited, 1 − 𝓕 − p_ge.
    pub fn p_eg(&self) -> f64 {
        1.0 - self.fidelity - self.p_ge
    }

    pub fn validate(&self) -> Result<()> {
        ensure_positive("omega_q", self.omega_q)?;
        ensure_probability("fidelity", self.fidelity)?;
        ensure_probability("p_ge", self.p_ge)?;
        ensure_probability("baseline_b", self.baseline_b)?;
        if !(self.t1 > 0.0) {
            return Err(Error::Domain {
                name: "t1",
                value: self.t1,
                reason: "must be positive (infinite disables intrinsic relaxation)",
            });
        }
        if !(self.baseline_sigma >= 0.0) {
            return Err(Error::Domain {
                name: "baseline_sigma",
                value: self.baseline_sigma,
                reason: "must be non-negative",
            });
        }
        self.check_fidelities()
    }

    fn check_fidelities(&self) -> Result<()> {
        if self.fidelity + self.p_ge > 1.0 {
            return Err(Error::Config(format!(
                "qubit {}: fidelity {} + p_ge {} exceeds 1",
                self.name, self.fidelity, self.p_ge
            )));
        }
        Ok(())
    }
}

/// Qubit frequencies and separation fidelities of the five slow-recovery
/// qubits during the ¹³⁷Cs source run.
pub fn source_run_qubits() -> Vec<QubitConfig> {
    vec![
        QubitConfig::new("Q1", 4.534, 0.9996, 0.0002),
        QubitConfig::new("Q2", 4.370, 0.9965, 0.0020),
        QubitConfig::new("Q4", 4.697, 0.9970, 0.0013),
        QubitConfig::new("Q5", 4.453, 0.9992, 0.0004),
        QubitConfig::new("Q8", 4.501, 0.9916, 0.0047),
    ]
}

/// Same qubits during the background run.
pub fn background_run_qubits() -> Vec<QubitConfig> {
    vec![
        QubitConfig::new("Q1", 4.534, 0.9975, 0.0013),
        QubitConfig::new("Q2", 4.370, 0.9851, 0.0079),
        QubitConfig::new("Q4", 4.697, 0.9925, 0.0035),
        QubitConfig::new("Q5", 4.453, 0.9958, 0.0022),
        QubitConfig::new("Q8", 4.501, 0.9804, 0.0102),
    ]
}

/// Parameters of a single relaxation transient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BurstParams {
    /// Energy deposited in the island [eV].
    pub e_dep: f64,
    /// Recombination constant [ns⁻¹].
    pub r: f64,
    /// Linear-loss time [ms].
    pub tau_ss: f64,
    /// Background relaxation exponent (dimensionless).
    pub gamma: f64,
}

impl BurstParams {
    pub fn new(e_dep: f64, r: f64, tau_ss: f64, gamma: f64) -> Self {
        Self {
            e_dep,
            r,
            tau_ss,
            gamma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.e_dep >= 0.0) || !self.e_dep.is_finite() {
            return Err(Error::Domain {
                name: "e_dep",
                value: self.e_dep,
                reason: "must be finite and non-negative",
            });
        }
        ensure_positive("r", self.r)?;
        ensure_positive("tau_ss", self.tau_ss)?;
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::Domain {
                name: "gamma",
                value: self.gamma,
                reason: "must be finite and non-negative",
            });
        }
        Ok(())
    }

    /// Recombination constant in s⁻¹.
    pub fn r_si(&self) -> f64 {
        self.r * 1.0e9
    }

    /// Linear-loss time in s.
    pub fn tau_si(&self) -> f64 {
        self.tau_ss * 1.0e-3
    }
}

/// The two constant coefficients of the relaxation probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    /// Δt·√(2ω_qΔ/π²ħ), dimensionless.
    pub alpha: f64,
    /// n_cp·V·Δ/ε [eV].
    pub beta: f64,
}

/// Computes α and β for one qubit.
pub fn alpha_beta(constants: &PhysicsConstants, qubit: &QubitConfig) -> Result<Coefficients> {
    constants.validate()?;
    ensure_positive("omega_q", qubit.omega_q)?;
    Ok(coefficients_unchecked(constants, qubit.omega_q))
}

fn coefficients_unchecked(constants: &PhysicsConstants, omega_q: f64) -> Coefficients {
    let delta_joule = constants.delta_ev * EV;
    let c = (2.0 * omega_q * delta_joule / (std::f64::consts::PI.powi(2) * HBAR)).sqrt();
    Coefficients {
        alpha: constants.delta_t * c,
        beta: constants.n_cp * constants.volume_m3 * constants.delta_ev / constants.epsilon,
    }
}

/// Quasiparticle coupling constant C = √(2ω_qΔ/π²ħ) [s⁻¹].
pub fn coupling_constant(constants: &PhysicsConstants, qubit: &QubitConfig) -> f64 {
    coefficients_unchecked(constants, qubit.omega_q).alpha / constants.delta_t
}

/// Precomputed relaxation model of one qubit, used on hot paths.
///
/// Construction validates everything once; the evaluation methods then skip
/// all checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseModel {
    pub alpha: f64,
    pub beta: f64,
    pub fidelity: f64,
    pub p_ge: f64,
    /// Effective measurement interval [s].
    pub delta_t: f64,
}

impl PulseModel {
    pub fn new(constants: &PhysicsConstants, qubit: &QubitConfig) -> Result<Self> {
        let Coefficients { alpha, beta } = alpha_beta(constants, qubit)?;
        qubit.check_fidelities()?;
        ensure_probability("fidelity", qubit.fidelity)?;
        ensure_probability("p_ge", qubit.p_ge)?;
        Ok(Self {
            alpha,
            beta,
            fidelity: qubit.fidelity,
            p_ge: qubit.p_ge,
            delta_t: constants.delta_t,
        })
    }

    /// Quasiparticle part of the relaxation exponent, Γ_qp(t)·Δt, at time
    /// `t` [s] after the burst. Zero before the burst.
    #[inline]
    pub fn burst_exponent(&self, t: f64, p: &BurstParams) -> f64 {
        if t < 0.0 || p.e_dep == 0.0 {
            return 0.0;
        }
        let tau = p.tau_si();
        let x = t / tau;
        let denom = p.e_dep * tau * p.r_si() * x.exp_m1() + self.beta * x.exp();
        self.alpha * p.e_dep / denom
    }

    /// p_r(t) = 1 − exp[−Γ_qp(t)Δt − γ].
    #[inline]
    pub fn relaxation_probability(&self, t: f64, p: &BurstParams) -> f64 {
        -(-(self.burst_exponent(t, p) + p.gamma)).exp_m1()
    }

    /// p_obs = p_r·𝓕 + p_ge.
    #[inline]
    pub fn fold(&self, p_r: f64) -> f64 {
        p_r * self.fidelity + self.p_ge
    }

    #[inline]
    pub fn observed_probability(&self, t: f64, p: &BurstParams) -> f64 {
        self.fold(self.relaxation_probability(t, p))
    }

    /// Smallest deposit [eV] whose observed probability at time `t` reaches
    /// `p_target`, by bisection over [1e-3, 1e7] eV. `None` when the target
    /// is outside the reachable range.
    pub fn energy_for_probability(&self, t: f64, p_target: f64, p: &BurstParams) -> Option<f64> {
        let at = |e: f64| self.observed_probability(t, &BurstParams { e_dep: e, ..*p });
        let (mut lo, mut hi) = (1.0e-3_f64, 1.0e7_f64);
        if at(lo) >= p_target {
            return Some(lo);
        }
        if at(hi) < p_target {
            return None;
        }
        for _ in 0..200 {
            let mid = (lo * hi).sqrt();
            if at(mid) >= p_target {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi / lo - 1.0 < 1e-12 {
                break;
            }
        }
        Some(hi)
    }
}

/// Probability that the qubit relaxes in the cycle starting `t` seconds after
/// the burst.
pub fn relaxation_probability(
    t: f64,
    p: &BurstParams,
    constants: &PhysicsConstants,
    qubit: &QubitConfig,
) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::Domain {
            name: "t",
            value: t,
            reason: "time since trigger must be non-negative",
        });
    }
    p.validate()?;
    let model = PulseModel::new(constants, qubit)?;
    Ok(model.relaxation_probability(t, p))
}

/// Folds the readout fidelities into a true relaxation probability.
pub fn observed_probability(p_r: f64, qubit: &QubitConfig) -> Result<f64> {
    ensure_probability("p_r", p_r)?;
    qubit.check_fidelities()?;
    Ok(p_r * qubit.fidelity + qubit.p_ge)
}

/// Background exponent γ that reproduces the qubit's baseline error
/// probability when no burst is present.
pub fn gamma_from_baseline(qubit: &QubitConfig) -> Result<f64> {
    qubit.check_fidelities()?;
    let lo = qubit.p_ge;
    let hi = qubit.fidelity + qubit.p_ge;
    let b = qubit.baseline_b;
    if !(b >= lo && b < hi) {
        return Err(Error::UnphysicalBaseline {
            qubit: qubit.name.clone(),
            baseline: b,
            lo,
            hi,
        });
    }
    Ok(-(-(b - qubit.p_ge) / qubit.fidelity).ln_1p())
}
