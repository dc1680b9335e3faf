//! Continuous-monitoring readout: the two-state Markov chain, cycle-level
//! simulation of triggered waveforms, and a synthetic particle source.
//!
//! A cycle prepares the excited state, waits δt_wait and reads out. A cycle
//! whose predecessor read "excited" is discarded, since the qubit was not
//! reset. "Error" means a valid cycle that read "ground".

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, ensure_probability, Error, Result};
use crate::geometry::ChipGeometry;
use crate::physics::{BurstParams, PulseModel, QubitConfig};
use crate::recon::EfficiencyModel;
use crate::waveform::{bin_sequence, BinnedWaveform};

/// How the excited-to-excited transition is written.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainVariant {
    /// P(e→e) = ρ(1 − r).
    #[default]
    AsPrinted,
    /// P(e→e) = 1 − ρ, the survival reading of ρ.
    Survival,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkovParams {
    /// Relaxation probability during δt_wait (the chain's r).
    pub p_wait: f64,
    /// Relaxation probability during δt_tot (the chain's ρ).
    pub p_tot: f64,
    /// [s]
    pub dt_wait: f64,
    /// [s]
    pub dt_tot: f64,
    pub variant: ChainVariant,
}

impl MarkovParams {
    /// Baseline chain of a qubit relaxing only through its intrinsic T₁ [s].
    pub fn from_t1(t1: f64, timing: &ReadoutTiming) -> Self {
        Self {
            p_wait: -(-timing.dt_wait / t1).exp_m1(),
            p_tot: -(-timing.dt_tot / t1).exp_m1(),
            dt_wait: timing.dt_wait,
            dt_tot: timing.dt_tot,
            variant: timing.variant,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_probability("p_wait", self.p_wait)?;
        ensure_probability("p_tot", self.p_tot)?;
        ensure_positive("dt_wait", self.dt_wait)?;
        ensure_positive("dt_tot", self.dt_tot)
    }
}

/// Rows and columns ordered (excited, ground).
pub fn transition_matrix(m: &MarkovParams) -> [[f64; 2]; 2] {
    let (r, rho) = (m.p_wait, m.p_tot);
    let stay = match m.variant {
        ChainVariant::AsPrinted => rho * (1.0 - r),
        ChainVariant::Survival => 1.0 - rho,
    };
    [[stay, 1.0 - stay], [1.0 - r, r]]
}

/// Stationary probabilities (π_e, π_g) of the measured state.
pub fn stationary_distribution(m: &MarkovParams) -> Result<(f64, f64)> {
    let p = transition_matrix(m);
    let to_e = p[1][0];
    let to_g = p[0][1];
    let denom = to_e + to_g;
    if denom == 0.0 {
        return Err(Error::DegenerateChain);
    }
    // For the printed chain this is (1 − r)/(2 − r − ρ(1 − r)).
    let pi_e = to_e / denom;
    Ok((pi_e, to_g / denom))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Ground,
    Excited,
}

/// Recorded outcomes of consecutive readout cycles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleSequence {
    pub outcomes: Vec<Outcome>,
    /// `valid[i]` is false when cycle `i − 1` read excited; `valid[0]`
    /// refers to the cycle before the sequence.
    pub valid: Vec<bool>,
    /// Absolute start time of the first cycle [s].
    pub t0: f64,
    pub cycle_period: f64,
}

impl CycleSequence {
    /// Builds the validity mask from the outcomes, treating the first cycle
    /// as valid.
    pub fn from_outcomes(outcomes: Vec<Outcome>, t0: f64, cycle_period: f64) -> Self {
        let mut valid = Vec::with_capacity(outcomes.len());
        if !outcomes.is_empty() {
            valid.push(true);
        }
        valid.extend(outcomes.windows(2).map(|w| w[0] == Outcome::Ground));
        Self {
            outcomes,
            valid,
            t0,
            cycle_period,
        }
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    /// Number of valid cycles that read ground.
    pub fn error_count(&self) -> usize {
        self.outcomes
            .iter()
            .zip(&self.valid)
            .filter(|(o, v)| **v && **o == Outcome::Ground)
            .count()
    }
}

/// Cycle timing and binning of the readout sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReadoutTiming {
    /// Wait between excitation and readout [s].
    pub dt_wait: f64,
    /// Markov step: wait plus readout plus reset [s].
    pub dt_tot: f64,
    /// Spacing of consecutive cycles [s].
    pub cycle_period: f64,
    pub bin_size: usize,
    /// Bins after the trigger.
    pub post_trigger_bins: usize,
    /// Bins before the trigger.
    pub pre_trigger_bins: usize,
    pub variant: ChainVariant,
    /// Place the burst uniformly inside the trigger bin instead of at its start.
    pub jitter: bool,
}

impl Default for ReadoutTiming {
    fn default() -> Self {
        Self {
            dt_wait: 4.0e-6,
            dt_tot: 15.2e-6,
            cycle_period: 15.3e-6,
            bin_size: 40,
            post_trigger_bins: 50,
            pre_trigger_bins: 25,
            variant: ChainVariant::AsPrinted,
            jitter: false,
        }
    }
}

impl ReadoutTiming {
    pub fn bin_width(&self) -> f64 {
        self.bin_size as f64 * self.cycle_period
    }

    pub fn total_bins(&self) -> usize {
        self.pre_trigger_bins + self.post_trigger_bins
    }

    pub fn validate(&self) -> Result<()> {
        ensure_positive("dt_wait", self.dt_wait)?;
        ensure_positive("dt_tot", self.dt_tot)?;
        ensure_positive("cycle_period", self.cycle_period)?;
        if self.bin_size == 0 || self.post_trigger_bins == 0 {
            return Err(Error::Config("bin_size and post_trigger_bins must be positive".into()));
        }
        if self.pre_trigger_bins < 2 {
            return Err(Error::Config("at least 2 pre-trigger bins are needed".into()));
        }
        Ok(())
    }
}

/// A burst hitting one qubit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Burst {
    /// Absolute arrival time [s].
    pub arrival: f64,
    /// Quasiparticle parameters; `gamma` is ignored, the background comes from T₁.
    pub params: BurstParams,
}

/// Simulates `n_cycles` readout cycles starting at `t0`.
///
/// Each cycle relaxes during the wait with probability
/// 1 − exp(−Γ_qp·Δt − δt_wait/T₁); a qubit left excited by the previous
/// cycle survives δt_tot with the chain's ρ, built the same way over δt_tot.
/// The state before the first cycle is drawn from the stationary
/// distribution of the burst-free chain.
pub fn simulate_sequence<R: Rng + ?Sized>(
    model: &PulseModel,
    qubit: &QubitConfig,
    timing: &ReadoutTiming,
    burst: Option<&Burst>,
    t0: f64,
    n_cycles: usize,
    rng: &mut R,
) -> Result<CycleSequence> {
    timing.validate()?;
    qubit.validate()?;
    if n_cycles == 0 {
        return Err(Error::Precondition("sequence needs at least one cycle".into()));
    }
    let base = MarkovParams::from_t1(qubit.t1, timing);
    let wait_bg = timing.dt_wait / qubit.t1;
    let tot_bg = timing.dt_tot / qubit.t1;
    let tot_scale = timing.dt_tot / model.delta_t;
    let p_read_g_if_g = qubit.fidelity + qubit.p_ge;
    let p_read_g_if_e = qubit.p_ge;

    let read = |excited: bool, rng: &mut R| {
        let p_ground = if excited { p_read_g_if_e } else { p_read_g_if_g };
        if rng.random::<f64>() < p_ground {
            Outcome::Ground
        } else {
            Outcome::Excited
        }
    };
    // the cycle preceding the window decides the validity of the first one
    let (pi_e, _) = stationary_distribution(&base)?;
    let mut excited = rng.random::<f64>() < pi_e;
    let before = read(excited, rng);
    let mut outcomes = Vec::with_capacity(n_cycles);
    for k in 0..n_cycles {
        let t = t0 + k as f64 * timing.cycle_period;
        let b = match burst {
            Some(burst) => model.burst_exponent(t - burst.arrival, &burst.params),
            None => 0.0,
        };
        excited = if excited {
            // left excited: survives δt_tot, then re-measured after the wait
            let rho = -(-(b * tot_scale + tot_bg)).exp_m1();
            let r = -(-(b + wait_bg)).exp_m1();
            let stay = match timing.variant {
                ChainVariant::AsPrinted => rho * (1.0 - r),
                ChainVariant::Survival => 1.0 - rho,
            };
            rng.random::<f64>() < stay
        } else {
            let r = -(-(b + wait_bg)).exp_m1();
            rng.random::<f64>() >= r
        };
        outcomes.push(read(excited, rng));
    }
    let mut seq = CycleSequence::from_outcomes(outcomes, t0, timing.cycle_period);
    seq.valid[0] = before == Outcome::Ground;
    Ok(seq)
}

/// Simulates one triggered waveform: `pre_trigger_bins` bins of baseline
/// followed by the burst window, with the trigger at `trigger_time`.
pub fn simulate_waveform<R: Rng + ?Sized>(
    model: &PulseModel,
    qubit: &QubitConfig,
    timing: &ReadoutTiming,
    params: Option<&BurstParams>,
    trigger_time: f64,
    rng: &mut R,
) -> Result<BinnedWaveform> {
    let width = timing.bin_width();
    let t0 = trigger_time - timing.pre_trigger_bins as f64 * width;
    let n_cycles = timing.total_bins() * timing.bin_size;
    let burst = params.map(|p| Burst {
        arrival: if timing.jitter {
            trigger_time + rng.random::<f64>() * width
        } else {
            trigger_time
        },
        params: *p,
    });
    let seq = simulate_sequence(model, qubit, timing, burst.as_ref(), t0, n_cycles, rng)?;
    let mut w = bin_sequence(&seq, timing.bin_size, &qubit.name, trigger_time)?;
    w.pre_trigger_bins = timing.pre_trigger_bins;
    Ok(w)
}

/// Per-event random stream: master seed XOR event index.
pub fn event_rng(master_seed: u64, event_index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(master_seed ^ event_index)
}

/// Energy distribution of the synthetic source [eV].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceSpectrum {
    Monoenergetic { energy: f64 },
    Flat { e_min: f64, e_max: f64 },
    LogFlat { e_min: f64, e_max: f64 },
    /// Piecewise-linear inverse CDF over ascending `energies` with cumulative
    /// probabilities `cdf` (ending at 1).
    Tabulated { energies: Vec<f64>, cdf: Vec<f64> },
}

impl SourceSpectrum {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Monoenergetic { energy } => ensure_positive("energy", *energy),
            Self::Flat { e_min, e_max } | Self::LogFlat { e_min, e_max } => {
                ensure_positive("e_min", *e_min)?;
                if !(e_max > e_min) {
                    return Err(Error::Config(format!("e_max {e_max} must exceed e_min {e_min}")));
                }
                Ok(())
            }
            Self::Tabulated { energies, cdf } => {
                if energies.is_empty() {
                    return Err(Error::Config("tabulated spectrum is empty".into()));
                }
                if energies.len() != cdf.len() {
                    return Err(Error::Config("spectrum table columns differ in length".into()));
                }
                let ascending = energies.windows(2).all(|w| w[1] > w[0]);
                let monotone = cdf.windows(2).all(|w| w[1] >= w[0]);
                let last = *cdf.last().expect("non-empty");
                if !ascending || !monotone || cdf[0] < 0.0 || (last - 1.0).abs() > 1e-9 {
                    return Err(Error::Config(
                        "spectrum table needs ascending energies and a CDF rising to 1".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        match self {
            Self::Monoenergetic { energy } => *energy,
            Self::Flat { e_min, e_max } => e_min + u * (e_max - e_min),
            Self::LogFlat { e_min, e_max } => e_min * (e_max / e_min).powf(u),
            Self::Tabulated { energies, cdf } => {
                let i = cdf.partition_point(|c| *c < u);
                if i == 0 {
                    energies[0]
                } else if i >= cdf.len() {
                    energies[energies.len() - 1]
                } else {
                    let f = (u - cdf[i - 1]) / (cdf[i] - cdf[i - 1]);
                    energies[i - 1] + f * (energies[i] - energies[i - 1])
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticEvent {
    pub event_id: u64,
    /// Impact point [mm].
    pub true_position: (f64, f64),
    /// [eV]
    pub true_energy_total: f64,
    /// Energy reaching each qubit island [eV].
    pub per_qubit_edep: BTreeMap<String, f64>,
    /// [s]
    pub arrival_time: f64,
}

/// Deposits reaching each qubit of `geometry` from an impact at `(x, y)`.
pub fn island_deposits(
    geometry: &ChipGeometry,
    efficiency: &EfficiencyModel,
    (x, y): (f64, f64),
    e_tot: f64,
) -> BTreeMap<String, f64> {
    geometry
        .sites
        .iter()
        .map(|s| {
            let r = (s.x - x).hypot(s.y - y);
            (s.name.clone(), efficiency.expected_signal(r, e_tot))
        })
        .collect()
}

/// Draws `n_events` impacts uniformly over the chip with energies from
/// `spectrum`, arriving as a Poisson process of rate `rate` [s⁻¹] (or spaced
/// by 1 s when the rate is zero).
pub fn generate_synthetic_source(
    spectrum: &SourceSpectrum,
    n_events: usize,
    geometry: &ChipGeometry,
    efficiency: &EfficiencyModel,
    rate: f64,
    seed: u64,
) -> Result<Vec<SyntheticEvent>> {
    spectrum.validate()?;
    geometry.validate()?;
    let mut timing_rng = ChaCha8Rng::seed_from_u64(seed);
    let gaps = if rate > 0.0 {
        let exp = Exp::new(rate).map_err(|e| Error::Config(e.to_string()))?;
        (0..n_events).map(|_| exp.sample(&mut timing_rng)).collect()
    } else {
        vec![1.0; n_events]
    };
    let mut t = 0.0;
    let mut events = Vec::with_capacity(n_events);
    for (i, gap) in gaps.into_iter().enumerate() {
        t += gap;
        let mut rng = event_rng(seed, i as u64);
        let pos = (
            rng.random::<f64>() * geometry.width,
            rng.random::<f64>() * geometry.height,
        );
        let e_tot = spectrum.sample(&mut rng);
        events.push(SyntheticEvent {
            event_id: i as u64,
            true_position: pos,
            true_energy_total: e_tot,
            per_qubit_edep: island_deposits(geometry, efficiency, pos, e_tot),
            arrival_time: t,
        });
    }
    Ok(events)
}
