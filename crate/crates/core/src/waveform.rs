//! Binned error-probability waveforms, pulse features, quality cuts and
//! average pulses.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::readout::{CycleSequence, Outcome};

/// Error counts per bin on a fixed time axis around a trigger.
///
/// Bin `i` covers `[(i − pre_trigger_bins)·bin_width, … + bin_width)` relative
/// to the trigger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedWaveform {
    pub qubit: String,
    /// Absolute trigger time [s].
    pub trigger_time: f64,
    /// [s]
    pub bin_width: f64,
    /// Cycles per bin.
    pub bin_size: usize,
    pub pre_trigger_bins: usize,
    /// Number of single waveforms summed into this one.
    #[serde(default = "one")]
    pub n_averaged: usize,
    /// Errors per bin.
    pub n: Vec<u32>,
    /// Valid trials per bin; a zero marks a bin with no information.
    #[serde(rename = "N")]
    pub valid: Vec<u32>,
}

fn one() -> usize {
    1
}

impl BinnedWaveform {
    pub fn len(&self) -> usize {
        self.n.len()
    }

    pub fn is_empty(&self) -> bool {
        self.n.is_empty()
    }

    /// Bin centres relative to the trigger [s].
    pub fn bin_centers(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.bin_center(i)).collect()
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        (i as f64 - self.pre_trigger_bins as f64 + 0.5) * self.bin_width
    }

    /// Start of bin `i` relative to the trigger [s].
    pub fn bin_start(&self, i: usize) -> f64 {
        (i as f64 - self.pre_trigger_bins as f64) * self.bin_width
    }

    /// p_i = n_i/N_i, `None` for empty bins.
    pub fn probability(&self, i: usize) -> Option<f64> {
        (self.valid[i] > 0).then(|| self.n[i] as f64 / self.valid[i] as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n.len() != self.valid.len() {
            return Err(Error::Alignment(format!(
                "{}: n has {} bins but N has {}",
                self.qubit,
                self.n.len(),
                self.valid.len()
            )));
        }
        let cap = (self.bin_size * self.n_averaged.max(1)) as u32;
        if let Some(i) = (0..self.len()).find(|&i| self.n[i] > self.valid[i] || self.valid[i] > cap) {
            return Err(Error::Precondition(format!(
                "{}: bin {i} has n = {}, N = {} (cap {cap})",
                self.qubit, self.n[i], self.valid[i]
            )));
        }
        if self.pre_trigger_bins > self.len() {
            return Err(Error::Precondition(format!(
                "{}: {} pre-trigger bins in a {}-bin waveform",
                self.qubit,
                self.pre_trigger_bins,
                self.len()
            )));
        }
        Ok(())
    }

    /// Total error count over all bins.
    pub fn total_errors(&self) -> u64 {
        self.n.iter().map(|&v| v as u64).sum()
    }
}

/// Groups consecutive cycles into bins of `bin_size`; invalid cycles do not
/// count towards N_i and a trailing partial bin is dropped. The bin containing
/// `trigger_time` becomes the first post-trigger bin.
pub fn bin_sequence(
    seq: &CycleSequence,
    bin_size: usize,
    qubit: &str,
    trigger_time: f64,
) -> Result<BinnedWaveform> {
    if bin_size == 0 || seq.len() < bin_size {
        return Err(Error::Precondition(format!(
            "sequence of {} cycles is shorter than one bin of {bin_size}",
            seq.len()
        )));
    }
    let n_bins = seq.len() / bin_size;
    let mut n = vec![0u32; n_bins];
    let mut valid = vec![0u32; n_bins];
    for (k, (o, v)) in seq
        .outcomes
        .iter()
        .zip(&seq.valid)
        .take(n_bins * bin_size)
        .enumerate()
    {
        if *v {
            valid[k / bin_size] += 1;
            if *o == Outcome::Ground {
                n[k / bin_size] += 1;
            }
        }
    }
    let bin_width = bin_size as f64 * seq.cycle_period;
    let offset = (trigger_time - seq.t0) / bin_width;
    let nearest = offset.round();
    let pre = if (offset - nearest).abs() < 1e-6 {
        nearest
    } else {
        offset.floor()
    };
    Ok(BinnedWaveform {
        qubit: qubit.to_string(),
        trigger_time,
        bin_width,
        bin_size,
        pre_trigger_bins: pre.clamp(0.0, n_bins as f64) as usize,
        n_averaged: 1,
        n,
        valid,
    })
}

/// Pulse-shape summary of one waveform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseFeatures {
    /// Mean pre-trigger p_i.
    pub baseline_b: f64,
    /// Sample standard deviation of the pre-trigger p_i.
    pub baseline_sigma: f64,
    /// Largest post-trigger p_i.
    pub p_max: f64,
    /// Start of the earliest bin reaching `p_max`, relative to the trigger [s].
    pub t_max: f64,
    /// Error counts of post-trigger bins centred in [0, 5 ms].
    pub i_5ms: u64,
    /// Error counts of all post-trigger bins.
    pub i_tot: u64,
    /// Error counts of post-trigger bins centred at or after 10 ms.
    pub i_tail: u64,
    /// Bins with p_i = 1, over the whole waveform.
    pub n_sat: u32,
}

/// Computes the pulse features; needs at least two pre-trigger bins, one of
/// them with valid trials.
pub fn compute_features(w: &BinnedWaveform) -> Result<PulseFeatures> {
    if w.pre_trigger_bins < 2 {
        return Err(Error::Feature(format!(
            "{}: {} pre-trigger bins, need at least 2",
            w.qubit, w.pre_trigger_bins
        )));
    }
    let pre: Vec<f64> = (0..w.pre_trigger_bins).filter_map(|i| w.probability(i)).collect();
    if pre.is_empty() {
        return Err(Error::Feature(format!("{}: no valid pre-trigger bin", w.qubit)));
    }
    let b = pre.iter().sum::<f64>() / pre.len() as f64;
    let sigma = if pre.len() > 1 {
        (pre.iter().map(|p| (p - b).powi(2)).sum::<f64>() / (pre.len() - 1) as f64).sqrt()
    } else {
        0.0
    };

    let mut p_max = f64::NEG_INFINITY;
    let mut t_max = 0.0;
    let (mut i_5ms, mut i_tot, mut i_tail) = (0u64, 0u64, 0u64);
    for i in w.pre_trigger_bins..w.len() {
        if let Some(p) = w.probability(i) {
            if p > p_max {
                p_max = p;
                t_max = w.bin_start(i);
            }
        }
        let t = w.bin_center(i);
        let n = w.n[i] as u64;
        i_tot += n;
        if t <= 5.0e-3 {
            i_5ms += n;
        }
        if t >= 10.0e-3 {
            i_tail += n;
        }
    }
    if !p_max.is_finite() {
        return Err(Error::Feature(format!("{}: no valid post-trigger bin", w.qubit)));
    }
    let n_sat = (0..w.len())
        .filter(|&i| w.valid[i] > 0 && w.n[i] == w.valid[i])
        .count() as u32;
    Ok(PulseFeatures {
        baseline_b: b,
        baseline_sigma: sigma,
        p_max,
        t_max,
        i_5ms,
        i_tot,
        i_tail,
        n_sat,
    })
}

/// Features of one qubit in one triggered event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QubitRecord {
    pub event_id: u64,
    pub trigger_time: f64,
    pub qubit: String,
    pub features: PulseFeatures,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CutConfig {
    /// Baseline cut half-width in units of the ensemble standard deviation.
    pub baseline_nsigma: f64,
    /// Quantile of the I_tail distribution above which events are outliers.
    pub tail_quantile: f64,
    pub nsat_quantile: f64,
    /// Explicit thresholds overriding the quantiles.
    pub tail_max: Option<f64>,
    pub nsat_max: Option<f64>,
    /// Trailing window of the baseline jump detector [events].
    pub jump_window: usize,
    /// Jump threshold in units of the window's MAD-based deviation.
    pub jump_threshold: f64,
    /// Analysis cut: p_max > B + analysis_nsigma·σ_B.
    pub analysis_nsigma: f64,
}

impl Default for CutConfig {
    fn default() -> Self {
        Self {
            baseline_nsigma: 2.0,
            tail_quantile: 0.995,
            nsat_quantile: 0.995,
            tail_max: None,
            nsat_max: None,
            jump_window: 25,
            jump_threshold: 3.0,
            analysis_nsigma: 3.0,
        }
    }
}

/// Cut values derived from one qubit's event ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QubitThresholds {
    pub baseline_mean: f64,
    pub baseline_sd: f64,
    pub baseline_nsigma: f64,
    pub i_tail_max: f64,
    pub n_sat_max: f64,
    /// Trigger-time intervals [s] flagged by the jump detector, inclusive.
    pub unstable: Vec<(f64, f64)>,
    pub analysis_nsigma: f64,
}

impl QubitThresholds {
    pub fn passes_baseline(&self, f: &PulseFeatures) -> bool {
        self.baseline_sd == 0.0
            || (f.baseline_b - self.baseline_mean).abs() <= self.baseline_nsigma * self.baseline_sd
    }

    pub fn passes_tail(&self, f: &PulseFeatures) -> bool {
        f.i_tail as f64 <= self.i_tail_max
    }

    pub fn passes_nsat(&self, f: &PulseFeatures) -> bool {
        f.n_sat as f64 <= self.n_sat_max
    }

    pub fn is_stable(&self, trigger_time: f64) -> bool {
        !self
            .unstable
            .iter()
            .any(|(a, b)| (*a..=*b).contains(&trigger_time))
    }

    pub fn passes_analysis(&self, f: &PulseFeatures) -> bool {
        f.p_max > f.baseline_b + self.analysis_nsigma * f.baseline_sigma
    }
}

/// Linear-interpolation quantile of unsorted data.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Flags events whose baseline departs from the median of the last `window`
/// unflagged events by more than `threshold` MAD-equivalent deviations.
/// Flagged events stay out of the reference, so a jump cannot mask itself;
/// a run of `window` consecutive flags is taken as the new level and
/// becomes the reference. `times` and `baselines` are in trigger order.
pub fn detect_baseline_jumps(times: &[f64], baselines: &[f64], window: usize, threshold: f64) -> Vec<bool> {
    debug_assert_eq!(times.len(), baselines.len());
    let mut flags = vec![false; baselines.len()];
    if window < 3 {
        return flags;
    }
    let mut reference: Vec<f64> = Vec::with_capacity(baselines.len());
    let mut run: Vec<f64> = Vec::new();
    for (i, &b) in baselines.iter().enumerate() {
        if reference.len() >= window {
            let past = &reference[reference.len() - window..];
            let med = median(past);
            let dev: Vec<f64> = past.iter().map(|v| (v - med).abs()).collect();
            let sigma = 1.4826 * median(&dev);
            flags[i] = (b - med).abs() > threshold * sigma;
        }
        if flags[i] {
            run.push(b);
            if run.len() >= window {
                reference.append(&mut run);
            }
        } else {
            run.clear();
            reference.push(b);
        }
    }
    flags
}

fn flagged_intervals(times: &[f64], flags: &[bool]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut start: Option<f64> = None;
    let mut last = 0.0;
    for (&t, &f) in times.iter().zip(flags) {
        match (f, start) {
            (true, None) => {
                start = Some(t);
                last = t;
            }
            (true, Some(_)) => last = t,
            (false, Some(s)) => {
                out.push((s, last));
                start = None;
            }
            (false, None) => {}
        }
    }
    if let Some(s) = start {
        out.push((s, last));
    }
    out
}

/// First pass of the quality cuts: derives per-qubit thresholds from the
/// ensemble.
pub fn derive_thresholds(records: &[QubitRecord], cfg: &CutConfig) -> BTreeMap<String, QubitThresholds> {
    let mut by_qubit: BTreeMap<&str, Vec<&QubitRecord>> = BTreeMap::new();
    for r in records {
        by_qubit.entry(&r.qubit).or_default().push(r);
    }
    by_qubit
        .into_iter()
        .map(|(q, mut recs)| {
            recs.sort_by(|a, b| a.trigger_time.total_cmp(&b.trigger_time).then(a.event_id.cmp(&b.event_id)));
            let b: Vec<f64> = recs.iter().map(|r| r.features.baseline_b).collect();
            let times: Vec<f64> = recs.iter().map(|r| r.trigger_time).collect();
            let mean = b.iter().sum::<f64>() / b.len() as f64;
            let sd = if b.len() > 1 {
                (b.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (b.len() - 1) as f64).sqrt()
            } else {
                0.0
            };
            let tails: Vec<f64> = recs.iter().map(|r| r.features.i_tail as f64).collect();
            let sats: Vec<f64> = recs.iter().map(|r| r.features.n_sat as f64).collect();
            let flags = detect_baseline_jumps(&times, &b, cfg.jump_window, cfg.jump_threshold);
            (
                q.to_string(),
                QubitThresholds {
                    baseline_mean: mean,
                    baseline_sd: sd,
                    baseline_nsigma: cfg.baseline_nsigma,
                    i_tail_max: cfg.tail_max.unwrap_or_else(|| quantile(&tails, cfg.tail_quantile)),
                    n_sat_max: cfg.nsat_max.unwrap_or_else(|| quantile(&sats, cfg.nsat_quantile)),
                    unstable: flagged_intervals(&times, &flags),
                    analysis_nsigma: cfg.analysis_nsigma,
                },
            )
        })
        .collect()
}

/// Per-record cut outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutDecision {
    pub event_id: u64,
    pub qubit: String,
    pub baseline: bool,
    pub tail: bool,
    pub n_sat: bool,
    pub stable: bool,
    /// All quality cuts.
    pub quality: bool,
    /// p_max above baseline fluctuations.
    pub analysis: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutEfficiency {
    /// Qubit name, or "all" for the event-level row.
    pub qubit: String,
    pub events: usize,
    /// Quality efficiency ε_Q.
    pub eps_q: f64,
    /// Analysis efficiency among quality-passing events, ε_A.
    pub eps_a: f64,
    /// ε_tot = passing both / all.
    pub eps_tot: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutReport {
    pub thresholds: BTreeMap<String, QubitThresholds>,
    pub decisions: Vec<CutDecision>,
    pub efficiencies: Vec<CutEfficiency>,
}

impl CutReport {
    pub fn decision(&self, event_id: u64, qubit: &str) -> Option<&CutDecision> {
        self.decisions
            .iter()
            .find(|d| d.event_id == event_id && d.qubit == qubit)
    }

    /// Whether every qubit of the event passed the quality cuts.
    pub fn event_passes_quality(&self, event_id: u64) -> bool {
        self.decisions
            .iter()
            .filter(|d| d.event_id == event_id)
            .all(|d| d.quality)
    }
}

/// Second pass: applies fixed thresholds.
pub fn apply_thresholds(
    records: &[QubitRecord],
    thresholds: &BTreeMap<String, QubitThresholds>,
) -> Result<CutReport> {
    let mut decisions = Vec::with_capacity(records.len());
    for r in records {
        let t = thresholds
            .get(&r.qubit)
            .ok_or_else(|| Error::Precondition(format!("no thresholds for qubit {}", r.qubit)))?;
        let f = &r.features;
        let (baseline, tail, n_sat, stable) = (
            t.passes_baseline(f),
            t.passes_tail(f),
            t.passes_nsat(f),
            t.is_stable(r.trigger_time),
        );
        decisions.push(CutDecision {
            event_id: r.event_id,
            qubit: r.qubit.clone(),
            baseline,
            tail,
            n_sat,
            stable,
            quality: baseline && tail && n_sat && stable,
            analysis: t.passes_analysis(f),
        });
    }
    let efficiencies = summarize(&decisions);
    Ok(CutReport {
        thresholds: thresholds.clone(),
        decisions,
        efficiencies,
    })
}

fn efficiency_row(qubit: String, rows: impl Iterator<Item = (bool, bool)>) -> CutEfficiency {
    let (mut total, mut q, mut both) = (0usize, 0usize, 0usize);
    for (quality, analysis) in rows {
        total += 1;
        if quality {
            q += 1;
            if analysis {
                both += 1;
            }
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    CutEfficiency {
        qubit,
        events: total,
        eps_q: ratio(q, total),
        eps_a: ratio(both, q),
        eps_tot: ratio(both, total),
    }
}

fn summarize(decisions: &[CutDecision]) -> Vec<CutEfficiency> {
    let mut by_qubit: BTreeMap<&str, Vec<(bool, bool)>> = BTreeMap::new();
    let mut by_event: BTreeMap<u64, (bool, bool)> = BTreeMap::new();
    for d in decisions {
        by_qubit.entry(&d.qubit).or_default().push((d.quality, d.analysis));
        let e = by_event.entry(d.event_id).or_insert((true, true));
        e.0 &= d.quality;
        e.1 &= d.analysis;
    }
    let mut rows: Vec<CutEfficiency> = by_qubit
        .into_iter()
        .map(|(q, v)| efficiency_row(q.to_string(), v.into_iter()))
        .collect();
    rows.push(efficiency_row("all".into(), by_event.into_values()));
    rows
}

/// Two-pass quality and analysis cuts.
pub fn apply_quality_cuts(records: &[QubitRecord], cfg: &CutConfig) -> Result<CutReport> {
    apply_thresholds(records, &derive_thresholds(records, cfg))
}

/// One low-energy amplitude slice B + nσ_B < p_max < min(B + (n+1)σ_B, 0.6).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowEnergySlice {
    pub n: u32,
    /// Indices into the input.
    pub members: Vec<usize>,
}

/// Upper edge of the linear-response region of p_max.
pub const LINEAR_P_MAX: f64 = 0.6;
const MAX_SLICES: u32 = 50;

/// Slices starting at `n_start`; stops at the first slice whose lower edge,
/// evaluated at the ensemble-mean B and σ_B, reaches 0.6.
pub fn select_low_energy(features: &[PulseFeatures], n_start: u32) -> Result<Vec<LowEnergySlice>> {
    if n_start < 3 {
        return Err(Error::Precondition(format!("n_sigma starts at 3, got {n_start}")));
    }
    if features.is_empty() {
        return Ok(Vec::new());
    }
    let m = features.len() as f64;
    let mean_b = features.iter().map(|f| f.baseline_b).sum::<f64>() / m;
    let mean_s = features.iter().map(|f| f.baseline_sigma).sum::<f64>() / m;
    let mut out = Vec::new();
    for n in n_start..n_start + MAX_SLICES {
        if mean_b + n as f64 * mean_s >= LINEAR_P_MAX {
            break;
        }
        let members: Vec<usize> = features
            .iter()
            .enumerate()
            .filter(|(_, f)| {
                let lo = f.baseline_b + n as f64 * f.baseline_sigma;
                let hi = (f.baseline_b + (n + 1) as f64 * f.baseline_sigma).min(LINEAR_P_MAX);
                f.baseline_sigma > 0.0 && f.p_max > lo && f.p_max < hi
            })
            .map(|(i, _)| i)
            .collect();
        if !members.is_empty() {
            out.push(LowEnergySlice { n, members });
        }
    }
    Ok(out)
}

/// Saturated-pulse selection n_sat > `above`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighEnergyCut {
    pub above: u32,
    pub members: Vec<usize>,
}

/// With k the largest observed n_sat, cuts n_sat > m for m from max(k − 3, 3)
/// to k − 1; cuts keeping fewer than two pulses are dropped.
pub fn select_high_energy(features: &[PulseFeatures]) -> Vec<HighEnergyCut> {
    let k = features.iter().map(|f| f.n_sat).max().unwrap_or(0);
    if k == 0 {
        return Vec::new();
    }
    let lo = k.saturating_sub(3).max(3);
    (lo..k)
        .map(|m| HighEnergyCut {
            above: m,
            members: features
                .iter()
                .enumerate()
                .filter(|(_, f)| f.n_sat > m)
                .map(|(i, _)| i)
                .collect(),
        })
        .filter(|c| c.members.len() >= 2)
        .collect()
}

/// Bin-wise sum of counts over aligned waveforms.
pub fn average_pulse(waves: &[&BinnedWaveform]) -> Result<BinnedWaveform> {
    if waves.len() < 2 {
        return Err(Error::Precondition(format!(
            "average pulse needs at least 2 waveforms, got {}",
            waves.len()
        )));
    }
    let first = waves[0];
    let mut out = BinnedWaveform {
        n_averaged: 0,
        n: vec![0; first.len()],
        valid: vec![0; first.len()],
        ..first.clone()
    };
    for w in waves {
        let same_axis = w.len() == first.len()
            && w.pre_trigger_bins == first.pre_trigger_bins
            && w.bin_size == first.bin_size
            && (w.bin_width - first.bin_width).abs() <= 1e-12 * first.bin_width;
        if !same_axis {
            return Err(Error::Alignment(format!(
                "waveform of {} at t = {} does not share the binning of the first",
                w.qubit, w.trigger_time
            )));
        }
        for i in 0..w.len() {
            out.n[i] += w.n[i];
            out.valid[i] += w.valid[i];
        }
        out.n_averaged += w.n_averaged.max(1);
    }
    Ok(out)
}
