use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use qpburst::fit::{fit_he_average, fit_le_average, FitOptions, ParamSummary};
use qpburst::physics::QubitConfig;
use qpburst::waveform::{
    average_pulse, select_high_energy, select_low_energy, BinnedWaveform, CutReport, PulseFeatures, QubitRecord,
};

use super::process::read_events;
use super::{num, Context};
use crate::artifacts::{read_json, read_jsonl, write_csv, write_json, Header, CALIBRATION, CALIBRATION_CSV, CUT_REPORT, FEATURES};
use crate::error::CliResult;

/// Fit of one saturated-pulse cut variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeVariant {
    /// Selection n_sat > above.
    pub above: u32,
    pub members: usize,
    pub r: ParamSummary,
    pub tau_ss: ParamSummary,
    pub converged: bool,
}

/// Fit of one low-energy amplitude slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeSlice {
    pub n: u32,
    pub members: usize,
    pub tau_ss: ParamSummary,
    pub e_dep: ParamSummary,
    pub converged: bool,
}

/// Per-qubit (r, τ_ss) with statistical and systematic errors.
///
/// r comes from the loosest saturated-pulse cut, its systematic error from
/// the spread over cut variants. τ_ss is the inverse-variance mean over the
/// low-energy slices, its systematic error the spread over slices. Totals add
/// both in quadrature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QubitCalibration {
    pub qubit: String,
    /// [ns⁻¹]
    pub r: f64,
    pub r_stat: f64,
    pub r_syst: f64,
    pub r_total: f64,
    /// [ms]
    pub tau_ss: f64,
    pub tau_stat: f64,
    pub tau_syst: f64,
    pub tau_total: f64,
    pub he_variants: Vec<HeVariant>,
    pub le_slices: Vec<LeSlice>,
    pub flags: Vec<String>,
}

fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

pub(crate) fn read_cut_report(ctx: &Context) -> CliResult<CutReport> {
    Ok(read_json::<CutReport>(&ctx.path(CUT_REPORT), "cut_report", "process")?.body)
}

fn calibrate_qubit(
    ctx: &Context,
    k: usize,
    q: &QubitConfig,
    records: &[&QubitRecord],
    waves: &HashMap<(u64, &str), &BinnedWaveform>,
) -> CliResult<Option<QubitCalibration>> {
    let a = &ctx.cfg.analysis;
    let features: Vec<PulseFeatures> = records.iter().map(|r| r.features.clone()).collect();
    let wave_of = |i: usize| waves[&(records[i].event_id, records[i].qubit.as_str())];
    let ap = |members: &[usize]| {
        let ws: Vec<&BinnedWaveform> = members.iter().map(|&i| wave_of(i)).collect();
        average_pulse(&ws)
    };
    let mut flags = Vec::new();

    let mut he_variants = Vec::new();
    for (j, cut) in select_high_energy(&features).iter().enumerate() {
        let opts = FitOptions {
            mcmc: ctx.mcmc_for(&[1, k as u64, j as u64]),
            ..a.fit
        };
        let res = fit_he_average(&ap(&cut.members)?, q, &ctx.cfg.constants, &opts)?;
        he_variants.push(HeVariant {
            above: cut.above,
            members: cut.members.len(),
            r: res.param("r").expect("r is free").clone(),
            tau_ss: res.param("tau_ss").expect("tau_ss is free").clone(),
            converged: res.converged,
        });
    }
    let Some(nominal) = he_variants.first() else {
        log::warn!("{}: no saturated pulses, qubit not calibrated", q.name);
        return Ok(None);
    };
    let r = nominal.r.median;
    let r_stat = nominal.r.half_width();
    let r_syst = sample_sd(&he_variants.iter().map(|v| v.r.median).collect::<Vec<_>>());

    let mut le_slices = Vec::new();
    for slice in select_low_energy(&features, a.le_n_start)? {
        if slice.members.len() < a.le_min_members.max(2) {
            continue;
        }
        let opts = FitOptions {
            mcmc: ctx.mcmc_for(&[2, k as u64, slice.n as u64]),
            ..a.fit
        };
        let res = fit_le_average(&ap(&slice.members)?, q, &ctx.cfg.constants, r, &opts)?;
        le_slices.push(LeSlice {
            n: slice.n,
            members: slice.members.len(),
            tau_ss: res.param("tau_ss").expect("tau_ss is free").clone(),
            e_dep: res.param("e_dep").expect("e_dep is free").clone(),
            converged: res.converged,
        });
    }
    let (tau_ss, tau_stat, tau_syst) = if le_slices.is_empty() {
        flags.push("tau_from_high_energy".to_string());
        (nominal.tau_ss.median, nominal.tau_ss.half_width(), 0.0)
    } else {
        let w: Vec<f64> = le_slices.iter().map(|s| s.tau_ss.half_width().powi(-2)).collect();
        let sw: f64 = w.iter().sum();
        let mean = le_slices.iter().zip(&w).map(|(s, w)| w * s.tau_ss.median).sum::<f64>() / sw;
        let spread = sample_sd(&le_slices.iter().map(|s| s.tau_ss.median).collect::<Vec<_>>());
        (mean, sw.sqrt().recip(), spread)
    };
    if he_variants.iter().any(|v| !v.converged) || le_slices.iter().any(|s| !s.converged) {
        flags.push("not_converged".to_string());
    }
    Ok(Some(QubitCalibration {
        qubit: q.name.clone(),
        r,
        r_stat,
        r_syst,
        r_total: r_stat.hypot(r_syst),
        tau_ss,
        tau_stat,
        tau_syst,
        tau_total: tau_stat.hypot(tau_syst),
        he_variants,
        le_slices,
        flags,
    }))
}

pub fn calibrate(ctx: &Context) -> CliResult<Vec<QubitCalibration>> {
    let (_, records): (Header, Vec<QubitRecord>) = read_jsonl(&ctx.path(FEATURES), "features", "process")?;
    let report = read_cut_report(ctx)?;
    let (_, events) = read_events(ctx)?;
    let passed: HashMap<(u64, &str), bool> = report
        .decisions
        .iter()
        .map(|d| ((d.event_id, d.qubit.as_str()), d.quality))
        .collect();
    let waves: HashMap<(u64, &str), &BinnedWaveform> = events
        .iter()
        .flat_map(|ev| ev.waveforms.iter().map(move |w| ((ev.event_id, w.qubit.as_str()), w)))
        .collect();
    let mut by_qubit: BTreeMap<&str, Vec<&QubitRecord>> = BTreeMap::new();
    for r in &records {
        if passed.get(&(r.event_id, r.qubit.as_str())).copied().unwrap_or(false) {
            by_qubit.entry(&r.qubit).or_default().push(r);
        }
    }
    let qubits = ctx.cfg.qubit_configs();
    let results: Vec<Option<QubitCalibration>> = ctx.install(|| {
        qubits
            .par_iter()
            .enumerate()
            .map(|(k, q)| match by_qubit.get(q.name.as_str()) {
                Some(recs) => calibrate_qubit(ctx, k, q, recs, &waves),
                None => Ok(None),
            })
            .collect::<CliResult<Vec<_>>>()
    })?;
    let cal: Vec<QubitCalibration> = results.into_iter().flatten().collect();

    write_json(&ctx.path(CALIBRATION), "calibration", &ctx.hash, &cal)?;
    let rows: Vec<String> = cal
        .iter()
        .map(|c| {
            format!(
                "{},{},{},{},{},{},{},{},{},{},{}",
                c.qubit,
                num(c.r),
                num(c.r_stat),
                num(c.r_syst),
                num(c.r_total),
                num(c.tau_ss),
                num(c.tau_stat),
                num(c.tau_syst),
                num(c.tau_total),
                c.he_variants.len(),
                c.le_slices.len()
            )
        })
        .collect();
    write_csv(
        &ctx.path(CALIBRATION_CSV),
        &ctx.hash,
        "qubit,r_per_ns,r_stat_per_ns,r_syst_per_ns,r_total_per_ns,tau_ss_ms,tau_stat_ms,tau_syst_ms,tau_total_ms,n_he_variants,n_le_slices",
        &rows,
    )?;
    ctx.write_resolved_config()?;
    Ok(cal)
}
