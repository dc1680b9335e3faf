use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use qpburst::fit::{fit_waveform, write_chain_dump, FitOptions, ParamSummary, PosteriorResult};
use qpburst::physics::QubitConfig;
use qpburst::waveform::BinnedWaveform;

use super::calibrate::{read_cut_report, QubitCalibration};
use super::process::read_events;
use super::{num, Context};
use crate::artifacts::{read_json, write_csv, write_jsonl, Header, CALIBRATION, CHAINS_DIR, FITS, FIT_SCATTER};
use crate::error::{CliError, CliResult};

/// Posterior summary of one waveform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub event_id: u64,
    pub qubit: String,
    pub trigger_time: f64,
    pub params: Vec<ParamSummary>,
    pub fixed: Vec<(String, f64)>,
    pub acceptance_rate: f64,
    pub converged: bool,
    pub flags: Vec<String>,
}

impl FitRecord {
    pub fn param(&self, name: &str) -> Option<&ParamSummary> {
        self.params.iter().find(|p| p.name == name)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FitSummary {
    pub fits: usize,
    pub not_converged: usize,
}

pub(crate) fn read_calibration(ctx: &Context) -> CliResult<Vec<QubitCalibration>> {
    let path = match &ctx.cfg.analysis.calibration {
        Some(p) => p.clone(),
        None => ctx.path(CALIBRATION),
    };
    Ok(read_json(&path, "calibration", "calibrate")?.body)
}

/// Fits every waveform of the events passing the quality cuts, with r a
/// Gaussian nuisance from the calibration.
pub fn fit(ctx: &Context, dump_chains: bool) -> CliResult<(FitSummary, Vec<FitRecord>)> {
    let calibration = read_calibration(ctx)?;
    let report = read_cut_report(ctx)?;
    let (_, events) = read_events(ctx)?;
    let cal: HashMap<&str, &QubitCalibration> = calibration.iter().map(|c| (c.qubit.as_str(), c)).collect();
    let qubits: Vec<QubitConfig> = ctx.cfg.qubit_configs();
    let index: HashMap<&str, usize> = qubits.iter().enumerate().map(|(k, q)| (q.name.as_str(), k)).collect();
    let failed: BTreeSet<u64> = report
        .decisions
        .iter()
        .filter(|d| !d.quality)
        .map(|d| d.event_id)
        .collect();

    let mut tasks: Vec<(u64, f64, &BinnedWaveform)> = Vec::new();
    let mut skipped: BTreeSet<&str> = BTreeSet::new();
    for ev in events.iter().filter(|e| !failed.contains(&e.event_id)) {
        for w in &ev.waveforms {
            if cal.contains_key(w.qubit.as_str()) && index.contains_key(w.qubit.as_str()) {
                tasks.push((ev.event_id, ev.trigger_time, w));
            } else {
                skipped.insert(&w.qubit);
            }
        }
    }
    for q in skipped {
        log::warn!("qubit {q} has no calibration; its waveforms are not fitted");
    }
    log::info!("fitting {} waveforms", tasks.len());

    let results: Vec<(FitRecord, PosteriorResult)> = ctx.install(|| {
        tasks
            .par_iter()
            .map(|&(event_id, trigger_time, w)| {
                let k = index[w.qubit.as_str()];
                let c = cal[w.qubit.as_str()];
                let opts = FitOptions {
                    mcmc: ctx.mcmc_for(&[3, event_id, k as u64]),
                    ..ctx.cfg.analysis.fit
                };
                let res = fit_waveform(w, &qubits[k], &ctx.cfg.constants, c.r, c.r_total, &opts)?;
                Ok((
                    FitRecord {
                        event_id,
                        qubit: w.qubit.clone(),
                        trigger_time,
                        params: res.summaries.clone(),
                        fixed: res.fixed.clone(),
                        acceptance_rate: res.acceptance_rate,
                        converged: res.converged,
                        flags: res.flags.clone(),
                    },
                    res,
                ))
            })
            .collect::<CliResult<Vec<_>>>()
    })?;

    if dump_chains {
        let dir = ctx.path(CHAINS_DIR);
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        for (rec, res) in &results {
            let path = dir.join(format!("event{}_{}.qpchain", rec.event_id, rec.qubit));
            let file = std::fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
            write_chain_dump(res, std::io::BufWriter::new(file)).map_err(|e| CliError::io(&path, e))?;
        }
    }
    let records: Vec<FitRecord> = results.into_iter().map(|(r, _)| r).collect();
    write_jsonl(&ctx.path(FITS), &Header::new("fits", &ctx.hash, records.len()), &records)?;
    let rows: Vec<String> = records
        .iter()
        .filter_map(|r| {
            let e = r.param("e_dep")?;
            let t = r.param("tau_ss")?;
            Some(format!(
                "{},{},{},{},{},{},{},{},{},{}",
                r.event_id,
                r.qubit,
                num(e.median),
                num(e.lo),
                num(e.hi),
                num(e.half_width() / e.median),
                num(t.median),
                num(t.lo),
                num(t.hi),
                r.converged
            ))
        })
        .collect();
    write_csv(
        &ctx.path(FIT_SCATTER),
        &ctx.hash,
        "event_id,qubit,e_dep_eV,e_dep_lo_eV,e_dep_hi_eV,sigma_e_over_e,tau_ss_ms,tau_ss_lo_ms,tau_ss_hi_ms,converged",
        &rows,
    )?;
    ctx.write_resolved_config()?;
    let summary = FitSummary {
        fits: records.len(),
        not_converged: records.iter().filter(|r| !r.converged).count(),
    };
    Ok((summary, records))
}
