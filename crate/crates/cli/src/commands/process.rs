use rayon::prelude::*;
use serde::Serialize;

use qpburst::waveform::{apply_quality_cuts, compute_features, CutEfficiency, QubitRecord};

use super::Context;
use crate::artifacts::{read_jsonl, write_json, write_jsonl, EventRecord, Header, CUT_REPORT, EVENTS, FEATURES};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Serialize)]
pub struct ProcessSummary {
    pub records: usize,
    pub efficiencies: Vec<CutEfficiency>,
}

pub(crate) fn read_events(ctx: &Context) -> CliResult<(Header, Vec<EventRecord>)> {
    let path = ctx.path(EVENTS);
    let (header, events): (Header, Vec<EventRecord>) = read_jsonl(&path, "events", "simulate")?;
    for (i, ev) in events.iter().enumerate() {
        for w in &ev.waveforms {
            w.validate().map_err(|e| CliError::Format {
                path: path.clone(),
                line: i + 2,
                message: e.to_string(),
            })?;
        }
    }
    Ok((header, events))
}

pub fn process(ctx: &Context) -> CliResult<ProcessSummary> {
    let (_, events) = read_events(ctx)?;
    let per_event: Vec<Vec<QubitRecord>> = ctx.install(|| {
        events
            .par_iter()
            .map(|ev| {
                ev.waveforms
                    .iter()
                    .map(|w| {
                        Ok(QubitRecord {
                            event_id: ev.event_id,
                            trigger_time: ev.trigger_time,
                            qubit: w.qubit.clone(),
                            features: compute_features(w)?,
                        })
                    })
                    .collect::<qpburst::Result<Vec<_>>>()
            })
            .collect::<qpburst::Result<Vec<_>>>()
    })?;
    let records: Vec<QubitRecord> = per_event.into_iter().flatten().collect();
    write_jsonl(&ctx.path(FEATURES), &Header::new("features", &ctx.hash, records.len()), &records)?;
    let report = if records.is_empty() {
        qpburst::waveform::CutReport {
            thresholds: Default::default(),
            decisions: Vec::new(),
            efficiencies: Vec::new(),
        }
    } else {
        apply_quality_cuts(&records, &ctx.cfg.analysis.cuts)?
    };
    write_json(&ctx.path(CUT_REPORT), "cut_report", &ctx.hash, &report)?;
    ctx.write_resolved_config()?;
    for e in &report.efficiencies {
        log::info!(
            "{}: eps_q {:.3} eps_a {:.3} eps_tot {:.3}",
            e.qubit,
            e.eps_q,
            e.eps_a,
            e.eps_tot
        );
    }
    Ok(ProcessSummary {
        records: records.len(),
        efficiencies: report.efficiencies,
    })
}
