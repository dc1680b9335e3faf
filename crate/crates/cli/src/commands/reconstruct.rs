use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use qpburst::recon::{
    build_spectrum, fit_efficiency_curve, parse_efficiency_table, reconstruct_vertex, EfficiencyModel,
    Normalization, SignalObservation, Spectrum, VertexSolution, REFERENCE_TABLE,
};

use super::calibrate::read_cut_report;
use super::fit::FitRecord;
use super::process::read_events;
use super::{num, Context};
use crate::artifacts::{read_jsonl, write_csv, write_jsonl, Header, FITS, SPECTRUM, VERTICES};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexRecord {
    pub event_id: u64,
    pub solution: Option<VertexSolution>,
    /// Why no solution exists.
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReconstructSummary {
    pub events: usize,
    pub reconstructed: usize,
    pub fiducial: usize,
    pub efficiency: EfficiencyModel,
    pub spectrum: Spectrum,
}

fn efficiency_model(ctx: &Context) -> CliResult<EfficiencyModel> {
    let text = match &ctx.cfg.analysis.efficiency_csv {
        Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?,
        None => REFERENCE_TABLE.to_string(),
    };
    Ok(fit_efficiency_curve(&parse_efficiency_table(&text)?)?.model)
}

/// Vertex and total energy per event from the per-qubit energies, then the
/// spectrum of fiducial events normalized by live time, cut efficiency and
/// fiducial fraction.
pub fn reconstruct(ctx: &Context) -> CliResult<ReconstructSummary> {
    let (_, fits): (Header, Vec<FitRecord>) = read_jsonl(&ctx.path(FITS), "fits", "fit")?;
    let (events_header, _) = read_events(ctx)?;
    let report = read_cut_report(ctx)?;
    let model = efficiency_model(ctx)?;
    let geometry = &ctx.cfg.geometry;
    let positions: BTreeMap<String, (f64, f64)> = ctx
        .cfg
        .qubit_configs()
        .into_iter()
        .map(|q| (q.name, q.position))
        .collect();

    let mut by_event: BTreeMap<u64, Vec<SignalObservation>> = BTreeMap::new();
    for f in &fits {
        let (Some(e), Some(&pos)) = (f.param("e_dep"), positions.get(&f.qubit)) else {
            continue;
        };
        by_event.entry(f.event_id).or_default().push(SignalObservation {
            qubit: f.qubit.clone(),
            position: pos,
            s_obs: e.median,
            sigma: e.half_width(),
        });
    }
    let groups: Vec<(u64, Vec<SignalObservation>)> = by_event.into_iter().collect();
    let vertex_opts = ctx.cfg.analysis.vertex;
    let vertices: Vec<VertexRecord> = ctx.install(|| {
        groups
            .par_iter()
            .map(|(id, obs)| match reconstruct_vertex(obs, geometry, &model, &vertex_opts) {
                Ok(v) => VertexRecord {
                    event_id: *id,
                    solution: Some(v),
                    error: None,
                },
                Err(e) => VertexRecord {
                    event_id: *id,
                    solution: None,
                    error: Some(e.to_string()),
                },
            })
            .collect()
    });

    let energies: Vec<f64> = vertices
        .iter()
        .filter_map(|v| v.solution.as_ref())
        .filter(|s| s.fiducial_pass)
        .map(|s| s.e_tot)
        .collect();
    let eps_cuts = report
        .efficiencies
        .iter()
        .find(|e| e.qubit == "all")
        .map_or(0.0, |e| e.eps_q);
    let norm = events_header.live_time.and_then(|t| {
        let eff = eps_cuts * geometry.fiducial_fraction();
        (t > 0.0 && eff > 0.0).then_some(Normalization {
            live_time: t,
            efficiency: eff,
        })
    });
    let spectrum = build_spectrum(&energies, &ctx.cfg.analysis.spectrum, norm)?;

    write_jsonl(&ctx.path(VERTICES), &Header::new("vertices", &ctx.hash, vertices.len()), &vertices)?;
    let rows: Vec<String> = (0..spectrum.counts.len())
        .map(|i| {
            format!(
                "{},{},{},{},{}",
                num(spectrum.edges[i]),
                num(spectrum.edges[i + 1]),
                spectrum.counts[i],
                num(spectrum.values[i]),
                num(spectrum.errors[i])
            )
        })
        .collect();
    let unit = if norm.is_some() { "per_s" } else { "counts" };
    write_csv(
        &ctx.path(SPECTRUM),
        &ctx.hash,
        &format!("e_lo_eV,e_hi_eV,counts,rate_{unit},rate_err_{unit}"),
        &rows,
    )?;
    ctx.write_resolved_config()?;
    Ok(ReconstructSummary {
        events: vertices.len(),
        reconstructed: vertices.iter().filter(|v| v.solution.is_some()).count(),
        fiducial: energies.len(),
        efficiency: model,
        spectrum,
    })
}
