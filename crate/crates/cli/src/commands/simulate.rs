use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use qpburst::physics::{BurstParams, PulseModel};
use qpburst::readout::{event_rng, generate_synthetic_source, simulate_waveform};

use super::Context;
use crate::artifacts::{write_jsonl, EventRecord, Header, TruthRecord, EVENTS, TRUTH};
use crate::config::DepositMode;
use crate::error::CliResult;

#[derive(Debug, Clone, Serialize)]
pub struct SimulateSummary {
    pub events: usize,
    pub live_time: f64,
}

/// Stream of qubit `k` inside event `i`; stream 0 belongs to the event's
/// impact point and energy.
fn qubit_rng(seed: u64, event: u64, k: usize) -> ChaCha8Rng {
    let mut rng = event_rng(seed, event);
    rng.set_stream(k as u64 + 1);
    rng
}

/// Direct-mode deposits use a stream family disjoint from the waveforms'.
fn deposit_rng(seed: u64, event: u64, k: usize) -> ChaCha8Rng {
    let mut rng = event_rng(seed, event);
    rng.set_stream(1 << 32 | k as u64);
    rng
}

pub fn simulate(ctx: &Context) -> CliResult<SimulateSummary> {
    let cfg = &ctx.cfg;
    let sim = &cfg.simulation;
    let qubits = cfg.qubit_configs();
    let models = qubits
        .iter()
        .map(|q| PulseModel::new(&cfg.constants, q))
        .collect::<qpburst::Result<Vec<_>>>()?;
    let source = generate_synthetic_source(
        &sim.source,
        sim.n_events,
        &cfg.geometry,
        &sim.efficiency,
        sim.rate,
        cfg.seed,
    )?;
    log::info!("simulating {} events on {} qubits", source.len(), qubits.len());

    let results: Vec<(EventRecord, TruthRecord)> = ctx.install(|| {
        source
            .par_iter()
            .map(|ev| {
                let deposits: BTreeMap<String, f64> = qubits
                    .iter()
                    .enumerate()
                    .map(|(k, q)| {
                        let e = match sim.deposit {
                            DepositMode::Geometry => ev.per_qubit_edep.get(&q.name).copied().unwrap_or(0.0),
                            DepositMode::Direct => sim.source.sample(&mut deposit_rng(cfg.seed, ev.event_id, k)),
                        };
                        (q.name.clone(), e)
                    })
                    .collect();
                let waveforms = qubits
                    .iter()
                    .zip(&models)
                    .enumerate()
                    .map(|(k, (q, m))| {
                        let e = deposits[&q.name];
                        let burst = (e > 0.0).then(|| BurstParams::new(e, sim.r, sim.tau_ss, 0.0));
                        let mut rng = qubit_rng(cfg.seed, ev.event_id, k);
                        simulate_waveform(m, q, &sim.timing, burst.as_ref(), ev.arrival_time, &mut rng)
                    })
                    .collect::<qpburst::Result<Vec<_>>>()?;
                let geometric = sim.deposit == DepositMode::Geometry;
                Ok((
                    EventRecord {
                        event_id: ev.event_id,
                        trigger_time: ev.arrival_time,
                        waveforms,
                    },
                    TruthRecord {
                        event_id: ev.event_id,
                        arrival_time: ev.arrival_time,
                        position: geometric.then_some(ev.true_position),
                        e_tot: geometric.then_some(ev.true_energy_total),
                        e_dep: deposits,
                        r: sim.r,
                        tau_ss: sim.tau_ss,
                    },
                ))
            })
            .collect::<CliResult<Vec<_>>>()
    })?;
    let (events, truth): (Vec<_>, Vec<_>) = results.into_iter().unzip();

    let live_time = source.last().map_or(0.0, |e| e.arrival_time);
    let mut header = Header::new("events", &ctx.hash, events.len());
    header.live_time = Some(live_time);
    header.qubits = qubits.iter().map(|q| q.name.clone()).collect();
    write_jsonl(&ctx.path(EVENTS), &header, &events)?;
    let mut th = Header::new("truth", &ctx.hash, truth.len());
    th.live_time = Some(live_time);
    write_jsonl(&ctx.path(TRUTH), &th, &truth)?;
    ctx.write_resolved_config()?;
    Ok(SimulateSummary {
        events: events.len(),
        live_time,
    })
}
