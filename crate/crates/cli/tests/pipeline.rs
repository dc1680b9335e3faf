use std::path::Path;
use std::process::Command;

use qpburst::physics::{BurstParams, PulseModel};
use qpburst::readout::ReadoutTiming;
use qpburst::recon::EfficiencyModel;
use qpburst::waveform::BinnedWaveform;
use qpburst_cli::artifacts::{read_jsonl, EventRecord, Header, TruthRecord, EVENTS, TRUTH};
use qpburst_cli::commands::{self, Context};
use qpburst_cli::RunConfig;

const FAST_MCMC: &str = "
[analysis.fit.mcmc]
n_chains = 4
n_steps = 1200
burn_in = 400
";

fn context(toml: &str, dir: &Path, workers: Option<usize>) -> Context {
    Context::new(RunConfig::parse(toml).unwrap(), Some(dir.to_path_buf()), workers).unwrap()
}

fn events(dir: &Path) -> (Header, Vec<EventRecord>) {
    read_jsonl(&dir.join(EVENTS), "events", "simulate").unwrap()
}

#[test]
fn zero_events_write_a_header_only_file() {
    let tmp = tempfile::tempdir().unwrap();
    let ctx = context("[simulation]\nn_events = 0", tmp.path(), Some(1));
    let summary = commands::simulate(&ctx).unwrap();
    assert_eq!(summary.events, 0);
    let (header, records) = events(tmp.path());
    assert_eq!(header.records, 0);
    assert!(records.is_empty());
    let text = std::fs::read_to_string(tmp.path().join(EVENTS)).unwrap();
    assert_eq!(text.lines().count(), 1);

    let processed = commands::process(&ctx).unwrap();
    assert_eq!(processed.records, 0);
}

#[test]
fn same_seed_gives_identical_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = "seed = 5\n[simulation]\nn_events = 20";
    commands::simulate(&context(cfg, a.path(), Some(1))).unwrap();
    commands::simulate(&context(cfg, b.path(), Some(2))).unwrap();
    for name in [EVENTS, TRUTH] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name} differs");
    }

    let c = tempfile::tempdir().unwrap();
    commands::simulate(&context("seed = 6\n[simulation]\nn_events = 20", c.path(), Some(1))).unwrap();
    assert_ne!(
        std::fs::read(a.path().join(EVENTS)).unwrap(),
        std::fs::read(c.path().join(EVENTS)).unwrap()
    );
}

#[test]
fn fit_without_calibration_is_a_dependency_error() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.toml");
    std::fs::write(&config, "[simulation]\nn_events = 3").unwrap();
    let run = tmp.path().join("run");
    let bin = env!("CARGO_BIN_EXE_qpburst");
    for stage in ["simulate", "process"] {
        let out = Command::new(bin)
            .args([stage, "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&run)
            .output()
            .unwrap();
        assert!(out.status.success(), "{stage}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = Command::new(bin)
        .args(["fit", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&run)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let report: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(report["error"], "dependency");
    assert!(report["message"].as_str().unwrap().contains("calibrate"));
}

#[test]
fn unknown_config_key_exits_with_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("bad.toml");
    std::fs::write(&config, "[simulation]\nn_event = 3").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_qpburst"))
        .args(["simulate", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

fn run_pipeline(toml: &str, dir: &Path, workers: usize) {
    let ctx = context(toml, dir, Some(workers));
    commands::simulate(&ctx).unwrap();
    commands::process(&ctx).unwrap();
    let cal = commands::calibrate(&ctx).unwrap();
    assert!(!cal.is_empty(), "no qubit calibrated");
    let (fits, _) = commands::fit(&ctx, true).unwrap();
    assert!(fits.fits > 0);
    commands::reconstruct(&ctx).unwrap();
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn pipeline_is_reproducible_across_worker_counts() {
    let toml = format!(
        "seed = 3\n[simulation]\nn_events = 50\ndeposit = \"direct\"\n\
         source = {{ kind = \"log_flat\", e_min = 10.0, e_max = 1e5 }}\n{FAST_MCMC}"
    );
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_pipeline(&toml, a.path(), 1);
    run_pipeline(&toml, b.path(), 3);
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert_eq!(
        ta.iter().map(|(n, _)| n).collect::<Vec<_>>(),
        tb.iter().map(|(n, _)| n).collect::<Vec<_>>()
    );
    assert!(ta.iter().any(|(n, _)| n.ends_with(".qpchain")));
    for ((name, x), (_, y)) in ta.iter().zip(&tb) {
        assert!(x == y, "{name} differs between worker counts");
    }
}

/// Expected error count of a waveform under the fit model: each valid trial
/// of bin i errs with the model probability averaged over the bin's cycles.
fn expected_errors(w: &BinnedWaveform, model: &PulseModel, p: &BurstParams, timing: &ReadoutTiming) -> f64 {
    (w.pre_trigger_bins..w.len())
        .map(|i| {
            let start = w.bin_start(i);
            let mean_p = (0..timing.bin_size)
                .map(|c| model.observed_probability(start + c as f64 * timing.cycle_period, p))
                .sum::<f64>()
                / timing.bin_size as f64;
            w.valid[i] as f64 * mean_p
        })
        .sum()
}

#[test]
fn fixed_energy_waveforms_follow_the_efficiency_model() {
    let tmp = tempfile::tempdir().unwrap();
    let ctx = context(
        "seed = 9\n[simulation]\nn_events = 100\nsource = { kind = \"monoenergetic\", energy = 40e3 }",
        tmp.path(),
        Some(1),
    );
    commands::simulate(&ctx).unwrap();
    let (_, evs) = events(tmp.path());
    let (_, truth): (Header, Vec<TruthRecord>) = read_jsonl(&tmp.path().join(TRUTH), "truth", "simulate").unwrap();
    let cfg = &ctx.cfg;
    let eff = EfficiencyModel::reference();
    let timing = cfg.simulation.timing;

    for q in cfg.qubit_configs() {
        let model = PulseModel::new(&cfg.constants, &q).unwrap();
        let gamma = qpburst::physics::gamma_from_baseline(&q).unwrap();
        let mut diffs = Vec::new();
        for (ev, t) in evs.iter().zip(&truth) {
            let (x, y) = t.position.unwrap();
            let r = (q.position.0 - x).hypot(q.position.1 - y);
            let e_dep = eff.expected_signal(r, 40e3);
            assert!((t.e_dep[&q.name] - e_dep).abs() <= 1e-9 * e_dep);

            let w = ev.waveforms.iter().find(|w| w.qubit == q.name).unwrap();
            let p = BurstParams::new(e_dep, cfg.simulation.r, cfg.simulation.tau_ss, gamma);
            let observed: u64 = (w.pre_trigger_bins..w.len()).map(|i| w.n[i] as u64).sum();
            diffs.push(observed as f64 - expected_errors(w, &model, &p, &timing));
        }
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() < 3.0 * sd / n.sqrt(), "{}: mean excess {mean} ± {}", q.name, sd / n.sqrt());
    }
}
