//! Coverage and sensitivity studies of the staged fits on simulated pulses.

use qpburst::fit::{fit_he_average, fit_le_average, fit_waveform, FitOptions, McmcSettings};
use qpburst::physics::{source_run_qubits, BurstParams, PhysicsConstants, PulseModel, QubitConfig};
use qpburst::readout::{event_rng, simulate_waveform, ReadoutTiming};
use qpburst::waveform::{average_pulse, BinnedWaveform};

const R: f64 = 0.005;
const TAU: f64 = 6.0;

fn setup() -> (QubitConfig, PhysicsConstants, PulseModel, ReadoutTiming) {
    let q = source_run_qubits().remove(0);
    let c = PhysicsConstants::default();
    let m = PulseModel::new(&c, &q).unwrap();
    (q, c, m, ReadoutTiming::default())
}

fn opts(seed: u64, steps: usize, burn_in: usize) -> FitOptions {
    FitOptions {
        mcmc: McmcSettings {
            n_chains: 4,
            n_steps: steps,
            burn_in,
            seed,
            adapt_covariance: true,
        },
        ..FitOptions::default()
    }
}

fn mock_ap(e: f64, n_avg: u64, seed: u64) -> BinnedWaveform {
    let (q, _, m, timing) = setup();
    let p = BurstParams::new(e, R, TAU, 0.0);
    let ws: Vec<BinnedWaveform> = (0..n_avg)
        .map(|i| simulate_waveform(&m, &q, &timing, Some(&p), 0.0, &mut event_rng(seed, i)).unwrap())
        .collect();
    average_pulse(&ws.iter().collect::<Vec<_>>()).unwrap()
}

#[test]
fn high_energy_fit_covers_true_r() {
    let (q, c, ..) = setup();
    let mut hits = 0;
    for rep in 0..100u64 {
        let ap = mock_ap(1e5, 50, 1_000_000 * (rep + 1));
        let res = fit_he_average(&ap, &q, &c, &opts(rep, 3000, 1000)).unwrap();
        let r = res.param("r").unwrap();
        if r.lo <= R && R <= r.hi {
            hits += 1;
        }
    }
    println!("r inside 68% interval in {hits}/100");
    assert!(hits >= 55, "{hits}/100");
}

#[test]
fn r_width_shrinks_with_more_averaged_pulses() {
    let (q, c, ..) = setup();
    let width = |n| {
        let ap = mock_ap(1e5, n, 77);
        fit_he_average(&ap, &q, &c, &opts(3, 3000, 1000)).unwrap().param("r").unwrap().half_width()
    };
    let (w10, w100) = (width(10), width(100));
    assert!(w100 < 0.5 * w10, "{w10} vs {w100}");
}

#[test]
fn low_energy_fit_covers_true_tau() {
    let (q, c, ..) = setup();
    let mut hits = 0;
    for rep in 0..100u64 {
        let ap = mock_ap(50.0, 20, 3_000_000 * (rep + 1));
        let res = fit_le_average(&ap, &q, &c, R, &opts(rep, 3000, 1000)).unwrap();
        let t = res.param("tau_ss").unwrap();
        if t.lo <= TAU && TAU <= t.hi {
            hits += 1;
        }
    }
    println!("tau inside 68% interval in {hits}/100");
    assert!(hits >= 55, "{hits}/100");
}

#[test]
fn low_energy_tau_barely_depends_on_fixed_r() {
    let (q, c, ..) = setup();
    let ap = mock_ap(50.0, 20, 5);
    let fit = |r| fit_le_average(&ap, &q, &c, r, &opts(8, 4000, 1000)).unwrap();
    let nominal = fit(R);
    let t0 = nominal.param("tau_ss").unwrap();
    for scale in [0.5, 1.5] {
        let t = fit(R * scale).param("tau_ss").unwrap().median;
        assert!((t - t0.median).abs() < t0.half_width(), "r×{scale}: {t} vs {}", t0.median);
    }
}

#[test]
fn single_waveform_energy_at_100_ev() {
    let (q, c, m, timing) = setup();
    let p = BurstParams::new(100.0, R, TAU, 0.0);
    let mut medians: Vec<f64> = (0..500u64)
        .map(|i| {
            let w = simulate_waveform(&m, &q, &timing, Some(&p), 0.0, &mut event_rng(99, i)).unwrap();
            let res = fit_waveform(&w, &q, &c, R, 0.1 * R, &opts(i, 2000, 500)).unwrap();
            res.param("e_dep").unwrap().median
        })
        .collect();
    medians.sort_by(f64::total_cmp);
    let med = 0.5 * (medians[249] + medians[250]);
    assert!((med / 100.0 - 1.0).abs() < 0.1, "median {med}");
}
