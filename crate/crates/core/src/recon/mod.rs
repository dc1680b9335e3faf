//! Cross-qubit reconstruction: amplitude correlations, the phonon collection
//! efficiency model, the χ² vertex fit and energy spectra.

mod efficiency;
mod vertex;

pub use efficiency::{
    fit_efficiency_curve, parse_efficiency_table, EfficiencyFit, EfficiencyModel, REFERENCE_TABLE,
};
pub use vertex::{
    fiducial_cut, reconstruct_vertex, Chi2Surface, Contour, SignalObservation, VertexOptions,
    VertexSolution, CONTOUR_LEVELS,
};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// Expected island signal E_tot·ε(R) [eV].
pub fn expected_signal(r_mm: f64, e_tot: f64, m: &EfficiencyModel) -> f64 {
    m.expected_signal(r_mm, e_tot)
}

/// Pearson correlation of paired amplitudes of two qubits over events.
pub fn amplitude_correlation(phi: &[f64], xi: &[f64]) -> Result<f64> {
    if phi.len() != xi.len() {
        return Err(Error::Precondition(format!(
            "amplitude series differ in length: {} vs {}",
            phi.len(),
            xi.len()
        )));
    }
    if phi.len() < 3 {
        return Err(Error::Precondition(format!("need at least 3 events, got {}", phi.len())));
    }
    if phi.iter().chain(xi).any(|v| !v.is_finite()) {
        return Err(Error::Precondition("amplitudes must be finite".into()));
    }
    let n = phi.len() as f64;
    let mp = phi.iter().sum::<f64>() / n;
    let mx = xi.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in phi.iter().zip(xi) {
        let (da, db) = (a - mp, b - mx);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("an amplitude series has zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Log-spaced energy bins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumBinning {
    /// [eV]
    pub e_min: f64,
    pub e_max: f64,
    pub n_bins: usize,
}

impl SpectrumBinning {
    pub fn edges(&self) -> Vec<f64> {
        let ratio = (self.e_max / self.e_min).ln();
        (0..=self.n_bins)
            .map(|i| self.e_min * (ratio * i as f64 / self.n_bins as f64).exp())
            .collect()
    }

    /// Bin holding `e`, if inside the range.
    pub fn index(&self, e: f64) -> Option<usize> {
        if !(e >= self.e_min && e < self.e_max) {
            return None;
        }
        let f = (e / self.e_min).ln() / (self.e_max / self.e_min).ln();
        Some(((f * self.n_bins as f64) as usize).min(self.n_bins - 1))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.e_min > 0.0 && self.e_max > self.e_min && self.n_bins > 0) {
            return Err(Error::Config(format!("invalid spectrum binning {self:?}")));
        }
        Ok(())
    }
}

/// Divides counts by live time [s] and a detection efficiency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub live_time: f64,
    pub efficiency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// Normalized contents and their Poisson errors; equal to the raw counts
    /// without a normalization.
    pub values: Vec<f64>,
    pub errors: Vec<f64>,
    pub overflow: u64,
    pub underflow: u64,
}

pub fn build_spectrum(energies: &[f64], binning: &SpectrumBinning, norm: Option<Normalization>) -> Result<Spectrum> {
    binning.validate()?;
    let mut counts = vec![0u64; binning.n_bins];
    let (mut under, mut over) = (0, 0);
    for &e in energies {
        match binning.index(e) {
            Some(i) => counts[i] += 1,
            None if e < binning.e_min => under += 1,
            None => over += 1,
        }
    }
    let scale = match norm {
        Some(n) => {
            if !(n.live_time > 0.0 && n.efficiency > 0.0) {
                return Err(Error::Config(format!("invalid normalization {n:?}")));
            }
            1.0 / (n.live_time * n.efficiency)
        }
        None => 1.0,
    };
    Ok(Spectrum {
        edges: binning.edges(),
        values: counts.iter().map(|&c| c as f64 * scale).collect(),
        errors: counts.iter().map(|&c| (c as f64).sqrt() * scale).collect(),
        counts,
        overflow: over,
        underflow: under,
    })
}

/// Shape comparison of two histograms with different totals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeTest {
    pub chi2: f64,
    pub ndf: usize,
    pub p_value: f64,
}

/// Two-sample χ² test of histogram shapes; bins empty in both are skipped.
pub fn two_sample_chi2(a: &[u64], b: &[u64]) -> Result<ShapeTest> {
    if a.len() != b.len() {
        return Err(Error::Precondition("histograms differ in bin count".into()));
    }
    let na: u64 = a.iter().sum();
    let nb: u64 = b.iter().sum();
    if na == 0 || nb == 0 {
        return Err(Error::Precondition("empty histogram".into()));
    }
    let (ka, kb) = (((nb as f64) / na as f64).sqrt(), ((na as f64) / nb as f64).sqrt());
    let mut chi2 = 0.0;
    let mut used = 0;
    for (&x, &y) in a.iter().zip(b) {
        if x + y == 0 {
            continue;
        }
        used += 1;
        chi2 += (ka * x as f64 - kb * y as f64).powi(2) / (x + y) as f64;
    }
    let ndf = used.max(2) - 1;
    let dist = ChiSquared::new(ndf as f64).map_err(|e| Error::Fit(e.to_string()))?;
    Ok(ShapeTest {
        chi2,
        ndf,
        p_value: dist.sf(chi2),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn correlation_limits() {
        let a = [1.0, 2.0, 4.0, 3.0, 7.0];
        assert!((amplitude_correlation(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((amplitude_correlation(&a, &neg).unwrap() + 1.0).abs() < 1e-15);
        let b = [0.3, 0.1, 0.9, 0.4, 0.2];
        assert_eq!(amplitude_correlation(&a, &b).unwrap(), amplitude_correlation(&b, &a).unwrap());
        assert!(matches!(
            amplitude_correlation(&a, &[1.0; 5]),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(amplitude_correlation(&a[..2], &b[..2]).is_err());
    }

    #[test]
    fn independent_series_are_uncorrelated() {
        let mut hits = 0;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
            let b: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
            if amplitude_correlation(&a, &b).unwrap().abs() < 0.05 {
                hits += 1;
            }
        }
        assert!(hits >= 99);
    }

    #[test]
    fn single_event_spectrum() {
        let bins = SpectrumBinning {
            e_min: 1e4,
            e_max: 1e6,
            n_bins: 20,
        };
        let s = build_spectrum(&[374e3], &bins, None).unwrap();
        assert_eq!(s.counts.iter().sum::<u64>(), 1);
        let i = s.counts.iter().position(|&c| c == 1).unwrap();
        assert!(s.edges[i] <= 374e3 && 374e3 < s.edges[i + 1]);
        assert_eq!(s.errors[i], 1.0);
    }

    #[test]
    fn doubling_live_time_halves_rates() {
        let bins = SpectrumBinning {
            e_min: 1.0,
            e_max: 100.0,
            n_bins: 4,
        };
        let e = [2.0, 3.0, 50.0, 70.0, 90.0];
        let a = build_spectrum(&e, &bins, Some(Normalization { live_time: 10.0, efficiency: 0.5 })).unwrap();
        let b = build_spectrum(&e, &bins, Some(Normalization { live_time: 20.0, efficiency: 0.5 })).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert_eq!(*x, 2.0 * y);
        }
        assert!(build_spectrum(&[], &bins, None).unwrap().counts.iter().all(|c| *c == 0));
    }

    #[test]
    fn identical_shapes_pass_the_shape_test() {
        let a = [10, 20, 30, 40];
        let b = [20, 40, 60, 80];
        let t = two_sample_chi2(&a, &b).unwrap();
        assert!(t.chi2 < 1e-12);
        assert_eq!(t.ndf, 3);
        assert!((t.p_value - 1.0).abs() < 1e-12);
        let c = [80, 60, 40, 20];
        assert!(two_sample_chi2(&a, &c).unwrap().p_value < 1e-6);
    }
}
