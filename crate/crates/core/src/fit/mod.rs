//! Binomial likelihood of binned waveforms, priors, and the staged burst fits
//! (averaged high-energy pulse, averaged low-energy pulse, single waveform).
//!
//! Sampling happens in transformed coordinates: parameters with a log-flat
//! prior are sampled in their logarithm, all others linearly. Results are
//! always reported in natural units (eV, ns⁻¹, ms).

mod mcmc;

pub use mcmc::{
    mh_sample, read_chain_dump, split_r_hat, write_chain_dump, LogDensity, McmcSettings,
    ParamSummary, PosteriorResult, R_HAT_LIMIT,
};

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::physics::{BurstParams, PhysicsConstants, PulseModel, QubitConfig};
use crate::waveform::{compute_features, BinnedWaveform};

fn infinite() -> f64 {
    f64::INFINITY
}

/// Prior of one burst parameter. Densities are unnormalized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Prior {
    Flat {
        lo: f64,
        hi: f64,
    },
    /// Flat in ln x on [lo, hi], lo > 0.
    LogFlat {
        lo: f64,
        hi: f64,
    },
    /// Normal(mean, sigma) truncated to [lo, hi].
    Gaussian {
        mean: f64,
        sigma: f64,
        #[serde(default)]
        lo: f64,
        #[serde(default = "infinite")]
        hi: f64,
    },
    Fixed {
        value: f64,
    },
}

impl Prior {
    pub fn validate(&self, name: &str) -> Result<()> {
        let ok = match *self {
            Prior::Flat { lo, hi } => lo.is_finite() && hi.is_finite() && lo < hi,
            Prior::LogFlat { lo, hi } => lo > 0.0 && hi.is_finite() && lo < hi,
            Prior::Gaussian { mean, sigma, lo, hi } => {
                mean.is_finite() && sigma > 0.0 && sigma.is_finite() && lo < hi
            }
            Prior::Fixed { value } => value.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid prior for {name}: {self:?}")))
        }
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self, Prior::Fixed { .. })
    }

    /// ln π(x) up to a constant; −∞ outside the support.
    pub fn ln_density(&self, x: f64) -> f64 {
        match *self {
            Prior::Flat { lo, hi } if x >= lo && x <= hi => 0.0,
            Prior::LogFlat { lo, hi } if x >= lo && x <= hi => -x.ln(),
            Prior::Gaussian { mean, sigma, lo, hi } if x >= lo && x <= hi => {
                -0.5 * ((x - mean) / sigma).powi(2)
            }
            Prior::Fixed { value } if x == value => 0.0,
            _ => f64::NEG_INFINITY,
        }
    }

    fn log_coordinates(&self) -> bool {
        matches!(self, Prior::LogFlat { .. })
    }

    fn from_sampling(&self, u: f64) -> f64 {
        if self.log_coordinates() {
            u.exp()
        } else {
            u
        }
    }

    /// Starting points for the grid scan, in sampling coordinates.
    fn grid(&self, n: usize) -> Vec<f64> {
        match *self {
            Prior::Flat { lo, hi } => (0..n).map(|i| lo + (hi - lo) * (i as f64 + 0.5) / n as f64).collect(),
            Prior::LogFlat { lo, hi } => {
                let (a, b) = (lo.ln(), hi.ln());
                (0..n).map(|i| a + (b - a) * (i as f64 + 0.5) / n as f64).collect()
            }
            Prior::Gaussian { mean, lo, hi, .. } => vec![mean.clamp(lo, hi)],
            Prior::Fixed { value } => vec![value],
        }
    }

    /// Rough width of the support in sampling coordinates.
    fn typical_step(&self, at: f64) -> f64 {
        match *self {
            Prior::Flat { lo, hi } => (0.05 * (hi - lo)).min(0.1 * at.abs().max(1e-3 * (hi - lo))),
            Prior::LogFlat { .. } => 0.1,
            Prior::Gaussian { sigma, .. } => sigma,
            Prior::Fixed { .. } => 0.0,
        }
    }
}

pub const PARAM_NAMES: [&str; 4] = ["e_dep", "r", "tau_ss", "gamma"];

/// One prior per burst parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub e_dep: Prior,
    pub r: Prior,
    pub tau_ss: Prior,
    pub gamma: Prior,
}

impl PriorSpec {
    fn slots(&self) -> [&Prior; 4] {
        [&self.e_dep, &self.r, &self.tau_ss, &self.gamma]
    }

    pub fn validate(&self) -> Result<()> {
        for (p, name) in self.slots().into_iter().zip(PARAM_NAMES) {
            p.validate(name)?;
        }
        Ok(())
    }

    /// Σ ln π over the four parameters.
    pub fn ln_density(&self, p: &BurstParams) -> f64 {
        let x = [p.e_dep, p.r, p.tau_ss, p.gamma];
        self.slots().iter().zip(x).map(|(prior, v)| prior.ln_density(v)).sum()
    }
}

/// One bin: centre time relative to the burst [s], errors, valid trials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinObs {
    pub t: f64,
    pub n: u32,
    pub valid: u32,
}

fn ln_choose(n: u32, k: u32) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// n ln p + (N − n) ln(1 − p) for p = p_ge + 𝓕(1 − e^{−x}), with both
/// probabilities formed without cancellation.
#[inline]
fn kernel(model: &PulseModel, p_eg: f64, x: f64, n: f64, misses: f64) -> f64 {
    let mut acc = 0.0;
    if n > 0.0 {
        acc += n * (model.p_ge - model.fidelity * (-x).exp_m1()).ln();
    }
    if misses > 0.0 {
        acc += misses * (p_eg + model.fidelity * (-x).exp()).ln();
    }
    acc
}

/// Binomial log-likelihood of arbitrary bins, combinatorial terms included.
///
/// Returns −∞ when a bin has errors where the model allows none, or misses
/// where the model predicts certain errors.
pub fn loglik_bins(model: &PulseModel, params: &BurstParams, bins: &[BinObs]) -> f64 {
    let p_eg = (1.0 - model.fidelity - model.p_ge).max(0.0);
    let mut ll = 0.0;
    for b in bins.iter().filter(|b| b.valid > 0) {
        let x = model.burst_exponent(b.t, params) + params.gamma;
        ll += ln_choose(b.valid, b.n) + kernel(model, p_eg, x, b.n as f64, (b.valid - b.n) as f64);
    }
    ll
}

fn waveform_bins(w: &BinnedWaveform) -> Result<Vec<BinObs>> {
    w.validate()?;
    Ok((0..w.len())
        .map(|i| BinObs {
            t: w.bin_center(i),
            n: w.n[i],
            valid: w.valid[i],
        })
        .collect())
}

/// Binomial log-likelihood of a waveform with the model evaluated at bin
/// centres; bins with N = 0 are skipped. −∞ marks impossible data.
pub fn binomial_loglik(
    w: &BinnedWaveform,
    params: &BurstParams,
    qubit: &QubitConfig,
    constants: &PhysicsConstants,
) -> Result<f64> {
    params.validate()?;
    let model = PulseModel::new(constants, qubit)?;
    Ok(loglik_bins(&model, params, &waveform_bins(w)?))
}

/// ln L + ln π, −∞ outside the prior support.
pub fn log_posterior(
    w: &BinnedWaveform,
    params: &BurstParams,
    priors: &PriorSpec,
    qubit: &QubitConfig,
    constants: &PhysicsConstants,
) -> Result<f64> {
    priors.validate()?;
    let lp = priors.ln_density(params);
    if lp == f64::NEG_INFINITY {
        return Ok(lp);
    }
    Ok(lp + binomial_loglik(w, params, qubit, constants)?)
}

/// Waveform reduced for repeated likelihood evaluation: pre-trigger bins share
/// one model probability and are pooled into a single term.
#[derive(Debug, Clone)]
struct BinTable {
    post: Vec<(f64, f64, f64)>,
    pre_n: f64,
    pre_valid: f64,
    ln_comb: f64,
}

impl BinTable {
    fn new(w: &BinnedWaveform) -> Result<Self> {
        let mut t = BinTable {
            post: Vec::new(),
            pre_n: 0.0,
            pre_valid: 0.0,
            ln_comb: 0.0,
        };
        for b in waveform_bins(w)?.into_iter().filter(|b| b.valid > 0) {
            t.ln_comb += ln_choose(b.valid, b.n);
            if b.t < 0.0 {
                t.pre_n += b.n as f64;
                t.pre_valid += b.valid as f64;
            } else {
                t.post.push((b.t, b.n as f64, b.valid as f64));
            }
        }
        Ok(t)
    }

    fn is_empty(&self) -> bool {
        self.post.is_empty() && self.pre_valid == 0.0
    }

    fn ln_lik(&self, model: &PulseModel, p_eg: f64, p: &BurstParams) -> f64 {
        let mut ll = self.ln_comb + kernel(model, p_eg, p.gamma, self.pre_n, self.pre_valid - self.pre_n);
        let tau = p.tau_si();
        let ert = p.e_dep * tau * p.r_si();
        let num = model.alpha * p.e_dep;
        for &(t, n, valid) in &self.post {
            let em1 = (t / tau).exp_m1();
            let b = if p.e_dep == 0.0 { 0.0 } else { num / (ert * em1 + model.beta * (em1 + 1.0)) };
            ll += kernel(model, p_eg, b + p.gamma, n, valid - n);
        }
        ll
    }
}

/// Posterior of the burst parameters of one waveform; the free parameters are
/// those whose prior is not fixed, in the order e_dep, r, tau_ss, gamma.
#[derive(Debug, Clone)]
pub struct BurstPosterior {
    model: PulseModel,
    p_eg: f64,
    table: BinTable,
    priors: PriorSpec,
    free: Vec<usize>,
    base: [f64; 4],
}

impl BurstPosterior {
    pub fn new(
        w: &BinnedWaveform,
        qubit: &QubitConfig,
        constants: &PhysicsConstants,
        priors: &PriorSpec,
    ) -> Result<Self> {
        priors.validate()?;
        let model = PulseModel::new(constants, qubit)?;
        let slots = priors.slots();
        let mut base = [0.0; 4];
        let mut free = Vec::new();
        for (i, p) in slots.iter().enumerate() {
            match p {
                Prior::Fixed { value } => base[i] = *value,
                _ => free.push(i),
            }
        }
        Ok(Self {
            model,
            p_eg: (1.0 - model.fidelity - model.p_ge).max(0.0),
            table: BinTable::new(w)?,
            priors: *priors,
            free,
            base,
        })
    }

    pub fn model(&self) -> &PulseModel {
        &self.model
    }

    /// Parameters at sampling coordinates `theta`.
    pub fn params(&self, theta: &[f64]) -> BurstParams {
        let mut v = self.base;
        let slots = self.priors.slots();
        for (k, &i) in self.free.iter().enumerate() {
            v[i] = slots[i].from_sampling(theta[k]);
        }
        BurstParams::new(v[0], v[1], v[2], v[3])
    }

    fn ln_prior(&self, theta: &[f64]) -> f64 {
        let slots = self.priors.slots();
        let mut lp = 0.0;
        for (k, &i) in self.free.iter().enumerate() {
            let prior = slots[i];
            lp += prior.ln_density(prior.from_sampling(theta[k]));
            if prior.log_coordinates() {
                lp += theta[k];
            }
        }
        lp
    }

    /// γ reproducing the pooled pre-trigger error rate, clamped to the
    /// physical range; the flag reports clamping.
    pub fn baseline_gamma(&self) -> Option<(f64, bool)> {
        if self.table.pre_valid == 0.0 {
            return None;
        }
        let b = self.table.pre_n / self.table.pre_valid;
        let m = &self.model;
        let frac = (b - m.p_ge) / m.fidelity;
        Some(if frac <= 0.0 {
            (0.0, true)
        } else if frac >= 1.0 - 1e-6 {
            (-(1e-6f64).ln(), true)
        } else {
            (-(-frac).ln_1p(), false)
        })
    }
}

impl LogDensity for BurstPosterior {
    fn dim(&self) -> usize {
        self.free.len()
    }

    fn ln_density(&self, theta: &[f64]) -> f64 {
        let lp = self.ln_prior(theta);
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        let ll = self.table.ln_lik(&self.model, self.p_eg, &self.params(theta));
        if ll.is_nan() {
            f64::NEG_INFINITY
        } else {
            lp + ll
        }
    }

    fn ln_likelihood(&self, theta: &[f64]) -> f64 {
        self.table.ln_lik(&self.model, self.p_eg, &self.params(theta))
    }

    fn names(&self) -> Vec<String> {
        self.free.iter().map(|&i| PARAM_NAMES[i].to_string()).collect()
    }

    fn to_natural(&self, theta: &[f64]) -> Vec<f64> {
        let slots = self.priors.slots();
        self.free
            .iter()
            .enumerate()
            .map(|(k, &i)| slots[i].from_sampling(theta[k]))
            .collect()
    }
}

struct NegLogPost<'a>(&'a BurstPosterior);

impl CostFunction for NegLogPost<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        let v = -self.0.ln_density(p);
        Ok(if v.is_nan() { f64::INFINITY } else { v })
    }
}

const GRID_POINTS: usize = 12;

/// Posterior mode estimate: grid scan over the free parameters (γ pinned to
/// its baseline value when free), then Nelder–Mead from the best node.
fn find_mode(post: &BurstPosterior) -> Result<Vec<f64>> {
    let slots = post.priors.slots();
    let gamma_start = post.baseline_gamma().map(|g| g.0);
    let axes: Vec<Vec<f64>> = post
        .free
        .iter()
        .map(|&i| match (i, gamma_start, *slots[i]) {
            (3, Some(g), Prior::Flat { lo, hi }) => vec![g.clamp(lo, hi)],
            _ => slots[i].grid(GRID_POINTS),
        })
        .collect();
    let mut best = (f64::NEG_INFINITY, Vec::new());
    let mut idx = vec![0usize; axes.len()];
    'scan: loop {
        let theta: Vec<f64> = idx.iter().zip(&axes).map(|(&k, a)| a[k]).collect();
        let lp = post.ln_density(&theta);
        if lp > best.0 {
            best = (lp, theta);
        }
        for d in 0..idx.len() {
            idx[d] += 1;
            if idx[d] < axes[d].len() {
                continue 'scan;
            }
            idx[d] = 0;
        }
        break;
    }
    if !best.0.is_finite() {
        return Err(Error::Fit("log-posterior is −∞ on the whole starting grid".into()));
    }
    let start = best.1;
    let steps = step_sizes(post, &start);
    let mut simplex = vec![start.clone()];
    for k in 0..start.len() {
        let mut v = start.clone();
        v[k] += steps[k];
        simplex.push(v);
    }
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(1e-9)
        .map_err(|e| Error::Fit(e.to_string()))?;
    let res = Executor::new(NegLogPost(post), solver)
        .configure(|s| s.max_iters(300 * start.len() as u64))
        .run()
        .map_err(|e| Error::Fit(e.to_string()))?;
    let mode = res.state().get_best_param().cloned().unwrap_or(start.clone());
    Ok(if post.ln_density(&mode) >= best.0 { mode } else { start })
}

fn step_sizes(post: &BurstPosterior, at: &[f64]) -> Vec<f64> {
    let slots = post.priors.slots();
    post.free
        .iter()
        .enumerate()
        .map(|(k, &i)| slots[i].typical_step(at[k]))
        .collect()
}

/// Per-axis proposal scale from the curvature at the mode, 2.38/√d per
/// posterior standard deviation; the prior step is the fallback.
fn proposal_scales(post: &BurstPosterior, mode: &[f64]) -> Vec<f64> {
    let d = mode.len();
    let f0 = post.ln_density(mode);
    let fallback = step_sizes(post, mode);
    (0..d)
        .map(|k| {
            let h = (0.1 * fallback[k]).max(1e-9);
            let mut up = mode.to_vec();
            let mut dn = mode.to_vec();
            up[k] += h;
            dn[k] -= h;
            let curv = -(post.ln_density(&up) + post.ln_density(&dn) - 2.0 * f0) / (h * h);
            if curv.is_finite() && curv > 0.0 {
                (2.38 / (d as f64).sqrt() / curv.sqrt()).min(10.0 * fallback[k].max(h))
            } else {
                fallback[k]
            }
        })
        .collect()
}

/// Samples the posterior of `w` under arbitrary priors.
pub fn fit_burst(
    w: &BinnedWaveform,
    qubit: &QubitConfig,
    constants: &PhysicsConstants,
    priors: &PriorSpec,
    mcmc: &McmcSettings,
) -> Result<PosteriorResult> {
    let post = BurstPosterior::new(w, qubit, constants, priors)?;
    if post.table.is_empty() {
        return Err(Error::Precondition(format!("waveform of {} has no valid trials", w.qubit)));
    }
    if post.dim() == 0 {
        return Err(Error::Precondition("every parameter is fixed".into()));
    }
    let mode = find_mode(&post)?;
    let scales = proposal_scales(&post, &mode);
    let mut res = mh_sample(&post, &mode, &scales, mcmc)?;
    res.fixed = priors
        .slots()
        .iter()
        .zip(PARAM_NAMES)
        .filter_map(|(p, n)| match p {
            Prior::Fixed { value } => Some((n.to_string(), *value)),
            _ => None,
        })
        .collect();
    Ok(res)
}

/// Prior bounds and sampler settings of the staged fits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    pub mcmc: McmcSettings,
    pub e_dep: Prior,
    pub tau_ss: Prior,
    /// Prior on r in the high-energy fit [ns⁻¹].
    pub r_he: Prior,
    /// Upper bound of the flat γ prior when γ is free.
    pub gamma_max: f64,
    /// Deposit assumed for the saturated high-energy pulse [eV].
    pub he_energy: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            mcmc: McmcSettings::default(),
            e_dep: Prior::LogFlat { lo: 1.0, hi: 1.0e6 },
            tau_ss: Prior::LogFlat { lo: 0.1, hi: 50.0 },
            r_he: Prior::LogFlat { lo: 1.0e-5, hi: 1.0 },
            gamma_max: 2.0,
            he_energy: 1.0e5,
        }
    }
}

impl FitOptions {
    fn gamma_free(&self) -> Prior {
        Prior::Flat {
            lo: 0.0,
            hi: self.gamma_max,
        }
    }
}

fn require_data(ap: &BinnedWaveform, what: &str) -> Result<()> {
    if ap.valid.iter().all(|&v| v == 0) {
        return Err(Error::Precondition(format!("{what} average pulse of {} is empty", ap.qubit)));
    }
    Ok(())
}

/// Fit of the averaged saturated pulse: r, τ_ss and γ free, E_dep fixed.
pub fn fit_he_average(
    ap: &BinnedWaveform,
    qubit: &QubitConfig,
    constants: &PhysicsConstants,
    opts: &FitOptions,
) -> Result<PosteriorResult> {
    require_data(ap, "high-energy")?;
    let priors = PriorSpec {
        e_dep: Prior::Fixed { value: opts.he_energy },
        r: opts.r_he,
        tau_ss: opts.tau_ss,
        gamma: opts.gamma_free(),
    };
    fit_burst(ap, qubit, constants, &priors, &opts.mcmc)
}

/// Fit of an averaged low-energy pulse with r fixed: τ_ss, E_dep and γ free.
pub fn fit_le_average(
    ap: &BinnedWaveform,
    qubit: &QubitConfig,
    constants: &PhysicsConstants,
    r_fixed: f64,
    opts: &FitOptions,
) -> Result<PosteriorResult> {
    require_data(ap, "low-energy")?;
    let priors = PriorSpec {
        e_dep: opts.e_dep,
        r: Prior::Fixed { value: r_fixed },
        tau_ss: opts.tau_ss,
        gamma: opts.gamma_free(),
    };
    fit_burst(ap, qubit, constants, &priors, &opts.mcmc)
}

/// Single-waveform fit: E_dep and τ_ss free, r a Gaussian nuisance
/// (`r_sigma = 0` fixes it), γ fixed from the pre-trigger baseline.
///
/// Flags: `low_signal` when p_max < B + 3σ_B, `baseline_clamped` when the
/// baseline lies outside the range reachable by the readout model.
pub fn fit_waveform(
    w: &BinnedWaveform,
    qubit: &QubitConfig,
    constants: &PhysicsConstants,
    r_mean: f64,
    r_sigma: f64,
    opts: &FitOptions,
) -> Result<PosteriorResult> {
    let r = if r_sigma > 0.0 {
        Prior::Gaussian {
            mean: r_mean,
            sigma: r_sigma,
            lo: 0.0,
            hi: f64::INFINITY,
        }
    } else {
        Prior::Fixed { value: r_mean }
    };
    let mut priors = PriorSpec {
        e_dep: opts.e_dep,
        r,
        tau_ss: opts.tau_ss,
        gamma: Prior::Fixed { value: 0.0 },
    };
    let probe = BurstPosterior::new(w, qubit, constants, &priors)?;
    let (gamma, clamped) = match probe.baseline_gamma() {
        Some(g) => g,
        None => {
            let frac = ((qubit.baseline_b - qubit.p_ge) / qubit.fidelity).clamp(0.0, 1.0 - 1e-6);
            (-(-frac).ln_1p(), false)
        }
    };
    priors.gamma = Prior::Fixed { value: gamma };
    let mut res = fit_burst(w, qubit, constants, &priors, &opts.mcmc)?;
    if clamped {
        res.flags.push("baseline_clamped".into());
    }
    if let Ok(f) = compute_features(w) {
        if f.p_max < f.baseline_b + 3.0 * f.baseline_sigma {
            res.flags.push("low_signal".into());
        }
    }
    Ok(res)
}
