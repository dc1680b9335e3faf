//! Random-walk Metropolis–Hastings with burn-in adaptation and split-R̂.

use std::io::{self, Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::waveform::quantile;

/// An unnormalized log density over an unconstrained sampling space.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// ln density in sampling coordinates; −∞ outside the support.
    fn ln_density(&self, theta: &[f64]) -> f64;

    fn names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("theta{i}")).collect()
    }

    /// Maps sampling coordinates to the reported parameters.
    fn to_natural(&self, theta: &[f64]) -> Vec<f64> {
        theta.to_vec()
    }

    /// Log-likelihood part of the density, when it is separable.
    fn ln_likelihood(&self, theta: &[f64]) -> f64 {
        self.ln_density(theta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McmcSettings {
    pub n_chains: usize,
    /// Steps per chain, burn-in included.
    pub n_steps: usize,
    pub burn_in: usize,
    pub seed: u64,
    /// Replace the diagonal proposal by the chain's empirical covariance
    /// during burn-in.
    pub adapt_covariance: bool,
}

impl Default for McmcSettings {
    fn default() -> Self {
        Self {
            n_chains: 4,
            n_steps: 20_000,
            burn_in: 5_000,
            seed: 0,
            adapt_covariance: true,
        }
    }
}

impl McmcSettings {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains < 2 {
            return Err(Error::Config("split-R̂ needs at least 2 chains".into()));
        }
        if self.n_steps < self.burn_in + 4 {
            return Err(Error::Config(format!(
                "n_steps {} leaves fewer than 4 draws after burn-in {}",
                self.n_steps, self.burn_in
            )));
        }
        Ok(())
    }
}

/// Marginal summary of one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub median: f64,
    /// 16th percentile.
    pub lo: f64,
    /// 84th percentile.
    pub hi: f64,
    pub mean: f64,
    pub sd: f64,
    /// Monte-Carlo standard error of the mean, from batch means.
    pub mcse: f64,
    pub r_hat: f64,
}

impl ParamSummary {
    /// Half-width of the central 68% interval.
    pub fn half_width(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorResult {
    pub summaries: Vec<ParamSummary>,
    pub acceptance_rate: f64,
    /// Every R̂ ≤ 1.1.
    pub converged: bool,
    pub max_ln_posterior: f64,
    /// ln L at the highest-posterior draw.
    pub ln_likelihood_at_mode: f64,
    pub flags: Vec<String>,
    /// Parameters held constant during the fit.
    #[serde(default)]
    pub fixed: Vec<(String, f64)>,
    /// Post-burn-in draws in natural parameters, `[chain][param][draw]`.
    #[serde(skip)]
    pub chains: Vec<Vec<Vec<f64>>>,
}

impl PosteriorResult {
    pub fn names(&self) -> Vec<&str> {
        self.summaries.iter().map(|s| s.name.as_str()).collect()
    }

    pub fn param(&self, name: &str) -> Option<&ParamSummary> {
        self.summaries.iter().find(|s| s.name == name)
    }

    /// All chains of one parameter, concatenated.
    pub fn pooled(&self, index: usize) -> Vec<f64> {
        self.chains.iter().flat_map(|c| c[index].iter().copied()).collect()
    }
}

const BATCH: usize = 50;
pub const R_HAT_LIMIT: f64 = 1.1;

/// Samples `target` with `settings.n_chains` independent chains started
/// around `init` (sampling coordinates), with per-coordinate initial step
/// sizes `scales`.
pub fn mh_sample<T: LogDensity + ?Sized>(
    target: &T,
    init: &[f64],
    scales: &[f64],
    settings: &McmcSettings,
) -> Result<PosteriorResult> {
    settings.validate()?;
    let d = target.dim();
    if init.len() != d || scales.len() != d {
        return Err(Error::Precondition(format!(
            "init/scales have {}/{} entries for a {d}-dimensional target",
            init.len(),
            scales.len()
        )));
    }
    if !target.ln_density(init).is_finite() {
        return Err(Error::Precondition("initial point is outside the support".into()));
    }
    let runs: Vec<ChainRun> = (0..settings.n_chains)
        .map(|c| run_chain(target, init, scales, settings, c as u64))
        .collect();
    summarize(target, &runs, settings)
}

struct ChainRun {
    /// Post-burn-in draws in sampling coordinates.
    draws: Vec<Vec<f64>>,
    accepted: usize,
    best: (f64, Vec<f64>),
}

fn chain_rng(seed: u64, chain: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain + 1);
    rng
}

fn run_chain<T: LogDensity + ?Sized>(
    target: &T,
    init: &[f64],
    scales: &[f64],
    s: &McmcSettings,
    chain: u64,
) -> ChainRun {
    let d = init.len();
    let mut rng = chain_rng(s.seed, chain);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };

    // jittered start with finite density
    let mut x = init.to_vec();
    let mut lp = target.ln_density(&x);
    for attempt in 0..50 {
        let shrink = 0.5f64.powi(attempt / 10);
        let trial: Vec<f64> = (0..d).map(|k| init[k] + shrink * scales[k] * normal(&mut rng)).collect();
        let l = target.ln_density(&trial);
        if l.is_finite() {
            x = trial;
            lp = l;
            break;
        }
    }

    let mut chol = DMatrix::from_diagonal(&DVector::from_column_slice(scales));
    let mut scale = 1.0;
    let mut history: Vec<Vec<f64>> = Vec::with_capacity(s.burn_in);
    let mut batch_acc = 0;
    let mut accepted = 0;
    let mut best = (lp, x.clone());
    let mut draws = Vec::with_capacity(s.n_steps - s.burn_in);
    let mut z = DVector::zeros(d);
    let mut prop = vec![0.0; d];
    for step in 0..s.n_steps {
        for k in 0..d {
            z[k] = normal(&mut rng);
        }
        let dz = &chol * &z;
        for k in 0..d {
            prop[k] = x[k] + scale * dz[k];
        }
        let lq = target.ln_density(&prop);
        let u: f64 = rng.random();
        if lq.is_finite() && u.ln() < lq - lp {
            x.copy_from_slice(&prop);
            lp = lq;
            if step >= s.burn_in {
                accepted += 1;
            } else {
                batch_acc += 1;
            }
            if lp > best.0 {
                best = (lp, x.clone());
            }
        }
        if step < s.burn_in {
            history.push(x.clone());
            if (step + 1) % BATCH == 0 {
                let a = batch_acc as f64 / BATCH as f64;
                if a < 0.2 {
                    scale *= if a == 0.0 { 0.3 } else { 0.65 };
                } else if a > 0.4 {
                    scale *= 1.5;
                }
                batch_acc = 0;
            }
            let at_half = step + 1 == s.burn_in / 2 || step + 1 == 3 * s.burn_in / 4;
            if s.adapt_covariance && d > 1 && at_half && step + 1 >= 8 * d {
                let from = history.len() / 3;
                if let Some(l) = empirical_cholesky(&history[from..]) {
                    chol = l * (2.38 / (d as f64).sqrt());
                    scale = 1.0;
                }
            }
        } else {
            draws.push(x.clone());
        }
    }
    ChainRun {
        draws,
        accepted,
        best,
    }
}

fn empirical_cholesky(samples: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let n = samples.len();
    let d = samples.first()?.len();
    let mean: Vec<f64> = (0..d).map(|k| samples.iter().map(|s| s[k]).sum::<f64>() / n as f64).collect();
    let mut cov = DMatrix::zeros(d, d);
    for s in samples {
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += (s[i] - mean[i]) * (s[j] - mean[j]);
            }
        }
    }
    cov /= (n - 1) as f64;
    let jitter = 1e-10 * (0..d).map(|k| cov[(k, k)]).fold(0.0, f64::max);
    if !(jitter > 0.0) {
        return None;
    }
    for k in 0..d {
        cov[(k, k)] += jitter;
    }
    cov.cholesky().map(|c| c.l())
}

/// Split-R̂ of one parameter across chains (each chain halved).
pub fn split_r_hat(chains: &[&[f64]]) -> f64 {
    let half = chains.iter().map(|c| c.len() / 2).min().unwrap_or(0);
    if half < 2 {
        return f64::NAN;
    }
    let pieces: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| [&c[..half], &c[half..2 * half]])
        .collect();
    let m = pieces.len() as f64;
    let n = half as f64;
    let means: Vec<f64> = pieces.iter().map(|p| p.iter().sum::<f64>() / n).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n / (m - 1.0) * means.iter().map(|v| (v - grand).powi(2)).sum::<f64>();
    let w = pieces
        .iter()
        .zip(&means)
        .map(|(p, mu)| p.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    if w == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    (((n - 1.0) / n * w + b / n) / w).sqrt()
}

/// Batch-means standard error of the mean over pooled chains.
fn batch_mcse(chains: &[&[f64]]) -> f64 {
    let len = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    let batches_per_chain = ((len as f64).sqrt() as usize).max(1);
    let size = len / batches_per_chain;
    if size == 0 {
        return f64::NAN;
    }
    let means: Vec<f64> = chains
        .iter()
        .flat_map(|c| {
            (0..batches_per_chain).map(move |b| c[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        })
        .collect();
    let k = means.len() as f64;
    let mu = means.iter().sum::<f64>() / k;
    let var = means.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
    (var / k).sqrt()
}

fn summarize<T: LogDensity + ?Sized>(target: &T, runs: &[ChainRun], s: &McmcSettings) -> Result<PosteriorResult> {
    let names = target.names();
    let d = names.len();
    let chains: Vec<Vec<Vec<f64>>> = runs
        .iter()
        .map(|run| {
            let mut cols = vec![Vec::with_capacity(run.draws.len()); d];
            for draw in &run.draws {
                for (k, v) in target.to_natural(draw).into_iter().enumerate() {
                    cols[k].push(v);
                }
            }
            cols
        })
        .collect();
    let mut summaries = Vec::with_capacity(d);
    for (k, name) in names.iter().enumerate() {
        let per_chain: Vec<&[f64]> = chains.iter().map(|c| c[k].as_slice()).collect();
        let pooled: Vec<f64> = per_chain.iter().flat_map(|c| c.iter().copied()).collect();
        let n = pooled.len() as f64;
        let mean = pooled.iter().sum::<f64>() / n;
        let sd = (pooled.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        summaries.push(ParamSummary {
            name: name.clone(),
            median: quantile(&pooled, 0.5),
            lo: quantile(&pooled, 0.158_655_253_931_457_05),
            hi: quantile(&pooled, 0.841_344_746_068_542_9),
            mean,
            sd,
            mcse: batch_mcse(&per_chain),
            r_hat: split_r_hat(&per_chain),
        });
    }
    let kept = (s.n_steps - s.burn_in) * runs.len();
    let acceptance_rate = runs.iter().map(|r| r.accepted).sum::<usize>() as f64 / kept as f64;
    let best = runs
        .iter()
        .map(|r| &r.best)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .expect("at least two chains");
    let converged = summaries.iter().all(|p| p.r_hat <= R_HAT_LIMIT);
    let mut flags = Vec::new();
    if !converged {
        flags.push("not_converged".to_string());
    }
    Ok(PosteriorResult {
        summaries,
        acceptance_rate,
        converged,
        max_ln_posterior: best.0,
        ln_likelihood_at_mode: target.ln_likelihood(&best.1),
        flags,
        fixed: Vec::new(),
        chains,
    })
}

const DUMP_MAGIC: &[u8; 8] = b"QPCHAIN1";

/// Writes the post-burn-in draws as: magic `QPCHAIN1`, u32 parameter count,
/// each name as u32 byte length plus UTF-8, u32 chain count, u64 draws per
/// chain, then one column per parameter holding every chain in order, all
/// integers and floats little-endian.
pub fn write_chain_dump<W: Write>(result: &PosteriorResult, mut w: W) -> io::Result<()> {
    let draws = result.chains.first().and_then(|c| c.first()).map_or(0, Vec::len);
    w.write_all(DUMP_MAGIC)?;
    w.write_all(&(result.summaries.len() as u32).to_le_bytes())?;
    for s in &result.summaries {
        w.write_all(&(s.name.len() as u32).to_le_bytes())?;
        w.write_all(s.name.as_bytes())?;
    }
    w.write_all(&(result.chains.len() as u32).to_le_bytes())?;
    w.write_all(&(draws as u64).to_le_bytes())?;
    for k in 0..result.summaries.len() {
        for chain in &result.chains {
            for v in &chain[k] {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

/// Reads a dump back as (names, `[chain][param][draw]`).
pub fn read_chain_dump<R: Read>(mut r: R) -> io::Result<(Vec<String>, Vec<Vec<Vec<f64>>>)> {
    let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != DUMP_MAGIC {
        return Err(bad("not a chain dump"));
    }
    let mut u32b = [0u8; 4];
    let mut u64b = [0u8; 8];
    r.read_exact(&mut u32b)?;
    let n_params = u32::from_le_bytes(u32b) as usize;
    let mut names = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        r.read_exact(&mut u32b)?;
        let mut buf = vec![0u8; u32::from_le_bytes(u32b) as usize];
        r.read_exact(&mut buf)?;
        names.push(String::from_utf8(buf).map_err(|_| bad("parameter name is not UTF-8"))?);
    }
    r.read_exact(&mut u32b)?;
    let n_chains = u32::from_le_bytes(u32b) as usize;
    r.read_exact(&mut u64b)?;
    let draws = u64::from_le_bytes(u64b) as usize;
    let mut chains = vec![vec![Vec::with_capacity(draws); n_params]; n_chains];
    for k in 0..n_params {
        for chain in chains.iter_mut() {
            for _ in 0..draws {
                r.read_exact(&mut u64b)?;
                chain[k].push(f64::from_le_bytes(u64b));
            }
        }
    }
    Ok((names, chains))
}
