//! The pipeline commands. Each reads its declared inputs from the run
//! directory, writes its outputs there together with the resolved config,
//! and returns a summary of what it did.

mod calibrate;
mod fit;
mod process;
mod reconstruct;
mod simulate;

pub use calibrate::{calibrate, HeVariant, LeSlice, QubitCalibration};
pub use fit::{fit, FitRecord, FitSummary};
pub use process::{process, ProcessSummary};
pub use reconstruct::{reconstruct, ReconstructSummary, VertexRecord};
pub use simulate::{simulate, SimulateSummary};

use std::path::{Path, PathBuf};

use qpburst::fit::McmcSettings;

use crate::artifacts::{self, RESOLVED_CONFIG};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// Resolved configuration plus the run directory and worker pool.
pub struct Context {
    pub cfg: RunConfig,
    pub dir: PathBuf,
    pub hash: String,
    pool: rayon::ThreadPool,
}

impl Context {
    /// `workers = None` uses one worker per core. Outputs do not depend on
    /// the worker count.
    pub fn new(cfg: RunConfig, dir: Option<PathBuf>, workers: Option<usize>) -> CliResult<Self> {
        cfg.validate()?;
        let dir = dir.unwrap_or_else(|| cfg.io.dir.clone());
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = workers {
            if n == 0 {
                return Err(CliError::Config("--workers must be at least 1".into()));
            }
            builder = builder.num_threads(n);
        }
        let pool = builder.build().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(Self {
            hash: cfg.hash(),
            cfg,
            dir,
            pool,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        artifacts::in_dir(&self.dir, name)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.pool.install(f)
    }

    fn write_resolved_config(&self) -> CliResult<()> {
        artifacts::write_text(&self.path(RESOLVED_CONFIG), &self.cfg.resolved_toml())
    }

    /// Sampler settings of one fit: the configured chain layout with a seed
    /// derived from the master seed and the fit's identity.
    fn mcmc_for(&self, parts: &[u64]) -> McmcSettings {
        McmcSettings {
            seed: derive_seed(self.cfg.seed, parts),
            ..self.cfg.analysis.fit.mcmc
        }
    }
}

/// SplitMix64 mixing of the master seed with identifiers.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    let mut z = master;
    for &p in parts {
        z = z.wrapping_add(p.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Compact float formatting for CSV cells.
fn num(v: f64) -> String {
    format!("{v:.6e}")
}
