use thiserror::Error;

/// Errors produced by the models, processing stages and fits.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("`{name}` = {value} is out of domain: {reason}")]
    Domain {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unphysical baseline {baseline} for qubit {qubit}: expected p_ge <= B < F + p_ge = [{lo}, {hi})")]
    UnphysicalBaseline {
        qubit: String,
        baseline: f64,
        lo: f64,
        hi: f64,
    },

    #[error("integration unstable: halved-step disagreement {rel:.3e} at t = {t:.6e} s")]
    Integration { t: f64, rel: f64 },

    #[error("degenerate Markov chain: stationary denominator is zero")]
    DegenerateChain,

    #[error("feature extraction failed: {0}")]
    Feature(String),

    #[error("waveforms cannot be aligned: {0}")]
    Alignment(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("no information: {0}")]
    NoInformation(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain {
            name,
            value,
            reason: "must be finite and strictly positive",
        })
    }
}

pub(crate) fn ensure_probability(name: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::Domain {
            name,
            value,
            reason: "must lie in [0, 1]",
        })
    }
}
