use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::error::{ensure_positive, Result};

/// Readout error rates obtained from Gaussian fits of the two prepared-state
/// populations projected on the I axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparationFidelity {
    /// 1 − p_ge − p_eg.
    pub fidelity: f64,
    /// Excited population falling on the ground side of the threshold.
    pub p_ge: f64,
    /// Ground population falling on the excited side of the threshold.
    pub p_eg: f64,
}

/// Tail mass of N(mu, sigma) below `x`, evaluated through erfc so that far
/// tails keep their relative precision.
fn normal_cdf(x: f64, mu: f64, sigma: f64) -> f64 {
    0.5 * erfc(-(x - mu) / (sigma * std::f64::consts::SQRT_2))
}

/// The ground side of the threshold is the side holding the ground mean
/// (below it when the two means coincide).
pub fn separation_fidelity(
    mu_g: f64,
    sigma_g: f64,
    mu_e: f64,
    sigma_e: f64,
    threshold: f64,
) -> Result<SeparationFidelity> {
    ensure_positive("sigma_g", sigma_g)?;
    ensure_positive("sigma_e", sigma_e)?;
    let ground_below = mu_g <= mu_e;
    let (p_ge, p_eg) = if ground_below {
        (
            normal_cdf(threshold, mu_e, sigma_e),
            normal_cdf(-threshold, -mu_g, sigma_g),
        )
    } else {
        (
            normal_cdf(-threshold, -mu_e, sigma_e),
            normal_cdf(threshold, mu_g, sigma_g),
        )
    };
    Ok(SeparationFidelity {
        fidelity: 1.0 - p_ge - p_eg,
        p_ge,
        p_eg,
    })
}
