//! Rothwarf–Taylor dynamics of the normalized quasiparticle density
//! x = n_qp / n_cp:
//!
//! ```text
//! dx/dt = −r·x² − s₀·x + g
//! ```
//!
//! Rates here are in s⁻¹ and times in s.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, Error, Result};

/// Both parameterizations of the Rothwarf–Taylor equation, plus the decay-rate
/// coupling `c_coeff` (C) and residual rate `gamma_0` (Γ₀).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RtParams {
    /// Dimensionless recombination fraction r′ ∈ [0, 1).
    pub r_prime: f64,
    /// Linear-loss time [s].
    pub tau_ss: f64,
    /// Injected density above steady state.
    pub x_i: f64,
    /// Steady-state density.
    pub x_0: f64,
    /// Recombination coefficient [s⁻¹].
    pub r: f64,
    /// Trapping coefficient [s⁻¹].
    pub s_0: f64,
    /// Generation rate [s⁻¹].
    pub g: f64,
    pub c_coeff: f64,
    pub gamma_0: f64,
}

/// Which side of the change of variables is given.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RtInput {
    /// (r′, τ_ss, x_i, x₀) → (r, s₀, g)
    Shape {
        r_prime: f64,
        tau_ss: f64,
        x_i: f64,
        x_0: f64,
    },
    /// (r, s₀, g) with the injected density x_i → (r′, τ_ss, x₀)
    Rates { r: f64, s_0: f64, g: f64, x_i: f64 },
}

fn ensure_non_negative(name: &'static str, value: f64) -> Result<()> {
    if value >= 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain {
            name,
            value,
            reason: "must be finite and non-negative",
        })
    }
}

/// Maps between the physical rates (r, s₀, g) and the shape parameters
/// (r′, τ_ss, x₀) used by the closed-form decay.
pub fn rt_change_of_variables(input: RtInput, c_coeff: f64, gamma_0: f64) -> Result<RtParams> {
    ensure_non_negative("c_coeff", c_coeff)?;
    ensure_non_negative("gamma_0", gamma_0)?;
    match input {
        RtInput::Shape {
            r_prime,
            tau_ss,
            x_i,
            x_0,
        } => {
            if !(0.0..1.0).contains(&r_prime) {
                return Err(Error::Domain {
                    name: "r_prime",
                    value: r_prime,
                    reason: "must lie in [0, 1)",
                });
            }
            ensure_positive("tau_ss", tau_ss)?;
            ensure_non_negative("x_i", x_i)?;
            ensure_non_negative("x_0", x_0)?;
            // k = r′ / ((1 − r′) x_i), so that r = k/τ_ss.
            let k = if r_prime == 0.0 {
                0.0
            } else if x_i == 0.0 {
                return Err(Error::Domain {
                    name: "x_i",
                    value: x_i,
                    reason: "recombination fraction r' > 0 needs a non-zero injection",
                });
            } else {
                r_prime / ((1.0 - r_prime) * x_i)
            };
            if k * x_0 > 1.0 {
                return Err(Error::Domain {
                    name: "x_0",
                    value: x_0,
                    reason: "steady state implies a negative generation rate (k·x_0 > 1)",
                });
            }
            Ok(RtParams {
                r_prime,
                tau_ss,
                x_i,
                x_0,
                r: k / tau_ss,
                s_0: (1.0 - 2.0 * k * x_0) / tau_ss,
                g: x_0 * (1.0 - k * x_0) / tau_ss,
                c_coeff,
                gamma_0,
            })
        }
        RtInput::Rates { r, s_0, g, x_i } => {
            ensure_non_negative("r", r)?;
            ensure_non_negative("g", g)?;
            ensure_non_negative("x_i", x_i)?;
            if !s_0.is_finite() {
                return Err(Error::Domain {
                    name: "s_0",
                    value: s_0,
                    reason: "must be finite",
                });
            }
            let x_0 = steady_state(r, s_0, g).ok_or(Error::Domain {
                name: "s_0",
                value: s_0,
                reason: "no positive steady state",
            })?;
            let inv_tau = s_0 + 2.0 * r * x_0;
            ensure_positive("1/tau_ss", inv_tau)?;
            let tau_ss = 1.0 / inv_tau;
            let kx = r * tau_ss * x_i;
            Ok(RtParams {
                r_prime: kx / (1.0 + kx),
                tau_ss,
                x_i,
                x_0,
                r,
                s_0,
                g,
                c_coeff,
                gamma_0,
            })
        }
    }
}

/// Non-negative root of r·x² + s₀·x − g = 0.
fn steady_state(r: f64, s_0: f64, g: f64) -> Option<f64> {
    if r == 0.0 {
        return if g == 0.0 {
            Some(0.0)
        } else if s_0 > 0.0 {
            Some(g / s_0)
        } else {
            None
        };
    }
    let disc = (s_0 * s_0 + 4.0 * r * g).sqrt();
    // Pick the cancellation-free form for the sign of s₀.
    let x = if s_0 >= 0.0 {
        if disc + s_0 == 0.0 {
            0.0
        } else {
            2.0 * g / (s_0 + disc)
        }
    } else {
        (disc - s_0) / (2.0 * r)
    };
    (x >= 0.0).then_some(x)
}

impl RtParams {
    /// Excess density x(t) − x₀ = x_i (1 − r′)/(e^{t/τ} − r′).
    pub fn excess_density(&self, t: f64) -> f64 {
        self.x_i * (1.0 - self.r_prime) / ((t / self.tau_ss).exp() - self.r_prime)
    }

    /// Γ(t) = C·x_i(1 − r′)/(e^{t/τ} − r′) + Γ₀.
    pub fn decay_rate(&self, t: f64) -> f64 {
        self.c_coeff * self.excess_density(t) + self.gamma_0
    }
}

/// Qubit decay rate [s⁻¹] at time `t` [s] after the injection.
pub fn decay_rate_analytic(t: f64, rt: &RtParams) -> f64 {
    rt.decay_rate(t)
}

/// Kaplan estimate r = 21.8/(F·τ₀) for aluminium, with τ₀ in ns; returns ns⁻¹.
pub fn kaplan_recombination(f_supp: f64, tau_0_ns: f64) -> Result<f64> {
    ensure_positive("f_supp", f_supp)?;
    ensure_positive("tau_0", tau_0_ns)?;
    Ok(21.8 / (f_supp * tau_0_ns))
}

const STEPS_PER_TAU: f64 = 1.0e4;
const HALVING_TOLERANCE: f64 = 1.0e-4;

/// Integrates the Rothwarf–Taylor equation with fixed-step RK4 and returns
/// x at every point of `t_grid`, starting from `x_init` at `t_grid[0]`.
///
/// The step is τ_ss/10⁴, where 1/τ_ss = s₀ + 2r·x₀ is the relaxation rate
/// around the steady state. The whole trajectory is repeated with half the
/// step and any relative disagreement above 10⁻⁴ is reported as
/// [`Error::Integration`].
pub fn integrate_rothwarf_taylor(
    x_init: f64,
    r: f64,
    s_0: f64,
    g: f64,
    t_grid: &[f64],
) -> Result<Vec<f64>> {
    ensure_non_negative("x_init", x_init)?;
    ensure_non_negative("r", r)?;
    ensure_non_negative("g", g)?;
    if t_grid.is_empty() {
        return Ok(Vec::new());
    }
    if t_grid.windows(2).any(|w| !(w[1] >= w[0])) {
        return Err(Error::Precondition("t_grid must be non-decreasing".into()));
    }
    let span = t_grid[t_grid.len() - 1] - t_grid[0];
    let rate = steady_state(r, s_0, g)
        .map(|x0| s_0 + 2.0 * r * x0)
        .filter(|v| *v > 0.0);
    let h = match rate {
        Some(rate) => 1.0 / (rate * STEPS_PER_TAU),
        None if span > 0.0 => span / STEPS_PER_TAU,
        None => 1.0,
    };
    let coarse = rk4_on_grid(x_init, r, s_0, g, t_grid, h);
    let fine = rk4_on_grid(x_init, r, s_0, g, t_grid, 0.5 * h);
    for ((&a, &b), &t) in coarse.iter().zip(&fine).zip(t_grid) {
        let scale = a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
        let rel = (a - b).abs() / scale;
        if !(rel <= HALVING_TOLERANCE) || !(b >= 0.0) {
            return Err(Error::Integration { t, rel });
        }
    }
    Ok(fine)
}

fn rk4_on_grid(x_init: f64, r: f64, s_0: f64, g: f64, t_grid: &[f64], h_max: f64) -> Vec<f64> {
    let f = |x: f64| -r * x * x - s_0 * x + g;
    let mut out = Vec::with_capacity(t_grid.len());
    let mut x = x_init;
    out.push(x);
    for w in t_grid.windows(2) {
        let dt = w[1] - w[0];
        if dt > 0.0 {
            let n = (dt / h_max).ceil().max(1.0) as usize;
            let h = dt / n as f64;
            for _ in 0..n {
                let k1 = f(x);
                let k2 = f(x + 0.5 * h * k1);
                let k3 = f(x + 0.5 * h * k2);
                let k4 = f(x + h * k3);
                x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            }
        }
        out.push(x);
    }
    out
}
