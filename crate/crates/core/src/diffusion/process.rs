//! Variance-preserving forward process and its v-parameterization.
//!
//! With `α = √ᾱ_t` and `σ = √(1 − ᾱ_t)`:
//!
//! ```text
//! x_t = α·x₀ + σ·ε
//! v   = α·ε − σ·x₀
//! x₀  = α·x_t − σ·v
//! ε   = σ·x_t + α·v
//! ```

use super::NoiseSchedule;
use crate::error::{Error, Result};
use crate::modality::LatentTensor;

/// Which quantity the v-target subtracts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VFormula {
    /// `v = α·ε − σ·x₀`.
    #[default]
    Standard,
    /// `v = α·ε − σ·x_t`, kept only for side-by-side comparison.
    NoisyInput,
}

pub fn q_sample(x0: &LatentTensor, t: usize, eps: &LatentTensor, sched: &NoiseSchedule) -> Result<LatentTensor> {
    sched.check_step(t)?;
    x0.axpby(sched.alpha(t), eps, sched.sigma(t))
}

pub fn v_target(x0: &LatentTensor, eps: &LatentTensor, t: usize, sched: &NoiseSchedule) -> Result<LatentTensor> {
    sched.check_step(t)?;
    eps.axpby(sched.alpha(t), x0, -sched.sigma(t))
}

/// Target under a chosen [`VFormula`]; the noisy-input variant needs `x_t`.
pub fn v_target_with(
    formula: VFormula,
    x0: &LatentTensor,
    eps: &LatentTensor,
    x_t: &LatentTensor,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<LatentTensor> {
    match formula {
        VFormula::Standard => v_target(x0, eps, t, sched),
        VFormula::NoisyInput => {
            sched.check_step(t)?;
            eps.axpby(sched.alpha(t), x_t, -sched.sigma(t))
        }
    }
}

/// Recovers `(x̂₀, ε̂)` from a noisy sample and a v prediction.
pub fn from_v(
    x_t: &LatentTensor,
    v: &LatentTensor,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<(LatentTensor, LatentTensor)> {
    sched.check_step(t)?;
    from_v_coeffs(x_t, v, sched.alpha(t), sched.sigma(t))
}

fn from_v_coeffs(x_t: &LatentTensor, v: &LatentTensor, a: f64, s: f64) -> Result<(LatentTensor, LatentTensor)> {
    Ok((x_t.axpby(a, v, -s)?, x_t.axpby(s, v, a)?))
}

/// One DDIM transition between arbitrary signal levels `ᾱ_t → ᾱ_s`.
///
/// `noise` supplies the fresh Gaussian draw and is required when `eta > 0`.
pub fn ddim_update(
    x_t: &LatentTensor,
    v: &LatentTensor,
    alpha_bar_t: f64,
    alpha_bar_s: f64,
    eta: f64,
    noise: Option<&LatentTensor>,
) -> Result<LatentTensor> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::invalid("eta must lie in [0, 1]"));
    }
    x_t.check_same_shape(v)?;
    if alpha_bar_s == alpha_bar_t && eta == 0.0 {
        return Ok(x_t.clone());
    }
    let (x0, eps) = from_v_coeffs(x_t, v, alpha_bar_t.sqrt(), (1.0 - alpha_bar_t).sqrt())?;
    let stoch = if eta > 0.0 && alpha_bar_t < 1.0 {
        eta * ((1.0 - alpha_bar_s) / (1.0 - alpha_bar_t)).sqrt() * (1.0 - alpha_bar_t / alpha_bar_s).max(0.0).sqrt()
    } else {
        0.0
    };
    let dir = (1.0 - alpha_bar_s - stoch * stoch).max(0.0).sqrt();
    let mut out = x0.axpby(alpha_bar_s.sqrt(), &eps, dir)?;
    if stoch > 0.0 {
        let z = noise.ok_or_else(|| Error::invalid("stochastic DDIM step needs a noise tensor"))?;
        out = out.axpby(1.0, z, stoch)?;
    }
    Ok(out)
}

/// DDIM step from schedule index `t` down to `s < t`.
#[allow(clippy::too_many_arguments)]
pub fn ddim_step(
    x_t: &LatentTensor,
    v_hat: &LatentTensor,
    t: usize,
    s: usize,
    eta: f64,
    sched: &NoiseSchedule,
    noise: Option<&LatentTensor>,
) -> Result<LatentTensor> {
    if s >= t {
        return Err(Error::invalid(format!("DDIM target step {s} must precede {t}")));
    }
    sched.check_step(t)?;
    ddim_update(x_t, v_hat, sched.alpha_bar(t), sched.alpha_bar(s), eta, noise)
}
