use super::{Denoiser, NoiseSchedule};
use crate::conditioning::ConditionStack;
use crate::error::{Error, Result};
use crate::modality::LatentTensor;

/// Exact v prediction for independent Gaussian data `x₀ ~ N(mu, s2)` (per
/// entry) under the forward process, from the posterior mean `E[x₀ | x_t]`.
///
/// At `σ = 0` the convention `v̂ = α·(x_t − mu)` is used.
pub fn oracle_predict_v(
    x_t: &LatentTensor,
    t: usize,
    mu: &LatentTensor,
    s2: &LatentTensor,
    sched: &NoiseSchedule,
) -> Result<LatentTensor> {
    x_t.check_same_shape(mu)?;
    x_t.check_same_shape(s2)?;
    sched.check_step(t)?;
    let (a, s) = (sched.alpha(t), sched.sigma(t));
    let data = x_t
        .data
        .iter()
        .zip(&mu.data)
        .zip(&s2.data)
        .map(|((&x, &m), &var)| {
            if s == 0.0 {
                return a * (x - m);
            }
            let x0 = (a * var * x + s * s * m) / (a * a * var + s * s);
            (a * x - x0) / s
        })
        .collect();
    Ok(LatentTensor { data, ..x_t.clone() })
}

/// Analytic denoiser for Gaussian data; ignores the conditioning.
#[derive(Debug, Clone)]
pub struct GaussianOracle {
    pub mu: LatentTensor,
    pub s2: LatentTensor,
    pub sched: NoiseSchedule,
}

impl GaussianOracle {
    pub fn new(mu: LatentTensor, s2: LatentTensor, sched: NoiseSchedule) -> Result<Self> {
        mu.check_same_shape(&s2)?;
        if s2.data.iter().any(|v| *v < 0.0) {
            return Err(Error::invalid("oracle variance must be non-negative"));
        }
        Ok(Self { mu, s2, sched })
    }

    /// Same mean and variance in every entry.
    pub fn isotropic(shape: (usize, usize, usize), mean: f64, var: f64, sched: NoiseSchedule) -> Result<Self> {
        let (h, w, c) = shape;
        Self::new(LatentTensor::filled(h, w, c, mean), LatentTensor::filled(h, w, c, var), sched)
    }
}

impl Denoiser for GaussianOracle {
    fn predict_v(&self, x_t: &LatentTensor, t: usize, _cond: &ConditionStack) -> Result<LatentTensor> {
        oracle_predict_v(x_t, t, &self.mu, &self.s2, &self.sched)
    }
}
