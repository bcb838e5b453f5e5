use super::{ddim_step, NoiseSchedule, NoiseSource};
use crate::conditioning::ConditionStack;
use crate::error::{Error, Result};
use crate::modality::LatentTensor;

/// Default number of DDIM sampling steps.
pub const DEFAULT_SAMPLE_STEPS: usize = 50;

/// Anything that predicts the v-target for a noisy clip latent.
pub trait Denoiser {
    fn predict_v(&self, x_t: &LatentTensor, t: usize, cond: &ConditionStack) -> Result<LatentTensor>;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn predict_v(&self, x_t: &LatentTensor, t: usize, cond: &ConditionStack) -> Result<LatentTensor> {
        (**self).predict_v(x_t, t, cond)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn predict_v(&self, x_t: &LatentTensor, t: usize, cond: &ConditionStack) -> Result<LatentTensor> {
        (**self).predict_v(x_t, t, cond)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleConfig {
    pub num_steps: usize,
    pub eta: f64,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            num_steps: DEFAULT_SAMPLE_STEPS,
            eta: 0.0,
            seed: 0,
        }
    }
}

impl SampleConfig {
    pub fn validate(&self, sched: &NoiseSchedule) -> Result<()> {
        if self.num_steps < 1 || self.num_steps > sched.num_steps() {
            return Err(Error::invalid(format!(
                "num_steps must lie in 1..={}, got {}",
                sched.num_steps(),
                self.num_steps
            )));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::invalid("eta must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Descending step indices `T = t_0 > t_1 > … > t_{n-1} > 0`, followed by the
/// terminal `0`. Spacing is uniform over `[T, 1]`.
pub fn timesteps(total: usize, num_steps: usize) -> Vec<usize> {
    let mut ts: Vec<usize> = (0..num_steps).map(|k| total - k * total / num_steps).collect();
    ts.push(0);
    ts
}

/// DDIM sampling over the clip shape given by `cond`. Returns `x̂₀` of the
/// final step.
pub fn sample<D: Denoiser + ?Sized>(
    denoiser: &D,
    cond: &ConditionStack,
    sched: &NoiseSchedule,
    cfg: &SampleConfig,
) -> Result<LatentTensor> {
    cfg.validate(sched)?;
    let noise = NoiseSource::new(cfg.seed);
    let shape = cond.clip_shape();
    let mut x = noise.normal(0, shape);
    let ts = timesteps(sched.num_steps(), cfg.num_steps);
    for (k, pair) in ts.windows(2).enumerate() {
        let (t, s) = (pair[0], pair[1]);
        let v = denoiser.predict_v(&x, t, cond)?;
        x.check_same_shape(&v)?;
        let fresh = (cfg.eta > 0.0).then(|| noise.normal(k as u64 + 1, shape));
        x = ddim_step(&x, &v, t, s, cfg.eta, sched, fresh.as_ref())?;
    }
    Ok(x)
}
