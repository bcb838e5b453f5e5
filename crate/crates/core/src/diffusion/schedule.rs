use crate::error::{Error, Result};

/// Default number of training diffusion steps.
pub const DEFAULT_TRAIN_STEPS: usize = 1000;
pub const BETA_START: f64 = 1e-4;
pub const BETA_END: f64 = 2e-2;

/// Cumulative signal fractions `ᾱ_t` for `t = 0..=T`, with `ᾱ_0 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear β from [`BETA_START`] to [`BETA_END`] over `steps` steps.
    pub fn ddpm(steps: usize) -> Result<Self> {
        if steps < 1 {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        alpha_bar.push(1.0);
        let mut prod = 1.0;
        for i in 0..steps {
            let beta = if steps == 1 {
                BETA_START
            } else {
                BETA_START + (BETA_END - BETA_START) * i as f64 / (steps - 1) as f64
            };
            prod *= 1.0 - beta;
            alpha_bar.push(prod);
        }
        Ok(Self { alpha_bar })
    }

    /// Custom schedule from `ᾱ_1..ᾱ_T`, which must be strictly decreasing in `(0, 1]`.
    pub fn from_alpha_bar(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        if values.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
            return Err(Error::invalid("alpha_bar values must lie in (0, 1]"));
        }
        if values.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::invalid("alpha_bar must be strictly decreasing"));
        }
        let mut alpha_bar = vec![1.0];
        alpha_bar.extend_from_slice(values);
        Ok(Self { alpha_bar })
    }

    /// `T`.
    pub fn num_steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha_bar[t].sqrt()
    }

    pub fn sigma(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar[t]).sqrt()
    }

    pub(crate) fn check_step(&self, t: usize) -> Result<()> {
        if t > self.num_steps() {
            return Err(Error::invalid(format!("step {t} beyond schedule length {}", self.num_steps())));
        }
        Ok(())
    }

    /// FNV-1a over the `ᾱ` bit patterns, hex encoded.
    pub fn digest(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for a in &self.alpha_bar {
            for b in a.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        format!("{h:016x}")
    }
}
