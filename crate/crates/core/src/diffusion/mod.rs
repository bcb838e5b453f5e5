//! Variance-preserving diffusion: schedules, the v-parameterized forward
//! process, DDIM sampling, an analytic Gaussian denoiser and a small
//! trainable one.

mod noise;
mod oracle;
mod process;
mod sampler;
mod schedule;
mod tiny;
mod train;

pub use noise::NoiseSource;
pub use oracle::{oracle_predict_v, GaussianOracle};
pub use process::{ddim_step, ddim_update, from_v, q_sample, v_target, v_target_with, VFormula};
pub use sampler::{sample, timesteps, Denoiser, SampleConfig, DEFAULT_SAMPLE_STEPS};
pub use schedule::{NoiseSchedule, BETA_END, BETA_START, DEFAULT_TRAIN_STEPS};
pub use tiny::{Objective, TinyConfig, TinyDenoiser, TrainableDenoiser};
pub use train::{example_loss, monotone_smooth, train_denoiser, TrainConfig, TrainExample, TrainReport};
