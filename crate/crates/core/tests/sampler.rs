//! Deterministic DDIM with the Gaussian oracle is an affine map of the start
//! noise, so its output variance is the squared product of per-step gains.

use streetforge::conditioning::{ConditionStack, TaskId};
use streetforge::diffusion::{sample, timesteps, GaussianOracle, NoiseSchedule, SampleConfig};
use streetforge::modality::LatentTensor;

fn scalar_stack() -> ConditionStack {
    ConditionStack::from_latents(LatentTensor::scalar(0.0), vec![], vec![LatentTensor::scalar(0.0)], TaskId::Color).unwrap()
}

/// Gain of x_T on the final sample, derived from the posterior mean
/// x̂₀ = μ + α s² (x − α μ) / (α² s² + σ²).
fn affine_gain(sched: &NoiseSchedule, steps: usize, s2: f64) -> f64 {
    timesteps(sched.num_steps(), steps)
        .windows(2)
        .map(|w| {
            let (a, sg) = (sched.alpha(w[0]), sched.sigma(w[0]));
            let (a2, sg2) = (sched.alpha(w[1]), sched.sigma(w[1]));
            let g = a * s2 / (a * a * s2 + sg * sg);
            a2 * g + sg2 * (1.0 - a * g) / sg
        })
        .product()
}

fn sample_variance(sched: &NoiseSchedule, steps: usize, var: f64, n: u64) -> f64 {
    let oracle = GaussianOracle::isotropic((1, 1, 1), 2.0, var, sched.clone()).unwrap();
    let cond = scalar_stack();
    let xs: Vec<f64> = (0..n)
        .map(|seed| {
            let cfg = SampleConfig { num_steps: steps, eta: 0.0, seed };
            sample(&oracle, &cond, sched, &cfg).unwrap().data[0]
        })
        .collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
}

#[test]
fn fifty_step_variance_matches_affine_prediction() {
    let sched = NoiseSchedule::ddpm(1000).unwrap();
    let predicted = affine_gain(&sched, 50, 0.25).powi(2);
    assert!((predicted - 0.2222).abs() < 1e-3, "predicted {predicted}");
    let n = 10_000;
    let var = sample_variance(&sched, 50, 0.25, n);
    let se = predicted * (2.0 / (n - 1) as f64).sqrt();
    assert!((var - predicted).abs() < 4.0 * se, "variance {var} vs predicted {predicted}");
}

#[test]
fn finer_grids_approach_the_data_variance() {
    let sched = NoiseSchedule::ddpm(1000).unwrap();
    let gains: Vec<f64> = [10, 50, 250, 1000].iter().map(|k| affine_gain(&sched, *k, 0.25).powi(2)).collect();
    assert!(gains.windows(2).all(|w| w[1] > w[0]), "{gains:?}");
    assert!((gains[3] - 0.25).abs() < 0.01, "{gains:?}");
    let var = sample_variance(&sched, 1000, 0.25, 2000);
    assert!((var - gains[3]).abs() < 4.0 * gains[3] * (2.0 / 1999.0f64).sqrt(), "{var}");
}
