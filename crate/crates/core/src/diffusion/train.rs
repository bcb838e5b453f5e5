//! Training loop for [`TrainableDenoiser`]s on clip latents.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{q_sample, v_target_with, NoiseSchedule, Objective, TrainableDenoiser, VFormula};
use crate::conditioning::{ConditionStack, TaskId, DEFAULT_REF_DROPOUT};
use crate::error::{Error, Result};
use crate::modality::LatentTensor;
use crate::optim::Adam;

/// One training item: a clean clip latent plus the raw latents its condition
/// stack is assembled from.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    /// Target clip latent, `N + 1` frames stacked along the height axis.
    pub x0: LatentTensor,
    pub reference: LatentTensor,
    /// `N + 1` sparse color latents; slot 0 is replaced by the reference.
    pub sparse_colors: Vec<LatentTensor>,
    /// `N + 1` sparse depth latents.
    pub depth: Vec<LatentTensor>,
    pub task: TaskId,
}

impl TrainExample {
    /// Builds the condition stack with reference dropout.
    pub fn condition<R: Rng + ?Sized>(&self, drop_p: f64, rng: &mut R) -> Result<ConditionStack> {
        ConditionStack::assemble_train(
            self.reference.clone(),
            self.sparse_colors.clone(),
            self.depth.clone(),
            self.task,
            drop_p,
            rng,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub ref_dropout: f64,
    pub v_formula: VFormula,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 4,
            lr: 3e-3,
            seed: 0,
            ref_dropout: DEFAULT_REF_DROPOUT,
            v_formula: VFormula::Standard,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    /// Mean batch loss at every step.
    pub raw: Vec<f64>,
    /// Bias-corrected EMA of `raw` followed by a running minimum, so it never
    /// increases.
    pub smoothed: Vec<f64>,
}

impl TrainReport {
    pub fn mean_over(&self, range: std::ops::Range<usize>) -> f64 {
        let s = &self.raw[range];
        s.iter().sum::<f64>() / s.len() as f64
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("step,loss\n");
        for (i, l) in self.raw.iter().enumerate() {
            out.push_str(&format!("{i},{l}\n"));
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| Error::io(path, e))
    }
}

pub fn monotone_smooth(raw: &[f64], decay: f64) -> Vec<f64> {
    let mut ema = 0.0;
    let mut best = f64::INFINITY;
    raw.iter()
        .enumerate()
        .map(|(i, &l)| {
            ema = decay * ema + (1.0 - decay) * l;
            let corrected = ema / (1.0 - decay.powi(i as i32 + 1));
            best = best.min(corrected);
            best
        })
        .collect()
}

/// Mean squared error between the raw model output and the objective's
/// target, and its parameter gradient.
pub fn example_loss<M: TrainableDenoiser + ?Sized>(
    model: &M,
    x0: &LatentTensor,
    eps: &LatentTensor,
    t: usize,
    cond: &ConditionStack,
    sched: &NoiseSchedule,
    formula: VFormula,
) -> Result<(f64, Vec<f64>)> {
    let x_t = q_sample(x0, t, eps, sched)?;
    let target = match model.objective() {
        Objective::V => v_target_with(formula, x0, eps, &x_t, t, sched)?,
        Objective::Eps => eps.clone(),
    };
    let out = model.raw_output(&x_t, t, cond)?;
    let mut grad_out = out.axpby(1.0, &target, -1.0)?;
    let n = grad_out.len() as f64;
    let loss = grad_out.data.iter().map(|d| d * d).sum::<f64>() / n;
    grad_out.data.iter_mut().for_each(|d| *d *= 2.0 / n);
    let grad = model.raw_backward(&x_t, t, cond, &grad_out)?;
    Ok((loss, grad))
}

/// Minimizes the denoising loss with uniformly drawn `t ∈ [1, T]`, fresh
/// Gaussian noise per item and Adam.
pub fn train_denoiser<M: TrainableDenoiser + Sync>(
    model: &mut M,
    dataset: &[TrainExample],
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if dataset.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::invalid("batch size and learning rate must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model.params().len());
    let mut raw = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut items = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let ex = &dataset[rng.gen_range(0..dataset.len())];
            let t = rng.gen_range(1..=sched.num_steps());
            let cond = ex.condition(cfg.ref_dropout, &mut rng)?;
            let (h, w, c) = ex.x0.shape();
            let eps: Vec<f64> = (0..h * w * c).map(|_| rng.sample(StandardNormal)).collect();
            items.push((ex, t, cond, LatentTensor::new(h, w, c, eps)?));
        }
        let m: &M = model;
        let results: Vec<Result<(f64, Vec<f64>)>> = items
            .par_iter()
            .map(|(ex, t, cond, eps)| example_loss(m, &ex.x0, eps, *t, cond, sched, cfg.v_formula))
            .collect();
        let mut loss = 0.0;
        let mut grad = vec![0.0; m.params().len()];
        for r in results {
            let (l, g) = r?;
            loss += l;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        let scale = 1.0 / cfg.batch_size as f64;
        loss *= scale;
        grad.iter_mut().for_each(|g| *g *= scale);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NumericalAbort {
                step,
                reason: format!("non-finite loss {loss}"),
            });
        }
        raw.push(loss);
        adam.step(model.params_mut(), &grad, |_| cfg.lr);
    }
    let smoothed = monotone_smooth(&raw, 0.98);
    Ok(TrainReport { raw, smoothed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{v_target, Denoiser, NoiseSource, TinyConfig, TinyDenoiser};

    fn example(seed: u64) -> TrainExample {
        let n = NoiseSource::new(seed);
        let s = (2, 2, 2);
        TrainExample {
            x0: n.normal(0, (4, 2, 2)),
            reference: n.normal(1, s),
            sparse_colors: vec![n.normal(2, s), n.normal(3, s)],
            depth: vec![n.normal(4, s), n.normal(5, s)],
            task: TaskId::Color,
        }
    }

    /// Always returns one fixed tensor.
    struct Constant {
        out: LatentTensor,
    }

    impl Denoiser for Constant {
        fn predict_v(&self, _: &LatentTensor, _: usize, _: &ConditionStack) -> Result<LatentTensor> {
            Ok(self.out.clone())
        }
    }

    impl TrainableDenoiser for Constant {
        fn objective(&self) -> Objective {
            Objective::V
        }
        fn params(&self) -> &[f64] {
            &self.out.data
        }
        fn params_mut(&mut self) -> &mut [f64] {
            &mut self.out.data
        }
        fn raw_output(&self, _: &LatentTensor, _: usize, _: &ConditionStack) -> Result<LatentTensor> {
            Ok(self.out.clone())
        }
        fn raw_backward(
            &self,
            _: &LatentTensor,
            _: usize,
            _: &ConditionStack,
            g: &LatentTensor,
        ) -> Result<Vec<f64>> {
            Ok(g.data.clone())
        }
    }

    #[test]
    fn exact_prediction_has_zero_loss() {
        let sched = NoiseSchedule::ddpm(1000).unwrap();
        let ex = example(3);
        let eps = NoiseSource::new(9).normal(0, ex.x0.shape());
        let t = 417;
        let model = Constant {
            out: v_target(&ex.x0, &eps, t, &sched).unwrap(),
        };
        let cond = ex.condition(0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let (loss, grad) = example_loss(&model, &ex.x0, &eps, t, &cond, &sched, VFormula::Standard).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let sched = NoiseSchedule::ddpm(1000).unwrap();
        let model = TinyDenoiser::new(TinyConfig { channels: 2, width: 4 }, Objective::V, sched.clone(), 1).unwrap();
        let ex = example(4);
        let eps = NoiseSource::new(2).normal(0, ex.x0.shape());
        let cond = ex.condition(0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let (_, grad) = example_loss(&model, &ex.x0, &eps, 600, &cond, &sched, VFormula::Standard).unwrap();
        let h = 1e-4;
        for i in 0..model.num_params() {
            let mut p = model.clone();
            p.params_mut()[i] += h;
            let mut m = model.clone();
            m.params_mut()[i] -= h;
            let lp = example_loss(&p, &ex.x0, &eps, 600, &cond, &sched, VFormula::Standard).unwrap().0;
            let lm = example_loss(&m, &ex.x0, &eps, 600, &cond, &sched, VFormula::Standard).unwrap().0;
            let fd = (lp - lm) / (2.0 * h);
            let denom = fd.abs().max(grad[i].abs()).max(1e-6);
            assert!((fd - grad[i]).abs() / denom < 1e-4, "param {i}");
        }
    }

    #[test]
    fn smoothing_is_monotone() {
        let s = monotone_smooth(&[5.0, 1.0, 9.0, 0.5, 3.0], 0.5);
        assert!(s.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(s[0], 5.0);
    }

    #[test]
    fn training_is_reproducible_and_reduces_loss() {
        let sched = NoiseSchedule::ddpm(1000).unwrap();
        let data: Vec<_> = (0..4).map(example).collect();
        let cfg = TrainConfig {
            steps: 300,
            ..TrainConfig::default()
        };
        let mk = || TinyDenoiser::new(TinyConfig { channels: 2, width: 8 }, Objective::V, sched.clone(), 5).unwrap();
        let (mut a, mut b) = (mk(), mk());
        let ra = train_denoiser(&mut a, &data, &sched, &cfg).unwrap();
        let rb = train_denoiser(&mut b, &data, &sched, &cfg).unwrap();
        assert_eq!(ra, rb);
        assert!(ra.mean_over(250..300) < ra.mean_over(0..50));
    }

    #[test]
    fn non_finite_loss_aborts() {
        let sched = NoiseSchedule::ddpm(100).unwrap();
        let ex = example(1);
        let mut model = Constant {
            out: LatentTensor::filled(4, 2, 2, f64::NAN),
        };
        let err = train_denoiser(&mut model, &[ex], &sched, &TrainConfig::default()).unwrap_err();
        assert!(err.is_numerical());
    }

    #[test]
    fn csv_output() {
        let dir = tempfile::tempdir().unwrap();
        let r = TrainReport {
            raw: vec![1.0, 0.5],
            smoothed: vec![1.0, 0.5],
        };
        let p = dir.path().join("loss.csv");
        r.write_csv(&p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "step,loss\n0,1\n1,0.5\n");
    }
}
