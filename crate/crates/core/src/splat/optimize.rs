//! Adam optimization of a [`GaussianScene`] against captured views, mixed
//! with generated virtual views at rate θ.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;

use super::gaussian::{normalize_quat, offsets, sigmoid, GaussianScene};
use super::loss::{loss_input, loss_virtual, InputWeights, VirtualWeights};
use super::render::{rasterize_grad_with, rasterize_with, RenderSettings};
use super::ssim::{MsSsimProxy, PerceptualLoss};
use crate::error::{Error, Result};
use crate::geometry::{CameraModel, Pose};
use crate::modality::{DepthMap, PseudoImage, SemanticMap};
use crate::optim::Adam;

/// Default probability of supervising with a virtual view.
pub const DEFAULT_THETA: f64 = 0.2;

/// A captured frame: color plus (possibly sparse) depth.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainView {
    pub cam: CameraModel,
    pub cam_to_world: Pose,
    pub t: f64,
    pub color: PseudoImage,
    pub depth: DepthMap,
}

/// A generated frame at a synthesized pose.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualView {
    pub cam: CameraModel,
    pub cam_to_world: Pose,
    pub t: f64,
    pub color: PseudoImage,
    pub depth: DepthMap,
    pub sem: SemanticMap,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningRates {
    pub mean: f64,
    pub scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub color: f64,
    pub sem: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            mean: 1.6e-4,
            scale: 5e-3,
            rotation: 5e-3,
            opacity: 5e-2,
            color: 2.5e-3,
            sem: 2.5e-3,
        }
    }
}

impl LearningRates {
    fn for_offset(&self, off: usize) -> f64 {
        match off {
            o if o < offsets::LOG_SCALE => self.mean,
            o if o < offsets::ROTATION => self.scale,
            o if o < offsets::OPACITY => self.rotation,
            offsets::OPACITY => self.opacity,
            o if o < offsets::SEM => self.color,
            _ => self.sem,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    pub iters: usize,
    pub theta: f64,
    pub lr: LearningRates,
    pub input: InputWeights,
    pub virtual_weights: VirtualWeights,
    pub render: RenderSettings,
    /// Densify every this many iterations; 0 disables it.
    pub densify_every: usize,
    pub prune_opacity: f64,
    pub clone_percentile: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            iters: 30_000,
            theta: DEFAULT_THETA,
            lr: LearningRates::default(),
            input: InputWeights::default(),
            virtual_weights: VirtualWeights::default(),
            render: RenderSettings::default(),
            densify_every: 500,
            prune_opacity: 0.005,
            clone_percentile: 0.99,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimTrace {
    pub losses: Vec<f64>,
    /// Whether iteration `i` used a virtual view.
    pub picked_virtual: Vec<bool>,
    pub input_calls: usize,
    pub virtual_calls: usize,
    /// `(iteration, gaussian count)` after each densification.
    pub densify_log: Vec<(usize, usize)>,
    pub warnings: Vec<String>,
}

impl OptimTrace {
    pub fn virtual_fraction(&self) -> f64 {
        self.virtual_calls as f64 / self.picked_virtual.len().max(1) as f64
    }
}

pub fn optimize<R: Rng + ?Sized>(
    scene: GaussianScene,
    real: &[TrainView],
    virtual_views: &[VirtualView],
    cfg: &OptimConfig,
    rng: &mut R,
) -> Result<(GaussianScene, OptimTrace)> {
    optimize_with(scene, real, virtual_views, cfg, &MsSsimProxy::default(), rng)
}

pub fn optimize_with<R: Rng + ?Sized>(
    mut scene: GaussianScene,
    real: &[TrainView],
    virtual_views: &[VirtualView],
    cfg: &OptimConfig,
    perceptual: &dyn PerceptualLoss,
    rng: &mut R,
) -> Result<(GaussianScene, OptimTrace)> {
    if real.is_empty() {
        return Err(Error::invalid("need at least one real view"));
    }
    if !(0.0..=1.0).contains(&cfg.theta) {
        return Err(Error::invalid("theta must lie in [0, 1]"));
    }
    if cfg.theta > 0.0 && virtual_views.is_empty() {
        return Err(Error::invalid("theta > 0 needs at least one virtual view"));
    }
    if scene.is_empty() {
        return Err(Error::NoGaussians);
    }
    let stride = scene.stride();
    let mut params = scene.params();
    let mut adam = Adam::new(params.len());
    let mut grad_norm_sum = vec![0.0; scene.len()];
    let mut grad_norm_count = vec![0usize; scene.len()];
    let mut trace = OptimTrace::default();

    for iter in 0..cfg.iters {
        let use_virtual = rng.gen::<f64>() < cfg.theta;
        trace.picked_virtual.push(use_virtual);
        let (loss, grad) = if use_virtual {
            let v = &virtual_views[rng.gen_range(0..virtual_views.len())];
            let r = rasterize_with(&scene, &v.cam, &v.cam_to_world, v.t, &cfg.render);
            let out = loss_virtual(&r, &v.color, &v.depth, &v.sem, &cfg.virtual_weights, perceptual)?;
            trace.virtual_calls += 1;
            let g = rasterize_grad_with(&scene, &v.cam, &v.cam_to_world, v.t, &out.adjoint, &cfg.render)?;
            (out.value, g)
        } else {
            let v = &real[rng.gen_range(0..real.len())];
            let r = rasterize_with(&scene, &v.cam, &v.cam_to_world, v.t, &cfg.render);
            let out = loss_input(&r, &v.color, &v.depth, &cfg.input)?;
            trace.input_calls += 1;
            if iter == 0 {
                trace.warnings.extend(out.warnings.iter().cloned());
            }
            let g = rasterize_grad_with(&scene, &v.cam, &v.cam_to_world, v.t, &out.adjoint, &cfg.render)?;
            (out.value, g)
        };
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NumericalAbort {
                step: iter,
                reason: format!("non-finite splatting loss {loss}"),
            });
        }
        trace.losses.push(loss);

        for (i, chunk) in grad.chunks_exact(stride).enumerate() {
            let n = Vector3::from_column_slice(&chunk[offsets::MEAN..offsets::MEAN + 3]).norm();
            if n > 0.0 {
                grad_norm_sum[i] += n;
                grad_norm_count[i] += 1;
            }
        }
        adam.step(&mut params, &grad, |i| cfg.lr.for_offset(i % stride));
        for chunk in params.chunks_exact_mut(stride) {
            let q = normalize_quat([
                chunk[offsets::ROTATION],
                chunk[offsets::ROTATION + 1],
                chunk[offsets::ROTATION + 2],
                chunk[offsets::ROTATION + 3],
            ]);
            chunk[offsets::ROTATION..offsets::ROTATION + 4].copy_from_slice(&q);
            for c in &mut chunk[offsets::COLOR..offsets::COLOR + 3] {
                *c = c.clamp(0.0, 1.0);
            }
        }
        scene.set_params(&params)?;

        let step = iter + 1;
        if cfg.densify_every > 0 && step % cfg.densify_every == 0 && step < cfg.iters {
            let avg: Vec<f64> = grad_norm_sum
                .iter()
                .zip(&grad_norm_count)
                .map(|(s, c)| s / (*c).max(1) as f64)
                .collect();
            let sources = densify(&mut scene, &avg, cfg, rng);
            params = scene.params();
            adam = remap_adam(&adam, &sources, stride);
            grad_norm_sum = vec![0.0; scene.len()];
            grad_norm_count = vec![0; scene.len()];
            trace.densify_log.push((step, scene.len()));
        }
    }
    Ok((scene, trace))
}

/// Nearest-rank percentile.
fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

/// Prunes transparent Gaussians and clones those with the largest mean
/// gradients. Returns, per new Gaussian, the flat index it was copied from
/// (`None` for fresh clones).
fn densify<R: Rng + ?Sized>(scene: &mut GaussianScene, avg_grad: &[f64], cfg: &OptimConfig, rng: &mut R) -> Vec<Option<usize>> {
    let threshold = percentile(avg_grad, cfg.clone_percentile);
    let keep: Vec<bool> = scene.iter().map(|g| sigmoid(g.opacity_logit) >= cfg.prune_opacity).collect();
    let prune = keep.iter().any(|k| *k);
    let mut sources = Vec::new();
    let groups = scene.groups();
    let all: Vec<_> = scene.iter().cloned().collect();
    let mut rebuilt = Vec::with_capacity(groups.len());
    for (_, start, count) in &groups {
        let mut out = Vec::with_capacity(*count);
        let mut clones = Vec::new();
        for i in *start..start + count {
            if prune && !keep[i] {
                continue;
            }
            let g = all[i].clone();
            if avg_grad[i] > threshold {
                let mut c = g.clone();
                let local = Vector3::from_fn(|k, _| 0.5 * g.log_scale[k].exp() * rng.sample::<f64, _>(StandardNormal));
                c.mean += g.rotation_matrix() * local;
                clones.push(c);
            }
            out.push(g);
            sources.push(Some(i));
        }
        sources.extend(clones.iter().map(|_| None));
        out.extend(clones);
        rebuilt.push(out);
    }
    let mut it = rebuilt.into_iter();
    scene.static_gaussians = it.next().unwrap();
    for (obj, gs) in scene.objects.values_mut().zip(it) {
        obj.gaussians = gs;
    }
    sources
}

fn remap_adam(old: &Adam, sources: &[Option<usize>], stride: usize) -> Adam {
    let mut next = old.resized(sources.len() * stride);
    for (new_i, src) in sources.iter().enumerate() {
        let dst = new_i * stride..(new_i + 1) * stride;
        match src {
            Some(s) => {
                next.m[dst.clone()].copy_from_slice(&old.m[s * stride..(s + 1) * stride]);
                next.v[dst].copy_from_slice(&old.v[s * stride..(s + 1) * stride]);
            }
            None => {
                next.m[dst.clone()].fill(0.0);
                next.v[dst].fill(0.0);
            }
        }
    }
    next
}
