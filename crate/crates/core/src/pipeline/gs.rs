//! Gaussian scene training on a bundle, optionally supervised by virtual
//! views, and rendering of view sets from the result.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::bundle::{SceneBundle, View, ViewSet};
use super::metrics::{eval_metrics, MetricsReport};
use super::nvs::fuse_bundle;
use crate::error::{Error, Result};
use crate::splat::{init_from_cloud, optimize, rasterize_with, GaussianScene, OptimConfig, OptimTrace, RenderSettings, TrainView, VirtualView};

#[derive(Debug, Clone, PartialEq)]
pub struct GsConfig {
    pub optim: OptimConfig,
    pub seed: u64,
    /// Keep every `init_stride`-th fused point when seeding Gaussians.
    pub init_stride: usize,
}

impl Default for GsConfig {
    fn default() -> Self {
        Self {
            optim: OptimConfig::default(),
            seed: 0,
            init_stride: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GsOutput {
    pub scene: GaussianScene,
    pub trace: OptimTrace,
    /// Scores on the held-out views if given, otherwise on the training views.
    pub report: MetricsReport,
}

pub fn training_views(bundle: &SceneBundle) -> Vec<TrainView> {
    bundle
        .frames
        .iter()
        .map(|f| TrainView {
            cam: bundle.camera,
            cam_to_world: f.cam_to_world,
            t: f.timestamp,
            color: f.color.clone(),
            depth: f.depth.clone(),
        })
        .collect()
}

/// Converts a view set into virtual supervision; every view needs all three
/// modalities.
pub fn virtual_views(set: &ViewSet) -> Result<Vec<VirtualView>> {
    set.views
        .iter()
        .enumerate()
        .map(|(i, v)| match (&v.color, &v.depth, &v.semantic) {
            (Some(color), Some(depth), Some(sem)) => Ok(VirtualView {
                cam: set.camera,
                cam_to_world: v.cam_to_world,
                t: v.timestamp,
                color: color.clone(),
                depth: depth.clone(),
                sem: sem.clone(),
            }),
            _ => Err(Error::invalid(format!(
                "virtual view {i} needs color, depth and semantic rasters"
            ))),
        })
        .collect()
}

/// Renders the scene at every pose of `poses`, keeping its camera and palette.
pub fn render_views(scene: &GaussianScene, poses: &ViewSet, settings: &RenderSettings) -> ViewSet {
    let views = poses
        .views
        .par_iter()
        .map(|v| {
            let out = rasterize_with(scene, &poses.camera, &v.cam_to_world, v.timestamp, settings);
            View {
                timestamp: v.timestamp,
                cam_to_world: v.cam_to_world,
                color: Some(out.color_image()),
                depth: Some(out.depth_map()),
                semantic: Some(out.sem_argmax()),
            }
        })
        .collect();
    ViewSet {
        views,
        ..poses.clone()
    }
}

/// Seeds Gaussians from the fused LiDAR of `bundle`, optimizes them against
/// its frames (and, with probability `cfg.optim.theta` per step, against
/// `virtual_set`), then scores renders at the held-out poses.
pub fn train_gs(
    bundle: &SceneBundle,
    virtual_set: Option<&ViewSet>,
    heldout: Option<&ViewSet>,
    cfg: &GsConfig,
) -> Result<GsOutput> {
    bundle.validate()?;
    let virtual_list = match virtual_set {
        Some(set) => {
            if set.camera != bundle.camera {
                return Err(Error::invalid("virtual views use a different camera than the bundle"));
            }
            virtual_views(set)?
        }
        None => vec![],
    };
    if cfg.optim.theta > 0.0 && virtual_list.is_empty() {
        return Err(Error::invalid("theta > 0 needs virtual views"));
    }
    let fused = fuse_bundle(bundle)?;
    let init = init_from_cloud(&fused, cfg.init_stride, bundle.palette.len())?;
    let real = training_views(bundle);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (scene, trace) = optimize(init, &real, &virtual_list, &cfg.optim, &mut rng)?;
    let targets = match heldout {
        Some(h) => h.clone(),
        None => ViewSet::from_bundle(bundle),
    };
    let renders = render_views(&scene, &targets, &cfg.optim.render);
    let report = eval_metrics(&renders, &targets)?;
    Ok(GsOutput { scene, trace, report })
}
