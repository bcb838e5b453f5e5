//! LiDAR fusion for a bundle, novel trajectories and the feed-forward view
//! synthesis driver.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bundle::{SceneBundle, View, ViewSet};
use super::io::{decode_records, encode_records, read_framed, write_framed, LIDAR_RECORD_BYTES};
use crate::conditioning::{edit_remove_objects, ConditionStack, StackEncoder, TaskId};
use crate::diffusion::{sample, Denoiser, NoiseSchedule, SampleConfig, TrainExample};
use crate::error::{Error, Result};
use crate::geometry::{aggregate, project_sparse_tagged, recompose, BBoxTrack, FusedScene, PointCloud, Pose};
use crate::modality::{
    decode_depth3, decode_semantic, encode_depth3, encode_semantic, DepthMap, LatentCodec, LatentTensor, PseudoImage,
    SpaceToDepth,
};

const FUSED_MAGIC: &[u8; 8] = b"SFFS0001";

/// Aggregates every LiDAR sweep of the bundle and applies its object
/// removals.
pub fn fuse_bundle(bundle: &SceneBundle) -> Result<FusedScene> {
    let fused = aggregate(&bundle.lidar_frames(), &bundle.tracks)?;
    edit_remove_objects(&fused, &bundle.edits.removed_objects)
}

#[derive(Serialize, Deserialize)]
struct FusedHeader {
    static_count: usize,
    objects: Vec<(i32, usize)>,
    tracks: Vec<BBoxTrack>,
}

/// Writes a fused scene; coordinates are stored as `f32`.
pub fn write_fused(path: &Path, scene: &FusedScene) -> Result<()> {
    let header = FusedHeader {
        static_count: scene.static_world.len(),
        objects: scene.objects.iter().map(|(id, c)| (*id, c.len())).collect(),
        tracks: scene.tracks.clone(),
    };
    let mut payload = encode_records(&scene.static_world);
    for cloud in scene.objects.values() {
        payload.extend(encode_records(cloud));
    }
    write_framed(path, FUSED_MAGIC, &header, &payload)
}

pub fn read_fused(path: &Path) -> Result<FusedScene> {
    let (header, payload): (FusedHeader, _) = read_framed(path, FUSED_MAGIC)?;
    let total = header.static_count + header.objects.iter().map(|(_, n)| n).sum::<usize>();
    if payload.len() != total * LIDAR_RECORD_BYTES {
        return Err(Error::format(path, format!("expected {total} point records")));
    }
    let mut offset = 0;
    let mut take = |n: usize| {
        let bytes = &payload[offset * LIDAR_RECORD_BYTES..(offset + n) * LIDAR_RECORD_BYTES];
        offset += n;
        decode_records(bytes, path)
    };
    let static_world = take(header.static_count)?;
    let mut objects = BTreeMap::new();
    for (id, n) in &header.objects {
        objects.insert(*id, take(*n)?);
    }
    FusedScene::new(static_world, objects, header.tracks)
}

/// One target camera of a novel trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPose {
    pub cam_to_world: Pose,
    pub t: f64,
}

/// The recorded trajectory moved `shift` meters along each camera's x axis
/// (positive is to the right).
pub fn lateral_shift(bundle: &SceneBundle, shift: f64) -> Vec<TrajectoryPose> {
    let offset = Pose::from_translation(Vector3::new(shift, 0.0, 0.0));
    bundle
        .frames
        .iter()
        .map(|f| TrajectoryPose {
            cam_to_world: f.cam_to_world.compose(&offset),
            t: f.timestamp,
        })
        .collect()
}

/// Lateral offsets of the default novel trajectories, meters.
pub const DEFAULT_SHIFTS: [f64; 6] = [-4.0, -3.0, -2.0, 2.0, 3.0, 4.0];

/// Sparse conditions of one pose, plus the object each valid pixel came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionMaps {
    pub color: PseudoImage,
    pub depth: DepthMap,
    /// Object id of the winning point per pixel; `None` where nothing projected.
    pub source: Vec<Option<i32>>,
}

/// Projects the fused scene, recomposed at `t`, into a view.
pub fn condition_maps(scene: &FusedScene, bundle: &SceneBundle, pose: &TrajectoryPose) -> Result<ConditionMaps> {
    let cloud: PointCloud = recompose(scene, pose.t, &Default::default())?;
    let (sparse, winners) = project_sparse_tagged(&cloud, &bundle.camera, &pose.cam_to_world);
    Ok(ConditionMaps {
        color: sparse.color_image(),
        depth: sparse.depth_map(),
        source: winners.iter().map(|w| w.map(|i| cloud.object_ids[i])).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NvsConfig {
    pub sample: SampleConfig,
    pub tasks: Vec<TaskId>,
    /// Novel frames per generated clip, excluding the reference slot.
    pub clip_len: usize,
}

impl Default for NvsConfig {
    fn default() -> Self {
        Self {
            sample: SampleConfig::default(),
            tasks: TaskId::ALL.to_vec(),
            clip_len: 8,
        }
    }
}

/// One generated clip: the reference frame and the trajectory range it covers.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipInfo {
    pub reference_frame: usize,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone)]
pub struct NvsOutput {
    /// One view per trajectory pose; modalities not requested are `None`.
    pub views: ViewSet,
    /// Sparse conditions of every trajectory pose.
    pub conditions: Vec<ConditionMaps>,
    pub clips: Vec<ClipInfo>,
}

/// Generates color, depth and semantics along `trajectory` from LiDAR
/// conditions alone. The trajectory is cut into clips of `cfg.clip_len`;
/// each clip is anchored by the recorded frame nearest in time to its first
/// pose, whose own pose supplies the frame-0 depth condition. Clip `k` is
/// sampled with seed `cfg.sample.seed + k`.
pub fn run_feedforward_nvs(
    bundle: &SceneBundle,
    trajectory: &[TrajectoryPose],
    denoiser: &(dyn Denoiser + Sync),
    sched: &NoiseSchedule,
    cfg: &NvsConfig,
) -> Result<NvsOutput> {
    if trajectory.is_empty() {
        return Err(Error::invalid("novel trajectory is empty"));
    }
    if cfg.clip_len == 0 {
        return Err(Error::invalid("clip_len must be positive"));
    }
    if cfg.tasks.is_empty() {
        return Err(Error::invalid("no tasks requested"));
    }
    cfg.sample.validate(sched)?;
    bundle.validate()?;
    let fused = fuse_bundle(bundle)?;
    let conditions = trajectory
        .par_iter()
        .map(|p| condition_maps(&fused, bundle, p))
        .collect::<Result<Vec<_>>>()?;

    let encoder = StackEncoder {
        codec: Box::new(SpaceToDepth::default()),
        d_max: bundle.d_max,
    };
    let mut clips = Vec::new();
    for (k, start) in (0..trajectory.len()).step_by(cfg.clip_len).enumerate() {
        let len = cfg.clip_len.min(trajectory.len() - start);
        clips.push((k, ClipInfo {
            reference_frame: bundle.nearest_frame(trajectory[start].t),
            start,
            len,
        }));
    }

    // Every (clip, task) pair is sampled independently.
    let jobs: Vec<(usize, TaskId)> = (0..clips.len())
        .flat_map(|c| cfg.tasks.iter().map(move |t| (c, *t)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(c, task)| {
            let (k, info) = &clips[c];
            let frame = &bundle.frames[info.reference_frame];
            let reference = bundle.edits.reference_override.as_ref().unwrap_or(&frame.color);
            let ref_pose = TrajectoryPose {
                cam_to_world: frame.cam_to_world,
                t: frame.timestamp,
            };
            let ref_depth = condition_maps(&fused, bundle, &ref_pose)?.depth;
            let span = &conditions[info.start..info.start + info.len];
            let colors: Vec<PseudoImage> = span.iter().map(|m| m.color.clone()).collect();
            let depths: Vec<DepthMap> = std::iter::once(ref_depth).chain(span.iter().map(|m| m.depth.clone())).collect();
            let stack = encoder.build_infer_stack(reference, &colors, &depths, task)?;
            let sample_cfg = SampleConfig {
                seed: cfg.sample.seed.wrapping_add(*k as u64),
                ..cfg.sample
            };
            let clip = sample(denoiser, &stack, sched, &sample_cfg)?;
            let frames = clip.split_rows(stack.num_frames())?;
            frames[1..]
                .iter()
                .map(|z| encoder.codec.decode(z))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut views: Vec<View> = trajectory
        .iter()
        .map(|p| View {
            timestamp: p.t,
            cam_to_world: p.cam_to_world,
            color: None,
            depth: None,
            semantic: None,
        })
        .collect();
    for ((c, task), images) in jobs.iter().zip(results) {
        let start = clips[*c].1.start;
        for (offset, img) in images.into_iter().enumerate() {
            let view = &mut views[start + offset];
            match task {
                TaskId::Color => view.color = Some(img),
                TaskId::Depth => view.depth = Some(decode_depth3(&img, bundle.d_max)?),
                TaskId::Semantic => view.semantic = Some(decode_semantic(&img, &bundle.palette)),
            }
        }
    }
    Ok(NvsOutput {
        views: ViewSet {
            camera: bundle.camera,
            d_max: bundle.d_max,
            palette: bundle.palette.clone(),
            views,
        },
        conditions,
        clips: clips.into_iter().map(|(_, c)| c).collect(),
    })
}

/// Training clips cut from the recorded frames: every window of
/// `clip_len + 1` consecutive frames yields one example per task, with the
/// window's first frame as reference and the bundle's own rasters as
/// targets. Conditions come from the fused LiDAR of the whole bundle.
pub fn denoiser_dataset(bundle: &SceneBundle, clip_len: usize, tasks: &[TaskId]) -> Result<Vec<TrainExample>> {
    bundle.validate()?;
    if clip_len == 0 || clip_len >= bundle.frames.len() {
        return Err(Error::invalid(format!(
            "clip_len must lie in 1..{}, got {clip_len}",
            bundle.frames.len()
        )));
    }
    let codec = SpaceToDepth::default();
    let fused = fuse_bundle(bundle)?;
    let per_frame = bundle
        .frames
        .par_iter()
        .map(|f| {
            let pose = TrajectoryPose {
                cam_to_world: f.cam_to_world,
                t: f.timestamp,
            };
            let maps = condition_maps(&fused, bundle, &pose)?;
            let color = codec.encode(&maps.color)?;
            let depth = codec.encode(&encode_depth3(&maps.depth, bundle.d_max)?)?;
            let targets = [
                codec.encode(&f.color)?,
                codec.encode(&encode_depth3(&f.depth, bundle.d_max)?)?,
                codec.encode(&encode_semantic(&f.semantic, &bundle.palette)?)?,
            ];
            Ok((color, depth, targets))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for start in 0..bundle.frames.len() - clip_len {
        let window = &per_frame[start..=start + clip_len];
        for &task in tasks {
            let x0 = LatentTensor::vstack(&window.iter().map(|w| w.2[task.index()].clone()).collect::<Vec<_>>())?;
            out.push(TrainExample {
                x0,
                reference: window[0].2[TaskId::Color.index()].clone(),
                sparse_colors: window.iter().map(|w| w.0.clone()).collect(),
                depth: window.iter().map(|w| w.1.clone()).collect(),
                task,
            });
        }
    }
    Ok(out)
}

/// Stub denoiser whose clean-signal estimate is the frame's own condition
/// latent: the color slot for the color and semantic tasks, the depth slot
/// for depth. DDIM with it reproduces the conditions exactly, which makes
/// the pipeline plumbing testable without a trained model.
pub struct ConditionEcho {
    pub sched: NoiseSchedule,
}

impl Denoiser for ConditionEcho {
    fn predict_v(&self, x_t: &LatentTensor, t: usize, cond: &ConditionStack) -> Result<LatentTensor> {
        let slots = match cond.task() {
            TaskId::Depth => cond.depth_latents(),
            TaskId::Color | TaskId::Semantic => cond.color_latents(),
        };
        let x0 = LatentTensor::vstack(slots)?;
        x_t.check_same_shape(&x0)?;
        let (a, s) = (self.sched.alpha(t), self.sched.sigma(t));
        if s == 0.0 {
            return Ok(LatentTensor::zeros(x0.h, x0.w, x0.c));
        }
        x_t.axpby(a / s, &x0, -1.0 / s)
    }
}
