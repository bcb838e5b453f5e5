use std::collections::BTreeSet;

use super::{aggregate, recompose, BBoxTrack, CameraModel, PointCloud, Pose};
use crate::error::{Error, Result};
use crate::modality::{DepthMap, PseudoImage};

/// Points at or closer than this camera depth (meters) are culled.
pub const Z_NEAR: f64 = 0.1;

/// Number of consecutive sweeps fused for ground-truth depth.
pub const DEFAULT_GT_WINDOW: usize = 6;

/// Sparse depth/color raster. Depth `0.0` marks an empty pixel; color is only
/// meaningful where depth is positive and is kept at zero elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMap {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
    pub color: Vec<[f64; 3]>,
}

impl SparseMap {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            depth: vec![0.0; width * height],
            color: vec![[0.0; 3]; width * height],
        }
    }

    pub fn is_valid(&self, idx: usize) -> bool {
        self.depth[idx] > 0.0
    }

    pub fn valid_count(&self) -> usize {
        self.depth.iter().filter(|d| **d > 0.0).count()
    }

    pub fn depth_map(&self) -> DepthMap {
        DepthMap::new(self.width, self.height, self.depth.clone())
            .expect("sparse depth is non-negative and finite")
    }

    /// Color raster with empty pixels left black.
    pub fn color_image(&self) -> PseudoImage {
        let data = self.color.iter().flat_map(|c| c.iter().map(|v| v.clamp(0.0, 1.0))).collect();
        PseudoImage::new(self.width, self.height, data).expect("sized by construction")
    }
}

/// Pinhole z-buffer projection of a world-frame cloud.
pub fn project_sparse(cloud: &PointCloud, cam: &CameraModel, cam_to_world: &Pose) -> SparseMap {
    project_sparse_tagged(cloud, cam, cam_to_world).0
}

/// Like [`project_sparse`], also returning the index of the point that won
/// each pixel. Equal depths resolve to the lower point index.
pub fn project_sparse_tagged(
    cloud: &PointCloud,
    cam: &CameraModel,
    cam_to_world: &Pose,
) -> (SparseMap, Vec<Option<usize>>) {
    let world_to_cam = cam_to_world.inverse();
    let mut map = SparseMap::empty(cam.width, cam.height);
    let mut source = vec![None; cam.num_pixels()];
    for (i, p) in cloud.positions.iter().enumerate() {
        let pc = world_to_cam.transform_point(p);
        if pc.z <= Z_NEAR {
            continue;
        }
        let (u, v) = cam.project(&pc);
        let Some((px, py)) = cam.pixel_of(u, v) else {
            continue;
        };
        let idx = py * cam.width + px;
        if source[idx].is_none() || pc.z < map.depth[idx] {
            map.depth[idx] = pc.z;
            map.color[idx] = cloud.colors[i];
            source[idx] = Some(i);
        }
    }
    (map, source)
}

/// Fuses `window` consecutive sweeps around `target_index`, recomposes them
/// at the target timestamp and projects into the target view.
pub fn build_gt_depth(
    frames: &[(PointCloud, f64)],
    tracks: &[BBoxTrack],
    target_index: usize,
    window: usize,
    cam: &CameraModel,
    cam_to_world: &Pose,
) -> Result<SparseMap> {
    if window == 0 {
        return Err(Error::invalid("empty window"));
    }
    if target_index >= frames.len() {
        return Err(Error::invalid(format!(
            "target frame {target_index} outside a sequence of {}",
            frames.len()
        )));
    }
    let len = frames.len();
    let window = window.min(len);
    let start = target_index.saturating_sub(window / 2).min(len - window);
    let fused = aggregate(&frames[start..start + window], tracks)?;
    let cloud = recompose(&fused, frames[target_index].1, &BTreeSet::new())?;
    Ok(project_sparse(&cloud, cam, cam_to_world))
}
