use nalgebra::Vector3;

use super::Pose;
use crate::error::{Error, Result};

/// Object id carried by points that belong to the static world.
pub const STATIC_ID: i32 = -1;

/// Parallel arrays of positions (meters), RGB colors in `[0, 1]` and object ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<Vector3<f64>>,
    pub colors: Vec<[f64; 3]>,
    pub object_ids: Vec<i32>,
}

impl PointCloud {
    pub fn new(
        positions: Vec<Vector3<f64>>,
        colors: Vec<[f64; 3]>,
        object_ids: Vec<i32>,
    ) -> Result<Self> {
        if positions.len() != colors.len() || positions.len() != object_ids.len() {
            return Err(Error::shape(
                format!("{} colors and ids", positions.len()),
                format!("{} colors, {} ids", colors.len(), object_ids.len()),
            ));
        }
        if positions.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::invalid("point cloud has non-finite positions"));
        }
        Ok(Self {
            positions,
            colors,
            object_ids,
        })
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            positions: Vec::with_capacity(n),
            colors: Vec::with_capacity(n),
            object_ids: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn push(&mut self, position: Vector3<f64>, color: [f64; 3], object_id: i32) {
        self.positions.push(position);
        self.colors.push(color);
        self.object_ids.push(object_id);
    }

    pub fn extend_from(&mut self, other: &PointCloud) {
        self.positions.extend_from_slice(&other.positions);
        self.colors.extend_from_slice(&other.colors);
        self.object_ids.extend_from_slice(&other.object_ids);
    }

    /// Keeps every `stride`-th point, starting with the first.
    pub fn strided(&self, stride: usize) -> PointCloud {
        let stride = stride.max(1);
        let mut out = PointCloud::with_capacity(self.len() / stride + 1);
        for i in (0..self.len()).step_by(stride) {
            out.push(self.positions[i], self.colors[i], self.object_ids[i]);
        }
        out
    }
}

/// Rigidly maps every position; colors and ids are carried over unchanged.
pub fn transform_points(cloud: &PointCloud, pose: &Pose) -> PointCloud {
    PointCloud {
        positions: cloud.positions.iter().map(|p| pose.transform_point(p)).collect(),
        colors: cloud.colors.clone(),
        object_ids: cloud.object_ids.clone(),
    }
}
