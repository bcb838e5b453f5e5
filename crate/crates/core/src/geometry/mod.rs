//! Poses, cameras, point clouds, LiDAR fusion and sparse projection.

mod camera;
mod cloud;
mod depth;
mod fusion;
mod pose;
mod projection;
mod track;

pub use camera::CameraModel;
pub use cloud::{transform_points, PointCloud, STATIC_ID};
pub use depth::{align_depth_lsq, densify_depth, nearest_fill, DepthAlignment};
pub use fusion::{aggregate, aggregate_with_warnings, recompose, separate_dynamic, FusedScene, Separation};
pub use pose::{compose, Pose, UNIT_TOLERANCE};
pub use projection::{
    build_gt_depth, project_sparse, project_sparse_tagged, SparseMap, DEFAULT_GT_WINDOW, Z_NEAR,
};
pub use track::{BBoxTrack, Keyframe};
