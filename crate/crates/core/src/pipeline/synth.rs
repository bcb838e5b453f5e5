//! Procedural street scenes rendered by an exact raycaster: a checkered
//! ground plane, static boxes and one box moving along a straight line.
//!
//! World axes follow the camera convention at the identity pose: x right,
//! y down, z forward. The ground is the plane `y = ground_height`.

use nalgebra::{Rotation3, UnitQuaternion, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bundle::{Edits, Frame, SceneBundle, View, ViewSet};
use super::nvs::TrajectoryPose;
use crate::error::{Error, Result};
use crate::geometry::{BBoxTrack, CameraModel, Keyframe, PointCloud, Pose, STATIC_ID};
use crate::modality::{DepthMap, Palette, PseudoImage, SemanticMap, DEFAULT_D_MAX};

pub const CLASS_SKY: u8 = 0;
pub const CLASS_ROAD: u8 = 1;
pub const CLASS_BUILDING: u8 = 2;
pub const CLASS_VEHICLE: u8 = 3;

/// Padding added on every side of the moving box when it is written out as
/// a track, so its surface points fall strictly inside the annotation.
pub const TRACK_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthBox {
    pub center: [f64; 3],
    /// Full extents along the box x, y, z axes.
    pub size: [f64; 3],
    /// Rotation about the world y axis, radians.
    #[serde(default)]
    pub yaw: f64,
    pub color: [f64; 3],
    pub class: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovingBox {
    pub start: [f64; 3],
    pub end: [f64; 3],
    /// Meters per second; the box stops once it reaches `end`.
    pub speed: f64,
    pub size: [f64; 3],
    #[serde(default)]
    pub yaw: f64,
    pub color: [f64; 3],
    pub class: u8,
    pub object_id: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// Focal length in pixels; defaults to `0.75 * width`.
    pub focal: Option<f64>,
    pub frames: usize,
    pub frame_dt: f64,
    /// Forward ego speed along world z, meters per second.
    pub ego_speed: f64,
    pub ground_height: f64,
    pub static_boxes: Vec<SynthBox>,
    pub moving: Option<MovingBox>,
    pub lidar_rays: usize,
    pub d_max: f64,
    /// Hits farther than this (camera depth) count as sky.
    pub max_range: f64,
    pub sky_color: [f64; 3],
    pub ground_colors: [[f64; 3]; 2],
    pub checker_size: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        let building = |x: f64, z: f64, depth: f64, h: f64, color: [f64; 3]| SynthBox {
            center: [x, 1.6 - h / 2.0, z],
            size: [4.0, h, depth],
            yaw: 0.0,
            color,
            class: CLASS_BUILDING,
        };
        Self {
            seed: 0,
            width: 64,
            height: 64,
            focal: None,
            frames: 10,
            frame_dt: 0.1,
            ego_speed: 5.0,
            ground_height: 1.6,
            static_boxes: vec![
                building(-8.0, 10.0, 8.0, 6.0, [0.75, 0.45, 0.35]),
                building(-8.0, 20.0, 9.0, 9.0, [0.55, 0.6, 0.7]),
                building(8.0, 8.0, 6.0, 7.0, [0.8, 0.75, 0.5]),
                building(8.0, 17.0, 8.0, 5.0, [0.4, 0.6, 0.45]),
                building(0.5, 34.0, 12.0, 10.0, [0.65, 0.55, 0.6]),
            ],
            moving: Some(MovingBox {
                start: [2.5, 1.6 - 0.2 - 0.75, 9.0],
                end: [2.5, 1.6 - 0.2 - 0.75, 16.0],
                speed: 3.0,
                size: [1.8, 1.5, 4.2],
                yaw: 0.0,
                color: [0.85, 0.15, 0.15],
                class: CLASS_VEHICLE,
                object_id: 1,
            }),
            lidar_rays: 3000,
            d_max: DEFAULT_D_MAX,
            max_range: 80.0,
            sky_color: [0.55, 0.7, 0.9],
            ground_colors: [[0.32, 0.32, 0.35], [0.45, 0.45, 0.48]],
            checker_size: 2.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::invalid("a synthetic scene needs at least 2 frames"));
        }
        if self.lidar_rays < 1 {
            return Err(Error::invalid("lidar_rays must be at least 1"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("raster size must be positive"));
        }
        let positive = [self.frame_dt, self.d_max, self.max_range, self.checker_size];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("frame_dt, d_max, max_range and checker_size must be positive"));
        }
        if self.focal.is_some_and(|f| !(f > 0.0)) {
            return Err(Error::invalid("focal must be positive"));
        }
        let colors = self
            .static_boxes
            .iter()
            .map(|b| b.color)
            .chain(self.moving.iter().map(|m| m.color))
            .chain([self.sky_color, self.ground_colors[0], self.ground_colors[1]]);
        for c in colors {
            if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::invalid("colors must lie in [0, 1]"));
            }
        }
        let sizes = self.static_boxes.iter().map(|b| b.size).chain(self.moving.iter().map(|m| m.size));
        for s in sizes {
            if s.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::invalid("box sizes must be positive"));
            }
        }
        if let Some(m) = &self.moving {
            if m.object_id < 0 {
                return Err(Error::invalid("moving object id must be non-negative"));
            }
            if !(m.speed >= 0.0) {
                return Err(Error::invalid("moving speed must be non-negative"));
            }
        }
        if self.num_classes() > 32 {
            return Err(Error::invalid("at most 32 classes"));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        let max = self
            .static_boxes
            .iter()
            .map(|b| b.class)
            .chain(self.moving.iter().map(|m| m.class))
            .max()
            .unwrap_or(0);
        (max as usize + 1).max(4)
    }

    pub fn camera(&self) -> Result<CameraModel> {
        let f = self.focal.unwrap_or(0.75 * self.width as f64);
        CameraModel::new(
            f,
            f,
            (self.width as f64 - 1.0) / 2.0,
            (self.height as f64 - 1.0) / 2.0,
            self.width,
            self.height,
        )
    }
}

/// One raycast hit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    /// Ray parameter; equals camera depth for rays built by [`SynthWorld::pixel_ray`].
    pub s: f64,
    pub point: Vector3<f64>,
    pub color: [f64; 3],
    pub class: u8,
    pub object_id: i32,
}

/// Unquantized rasters of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub color: PseudoImage,
    pub depth: DepthMap,
    pub semantic: SemanticMap,
    /// Object id per pixel, [`STATIC_ID`] for the ground, static boxes and sky.
    pub object_ids: Vec<i32>,
    /// Hit per pixel, `None` for sky.
    pub hits: Vec<Option<Hit>>,
}

struct PlacedBox {
    center: Vector3<f64>,
    rot: Rotation3<f64>,
    half: Vector3<f64>,
    color: [f64; 3],
    class: u8,
    object_id: i32,
}

impl PlacedBox {
    fn new(center: [f64; 3], size: [f64; 3], yaw: f64, color: [f64; 3], class: u8, object_id: i32) -> Self {
        Self {
            center: Vector3::from(center),
            rot: Rotation3::from_axis_angle(&Vector3::y_axis(), yaw),
            half: Vector3::from(size) * 0.5,
            color,
            class,
            object_id,
        }
    }

    fn contains(&self, p: &Vector3<f64>) -> bool {
        let l = self.rot.inverse() * (p - self.center);
        (0..3).all(|i| l[i].abs() < self.half[i])
    }

    /// Entry parameter and entry-face axis of the slab test.
    fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, usize)> {
        let inv = self.rot.inverse();
        let lo = inv * (o - self.center);
        let ld = inv * d;
        let (mut near, mut far, mut axis) = (f64::NEG_INFINITY, f64::INFINITY, 0);
        for i in 0..3 {
            if ld[i] == 0.0 {
                if lo[i].abs() > self.half[i] {
                    return None;
                }
                continue;
            }
            let a = (-self.half[i] - lo[i]) / ld[i];
            let b = (self.half[i] - lo[i]) / ld[i];
            let (a, b) = if a < b { (a, b) } else { (b, a) };
            if a > near {
                near = a;
                axis = i;
            }
            far = far.min(b);
        }
        (near <= far && near > 0.0).then_some((near, axis))
    }
}

/// Raycaster over a [`SynthSpec`].
pub struct SynthWorld {
    spec: SynthSpec,
    camera: CameraModel,
    statics: Vec<PlacedBox>,
}

const FACE_SHADE: [f64; 3] = [0.8, 1.0, 0.9];

impl SynthWorld {
    pub fn new(spec: SynthSpec) -> Result<Self> {
        spec.validate()?;
        let camera = spec.camera()?;
        let statics = spec
            .static_boxes
            .iter()
            .map(|b| PlacedBox::new(b.center, b.size, b.yaw, b.color, b.class, STATIC_ID))
            .collect();
        Ok(Self { spec, camera, statics })
    }

    pub fn spec(&self) -> &SynthSpec {
        &self.spec
    }

    pub fn camera(&self) -> CameraModel {
        self.camera
    }

    pub fn palette(&self) -> Palette {
        Palette::default_for(self.spec.num_classes()).expect("class count validated")
    }

    pub fn timestamp(&self, frame: usize) -> f64 {
        frame as f64 * self.spec.frame_dt
    }

    /// Ego pose of frame `i`: identity rotation, moving along +z.
    pub fn frame_pose(&self, frame: usize) -> Pose {
        Pose::from_translation(Vector3::new(0.0, 0.0, self.spec.ego_speed * self.timestamp(frame)))
    }

    /// Center of the moving box at time `t`.
    pub fn moving_center(&self, t: f64) -> Option<Vector3<f64>> {
        self.spec.moving.as_ref().map(|m| {
            let (a, b) = (Vector3::from(m.start), Vector3::from(m.end));
            let dist = (b - a).norm();
            if dist == 0.0 {
                return a;
            }
            let travelled = (m.speed * t.max(0.0)).min(dist);
            a + (b - a) * (travelled / dist)
        })
    }

    fn moving_box(&self, t: f64) -> Option<PlacedBox> {
        let m = self.spec.moving.as_ref()?;
        let c = self.moving_center(t)?;
        Some(PlacedBox::new(c.into(), m.size, m.yaw, m.color, m.class, m.object_id))
    }

    /// The moving box as a track with one keyframe per frame timestamp.
    pub fn tracks(&self) -> Vec<BBoxTrack> {
        let Some(m) = &self.spec.moving else {
            return vec![];
        };
        let rot = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), m.yaw);
        let keyframes = (0..self.spec.frames)
            .map(|i| {
                let t = self.timestamp(i);
                Keyframe {
                    t,
                    pose: Pose::from_parts(rot, self.moving_center(t).expect("moving box exists")),
                }
            })
            .collect();
        let size = Vector3::from(m.size).add_scalar(2.0 * TRACK_MARGIN);
        vec![BBoxTrack::new(m.object_id, size, keyframes, m.class as u32).expect("validated spec")]
    }

    /// Fails when the camera center is inside a box or not above the ground.
    pub fn check_camera(&self, origin: &Vector3<f64>, t: f64) -> Result<()> {
        if origin.y >= self.spec.ground_height {
            return Err(Error::DegenerateCamera(format!(
                "camera at height {} is on or below the ground plane",
                origin.y
            )));
        }
        let moving = self.moving_box(t);
        for b in self.statics.iter().chain(moving.as_ref()) {
            if b.contains(origin) {
                return Err(Error::DegenerateCamera(format!(
                    "camera at {:?} is inside a box centered at {:?}",
                    origin.as_slice(),
                    b.center.as_slice()
                )));
            }
        }
        Ok(())
    }

    /// World-frame ray through the center of pixel `(i, j)`, scaled so the
    /// ray parameter equals camera depth.
    pub fn pixel_ray(&self, cam_to_world: &Pose, i: usize, j: usize) -> (Vector3<f64>, Vector3<f64>) {
        (*cam_to_world.translation(), cam_to_world.rotation() * self.camera.ray_direction(i, j))
    }

    fn ground_color(&self, p: &Vector3<f64>) -> [f64; 3] {
        let c = self.spec.checker_size;
        let parity = ((p.x / c).floor() as i64 + (p.z / c).floor() as i64).rem_euclid(2);
        self.spec.ground_colors[parity as usize]
    }

    /// Nearest hit within `max_range` along `o + s d`, `s > 0`.
    pub fn raycast(&self, o: &Vector3<f64>, d: &Vector3<f64>, t: f64) -> Option<Hit> {
        let moving = self.moving_box(t);
        self.raycast_with(o, d, moving.as_ref())
    }

    fn raycast_with(&self, o: &Vector3<f64>, d: &Vector3<f64>, moving: Option<&PlacedBox>) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        if d.y > 0.0 {
            let s = (self.spec.ground_height - o.y) / d.y;
            if s > 0.0 {
                let point = o + d * s;
                best = Some(Hit {
                    s,
                    point,
                    color: self.ground_color(&point),
                    class: CLASS_ROAD,
                    object_id: STATIC_ID,
                });
            }
        }
        for b in self.statics.iter().chain(moving) {
            if let Some((s, axis)) = b.intersect(o, d) {
                if best.is_none_or(|h| s < h.s) {
                    let shade = FACE_SHADE[axis];
                    best = Some(Hit {
                        s,
                        point: o + d * s,
                        color: b.color.map(|c| c * shade),
                        class: b.class,
                        object_id: b.object_id,
                    });
                }
            }
        }
        best.filter(|h| h.s <= self.spec.max_range)
    }

    /// Exact rasters at an arbitrary pose and time.
    pub fn render(&self, cam_to_world: &Pose, t: f64) -> Result<GroundTruth> {
        self.check_camera(cam_to_world.translation(), t)?;
        let (w, h) = (self.camera.width, self.camera.height);
        let moving = self.moving_box(t);
        let hits: Vec<Option<Hit>> = (0..w * h)
            .into_par_iter()
            .map(|idx| {
                let (o, d) = self.pixel_ray(cam_to_world, idx % w, idx / w);
                self.raycast_with(&o, &d, moving.as_ref())
            })
            .collect();
        let mut color = Vec::with_capacity(3 * w * h);
        let mut depth = Vec::with_capacity(w * h);
        let mut labels = Vec::with_capacity(w * h);
        let mut object_ids = Vec::with_capacity(w * h);
        for hit in &hits {
            match hit {
                Some(hit) => {
                    color.extend_from_slice(&hit.color);
                    depth.push(hit.s);
                    labels.push(hit.class);
                    object_ids.push(hit.object_id);
                }
                None => {
                    color.extend_from_slice(&self.spec.sky_color);
                    depth.push(0.0);
                    labels.push(CLASS_SKY);
                    object_ids.push(STATIC_ID);
                }
            }
        }
        Ok(GroundTruth {
            color: PseudoImage::new(w, h, color)?,
            depth: DepthMap::new(w, h, depth)?,
            semantic: SemanticMap::new(w, h, labels)?,
            object_ids,
            hits,
        })
    }

    /// LiDAR sweep: up to `lidar_rays` hits through distinct, randomly chosen
    /// pixel centers of a rendered view, in ascending pixel order.
    pub fn lidar(&self, gt: &GroundTruth, rng: &mut ChaCha8Rng) -> PointCloud {
        let candidates: Vec<&Hit> = gt.hits.iter().flatten().collect();
        let n = self.spec.lidar_rays.min(candidates.len());
        let mut picked = rand::seq::index::sample(rng, candidates.len(), n).into_vec();
        picked.sort_unstable();
        let mut cloud = PointCloud::with_capacity(n);
        for k in picked {
            let h = candidates[k];
            cloud.push(h.point, h.color, h.object_id);
        }
        cloud
    }

    /// Full-precision frames; [`gen_synthetic_scene`] quantizes them.
    pub fn frames(&self) -> Result<Vec<(Frame, GroundTruth)>> {
        (0..self.spec.frames)
            .map(|i| {
                let pose = self.frame_pose(i);
                let t = self.timestamp(i);
                let gt = self.render(&pose, t)?;
                let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
                rng.set_stream(i as u64);
                let lidar = self.lidar(&gt, &mut rng);
                let frame = Frame {
                    timestamp: t,
                    cam_to_world: pose,
                    color: gt.color.clone(),
                    depth: gt.depth.clone(),
                    semantic: gt.semantic.clone(),
                    lidar,
                };
                Ok((frame, gt))
            })
            .collect()
    }
}

/// Exact views at arbitrary poses, at full precision.
pub fn oracle_views(world: &SynthWorld, poses: &[TrajectoryPose]) -> Result<ViewSet> {
    let views = poses
        .iter()
        .map(|p| {
            let gt = world.render(&p.cam_to_world, p.t)?;
            Ok(View {
                timestamp: p.t,
                cam_to_world: p.cam_to_world,
                color: Some(gt.color),
                depth: Some(gt.depth),
                semantic: Some(gt.semantic),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ViewSet {
        camera: world.camera(),
        d_max: world.spec().d_max,
        palette: world.palette(),
        views,
    })
}

/// Renders every frame and returns the bundle at on-disk precision, so
/// saving and reloading it is lossless.
pub fn gen_synthetic_scene(spec: &SynthSpec) -> Result<SceneBundle> {
    let world = SynthWorld::new(spec.clone())?;
    let frames = world.frames()?.into_iter().map(|(f, _)| f).collect();
    let bundle = SceneBundle {
        camera: world.camera(),
        d_max: spec.d_max,
        palette: world.palette(),
        frames,
        tracks: world.tracks(),
        edits: Edits::default(),
    };
    bundle.validate()?;
    Ok(bundle.quantized())
}
