//! Gaussian primitives, scene grouping, flat parameter layout and the scene
//! file format.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::num::NonZero;
use std::path::Path;

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBoxTrack, FusedScene, PointCloud};

/// Smallest initial scale, in meters.
pub const MIN_INIT_SCALE: f64 = 0.05;

/// Parameters per Gaussian before the semantic logits.
pub const BASE_PARAMS: usize = 14;

/// Offsets into one Gaussian's flat parameter record.
pub mod offsets {
    pub const MEAN: usize = 0;
    pub const LOG_SCALE: usize = 3;
    pub const ROTATION: usize = 6;
    pub const OPACITY: usize = 10;
    pub const COLOR: usize = 11;
    pub const SEM: usize = 14;
}

const MAGIC: &[u8; 8] = b"SFGS0001";

#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian3D {
    pub mean: Vector3<f64>,
    pub log_scale: Vector3<f64>,
    /// `(w, x, y, z)`; normalized whenever it is used.
    pub rotation: [f64; 4],
    pub opacity_logit: f64,
    pub color: [f64; 3],
    pub sem_logits: Vec<f64>,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn quat_to_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

pub fn normalize_quat(q: [f64; 4]) -> [f64; 4] {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n == 0.0 {
        [1.0, 0.0, 0.0, 0.0]
    } else {
        q.map(|v| v / n)
    }
}

impl Gaussian3D {
    pub fn isotropic(mean: Vector3<f64>, scale: f64, color: [f64; 3], num_classes: usize) -> Self {
        Self {
            mean,
            log_scale: Vector3::repeat(scale.ln()),
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity_logit: 0.0,
            color,
            sem_logits: vec![0.0; num_classes],
        }
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn scale(&self) -> Vector3<f64> {
        self.log_scale.map(f64::exp)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        quat_to_matrix(normalize_quat(self.rotation))
    }

    /// `R·diag(s²)·Rᵀ` in the Gaussian's own group frame.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation_matrix();
        let s2 = Matrix3::from_diagonal(&self.scale().map(|s| s * s));
        r * s2 * r.transpose()
    }

    fn write_params(&self, out: &mut [f64]) {
        out[offsets::MEAN..offsets::MEAN + 3].copy_from_slice(self.mean.as_slice());
        out[offsets::LOG_SCALE..offsets::LOG_SCALE + 3].copy_from_slice(self.log_scale.as_slice());
        out[offsets::ROTATION..offsets::ROTATION + 4].copy_from_slice(&self.rotation);
        out[offsets::OPACITY] = self.opacity_logit;
        out[offsets::COLOR..offsets::COLOR + 3].copy_from_slice(&self.color);
        out[offsets::SEM..].copy_from_slice(&self.sem_logits);
    }

    fn read_params(&mut self, p: &[f64]) {
        self.mean = Vector3::from_column_slice(&p[offsets::MEAN..offsets::MEAN + 3]);
        self.log_scale = Vector3::from_column_slice(&p[offsets::LOG_SCALE..offsets::LOG_SCALE + 3]);
        self.rotation.copy_from_slice(&p[offsets::ROTATION..offsets::ROTATION + 4]);
        self.opacity_logit = p[offsets::OPACITY];
        self.color.copy_from_slice(&p[offsets::COLOR..offsets::COLOR + 3]);
        self.sem_logits.copy_from_slice(&p[offsets::SEM..]);
    }
}

/// Gaussians of one tracked object, stored in its box frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectGaussians {
    pub gaussians: Vec<Gaussian3D>,
    pub track: BBoxTrack,
}

/// Static Gaussians in world frame plus one group per tracked object.
///
/// The flat parameter order is the static group followed by the objects in
/// ascending id order; each Gaussian occupies [`GaussianScene::stride`]
/// values laid out as in [`offsets`].
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianScene {
    num_classes: usize,
    pub static_gaussians: Vec<Gaussian3D>,
    pub objects: BTreeMap<i32, ObjectGaussians>,
}

impl GaussianScene {
    pub fn new(
        num_classes: usize,
        static_gaussians: Vec<Gaussian3D>,
        objects: BTreeMap<i32, ObjectGaussians>,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::invalid("need at least one semantic class"));
        }
        for (id, obj) in &objects {
            if obj.track.object_id() != *id {
                return Err(Error::invalid(format!("object {id} carries the track of {}", obj.track.object_id())));
            }
        }
        let scene = Self {
            num_classes,
            static_gaussians,
            objects,
        };
        if scene.iter().any(|g| g.sem_logits.len() != num_classes) {
            return Err(Error::shape(format!("{num_classes} semantic logits"), "other"));
        }
        Ok(scene)
    }

    pub fn empty(num_classes: usize) -> Self {
        Self {
            num_classes: num_classes.max(1),
            static_gaussians: Vec::new(),
            objects: BTreeMap::new(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn stride(&self) -> usize {
        BASE_PARAMS + self.num_classes
    }

    pub fn len(&self) -> usize {
        self.static_gaussians.len() + self.objects.values().map(|o| o.gaussians.len()).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All Gaussians in flat order.
    pub fn iter(&self) -> impl Iterator<Item = &Gaussian3D> {
        self.static_gaussians
            .iter()
            .chain(self.objects.values().flat_map(|o| o.gaussians.iter()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Gaussian3D> {
        self.static_gaussians
            .iter_mut()
            .chain(self.objects.values_mut().flat_map(|o| o.gaussians.iter_mut()))
    }

    /// `(object id or None for static, flat start index, count)` per group.
    pub fn groups(&self) -> Vec<(Option<i32>, usize, usize)> {
        let mut out = vec![(None, 0, self.static_gaussians.len())];
        let mut start = self.static_gaussians.len();
        for (id, o) in &self.objects {
            out.push((Some(*id), start, o.gaussians.len()));
            start += o.gaussians.len();
        }
        out
    }

    pub fn params(&self) -> Vec<f64> {
        let stride = self.stride();
        let mut out = vec![0.0; self.len() * stride];
        for (g, chunk) in self.iter().zip(out.chunks_exact_mut(stride)) {
            g.write_params(chunk);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        let stride = self.stride();
        if params.len() != self.len() * stride {
            return Err(Error::shape(self.len() * stride, params.len()));
        }
        for (g, chunk) in self.iter_mut().zip(params.chunks_exact(stride)) {
            g.read_params(chunk);
        }
        Ok(())
    }

    /// Writes the little-endian f32 record file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = SceneHeader {
            num_classes: self.num_classes,
            static_count: self.static_gaussians.len(),
            objects: self
                .objects
                .iter()
                .map(|(id, o)| ObjectHeader {
                    id: *id,
                    count: o.gaussians.len(),
                    track: o.track.clone(),
                })
                .collect(),
            fields: field_layout(self.num_classes),
        };
        let json = serde_json::to_vec(&header)?;
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
        buf.extend_from_slice(&json);
        for v in self.params() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&buf))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(Error::format(path, "missing gaussian scene magic"));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = bytes.get(12..12 + hlen).ok_or_else(|| Error::format(path, "truncated header"))?;
        let header: SceneHeader = serde_json::from_slice(body)?;
        if header.fields != field_layout(header.num_classes) {
            return Err(Error::format(path, "unsupported field layout"));
        }
        let blank = |n: usize| vec![Gaussian3D::isotropic(Vector3::zeros(), 1.0, [0.0; 3], header.num_classes); n];
        let objects = header
            .objects
            .iter()
            .map(|o| {
                (
                    o.id,
                    ObjectGaussians {
                        gaussians: blank(o.count),
                        track: o.track.clone(),
                    },
                )
            })
            .collect();
        let mut scene = GaussianScene::new(header.num_classes.max(1), blank(header.static_count), objects)?;
        let blob = &bytes[12 + hlen..];
        if blob.len() != 4 * scene.len() * scene.stride() {
            return Err(Error::format(path, "record blob size mismatch"));
        }
        let params: Vec<f64> = blob
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        scene.set_params(&params)?;
        Ok(scene)
    }
}

fn field_layout(k: usize) -> Vec<String> {
    vec![
        "mean:3".into(),
        "log_scale:3".into(),
        "rotation_wxyz:4".into(),
        "opacity_logit:1".into(),
        "color:3".into(),
        format!("sem_logits:{k}"),
    ]
}

#[derive(Serialize, Deserialize)]
struct ObjectHeader {
    id: i32,
    count: usize,
    track: BBoxTrack,
}

#[derive(Serialize, Deserialize)]
struct SceneHeader {
    num_classes: usize,
    static_count: usize,
    objects: Vec<ObjectHeader>,
    fields: Vec<String>,
}

/// Mean distance from each point to its 3 nearest other points, floored at
/// [`MIN_INIT_SCALE`]. Groups with a single point get the floor.
pub fn knn_scales(positions: &[Vector3<f64>]) -> Vec<f64> {
    if positions.len() < 2 {
        return vec![MIN_INIT_SCALE; positions.len()];
    }
    let entries: Vec<[f64; 3]> = positions.iter().map(|p| [p.x, p.y, p.z]).collect();
    let tree: ImmutableKdTree<f64, 3> = ImmutableKdTree::new_from_slice(&entries).expect("non-empty point set");
    let k = 3.min(positions.len() - 1);
    let n = NonZero::new(k + 1).unwrap();
    entries
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let mut found = tree.query(q).nearest_n::<SquaredEuclidean<f64>>(n).execute();
            match found.iter().position(|r| r.item as usize == i) {
                Some(pos) => {
                    found.remove(pos);
                }
                None => {
                    found.pop();
                }
            }
            let mean = found.iter().take(k).map(|r| r.distance.sqrt()).sum::<f64>() / k as f64;
            mean.max(MIN_INIT_SCALE)
        })
        .collect()
}

fn gaussians_from(cloud: &PointCloud, num_classes: usize) -> Vec<Gaussian3D> {
    knn_scales(&cloud.positions)
        .into_iter()
        .zip(cloud.positions.iter().zip(&cloud.colors))
        .map(|(s, (p, c))| Gaussian3D::isotropic(*p, s, *c, num_classes))
        .collect()
}

/// One isotropic Gaussian per kept point; neighbors are searched within the
/// point's own group.
pub fn init_from_cloud(scene: &FusedScene, stride: usize, num_classes: usize) -> Result<GaussianScene> {
    if stride == 0 {
        return Err(Error::invalid("stride must be positive"));
    }
    let static_gaussians = gaussians_from(&scene.static_world.strided(stride), num_classes);
    let mut objects = BTreeMap::new();
    for (id, cloud) in &scene.objects {
        let gaussians = gaussians_from(&cloud.strided(stride), num_classes);
        if gaussians.is_empty() {
            continue;
        }
        let track = scene.track(*id).ok_or(Error::UnknownObject(*id))?.clone();
        objects.insert(*id, ObjectGaussians { gaussians, track });
    }
    let out = GaussianScene::new(num_classes, static_gaussians, objects)?;
    if out.is_empty() {
        return Err(Error::NoGaussians);
    }
    Ok(out)
}
