use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::Pose;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    /// Seconds.
    pub t: f64,
    /// Box center to world.
    pub pose: Pose,
}

/// Rigid trajectory of a tracked bounding box.
///
/// `size` holds the full box extents in meters along the box-frame x, y and z
/// axes (length, width, height).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTrack", into = "RawTrack")]
pub struct BBoxTrack {
    object_id: i32,
    size: Vector3<f64>,
    keyframes: Vec<Keyframe>,
    class_label: u32,
}

#[derive(Serialize, Deserialize)]
struct RawTrack {
    object_id: i32,
    size: [f64; 3],
    class_label: u32,
    keyframes: Vec<Keyframe>,
}

impl TryFrom<RawTrack> for BBoxTrack {
    type Error = Error;
    fn try_from(r: RawTrack) -> Result<Self> {
        BBoxTrack::new(r.object_id, Vector3::from(r.size), r.keyframes, r.class_label)
    }
}

impl From<BBoxTrack> for RawTrack {
    fn from(t: BBoxTrack) -> Self {
        RawTrack {
            object_id: t.object_id,
            size: t.size.into(),
            class_label: t.class_label,
            keyframes: t.keyframes,
        }
    }
}

impl BBoxTrack {
    pub fn new(
        object_id: i32,
        size: Vector3<f64>,
        keyframes: Vec<Keyframe>,
        class_label: u32,
    ) -> Result<Self> {
        if object_id < 0 {
            return Err(Error::invalid("track object ids must be non-negative"));
        }
        if !size.iter().all(|s| *s > 0.0 && s.is_finite()) {
            return Err(Error::invalid("box size components must be positive"));
        }
        if keyframes.is_empty() {
            return Err(Error::invalid("track needs at least one keyframe"));
        }
        if keyframes.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(Error::invalid("keyframe timestamps must be strictly increasing"));
        }
        Ok(Self {
            object_id,
            size,
            keyframes,
            class_label,
        })
    }

    pub fn object_id(&self) -> i32 {
        self.object_id
    }

    pub fn size(&self) -> &Vector3<f64> {
        &self.size
    }

    pub fn class_label(&self) -> u32 {
        self.class_label
    }

    pub fn keyframes(&self) -> &[Keyframe] {
        &self.keyframes
    }

    /// Whether `t` lies within the keyframe range (inclusive).
    pub fn covers(&self, t: f64) -> bool {
        let first = self.keyframes[0].t;
        let last = self.keyframes[self.keyframes.len() - 1].t;
        t >= first && t <= last
    }

    /// Box pose at `t`, clamped to the nearest keyframe outside the range.
    pub fn pose_at(&self, t: f64) -> Pose {
        let kf = &self.keyframes;
        if t <= kf[0].t {
            return kf[0].pose;
        }
        if t >= kf[kf.len() - 1].t {
            return kf[kf.len() - 1].pose;
        }
        // First keyframe strictly after t; t is interior so 1 <= hi < len.
        let hi = kf.partition_point(|k| k.t <= t);
        let (a, b) = (&kf[hi - 1], &kf[hi]);
        a.pose.interpolate(&b.pose, (t - a.t) / (b.t - a.t))
    }

    /// Strict interior test on a point already expressed in the box frame.
    pub fn contains_local(&self, local: &Vector3<f64>) -> bool {
        (0..3).all(|i| local[i].abs() < 0.5 * self.size[i])
    }
}
