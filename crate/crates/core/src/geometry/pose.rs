use nalgebra::{Matrix3, Matrix4, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the quaternion norm accepted by [`Pose::new`].
pub const UNIT_TOLERANCE: f64 = 1e-9;

/// Rigid transform `x -> R x + t`.
///
/// Serialized as `{ "rotation": [w, x, y, z], "translation": [x, y, z] }`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPose", into = "RawPose")]
pub struct Pose {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawPose {
    rotation: [f64; 4],
    translation: [f64; 3],
}

impl TryFrom<RawPose> for Pose {
    type Error = Error;

    fn try_from(raw: RawPose) -> Result<Self> {
        let [w, x, y, z] = raw.rotation;
        Pose::new(Quaternion::new(w, x, y, z), Vector3::from(raw.translation))
    }
}

impl From<Pose> for RawPose {
    fn from(p: Pose) -> Self {
        let q = p.rotation.quaternion();
        RawPose {
            rotation: [q.w, q.i, q.j, q.k],
            translation: p.translation.into(),
        }
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    /// Builds a pose from a quaternion that must already be unit length.
    pub fn new(rotation: Quaternion<f64>, translation: Vector3<f64>) -> Result<Self> {
        let finite = rotation.coords.iter().chain(translation.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("pose has non-finite components"));
        }
        let norm = rotation.norm();
        if (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::invalid(format!("pose quaternion norm {norm} is not 1")));
        }
        // Already-normalized input is kept bit-for-bit so serialization
        // round-trips exactly.
        let rotation = if (norm - 1.0).abs() <= 4.0 * f64::EPSILON {
            UnitQuaternion::new_unchecked(rotation)
        } else {
            UnitQuaternion::new_normalize(rotation)
        };
        Ok(Self { rotation, translation })
    }

    pub fn from_parts(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::from_parts(UnitQuaternion::identity(), Vector3::zeros())
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::from_parts(UnitQuaternion::identity(), t)
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        let rotation = UnitQuaternion::new_normalize((self.rotation * other.rotation).into_inner());
        Pose {
            rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose {
            rotation: inv,
            translation: -(inv * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Linear translation and spherical-linear rotation, `s` in `[0, 1]`.
    pub fn interpolate(&self, other: &Pose, s: f64) -> Pose {
        let translation = self.translation.lerp(&other.translation, s);
        // slerp picks the short arc; nalgebra returns None only for antipodal
        // inputs, where any great circle is valid.
        let rotation = self
            .rotation
            .try_slerp(&other.rotation, s, 1e-12)
            .unwrap_or(if s < 0.5 { self.rotation } else { other.rotation });
        Pose {
            rotation,
            translation,
        }
    }
}

/// Free-function form of [`Pose::compose`].
pub fn compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pose_strategy() -> impl Strategy<Value = Pose> {
        (
            prop::array::uniform4(-1.0f64..1.0),
            prop::array::uniform3(-50.0f64..50.0),
        )
            .prop_filter("non-degenerate quaternion", |(q, _)| {
                q.iter().map(|v| v * v).sum::<f64>() > 1e-3
            })
            .prop_map(|(q, t)| {
                let q = UnitQuaternion::new_normalize(Quaternion::new(q[0], q[1], q[2], q[3]));
                Pose::from_parts(q, Vector3::from(t))
            })
    }

    #[test]
    fn identity_is_neutral() {
        let p = Pose::from_parts(
            UnitQuaternion::from_euler_angles(0.1, -0.4, 1.2),
            Vector3::new(1.0, 2.0, 3.0),
        );
        let c = Pose::identity().compose(&p);
        assert!((c.to_matrix() - p.to_matrix()).abs().max() < 1e-12);
    }

    #[test]
    fn rejects_non_unit_quaternion() {
        let err = Pose::new(Quaternion::new(1.0, 0.1, 0.0, 0.0), Vector3::zeros());
        assert!(err.is_err());
        let err = Pose::new(Quaternion::new(1.0, 0.0, 0.0, 0.0), Vector3::new(f64::NAN, 0.0, 0.0));
        assert!(err.is_err());
    }

    #[test]
    fn serde_round_trip() {
        let p = Pose::from_parts(
            UnitQuaternion::from_euler_angles(0.3, 0.2, 0.1),
            Vector3::new(-1.0, 0.5, 9.0),
        );
        let s = serde_json::to_string(&p).unwrap();
        let back: Pose = serde_json::from_str(&s).unwrap();
        assert!((back.to_matrix() - p.to_matrix()).abs().max() < 1e-12);
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let a = Pose::from_translation(Vector3::new(0.0, 0.0, 0.0));
        let b = Pose::from_parts(
            UnitQuaternion::from_euler_angles(0.0, 1.0, 0.0),
            Vector3::new(2.0, 0.0, 4.0),
        );
        let mid = a.interpolate(&b, 0.5);
        assert!((mid.translation() - Vector3::new(1.0, 0.0, 2.0)).norm() < 1e-12);
        let (_, pitch, _) = mid.rotation().euler_angles();
        assert!((pitch - 0.5).abs() < 1e-12);
        assert!((a.interpolate(&b, 1.0).to_matrix() - b.to_matrix()).abs().max() < 1e-12);
    }

    proptest! {
        #[test]
        fn compose_with_inverse_is_identity(p in pose_strategy()) {
            let m = p.compose(&p.inverse()).to_matrix();
            prop_assert!((m - Matrix4::identity()).abs().max() < 1e-9);
        }

        #[test]
        fn compose_matches_homogeneous_product(a in pose_strategy(), b in pose_strategy()) {
            // Independent oracle: rotation matrices assembled by hand from the
            // quaternion components, multiplied as 4x4 homogeneous transforms.
            fn hand_matrix(p: &Pose) -> [[f64; 4]; 4] {
                let q = p.rotation().quaternion();
                let (w, x, y, z) = (q.w, q.i, q.j, q.k);
                let t = p.translation();
                [
                    [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y), t.x],
                    [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x), t.y],
                    [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y), t.z],
                    [0.0, 0.0, 0.0, 1.0],
                ]
            }
            let (ma, mb) = (hand_matrix(&a), hand_matrix(&b));
            let got = compose(&a, &b).to_matrix();
            for i in 0..4 {
                for j in 0..4 {
                    let want: f64 = (0..4).map(|k| ma[i][k] * mb[k][j]).sum();
                    prop_assert!((got[(i, j)] - want).abs() < 1e-9);
                }
            }
        }
    }
}
