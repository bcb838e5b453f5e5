use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole intrinsics. Pixel centers sit at integer coordinates, so pixel
/// `(i, j)` collects projections with `u` in `[i - 0.5, i + 0.5)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCamera", into = "RawCamera")]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

#[derive(Serialize, Deserialize)]
struct RawCamera {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
}

impl TryFrom<RawCamera> for CameraModel {
    type Error = Error;
    fn try_from(r: RawCamera) -> Result<Self> {
        CameraModel::new(r.fx, r.fy, r.cx, r.cy, r.width, r.height)
    }
}

impl From<CameraModel> for RawCamera {
    fn from(c: CameraModel) -> Self {
        RawCamera {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
        }
    }
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if width == 0 || height == 0 {
            return Err(Error::invalid("camera raster must be non-empty"));
        }
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(Error::invalid("principal point outside the raster"));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Camera-frame point to continuous pixel coordinates.
    pub fn project(&self, p: &Vector3<f64>) -> (f64, f64) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    /// Pixel coordinates plus camera depth back to a camera-frame point.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) * depth / self.fx, (v - self.cy) * depth / self.fy, depth)
    }

    /// Raster index of the pixel containing `(u, v)`, if inside the image.
    pub fn pixel_of(&self, u: f64, v: f64) -> Option<(usize, usize)> {
        let i = (u + 0.5).floor();
        let j = (v + 0.5).floor();
        if i >= 0.0 && j >= 0.0 && (i as usize) < self.width && (j as usize) < self.height {
            Some((i as usize, j as usize))
        } else {
            None
        }
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    /// Unit-depth ray direction through a pixel center.
    pub fn ray_direction(&self, i: usize, j: usize) -> Vector3<f64> {
        self.unproject(i as f64, j as f64, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validates_intrinsics() {
        assert!(CameraModel::new(100.0, 100.0, 50.0, 50.0, 100, 100).is_ok());
        assert!(CameraModel::new(0.0, 100.0, 50.0, 50.0, 100, 100).is_err());
        assert!(CameraModel::new(100.0, 100.0, 100.0, 50.0, 100, 100).is_err());
        assert!(CameraModel::new(100.0, 100.0, 5.0, 5.0, 0, 10).is_err());
    }

    #[test]
    fn on_axis_point_lands_on_principal_pixel() {
        let cam = CameraModel::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap();
        let (u, v) = cam.project(&Vector3::new(0.0, 0.0, 5.0));
        assert_eq!(cam.pixel_of(u, v), Some((50, 50)));
        assert_eq!(cam.pixel_of(-0.6, 3.0), None);
        assert_eq!(cam.pixel_of(-0.4, 3.0), Some((0, 3)));
    }
}
