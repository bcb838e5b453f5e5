//! Scene bundles (captured frames, LiDAR, tracks) and view sets (rendered
//! or generated frames) on disk.
//!
//! A bundle directory holds `manifest.json`, `frames/NNNN_color.png`,
//! `frames/NNNN_depth.pfm`, `frames/NNNN_sem.png` and `lidar/NNNN.bin`. A
//! view set holds `views.json` plus the same per-frame rasters, any of
//! which may be absent.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::io::{
    quantize_cloud, quantize_image, read_color_png, read_label_png, read_pfm, read_records, write_bytes,
    write_color_png, write_label_png, write_pfm, write_records,
};
use crate::error::{Error, Result};
use crate::geometry::{BBoxTrack, CameraModel, PointCloud, Pose};
use crate::modality::{DepthMap, Palette, PseudoImage, SemanticMap};

pub const MANIFEST: &str = "manifest.json";
pub const VIEWS: &str = "views.json";
const FORMAT: &str = "streetforge-bundle/1";
const VIEW_FORMAT: &str = "streetforge-views/1";

/// Conventions written into every manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conventions {
    pub units: String,
    pub camera_axes: String,
    pub pose: String,
    pub pixel_centers: String,
}

impl Default for Conventions {
    fn default() -> Self {
        Self {
            units: "meters, seconds".into(),
            camera_axes: "x-right, y-down, z-forward".into(),
            pose: "camera-to-world; quaternion [w, x, y, z]".into(),
            pixel_centers: "integer pixel coordinates".into(),
        }
    }
}

/// Persistent scene edits applied by downstream stages.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Edits {
    pub removed_objects: BTreeSet<i32>,
    pub reference_override: Option<PseudoImage>,
}

impl Edits {
    pub fn is_empty(&self) -> bool {
        self.removed_objects.is_empty() && self.reference_override.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub timestamp: f64,
    pub cam_to_world: Pose,
    pub color: PseudoImage,
    pub depth: DepthMap,
    pub semantic: SemanticMap,
    /// World-frame LiDAR points captured at this frame.
    pub lidar: PointCloud,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub camera: CameraModel,
    pub d_max: f64,
    pub palette: Palette,
    pub frames: Vec<Frame>,
    pub tracks: Vec<BBoxTrack>,
    pub edits: Edits,
}

#[derive(Serialize, Deserialize)]
struct FrameEntry {
    index: usize,
    timestamp: f64,
    pose: Pose,
    color: String,
    depth: String,
    semantic: String,
    lidar: String,
}

#[derive(Serialize, Deserialize, Default)]
struct EditsEntry {
    removed_objects: BTreeSet<i32>,
    reference_override: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    conventions: Conventions,
    camera: CameraModel,
    d_max: f64,
    palette: Palette,
    frames: Vec<FrameEntry>,
    tracks: Vec<BBoxTrack>,
    #[serde(default)]
    edits: EditsEntry,
}

fn frame_paths(i: usize) -> [String; 4] {
    [
        format!("frames/{i:04}_color.png"),
        format!("frames/{i:04}_depth.pfm"),
        format!("frames/{i:04}_sem.png"),
        format!("lidar/{i:04}.bin"),
    ]
}

fn check_raster(cam: &CameraModel, w: usize, h: usize, what: &str) -> Result<()> {
    if w != cam.width || h != cam.height {
        return Err(Error::shape(
            format!("{what} of {}x{}", cam.width, cam.height),
            format!("{w}x{h}"),
        ));
    }
    Ok(())
}

impl SceneBundle {
    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::NoFrames);
        }
        if self.frames.windows(2).any(|w| !(w[1].timestamp > w[0].timestamp)) {
            return Err(Error::invalid("frame timestamps must be strictly increasing"));
        }
        if !(self.d_max > 0.0) {
            return Err(Error::invalid("d_max must be positive"));
        }
        for f in &self.frames {
            check_raster(&self.camera, f.color.width, f.color.height, "color")?;
            check_raster(&self.camera, f.depth.width, f.depth.height, "depth")?;
            check_raster(&self.camera, f.semantic.width, f.semantic.height, "semantic")?;
            if let Some(&l) = f.semantic.labels.iter().find(|l| **l as usize >= self.palette.len()) {
                return Err(Error::LabelOutOfPalette {
                    label: l as u32,
                    classes: self.palette.len(),
                });
            }
        }
        if let Some(r) = &self.edits.reference_override {
            check_raster(&self.camera, r.width, r.height, "reference override")?;
        }
        Ok(())
    }

    /// The same bundle with every value rounded to its on-disk precision.
    pub fn quantized(&self) -> Self {
        let mut out = self.clone();
        for f in &mut out.frames {
            f.color = quantize_image(&f.color);
            f.depth.values.iter_mut().for_each(|v| *v = *v as f32 as f64);
            f.lidar = quantize_cloud(&f.lidar);
        }
        if let Some(r) = &mut out.edits.reference_override {
            *r = quantize_image(r);
        }
        out
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.timestamp).collect()
    }

    /// Index of the frame whose timestamp is closest to `t`; ties go to the
    /// earlier frame.
    pub fn nearest_frame(&self, t: f64) -> usize {
        let mut best = 0;
        for (i, f) in self.frames.iter().enumerate() {
            if (f.timestamp - t).abs() < (self.frames[best].timestamp - t).abs() {
                best = i;
            }
        }
        best
    }

    pub fn lidar_frames(&self) -> Vec<(PointCloud, f64)> {
        self.frames.iter().map(|f| (f.lidar.clone(), f.timestamp)).collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        let mut entries = Vec::with_capacity(self.frames.len());
        for (i, f) in self.frames.iter().enumerate() {
            let [c, d, s, l] = frame_paths(i);
            write_color_png(&dir.join(&c), &f.color)?;
            write_pfm(&dir.join(&d), &f.depth)?;
            write_label_png(&dir.join(&s), &f.semantic)?;
            write_records(&dir.join(&l), &f.lidar)?;
            entries.push(FrameEntry {
                index: i,
                timestamp: f.timestamp,
                pose: f.cam_to_world,
                color: c,
                depth: d,
                semantic: s,
                lidar: l,
            });
        }
        let reference_override = match &self.edits.reference_override {
            Some(img) => {
                let rel = "edits/reference.png".to_string();
                write_color_png(&dir.join(&rel), img)?;
                Some(rel)
            }
            None => None,
        };
        let manifest = Manifest {
            format: FORMAT.into(),
            conventions: Conventions::default(),
            camera: self.camera,
            d_max: self.d_max,
            palette: self.palette.clone(),
            frames: entries,
            tracks: self.tracks.clone(),
            edits: EditsEntry {
                removed_objects: self.edits.removed_objects.clone(),
                reference_override,
            },
        };
        write_bytes(&dir.join(MANIFEST), &serde_json::to_vec_pretty(&manifest)?)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = serde_json::from_slice(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        if m.format != FORMAT {
            return Err(Error::format(&path, format!("unsupported format {:?}", m.format)));
        }
        let frames = m
            .frames
            .iter()
            .map(|e| {
                Ok(Frame {
                    timestamp: e.timestamp,
                    cam_to_world: e.pose,
                    color: read_color_png(&existing(dir, &e.color)?)?,
                    depth: read_pfm(&existing(dir, &e.depth)?)?,
                    semantic: read_label_png(&existing(dir, &e.semantic)?)?,
                    lidar: read_records(&existing(dir, &e.lidar)?)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let reference_override = match &m.edits.reference_override {
            Some(rel) => Some(read_color_png(&existing(dir, rel)?)?),
            None => None,
        };
        let bundle = SceneBundle {
            camera: m.camera,
            d_max: m.d_max,
            palette: m.palette,
            frames,
            tracks: m.tracks,
            edits: Edits {
                removed_objects: m.edits.removed_objects,
                reference_override,
            },
        };
        bundle.validate()?;
        Ok(bundle)
    }
}

fn existing(dir: &Path, rel: &str) -> Result<PathBuf> {
    let p = dir.join(rel);
    if !p.is_file() {
        return Err(Error::format(dir.join(MANIFEST), format!("listed file {rel} does not exist")));
    }
    Ok(p)
}

/// One frame of a view set; missing modalities are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub timestamp: f64,
    pub cam_to_world: Pose,
    pub color: Option<PseudoImage>,
    pub depth: Option<DepthMap>,
    pub semantic: Option<SemanticMap>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewSet {
    pub camera: CameraModel,
    pub d_max: f64,
    pub palette: Palette,
    pub views: Vec<View>,
}

#[derive(Serialize, Deserialize)]
struct ViewEntry {
    index: usize,
    timestamp: f64,
    pose: Pose,
    color: Option<String>,
    depth: Option<String>,
    semantic: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct ViewManifest {
    format: String,
    conventions: Conventions,
    camera: CameraModel,
    d_max: f64,
    palette: Palette,
    views: Vec<ViewEntry>,
}

impl ViewSet {
    pub fn from_bundle(bundle: &SceneBundle) -> Self {
        ViewSet {
            camera: bundle.camera,
            d_max: bundle.d_max,
            palette: bundle.palette.clone(),
            views: bundle
                .frames
                .iter()
                .map(|f| View {
                    timestamp: f.timestamp,
                    cam_to_world: f.cam_to_world,
                    color: Some(f.color.clone()),
                    depth: Some(f.depth.clone()),
                    semantic: Some(f.semantic.clone()),
                })
                .collect(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut entries = Vec::new();
        for (i, v) in self.views.iter().enumerate() {
            let [c, d, s, _] = frame_paths(i);
            if let Some(img) = &v.color {
                check_raster(&self.camera, img.width, img.height, "color")?;
                write_color_png(&dir.join(&c), img)?;
            }
            if let Some(depth) = &v.depth {
                check_raster(&self.camera, depth.width, depth.height, "depth")?;
                write_pfm(&dir.join(&d), depth)?;
            }
            if let Some(sem) = &v.semantic {
                check_raster(&self.camera, sem.width, sem.height, "semantic")?;
                write_label_png(&dir.join(&s), sem)?;
            }
            entries.push(ViewEntry {
                index: i,
                timestamp: v.timestamp,
                pose: v.cam_to_world,
                color: v.color.as_ref().map(|_| c),
                depth: v.depth.as_ref().map(|_| d),
                semantic: v.semantic.as_ref().map(|_| s),
            });
        }
        let m = ViewManifest {
            format: VIEW_FORMAT.into(),
            conventions: Conventions::default(),
            camera: self.camera,
            d_max: self.d_max,
            palette: self.palette.clone(),
            views: entries,
        };
        write_bytes(&dir.join(VIEWS), &serde_json::to_vec_pretty(&m)?)
    }

    /// Reads `views.json`, or the frames of a scene bundle if only
    /// `manifest.json` is present.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(VIEWS);
        if !path.is_file() && dir.join(MANIFEST).is_file() {
            return Ok(Self::from_bundle(&SceneBundle::load(dir)?));
        }
        let text = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let m: ViewManifest = serde_json::from_slice(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        if m.format != VIEW_FORMAT {
            return Err(Error::format(&path, format!("unsupported format {:?}", m.format)));
        }
        let views = m
            .views
            .iter()
            .map(|e| {
                let color = e.color.as_ref().map(|p| read_color_png(&existing(dir, p)?)).transpose()?;
                let depth = e.depth.as_ref().map(|p| read_pfm(&existing(dir, p)?)).transpose()?;
                let semantic = e.semantic.as_ref().map(|p| read_label_png(&existing(dir, p)?)).transpose()?;
                Ok(View {
                    timestamp: e.timestamp,
                    cam_to_world: e.pose,
                    color,
                    depth,
                    semantic,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ViewSet {
            camera: m.camera,
            d_max: m.d_max,
            palette: m.palette,
            views,
        })
    }
}
