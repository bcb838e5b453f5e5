//! Codecs between physical rasters (depth in meters, semantic labels) and the
//! 3-channel pseudo-images consumed by the diffusion core, plus the latent
//! codec that maps pseudo-images into diffusion space.
//!
//! Depth is replicated into three channels after normalizing by `d_max`, and
//! decoded by averaging the channels. Semantic labels are colorized through a
//! [`Palette`] and decoded by nearest palette color (lowest index on ties).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default normalization range for depth pseudo-images, meters.
pub const DEFAULT_D_MAX: f64 = 100.0;

/// Spatial factor of the default latent codec.
pub const LATENT_FACTOR: usize = 8;

/// Depth raster in meters; `0.0` marks an invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::shape(width * height, values.len()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("depth values must be finite and non-negative"));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }
}

/// Per-pixel class indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u8>,
}

impl SemanticMap {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::shape(width * height, labels.len()));
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }
}

/// Three-channel interleaved raster with values in `[0, 1]`. Also used for
/// plain RGB images.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl PseudoImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::shape(width * height * 3, data.len()));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("pseudo-image values must lie in [0, 1]"));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Self {
            width,
            height,
            data,
        }
    }

    pub fn pixel(&self, idx: usize) -> [f64; 3] {
        [self.data[3 * idx], self.data[3 * idx + 1], self.data[3 * idx + 2]]
    }

    pub fn same_size(&self, other: &PseudoImage) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::shape(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", other.width, other.height),
            ));
        }
        Ok(())
    }
}

/// Dense `h × w × c` tensor, row-major with channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f64>,
}

impl LatentTensor {
    pub fn new(h: usize, w: usize, c: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != h * w * c {
            return Err(Error::shape(h * w * c, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("latent values must be finite"));
        }
        Ok(Self { h, w, c, data })
    }

    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        Self {
            h,
            w,
            c,
            data: vec![0.0; h * w * c],
        }
    }

    pub fn filled(h: usize, w: usize, c: usize, value: f64) -> Self {
        Self {
            h,
            w,
            c,
            data: vec![value; h * w * c],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::filled(1, 1, 1, value)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.c)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn check_same_shape(&self, other: &LatentTensor) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!("{:?}", self.shape()), format!("{:?}", other.shape())));
        }
        Ok(())
    }

    /// `a·self + b·other`, elementwise.
    pub fn axpby(&self, a: f64, other: &LatentTensor, b: f64) -> Result<LatentTensor> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(x, y)| a * x + b * y).collect();
        Ok(LatentTensor {
            h: self.h,
            w: self.w,
            c: self.c,
            data,
        })
    }

    /// Stacks tensors of equal `(w, c)` along the height axis.
    pub fn vstack(parts: &[LatentTensor]) -> Result<LatentTensor> {
        let first = parts.first().ok_or_else(|| Error::invalid("nothing to stack"))?;
        let mut data = Vec::with_capacity(first.len() * parts.len());
        for p in parts {
            if p.w != first.w || p.c != first.c || p.h != first.h {
                return Err(Error::shape(format!("{:?}", first.shape()), format!("{:?}", p.shape())));
            }
            data.extend_from_slice(&p.data);
        }
        Ok(LatentTensor {
            h: first.h * parts.len(),
            w: first.w,
            c: first.c,
            data,
        })
    }

    /// Inverse of [`LatentTensor::vstack`] for `n` equal slabs.
    pub fn split_rows(&self, n: usize) -> Result<Vec<LatentTensor>> {
        if n == 0 || !self.h.is_multiple_of(n) {
            return Err(Error::invalid(format!("cannot split height {} into {n} slabs", self.h)));
        }
        let h = self.h / n;
        let chunk = h * self.w * self.c;
        Ok(self
            .data
            .chunks(chunk)
            .map(|d| LatentTensor {
                h,
                w: self.w,
                c: self.c,
                data: d.to_vec(),
            })
            .collect())
    }
}

/// Semantic class colors with a guaranteed minimum pairwise distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 3]>", into = "Vec<[f64; 3]>")]
pub struct Palette {
    colors: Vec<[f64; 3]>,
    min_distance: f64,
}

impl TryFrom<Vec<[f64; 3]>> for Palette {
    type Error = Error;
    fn try_from(colors: Vec<[f64; 3]>) -> Result<Self> {
        Palette::new(colors)
    }
}

impl From<Palette> for Vec<[f64; 3]> {
    fn from(p: Palette) -> Self {
        p.colors
    }
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

impl Palette {
    pub fn new(colors: Vec<[f64; 3]>) -> Result<Self> {
        if colors.is_empty() || colors.len() > 256 {
            return Err(Error::invalid("palette needs between 1 and 256 colors"));
        }
        if colors.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("palette colors must lie in [0, 1]"));
        }
        let mut min_distance = f64::INFINITY;
        for i in 0..colors.len() {
            for j in i + 1..colors.len() {
                min_distance = min_distance.min(dist(&colors[i], &colors[j]));
            }
        }
        if min_distance <= 0.0 {
            return Err(Error::invalid("palette colors must be distinct"));
        }
        Ok(Self {
            colors,
            min_distance,
        })
    }

    /// Deterministic palette of `k ≤ 32` colors picked greedily (farthest
    /// point first) from the 5-level RGB lattice, so `δ ≥ 0.25`.
    pub fn default_for(k: usize) -> Result<Self> {
        if k == 0 || k > 32 {
            return Err(Error::invalid("default palette supports 1..=32 classes"));
        }
        const LEVELS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
        let lattice: Vec<[f64; 3]> = (0..125)
            .map(|i| [LEVELS[i / 25], LEVELS[(i / 5) % 5], LEVELS[i % 5]])
            .collect();
        let mut chosen = vec![lattice[0]];
        let mut nearest: Vec<f64> = lattice.iter().map(|c| dist(c, &lattice[0])).collect();
        while chosen.len() < k {
            // First lattice entry with the largest distance to the chosen set.
            let (best, _) = nearest
                .iter()
                .enumerate()
                .fold((0, -1.0), |acc, (i, d)| if *d > acc.1 { (i, *d) } else { acc });
            let c = lattice[best];
            chosen.push(c);
            for (n, l) in nearest.iter_mut().zip(&lattice) {
                *n = n.min(dist(l, &c));
            }
        }
        Palette::new(chosen)
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    pub fn color(&self, k: usize) -> [f64; 3] {
        self.colors[k]
    }

    pub fn colors(&self) -> &[[f64; 3]] {
        &self.colors
    }

    pub fn min_distance(&self) -> f64 {
        self.min_distance
    }

    /// Index of the nearest palette color, lowest index on ties.
    pub fn nearest(&self, rgb: [f64; 3]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, c) in self.colors.iter().enumerate() {
            let d = (rgb[0] - c[0]).powi(2) + (rgb[1] - c[1]).powi(2) + (rgb[2] - c[2]).powi(2);
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }
}

fn check_d_max(d_max: f64) -> Result<()> {
    if !(d_max > 0.0 && d_max.is_finite()) {
        return Err(Error::invalid("d_max must be positive"));
    }
    Ok(())
}

pub fn encode_depth3(depth: &DepthMap, d_max: f64) -> Result<PseudoImage> {
    check_d_max(d_max)?;
    let data = depth
        .values
        .iter()
        .flat_map(|d| {
            let v = (d / d_max).clamp(0.0, 1.0);
            [v, v, v]
        })
        .collect();
    PseudoImage::new(depth.width, depth.height, data)
}

pub fn decode_depth3(img: &PseudoImage, d_max: f64) -> Result<DepthMap> {
    check_d_max(d_max)?;
    let values = img
        .data
        .chunks_exact(3)
        .map(|px| d_max * (px[0] + px[1] + px[2]) / 3.0)
        .collect();
    DepthMap::new(img.width, img.height, values)
}

pub fn encode_semantic(sem: &SemanticMap, palette: &Palette) -> Result<PseudoImage> {
    let mut data = Vec::with_capacity(sem.labels.len() * 3);
    for &label in &sem.labels {
        if label as usize >= palette.len() {
            return Err(Error::LabelOutOfPalette {
                label: label as u32,
                classes: palette.len(),
            });
        }
        data.extend_from_slice(&palette.color(label as usize));
    }
    PseudoImage::new(sem.width, sem.height, data)
}

pub fn decode_semantic(img: &PseudoImage, palette: &Palette) -> SemanticMap {
    let labels = img
        .data
        .chunks_exact(3)
        .map(|px| palette.nearest([px[0], px[1], px[2]]) as u8)
        .collect();
    SemanticMap {
        width: img.width,
        height: img.height,
        labels,
    }
}

/// Maps pseudo-images into diffusion space and back.
pub trait LatentCodec: Send + Sync {
    fn encode(&self, img: &PseudoImage) -> Result<LatentTensor>;
    fn decode(&self, z: &LatentTensor) -> Result<PseudoImage>;
    /// Latent shape produced for an image of the given size.
    fn latent_shape(&self, width: usize, height: usize) -> Result<(usize, usize, usize)>;
}

/// Lossless space-to-depth codec: each `f × f` block becomes one latent pixel
/// with `3·f²` channels, remapped from `[0, 1]` to `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpaceToDepth {
    pub factor: usize,
}

impl Default for SpaceToDepth {
    fn default() -> Self {
        Self {
            factor: LATENT_FACTOR,
        }
    }
}

impl LatentCodec for SpaceToDepth {
    fn latent_shape(&self, width: usize, height: usize) -> Result<(usize, usize, usize)> {
        let f = self.factor;
        if f == 0 || !width.is_multiple_of(f) || !height.is_multiple_of(f) {
            return Err(Error::invalid(format!(
                "image {width}x{height} is not divisible by latent factor {f}"
            )));
        }
        Ok((height / f, width / f, 3 * f * f))
    }

    fn encode(&self, img: &PseudoImage) -> Result<LatentTensor> {
        let (h, w, c) = self.latent_shape(img.width, img.height)?;
        let f = self.factor;
        let mut data = vec![0.0; h * w * c];
        for y in 0..img.height {
            for x in 0..img.width {
                let base = ((y / f) * w + x / f) * c + ((y % f) * f + x % f) * 3;
                let src = 3 * (y * img.width + x);
                for ch in 0..3 {
                    data[base + ch] = 2.0 * img.data[src + ch] - 1.0;
                }
            }
        }
        LatentTensor::new(h, w, c, data)
    }

    fn decode(&self, z: &LatentTensor) -> Result<PseudoImage> {
        let f = self.factor;
        if z.c != 3 * f * f {
            return Err(Error::shape(format!("{} channels", 3 * f * f), format!("{} channels", z.c)));
        }
        let (width, height) = (z.w * f, z.h * f);
        let mut data = vec![0.0; width * height * 3];
        for y in 0..height {
            for x in 0..width {
                let base = ((y / f) * z.w + x / f) * z.c + ((y % f) * f + x % f) * 3;
                let dst = 3 * (y * width + x);
                for ch in 0..3 {
                    data[dst + ch] = ((z.data[base + ch] + 1.0) * 0.5).clamp(0.0, 1.0);
                }
            }
        }
        PseudoImage::new(width, height, data)
    }
}

/// Default-codec shorthand.
pub fn latent_encode(img: &PseudoImage) -> Result<LatentTensor> {
    SpaceToDepth::default().encode(img)
}

pub fn latent_decode(z: &LatentTensor) -> Result<PseudoImage> {
    SpaceToDepth::default().decode(z)
}
