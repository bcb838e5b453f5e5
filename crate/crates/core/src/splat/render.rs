//! Tile-based EWA splatting of a [`GaussianScene`] and its backward pass.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector3};
use rayon::prelude::*;

use super::gaussian::{normalize_quat, quat_to_matrix, sigmoid, softmax, offsets, GaussianScene};
use crate::error::{Error, Result};
use crate::geometry::{CameraModel, Pose, Z_NEAR};
use crate::modality::{DepthMap, PseudoImage, SemanticMap};

/// Upper bound on a single splat's opacity at a pixel.
pub const ALPHA_MAX: f64 = 0.99;
/// Contributions below this are dropped.
pub const DEFAULT_ALPHA_MIN: f64 = 1.0 / 255.0;
/// Isotropic screen-space dilation added to every projected covariance.
pub const COV_DILATION: f64 = 0.3;
/// Projected covariances worse conditioned than this are skipped.
pub const MAX_CONDITION: f64 = 1e8;
pub const TILE: usize = 16;
/// Compositing along a pixel stops once transmittance drops below this.
pub const TRANSMITTANCE_MIN: f64 = 1e-4;
const DEPTH_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderSettings {
    pub background: [f64; 3],
    pub alpha_min: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            background: [0.0; 3],
            alpha_min: DEFAULT_ALPHA_MIN,
        }
    }
}

/// Rendered rasters, row-major. Also used as the adjoint of a scalar loss.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    pub num_classes: usize,
    /// `3` values per pixel.
    pub color: Vec<f64>,
    pub depth: Vec<f64>,
    /// `num_classes` values per pixel, summing to `alpha`.
    pub sem: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl RenderOutput {
    pub fn zeros(width: usize, height: usize, num_classes: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            num_classes,
            color: vec![0.0; 3 * n],
            depth: vec![0.0; n],
            sem: vec![0.0; num_classes * n],
            alpha: vec![0.0; n],
        }
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn color_image(&self) -> PseudoImage {
        let data = self.color.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        PseudoImage::new(self.width, self.height, data).expect("sized by construction")
    }

    /// Depth with un-hit pixels (alpha below one half) set to 0.
    pub fn depth_map(&self) -> DepthMap {
        let values = self
            .depth
            .iter()
            .zip(&self.alpha)
            .map(|(d, a)| if *a >= 0.5 && d.is_finite() { d.max(0.0) } else { 0.0 })
            .collect();
        DepthMap::new(self.width, self.height, values).expect("sized by construction")
    }

    /// Per-pixel argmax, counting un-hit mass toward class 0.
    pub fn sem_argmax(&self) -> SemanticMap {
        let k = self.num_classes;
        let labels = (0..self.num_pixels())
            .map(|i| {
                let mut p = self.sem[i * k..(i + 1) * k].to_vec();
                p[0] += 1.0 - self.alpha[i];
                let mut best = 0;
                for (j, v) in p.iter().enumerate() {
                    if *v > p[best] {
                        best = j;
                    }
                }
                best as u8
            })
            .collect();
        SemanticMap::new(self.width, self.height, labels).expect("sized by construction")
    }
}

/// A Gaussian projected into one view.
#[derive(Debug, Clone)]
struct Splat {
    index: usize,
    z: f64,
    u: f64,
    v: f64,
    conic: [f64; 3],
    opacity: f64,
    /// `ln(alpha_min / opacity)`: exponents below it cannot reach `alpha_min`.
    power_floor: f64,
    color: [f64; 3],
    probs: Vec<f64>,
    bbox: [usize; 4],
    pc: Vector3<f64>,
    view_rot: Matrix3<f64>,
    cov_cam: Matrix3<f64>,
    jac: Matrix2x3<f64>,
}

fn group_transforms(scene: &GaussianScene, cam_to_world: &Pose, t: f64) -> Vec<(usize, usize, Pose)> {
    let world_to_cam = cam_to_world.inverse();
    scene
        .groups()
        .into_iter()
        .map(|(id, start, count)| {
            let view = match id {
                None => world_to_cam,
                Some(id) => world_to_cam.compose(&scene.objects[&id].track.pose_at(t)),
            };
            (start, count, view)
        })
        .collect()
}

fn project_splats(scene: &GaussianScene, cam: &CameraModel, cam_to_world: &Pose, t: f64, alpha_min: f64) -> Vec<Splat> {
    let gaussians: Vec<_> = scene.iter().collect();
    let mut splats = Vec::new();
    for (start, count, view) in group_transforms(scene, cam_to_world, t) {
        let w = view.rotation_matrix();
        for index in start..start + count {
            let g = gaussians[index];
            let pc = view.transform_point(&g.mean);
            if pc.z <= Z_NEAR {
                continue;
            }
            let opacity = sigmoid(g.opacity_logit);
            if opacity < alpha_min {
                continue;
            }
            let (x, y, z) = (pc.x, pc.y, pc.z);
            let jac = Matrix2x3::new(cam.fx / z, 0.0, -cam.fx * x / (z * z), 0.0, cam.fy / z, -cam.fy * y / (z * z));
            let cov_cam = w * g.covariance() * w.transpose();
            let cov2 = jac * cov_cam * jac.transpose() + Matrix2::identity() * COV_DILATION;
            let (a, b, c) = (cov2[(0, 0)], 0.5 * (cov2[(0, 1)] + cov2[(1, 0)]), cov2[(1, 1)]);
            let mid = 0.5 * (a + c);
            let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
            let (l_max, l_min) = (mid + rad, mid - rad);
            if !(l_min > 0.0) || l_max / l_min > MAX_CONDITION || !l_max.is_finite() {
                continue;
            }
            let det = a * c - b * b;
            let conic = [c / det, -b / det, a / det];
            let (u, v) = cam.project(&pc);
            // Beyond this Mahalanobis radius o·exp(power) < alpha_min.
            let r = (l_max * 2.0 * (opacity / alpha_min).ln()).sqrt();
            let x0 = (u - r).ceil().max(0.0);
            let x1 = (u + r).floor().min(cam.width as f64 - 1.0);
            let y0 = (v - r).ceil().max(0.0);
            let y1 = (v + r).floor().min(cam.height as f64 - 1.0);
            if !(x0 <= x1 && y0 <= y1) {
                continue;
            }
            splats.push(Splat {
                index,
                z,
                u,
                v,
                conic,
                opacity,
                power_floor: (alpha_min / opacity).ln(),
                color: g.color,
                probs: softmax(&g.sem_logits),
                bbox: [x0 as usize, x1 as usize, y0 as usize, y1 as usize],
                pc,
                view_rot: w,
                cov_cam,
                jac,
            });
        }
    }
    splats.sort_by(|p, q| p.z.total_cmp(&q.z));
    splats
}

struct Tiles {
    nx: usize,
    ny: usize,
    lists: Vec<Vec<usize>>,
}

fn bin_tiles(splats: &[Splat], cam: &CameraModel) -> Tiles {
    let nx = cam.width.div_ceil(TILE);
    let ny = cam.height.div_ceil(TILE);
    let mut lists = vec![Vec::new(); nx * ny];
    for (i, s) in splats.iter().enumerate() {
        let [x0, x1, y0, y1] = s.bbox;
        for ty in y0 / TILE..=y1 / TILE {
            for tx in x0 / TILE..=x1 / TILE {
                lists[ty * nx + tx].push(i);
            }
        }
    }
    Tiles { nx, ny, lists }
}

impl Tiles {
    fn pixels(&self, tile: usize, cam: &CameraModel) -> impl Iterator<Item = (usize, usize)> {
        let (tx, ty) = (tile % self.nx, tile / self.nx);
        let xs = tx * TILE..((tx + 1) * TILE).min(cam.width);
        let ys = ty * TILE..((ty + 1) * TILE).min(cam.height);
        ys.flat_map(move |y| xs.clone().map(move |x| (x, y)))
    }
}

/// Per-pixel evaluation of one splat.
struct Hit {
    alpha: f64,
    gauss: f64,
    dx: f64,
    dy: f64,
    clamped: bool,
}

fn hit(s: &Splat, px: f64, py: f64, alpha_min: f64) -> Option<Hit> {
    let [a, b, c] = s.conic;
    let (dx, dy) = (px - s.u, py - s.v);
    let power = -0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy);
    // Cheap rejection; the margin leaves borderline cases to the exact test.
    if power < s.power_floor - 1e-9 {
        return None;
    }
    let gauss = power.exp();
    let raw = s.opacity * gauss;
    if raw < alpha_min {
        return None;
    }
    Some(Hit {
        alpha: raw.min(ALPHA_MAX),
        gauss,
        dx,
        dy,
        clamped: raw > ALPHA_MAX,
    })
}

pub fn rasterize(scene: &GaussianScene, cam: &CameraModel, cam_to_world: &Pose, t: f64) -> RenderOutput {
    rasterize_with(scene, cam, cam_to_world, t, &RenderSettings::default())
}

pub fn rasterize_with(
    scene: &GaussianScene,
    cam: &CameraModel,
    cam_to_world: &Pose,
    t: f64,
    settings: &RenderSettings,
) -> RenderOutput {
    let k = scene.num_classes();
    let splats = project_splats(scene, cam, cam_to_world, t, settings.alpha_min);
    let tiles = bin_tiles(&splats, cam);
    let bg = settings.background;
    let per_tile: Vec<Vec<(usize, [f64; 3], f64, Vec<f64>, f64)>> = (0..tiles.nx * tiles.ny)
        .into_par_iter()
        .map(|tile| {
            let list = &tiles.lists[tile];
            tiles
                .pixels(tile, cam)
                .map(|(x, y)| {
                    let mut trans = 1.0;
                    let mut color = [0.0; 3];
                    let mut depth = 0.0;
                    let mut sem = vec![0.0; k];
                    for &si in list {
                        let s = &splats[si];
                        let Some(h) = hit(s, x as f64, y as f64, settings.alpha_min) else {
                            continue;
                        };
                        let w = h.alpha * trans;
                        for ch in 0..3 {
                            color[ch] += w * s.color[ch];
                        }
                        for (o, p) in sem.iter_mut().zip(&s.probs) {
                            *o += w * p;
                        }
                        depth += w * s.z;
                        trans *= 1.0 - h.alpha;
                        if trans < TRANSMITTANCE_MIN {
                            break;
                        }
                    }
                    let acc = 1.0 - trans;
                    for ch in 0..3 {
                        color[ch] += trans * bg[ch];
                    }
                    (y * cam.width + x, color, depth / acc.max(DEPTH_EPS), sem, acc)
                })
                .collect()
        })
        .collect();
    let mut out = RenderOutput::zeros(cam.width, cam.height, k);
    for (idx, color, depth, sem, acc) in per_tile.into_iter().flatten() {
        out.color[3 * idx..3 * idx + 3].copy_from_slice(&color);
        out.depth[idx] = depth;
        out.sem[k * idx..k * (idx + 1)].copy_from_slice(&sem);
        out.alpha[idx] = acc;
    }
    out
}

/// Screen-space gradient slots per splat.
mod slot {
    pub const U: usize = 0;
    pub const V: usize = 1;
    pub const CONIC: usize = 2;
    pub const OPACITY: usize = 5;
    pub const COLOR: usize = 6;
    pub const Z: usize = 9;
    pub const PROBS: usize = 10;
}

pub fn rasterize_grad(
    scene: &GaussianScene,
    cam: &CameraModel,
    cam_to_world: &Pose,
    t: f64,
    adjoint: &RenderOutput,
) -> Result<Vec<f64>> {
    rasterize_grad_with(scene, cam, cam_to_world, t, adjoint, &RenderSettings::default())
}

/// Gradient of `Σ adjoint ⊙ render` with respect to [`GaussianScene::params`].
pub fn rasterize_grad_with(
    scene: &GaussianScene,
    cam: &CameraModel,
    cam_to_world: &Pose,
    t: f64,
    adjoint: &RenderOutput,
    settings: &RenderSettings,
) -> Result<Vec<f64>> {
    let k = scene.num_classes();
    if adjoint.width != cam.width || adjoint.height != cam.height || adjoint.num_classes != k {
        return Err(Error::shape(
            format!("{}x{} with {k} classes", cam.width, cam.height),
            format!("{}x{} with {} classes", adjoint.width, adjoint.height, adjoint.num_classes),
        ));
    }
    let splats = project_splats(scene, cam, cam_to_world, t, settings.alpha_min);
    let tiles = bin_tiles(&splats, cam);
    let width = slot::PROBS + k;
    let bg = settings.background;

    let per_tile: Vec<Vec<f64>> = (0..tiles.nx * tiles.ny)
        .into_par_iter()
        .map(|tile| {
            let list = &tiles.lists[tile];
            let mut buf = vec![0.0; list.len() * width];
            let mut hits: Vec<(usize, Hit, f64)> = Vec::new();
            for (x, y) in tiles.pixels(tile, cam) {
                let idx = y * cam.width + x;
                hits.clear();
                let mut trans = 1.0;
                let mut depth_num = 0.0;
                for (li, &si) in list.iter().enumerate() {
                    if let Some(h) = hit(&splats[si], x as f64, y as f64, settings.alpha_min) {
                        depth_num += h.alpha * trans * splats[si].z;
                        let a = h.alpha;
                        hits.push((li, h, trans));
                        trans *= 1.0 - a;
                        if trans < TRANSMITTANCE_MIN {
                            break;
                        }
                    }
                }
                if hits.is_empty() {
                    continue;
                }
                let acc = 1.0 - trans;
                let acc_c = acc.max(DEPTH_EPS);
                let depth = depth_num / acc_c;
                let g_col = &adjoint.color[3 * idx..3 * idx + 3];
                let g_sem = &adjoint.sem[k * idx..k * (idx + 1)];
                let g_depth = adjoint.depth[idx];
                let g_acc = adjoint.alpha[idx];
                let depth_through_acc = if acc > DEPTH_EPS { depth / acc_c } else { 0.0 };

                let mut suffix = 0.0;
                for (li, h, t_before) in hits.iter().rev() {
                    let s = &splats[list[*li]];
                    let w = h.alpha * t_before;
                    let g_w = (0..3).map(|c| g_col[c] * (s.color[c] - bg[c])).sum::<f64>()
                        + g_sem.iter().zip(&s.probs).map(|(g, p)| g * p).sum::<f64>()
                        + g_acc
                        + g_depth * (s.z / acc_c - depth_through_acc);
                    let g_alpha = t_before * g_w - suffix / (1.0 - h.alpha);
                    suffix += w * g_w;

                    let b = &mut buf[li * width..(li + 1) * width];
                    for c in 0..3 {
                        b[slot::COLOR + c] += w * g_col[c];
                    }
                    for (o, g) in b[slot::PROBS..].iter_mut().zip(g_sem) {
                        *o += w * g;
                    }
                    b[slot::Z] += w * g_depth / acc_c;
                    if !h.clamped {
                        b[slot::OPACITY] += g_alpha * h.gauss;
                        let g_pow = g_alpha * h.alpha;
                        let [ca, cb, cc] = s.conic;
                        b[slot::U] += g_pow * (ca * h.dx + cb * h.dy);
                        b[slot::V] += g_pow * (cb * h.dx + cc * h.dy);
                        b[slot::CONIC] += g_pow * (-0.5 * h.dx * h.dx);
                        b[slot::CONIC + 1] += g_pow * (-h.dx * h.dy);
                        b[slot::CONIC + 2] += g_pow * (-0.5 * h.dy * h.dy);
                    }
                }
            }
            buf
        })
        .collect();

    // Deterministic reduction in tile order.
    let mut screen = vec![0.0; splats.len() * width];
    for (tile, buf) in per_tile.iter().enumerate() {
        for (li, &si) in tiles.lists[tile].iter().enumerate() {
            let dst = &mut screen[si * width..(si + 1) * width];
            for (d, s) in dst.iter_mut().zip(&buf[li * width..(li + 1) * width]) {
                *d += s;
            }
        }
    }

    let gaussians: Vec<_> = scene.iter().collect();
    let stride = scene.stride();
    let mut grad = vec![0.0; scene.len() * stride];
    let per_splat: Vec<(usize, Vec<f64>)> = splats
        .par_iter()
        .enumerate()
        .map(|(si, s)| {
            let g2 = &screen[si * width..(si + 1) * width];
            (s.index, splat_backward(s, gaussians[s.index], cam, g2, stride))
        })
        .collect();
    for (index, g) in per_splat {
        grad[index * stride..(index + 1) * stride].copy_from_slice(&g);
    }
    Ok(grad)
}

/// Chains screen-space gradients back to one Gaussian's parameters.
fn splat_backward(
    s: &Splat,
    g: &super::gaussian::Gaussian3D,
    cam: &CameraModel,
    g2: &[f64],
    stride: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; stride];
    out[offsets::COLOR..offsets::COLOR + 3].copy_from_slice(&g2[slot::COLOR..slot::COLOR + 3]);
    out[offsets::OPACITY] = g2[slot::OPACITY] * s.opacity * (1.0 - s.opacity);

    let gp = &g2[slot::PROBS..];
    let dot: f64 = gp.iter().zip(&s.probs).map(|(a, b)| a * b).sum();
    for (j, p) in s.probs.iter().enumerate() {
        out[offsets::SEM + j] = p * (gp[j] - dot);
    }

    // Conic → 2D covariance: dΣ⁻¹ = −Σ⁻¹ dΣ Σ⁻¹.
    let [ca, cb, cc] = s.conic;
    let q = Matrix2::new(ca, cb, cb, cc);
    let gq = Matrix2::new(
        g2[slot::CONIC],
        0.5 * g2[slot::CONIC + 1],
        0.5 * g2[slot::CONIC + 1],
        g2[slot::CONIC + 2],
    );
    let g_cov2 = -(q * gq * q);
    let g_jac = 2.0 * g_cov2 * s.jac * s.cov_cam;
    let g_cov_cam = s.jac.transpose() * g_cov2 * s.jac;
    let g_cov = s.view_rot.transpose() * g_cov_cam * s.view_rot;

    let qn = normalize_quat(g.rotation);
    let r = quat_to_matrix(qn);
    let scale = g.scale();
    let m = r * Matrix3::from_diagonal(&scale);
    let g_m = 2.0 * g_cov * m;
    let g_r = g_m * Matrix3::from_diagonal(&scale);
    let rt_gm = r.transpose() * g_m;
    for j in 0..3 {
        out[offsets::LOG_SCALE + j] = rt_gm[(j, j)] * scale[j];
    }
    let [w, x, y, z] = qn;
    let gr = |i: usize, j: usize| g_r[(i, j)];
    let gq_hat = [
        -2.0 * z * gr(0, 1) + 2.0 * y * gr(0, 2) + 2.0 * z * gr(1, 0) - 2.0 * x * gr(1, 2) - 2.0 * y * gr(2, 0)
            + 2.0 * x * gr(2, 1),
        2.0 * y * gr(0, 1) + 2.0 * z * gr(0, 2) + 2.0 * y * gr(1, 0) - 4.0 * x * gr(1, 1) - 2.0 * w * gr(1, 2)
            + 2.0 * z * gr(2, 0)
            + 2.0 * w * gr(2, 1)
            - 4.0 * x * gr(2, 2),
        -4.0 * y * gr(0, 0) + 2.0 * x * gr(0, 1) + 2.0 * w * gr(0, 2) + 2.0 * x * gr(1, 0) + 2.0 * z * gr(1, 2)
            - 2.0 * w * gr(2, 0)
            + 2.0 * z * gr(2, 1)
            - 4.0 * y * gr(2, 2),
        -4.0 * z * gr(0, 0) - 2.0 * w * gr(0, 1) + 2.0 * x * gr(0, 2) + 2.0 * w * gr(1, 0) - 4.0 * z * gr(1, 1)
            + 2.0 * y * gr(1, 2)
            + 2.0 * x * gr(2, 0)
            + 2.0 * y * gr(2, 1),
    ];
    let norm = g.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
    let radial: f64 = (0..4).map(|i| qn[i] * gq_hat[i]).sum();
    for i in 0..4 {
        out[offsets::ROTATION + i] = (gq_hat[i] - qn[i] * radial) / norm;
    }

    let (px, py, pz) = (s.pc.x, s.pc.y, s.pc.z);
    let (fx, fy) = (cam.fx, cam.fy);
    let (gu, gv) = (g2[slot::U], g2[slot::V]);
    let z2 = pz * pz;
    let z3 = z2 * pz;
    let g_pc = Vector3::new(
        gu * fx / pz + g_jac[(0, 2)] * (-fx / z2),
        gv * fy / pz + g_jac[(1, 2)] * (-fy / z2),
        g2[slot::Z] - gu * fx * px / z2 - gv * fy * py / z2
            + g_jac[(0, 0)] * (-fx / z2)
            + g_jac[(0, 2)] * (2.0 * fx * px / z3)
            + g_jac[(1, 1)] * (-fy / z2)
            + g_jac[(1, 2)] * (2.0 * fy * py / z3),
    );
    let g_mean = s.view_rot.transpose() * g_pc;
    out[offsets::MEAN..offsets::MEAN + 3].copy_from_slice(g_mean.as_slice());
    out
}
