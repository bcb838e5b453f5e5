//! Structural similarity on interleaved RGB rasters, with analytic gradients.
//!
//! Windows are Gaussian (σ = 1.5) and only fully interior ("valid")
//! positions are averaged. Images narrower than 11 pixels use the largest odd
//! window that fits.

use crate::error::{Error, Result};
use crate::modality::PseudoImage;

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

pub fn ssim_kernel(width: usize, height: usize) -> Vec<f64> {
    let mut n = SSIM_WINDOW.min(width).min(height);
    if n.is_multiple_of(2) {
        n -= 1;
    }
    let r = (n / 2) as f64;
    let k: Vec<f64> = (0..n)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering of one plane.
fn blur(src: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..n).map(|i| k[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Transpose of [`blur`].
fn blur_adjoint(src: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..oh {
        for x in 0..ow {
            for i in 0..n {
                tmp[(y + i) * ow + x] += k[i] * src[y * ow + x];
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            for i in 0..n {
                out[y * w + x + i] += k[i] * tmp[y * ow + x];
            }
        }
    }
    out
}

/// Sum of the SSIM map of one plane, its position count and, optionally, the
/// gradient of that sum with respect to `a`.
fn plane(a: &[f64], b: &[f64], w: usize, h: usize, k: &[f64], grad: bool) -> (f64, usize, Option<Vec<f64>>) {
    let sq = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_a = blur(a, w, h, k);
    let mu_b = blur(b, w, h, k);
    let e_aa = blur(&sq(a, a), w, h, k);
    let e_bb = blur(&sq(b, b), w, h, k);
    let e_ab = blur(&sq(a, b), w, h, k);
    let m = mu_a.len();
    let mut total = 0.0;
    let (mut ga, mut gb, mut gc) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    for p in 0..m {
        let (ma, mb) = (mu_a[p], mu_b[p]);
        let va = e_aa[p] - ma * ma;
        let vb = e_bb[p] - mb * mb;
        let cov = e_ab[p] - ma * mb;
        let a1 = 2.0 * ma * mb + SSIM_C1;
        let a2 = 2.0 * cov + SSIM_C2;
        let b1 = ma * ma + mb * mb + SSIM_C1;
        let b2 = va + vb + SSIM_C2;
        let s = a1 * a2 / (b1 * b2);
        total += s;
        if grad {
            let d_mu = 2.0 * mb * a2 / (b1 * b2) - s * 2.0 * ma / b1;
            let d_var = -s / b2;
            let d_cov = 2.0 * a1 / (b1 * b2);
            ga[p] = d_mu - 2.0 * ma * d_var - mb * d_cov;
            gb[p] = 2.0 * d_var;
            gc[p] = d_cov;
        }
    }
    if !grad {
        return (total, m, None);
    }
    let ta = blur_adjoint(&ga, w, h, k);
    let tb = blur_adjoint(&gb, w, h, k);
    let tc = blur_adjoint(&gc, w, h, k);
    let g = (0..w * h).map(|i| ta[i] + a[i] * tb[i] + b[i] * tc[i]).collect();
    (total, m, Some(g))
}

fn check(w: usize, h: usize, a: &[f64], b: &[f64]) -> Result<()> {
    if w == 0 || h == 0 {
        return Err(Error::invalid("empty image"));
    }
    if a.len() != 3 * w * h || b.len() != 3 * w * h {
        return Err(Error::shape(3 * w * h, a.len().max(b.len())));
    }
    Ok(())
}

/// Mean SSIM of two interleaved RGB rasters and its gradient with respect
/// to `a`.
pub fn ssim_raw(w: usize, h: usize, a: &[f64], b: &[f64], want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
    check(w, h, a, b)?;
    let k = ssim_kernel(w, h);
    let mut total = 0.0;
    let mut count = 0;
    let mut grad = want_grad.then(|| vec![0.0; 3 * w * h]);
    for ch in 0..3 {
        let pa: Vec<f64> = a.iter().skip(ch).step_by(3).copied().collect();
        let pb: Vec<f64> = b.iter().skip(ch).step_by(3).copied().collect();
        let (s, n, g) = plane(&pa, &pb, w, h, &k, want_grad);
        total += s;
        count += n;
        if let (Some(out), Some(g)) = (grad.as_mut(), g) {
            for (i, v) in g.into_iter().enumerate() {
                out[3 * i + ch] = v;
            }
        }
    }
    let scale = 1.0 / count as f64;
    if let Some(g) = grad.as_mut() {
        g.iter_mut().for_each(|v| *v *= scale);
    }
    Ok((total * scale, grad))
}

pub fn ssim(a: &PseudoImage, b: &PseudoImage) -> Result<f64> {
    a.same_size(b)?;
    Ok(ssim_raw(a.width, a.height, &a.data, &b.data, false)?.0)
}

/// 2×2 box downsampling; odd trailing rows and columns are dropped.
fn downsample(w: usize, h: usize, img: &[f64]) -> (usize, usize, Vec<f64>) {
    let (ow, oh) = (w / 2, h / 2);
    let mut out = vec![0.0; 3 * ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            for ch in 0..3 {
                let at = |xx: usize, yy: usize| img[3 * (yy * w + xx) + ch];
                out[3 * (y * ow + x) + ch] =
                    0.25 * (at(2 * x, 2 * y) + at(2 * x + 1, 2 * y) + at(2 * x, 2 * y + 1) + at(2 * x + 1, 2 * y + 1));
            }
        }
    }
    (ow, oh, out)
}

fn upsample_adjoint(w: usize, h: usize, g: &[f64]) -> Vec<f64> {
    let (ow, oh) = (w / 2, h / 2);
    let mut out = vec![0.0; 3 * w * h];
    for y in 0..oh {
        for x in 0..ow {
            for ch in 0..3 {
                let v = 0.25 * g[3 * (y * ow + x) + ch];
                for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    out[3 * ((2 * y + dy) * w + 2 * x + dx) + ch] += v;
                }
            }
        }
    }
    out
}

/// Equal-weight mean of SSIM over up to `scales` dyadic levels, and its
/// gradient with respect to `a`.
pub fn multiscale_ssim(w: usize, h: usize, a: &[f64], b: &[f64], scales: usize) -> Result<(f64, Vec<f64>)> {
    check(w, h, a, b)?;
    let mut levels = vec![(w, h, a.to_vec(), b.to_vec())];
    while levels.len() < scales.max(1) {
        let (lw, lh, la, lb) = levels.last().unwrap();
        if *lw < 2 || *lh < 2 {
            break;
        }
        let (nw, nh, na) = downsample(*lw, *lh, la);
        let (_, _, nb) = downsample(*lw, *lh, lb);
        levels.push((nw, nh, na, nb));
    }
    let n = levels.len() as f64;
    let mut value = 0.0;
    let mut carry: Option<Vec<f64>> = None;
    for (lw, lh, la, lb) in levels.iter().rev() {
        let (s, g) = ssim_raw(*lw, *lh, la, lb, true)?;
        value += s / n;
        let mut g: Vec<f64> = g.unwrap().into_iter().map(|v| v / n).collect();
        if let Some(coarse) = carry.take() {
            let up = upsample_adjoint(*lw, *lh, &coarse);
            g.iter_mut().zip(up).for_each(|(a, b)| *a += b);
        }
        carry = Some(g);
    }
    Ok((value, carry.unwrap()))
}

/// Perceptual distance used for color supervision on virtual views.
pub trait PerceptualLoss: Send + Sync {
    /// Loss between `pred` and `target` (interleaved RGB) and its gradient
    /// with respect to `pred`.
    fn evaluate(&self, w: usize, h: usize, pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// `1 − multiscale SSIM` over three dyadic scales.
#[derive(Debug, Clone, Copy)]
pub struct MsSsimProxy {
    pub scales: usize,
}

impl Default for MsSsimProxy {
    fn default() -> Self {
        Self { scales: 3 }
    }
}

impl PerceptualLoss for MsSsimProxy {
    fn evaluate(&self, w: usize, h: usize, pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (v, g) = multiscale_ssim(w, h, pred, target, self.scales)?;
        Ok((1.0 - v, g.into_iter().map(|x| -x).collect()))
    }
}
