//! Supervision losses on rendered views. Each returns the scalar loss and
//! its adjoint raster for [`rasterize_grad`](super::rasterize_grad).

use super::ssim::{ssim_raw, PerceptualLoss};
use super::RenderOutput;
use crate::error::{Error, Result};
use crate::modality::{DepthMap, PseudoImage, SemanticMap};

/// Class that receives the un-hit probability mass `1 − alpha`.
pub const BACKGROUND_CLASS: usize = 0;
/// Probability floor inside the cross-entropy logarithm.
pub const PROB_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputWeights {
    pub l1: f64,
    pub ssim: f64,
    pub depth: f64,
}

impl Default for InputWeights {
    fn default() -> Self {
        Self {
            l1: 0.8,
            ssim: 0.2,
            depth: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VirtualWeights {
    pub color: f64,
    pub depth: f64,
    pub sem: f64,
}

impl Default for VirtualWeights {
    fn default() -> Self {
        Self {
            color: 0.5,
            depth: 0.1,
            sem: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub adjoint: RenderOutput,
    pub warnings: Vec<String>,
}

fn check_size(render: &RenderOutput, w: usize, h: usize) -> Result<()> {
    if render.width != w || render.height != h {
        return Err(Error::shape(
            format!("{}x{}", render.width, render.height),
            format!("{w}x{h}"),
        ));
    }
    Ok(())
}

/// Mean absolute depth error over pixels with positive target depth; adds
/// `weight ×` its gradient into `adjoint`. `None` when no pixel is valid.
fn masked_depth_l1(render: &RenderOutput, target: &DepthMap, weight: f64, adjoint: &mut [f64]) -> Option<f64> {
    let valid = target.values.iter().filter(|d| **d > 0.0).count();
    if valid == 0 {
        return None;
    }
    let n = valid as f64;
    let mut total = 0.0;
    for (i, (d, g)) in render.depth.iter().zip(&target.values).enumerate() {
        if *g > 0.0 {
            let diff = d - g;
            total += diff.abs();
            adjoint[i] += weight * diff.signum() * (diff != 0.0) as u8 as f64 / n;
        }
    }
    Some(total / n)
}

/// `λ1·L1(color) + λ_ssim·(1 − SSIM) + λ_depth·masked L1(depth)` against a
/// captured frame.
pub fn loss_input(
    render: &RenderOutput,
    gt_color: &PseudoImage,
    gt_depth: &DepthMap,
    w: &InputWeights,
) -> Result<LossOutput> {
    check_size(render, gt_color.width, gt_color.height)?;
    check_size(render, gt_depth.width, gt_depth.height)?;
    let mut adjoint = RenderOutput::zeros(render.width, render.height, render.num_classes);
    let mut warnings = Vec::new();
    let n = render.color.len() as f64;
    let mut l1 = 0.0;
    for (i, (p, g)) in render.color.iter().zip(&gt_color.data).enumerate() {
        let diff = p - g;
        l1 += diff.abs();
        if diff != 0.0 {
            adjoint.color[i] += w.l1 * diff.signum() / n;
        }
    }
    let mut value = w.l1 * l1 / n;

    if w.ssim != 0.0 {
        let (s, g) = ssim_raw(render.width, render.height, &render.color, &gt_color.data, true)?;
        value += w.ssim * (1.0 - s);
        for (a, gi) in adjoint.color.iter_mut().zip(g.unwrap()) {
            *a -= w.ssim * gi;
        }
    }

    match masked_depth_l1(render, gt_depth, w.depth, &mut adjoint.depth) {
        Some(d) => value += w.depth * d,
        None => warnings.push("no valid depth pixels; depth term skipped".to_string()),
    }
    Ok(LossOutput {
        value,
        adjoint,
        warnings,
    })
}

/// `λ_vc·perceptual(color) + λ_vd·masked L1(depth) + λ_vs·CE(semantics)`
/// against a generated virtual view. The cross-entropy reads the rendered
/// class mass, with `1 − alpha` added to [`BACKGROUND_CLASS`].
pub fn loss_virtual(
    render: &RenderOutput,
    v_color: &PseudoImage,
    v_depth: &DepthMap,
    v_sem: &SemanticMap,
    w: &VirtualWeights,
    perceptual: &dyn PerceptualLoss,
) -> Result<LossOutput> {
    check_size(render, v_color.width, v_color.height)?;
    check_size(render, v_depth.width, v_depth.height)?;
    check_size(render, v_sem.width, v_sem.height)?;
    let k = render.num_classes;
    if let Some(&bad) = v_sem.labels.iter().find(|l| **l as usize >= k) {
        return Err(Error::LabelOutOfPalette {
            label: bad as u32,
            classes: k,
        });
    }
    let mut adjoint = RenderOutput::zeros(render.width, render.height, k);
    let mut warnings = Vec::new();
    let mut value = 0.0;

    if w.color != 0.0 {
        let (p, g) = perceptual.evaluate(render.width, render.height, &render.color, &v_color.data)?;
        value += w.color * p;
        for (a, gi) in adjoint.color.iter_mut().zip(g) {
            *a += w.color * gi;
        }
    }

    match masked_depth_l1(render, v_depth, w.depth, &mut adjoint.depth) {
        Some(d) => value += w.depth * d,
        None => warnings.push("virtual view has no valid depth; depth term skipped".to_string()),
    }

    let n = v_sem.labels.len() as f64;
    let mut ce = 0.0;
    for (i, &label) in v_sem.labels.iter().enumerate() {
        let label = label as usize;
        let mut p = render.sem[i * k + label];
        if label == BACKGROUND_CLASS {
            p += 1.0 - render.alpha[i];
        }
        if p > PROB_FLOOR {
            ce -= p.ln();
            let g = -w.sem / (p * n);
            adjoint.sem[i * k + label] += g;
            if label == BACKGROUND_CLASS {
                adjoint.alpha[i] -= g;
            }
        } else {
            ce -= PROB_FLOOR.ln();
        }
    }
    value += w.sem * ce / n;
    Ok(LossOutput {
        value,
        adjoint,
        warnings,
    })
}
