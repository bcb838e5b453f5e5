//! Image, depth and label metrics over paired view sets.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bundle::{View, ViewSet};
use crate::error::{Error, Result};
use crate::modality::{DepthMap, PseudoImage, SemanticMap};
use crate::splat::ssim;

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

/// `10·log10(1 / MSE)` over all channels, capped at [`PSNR_CAP`].
pub fn psnr(a: &PseudoImage, b: &PseudoImage) -> Result<f64> {
    a.same_size(b)?;
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Mean absolute error over pixels with positive ground-truth depth.
pub fn depth_mae(pred: &DepthMap, gt: &DepthMap) -> Result<Option<f64>> {
    if (pred.width, pred.height) != (gt.width, gt.height) {
        return Err(Error::shape(
            format!("{}x{}", gt.width, gt.height),
            format!("{}x{}", pred.width, pred.height),
        ));
    }
    let (sum, n) = pred
        .values
        .iter()
        .zip(&gt.values)
        .filter(|(_, g)| **g > 0.0)
        .fold((0.0, 0usize), |(s, n), (p, g)| (s + (p - g).abs(), n + 1));
    Ok((n > 0).then(|| sum / n as f64))
}

/// Pixel accuracy and mean IoU over the classes present in either map.
pub fn label_scores(pred: &SemanticMap, gt: &SemanticMap, num_classes: usize) -> Result<(f64, f64)> {
    if (pred.width, pred.height) != (gt.width, gt.height) {
        return Err(Error::shape(
            format!("{}x{}", gt.width, gt.height),
            format!("{}x{}", pred.width, pred.height),
        ));
    }
    if let Some(&l) = pred.labels.iter().chain(&gt.labels).find(|l| **l as usize >= num_classes) {
        return Err(Error::LabelOutOfPalette {
            label: l as u32,
            classes: num_classes,
        });
    }
    let mut inter = vec![0usize; num_classes];
    let mut union = vec![0usize; num_classes];
    let mut correct = 0;
    for (p, g) in pred.labels.iter().zip(&gt.labels) {
        let (p, g) = (*p as usize, *g as usize);
        if p == g {
            correct += 1;
            inter[p] += 1;
            union[p] += 1;
        } else {
            union[p] += 1;
            union[g] += 1;
        }
    }
    let present: Vec<f64> = (0..num_classes)
        .filter(|k| union[*k] > 0)
        .map(|k| inter[k] as f64 / union[k] as f64)
        .collect();
    let accuracy = correct as f64 / pred.labels.len().max(1) as f64;
    let miou = if present.is_empty() {
        1.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    Ok((accuracy, miou))
}

/// Scores of one view; a metric is absent when either side lacks the modality.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub depth_mae: Option<f64>,
    pub sem_accuracy: Option<f64>,
    pub miou: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub views: Vec<ViewMetrics>,
    pub mean: ViewMetrics,
}

fn view_metrics(pred: &View, gt: &View, num_classes: usize) -> Result<ViewMetrics> {
    let mut m = ViewMetrics::default();
    if let (Some(p), Some(g)) = (&pred.color, &gt.color) {
        m.psnr = Some(psnr(p, g)?);
        m.ssim = Some(ssim(p, g)?);
    }
    if let (Some(p), Some(g)) = (&pred.depth, &gt.depth) {
        m.depth_mae = depth_mae(p, g)?;
    }
    if let (Some(p), Some(g)) = (&pred.semantic, &gt.semantic) {
        let (acc, miou) = label_scores(p, g, num_classes)?;
        m.sem_accuracy = Some(acc);
        m.miou = Some(miou);
    }
    Ok(m)
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Scores views pairwise, in order.
pub fn eval_metrics(pred: &ViewSet, gt: &ViewSet) -> Result<MetricsReport> {
    if pred.views.len() != gt.views.len() {
        return Err(Error::shape(
            format!("{} views", gt.views.len()),
            format!("{} views", pred.views.len()),
        ));
    }
    let num_classes = gt.palette.len();
    let views = pred
        .views
        .par_iter()
        .zip(&gt.views)
        .map(|(p, g)| view_metrics(p, g, num_classes))
        .collect::<Result<Vec<_>>>()?;
    let mean = ViewMetrics {
        psnr: mean_of(views.iter().map(|v| v.psnr)),
        ssim: mean_of(views.iter().map(|v| v.ssim)),
        depth_mae: mean_of(views.iter().map(|v| v.depth_mae)),
        sem_accuracy: mean_of(views.iter().map(|v| v.sem_accuracy)),
        miou: mean_of(views.iter().map(|v| v.miou)),
    };
    Ok(MetricsReport { views, mean })
}
