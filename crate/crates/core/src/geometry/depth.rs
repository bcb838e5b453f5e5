//! Depth completion stand-in and least-squares alignment against LiDAR.

use super::SparseMap;
use crate::error::{Error, Result};
use crate::modality::DepthMap;

const MEDIAN_RADIUS: usize = 2;

/// Fills every pixel with the value of its Euclidean-nearest valid pixel.
///
/// Exact two-pass distance transform (column scans followed by a lower
/// envelope of parabolas per row) that tracks the winning seed.
pub fn nearest_fill(sparse: &SparseMap) -> Result<DepthMap> {
    let (w, h) = (sparse.width, sparse.height);
    if sparse.valid_count() == 0 {
        return Err(Error::EmptyDepth);
    }
    // Column pass: nearest seed row per (x, y), squared vertical distance.
    let mut col_row = vec![usize::MAX; w * h];
    for x in 0..w {
        let mut last = None;
        for y in 0..h {
            if sparse.is_valid(y * w + x) {
                last = Some(y);
            }
            if let Some(s) = last {
                col_row[y * w + x] = s;
            }
        }
        let mut next = None;
        for y in (0..h).rev() {
            if sparse.is_valid(y * w + x) {
                next = Some(y);
            }
            if let Some(s) = next {
                let cur = col_row[y * w + x];
                if cur == usize::MAX || s - y < y - cur {
                    col_row[y * w + x] = s;
                }
            }
        }
    }

    let mut out = vec![0.0; w * h];
    let mut verts: Vec<usize> = Vec::with_capacity(w);
    let mut bounds: Vec<f64> = Vec::with_capacity(w + 1);
    for y in 0..h {
        let g = |x: usize| -> Option<f64> {
            let r = col_row[y * w + x];
            (r != usize::MAX).then(|| {
                let d = r as f64 - y as f64;
                d * d
            })
        };
        verts.clear();
        bounds.clear();
        for q in 0..w {
            let Some(gq) = g(q) else { continue };
            loop {
                let Some(&p) = verts.last() else {
                    verts.push(q);
                    bounds.push(f64::NEG_INFINITY);
                    break;
                };
                let gp = g(p).expect("envelope holds seeded columns only");
                let (qf, pf) = (q as f64, p as f64);
                let s = ((gq + qf * qf) - (gp + pf * pf)) / (2.0 * (qf - pf));
                if s <= *bounds.last().unwrap() {
                    verts.pop();
                    bounds.pop();
                } else {
                    verts.push(q);
                    bounds.push(s);
                    break;
                }
            }
        }
        let mut k = 0;
        for x in 0..w {
            while k + 1 < verts.len() && bounds[k + 1] < x as f64 {
                k += 1;
            }
            let sx = verts[k];
            let sy = col_row[y * w + sx];
            out[y * w + x] = sparse.depth[sy * w + sx];
        }
    }
    DepthMap::new(w, h, out)
}

/// Nearest-valid fill followed by one 5×5 median pass over the pixels that
/// were empty in the input. Valid input pixels are never modified.
pub fn densify_depth(sparse: &SparseMap) -> Result<DepthMap> {
    let filled = nearest_fill(sparse)?;
    let (w, h) = (sparse.width, sparse.height);
    let mut out = filled.values.clone();
    let mut window = Vec::with_capacity((2 * MEDIAN_RADIUS + 1).pow(2));
    for y in 0..h {
        for x in 0..w {
            if sparse.is_valid(y * w + x) {
                continue;
            }
            window.clear();
            for yy in y.saturating_sub(MEDIAN_RADIUS)..(y + MEDIAN_RADIUS + 1).min(h) {
                for xx in x.saturating_sub(MEDIAN_RADIUS)..(x + MEDIAN_RADIUS + 1).min(w) {
                    window.push(filled.values[yy * w + xx]);
                }
            }
            window.sort_by(f64::total_cmp);
            // Lower median when the clipped window has an even count.
            out[y * w + x] = window[(window.len() - 1) / 2];
        }
    }
    DepthMap::new(w, h, out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthAlignment {
    pub scale: f64,
    pub shift: f64,
    pub aligned: DepthMap,
}

/// Least-squares `(scale, shift)` so that `scale·dense + shift` best matches
/// the valid LiDAR pixels; the aligned map is clamped at zero.
pub fn align_depth_lsq(dense: &DepthMap, lidar: &SparseMap) -> Result<DepthAlignment> {
    if dense.width != lidar.width || dense.height != lidar.height {
        return Err(Error::shape(
            format!("{}x{}", dense.width, dense.height),
            format!("{}x{}", lidar.width, lidar.height),
        ));
    }
    let pairs: Vec<(f64, f64)> = (0..dense.values.len())
        .filter(|&i| lidar.is_valid(i))
        .map(|i| (dense.values[i], lidar.depth[i]))
        .collect();
    if pairs.len() < 2 {
        return Err(Error::DegenerateAlignment(format!("{} valid LiDAR pixels", pairs.len())));
    }
    let n = pairs.len() as f64;
    let mean_x = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (x, y) in &pairs {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    if sxx <= f64::EPSILON * n * mean_x.abs().max(1.0).powi(2) {
        return Err(Error::DegenerateAlignment("dense depth is constant at LiDAR pixels".into()));
    }
    let scale = sxy / sxx;
    let shift = mean_y - scale * mean_x;
    let values = dense.values.iter().map(|d| (scale * d + shift).max(0.0)).collect();
    Ok(DepthAlignment {
        scale,
        shift,
        aligned: DepthMap::new(dense.width, dense.height, values)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sparse_with(w: usize, h: usize, seeds: &[(usize, usize, f64)]) -> SparseMap {
        let mut m = SparseMap::empty(w, h);
        for &(x, y, d) in seeds {
            m.depth[y * w + x] = d;
        }
        m
    }

    #[test]
    fn single_seed_fills_constant() {
        let m = sparse_with(9, 7, &[(4, 2, 7.0)]);
        let d = densify_depth(&m).unwrap();
        assert!(d.values.iter().all(|v| *v == 7.0));
    }

    #[test]
    fn full_input_is_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = SparseMap::empty(6, 5);
        for v in &mut m.depth {
            *v = rng.gen_range(1.0..9.0);
        }
        assert_eq!(densify_depth(&m).unwrap().values, m.depth);
    }

    #[test]
    fn empty_input_errors() {
        assert!(matches!(densify_depth(&SparseMap::empty(3, 3)), Err(Error::EmptyDepth)));
    }

    #[test]
    fn nearest_fill_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..20 {
            let (w, h) = (rng.gen_range(3..40), rng.gen_range(3..30));
            let n_seeds = if trial < 5 { 2 } else { rng.gen_range(1..25) };
            let seeds: Vec<(usize, usize, f64)> = (0..n_seeds)
                .map(|_| (rng.gen_range(0..w), rng.gen_range(0..h), rng.gen_range(1.0..50.0)))
                .collect();
            let m = sparse_with(w, h, &seeds);
            let filled = nearest_fill(&m).unwrap();
            let valid: Vec<(usize, usize)> = (0..w * h).filter(|&i| m.is_valid(i)).map(|i| (i % w, i / w)).collect();
            for y in 0..h {
                for x in 0..w {
                    let d2 = |s: &(usize, usize)| {
                        let dx = s.0 as f64 - x as f64;
                        let dy = s.1 as f64 - y as f64;
                        dx * dx + dy * dy
                    };
                    let best = valid.iter().map(d2).fold(f64::INFINITY, f64::min);
                    // Any seed at the minimal distance is acceptable on ties.
                    let got = filled.values[y * w + x];
                    let ok = valid.iter().any(|s| d2(s) == best && m.depth[s.1 * w + s.0] == got);
                    assert!(ok, "pixel ({x},{y}) trial {trial}");
                }
            }
        }
    }

    #[test]
    fn planted_affine_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dense = DepthMap::new(10, 10, (0..100).map(|_| rng.gen_range(1.0..30.0)).collect()).unwrap();
        let mut lidar = SparseMap::empty(10, 10);
        for i in (0..100).step_by(3) {
            lidar.depth[i] = 2.0 * dense.values[i] + 1.0;
        }
        let a = align_depth_lsq(&dense, &lidar).unwrap();
        assert!((a.scale - 2.0).abs() < 1e-9 && (a.shift - 1.0).abs() < 1e-9);
        for i in (0..100).step_by(3) {
            assert!((a.aligned.values[i] - lidar.depth[i]).abs() < 1e-9);
        }
        for i in (0..100).step_by(3) {
            lidar.depth[i] = dense.values[i];
        }
        let id = align_depth_lsq(&dense, &lidar).unwrap();
        assert!((id.scale - 1.0).abs() < 1e-12 && id.shift.abs() < 1e-9);
    }

    #[test]
    fn degenerate_alignment() {
        let dense = DepthMap::new(4, 1, vec![5.0; 4]).unwrap();
        let lidar = sparse_with(4, 1, &[(0, 0, 1.0), (2, 0, 3.0)]);
        assert!(matches!(align_depth_lsq(&dense, &lidar), Err(Error::DegenerateAlignment(_))));
        let one = sparse_with(4, 1, &[(0, 0, 1.0)]);
        let dense = DepthMap::new(4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(matches!(align_depth_lsq(&dense, &one), Err(Error::DegenerateAlignment(_))));
    }

    #[test]
    fn lsq_residual_is_minimal_on_perturbation_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let dense = DepthMap::new(12, 12, (0..144).map(|_| rng.gen_range(2.0..40.0)).collect()).unwrap();
        let mut lidar = SparseMap::empty(12, 12);
        for i in (0..144).step_by(2) {
            lidar.depth[i] = 1.3 * dense.values[i] - 0.7 + rng.gen_range(-1.0..1.0);
        }
        let fit = align_depth_lsq(&dense, &lidar).unwrap();
        let resid = |a: f64, b: f64| -> f64 {
            (0..144)
                .filter(|&i| lidar.is_valid(i))
                .map(|i| (a * dense.values[i] + b - lidar.depth[i]).powi(2))
                .sum()
        };
        let best = resid(fit.scale, fit.shift);
        for i in 0..10 {
            for j in 0..10 {
                let da = (i as f64 - 4.5) * 0.01;
                let db = (j as f64 - 4.5) * 0.1;
                assert!(best <= resid(fit.scale + da, fit.shift + db) + 1e-9);
            }
        }
    }
}
