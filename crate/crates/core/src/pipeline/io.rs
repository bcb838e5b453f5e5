//! On-disk raster and point formats: RGB PNG, single-channel PFM depth,
//! 8-bit label PNG and packed little-endian LiDAR records.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use image::{GrayImage, RgbImage};
use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::modality::{DepthMap, PseudoImage, SemanticMap};

/// Bytes per LiDAR record: `f32 x, y, z`, `u8 r, g, b`, `i32 object_id`.
pub const LIDAR_RECORD_BYTES: usize = 19;

pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Rounds every channel to the nearest 8-bit level.
pub fn quantize_image(img: &PseudoImage) -> PseudoImage {
    PseudoImage {
        width: img.width,
        height: img.height,
        data: img.data.iter().map(|v| to_u8(*v) as f64 / 255.0).collect(),
    }
}

pub fn write_color_png(path: &Path, img: &PseudoImage) -> Result<()> {
    let bytes: Vec<u8> = img.data.iter().map(|v| to_u8(*v)).collect();
    let buf = RgbImage::from_raw(img.width as u32, img.height as u32, bytes).expect("sized by construction");
    ensure_parent(path)?;
    buf.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

pub fn read_color_png(path: &Path) -> Result<PseudoImage> {
    let img = image::open(path).map_err(|e| Error::format(path, e.to_string()))?.to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
    PseudoImage::new(w as usize, h as usize, data)
}

pub fn write_label_png(path: &Path, sem: &SemanticMap) -> Result<()> {
    let buf = GrayImage::from_raw(sem.width as u32, sem.height as u32, sem.labels.clone()).expect("sized by construction");
    ensure_parent(path)?;
    buf.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

pub fn read_label_png(path: &Path) -> Result<SemanticMap> {
    let img = image::open(path).map_err(|e| Error::format(path, e.to_string()))?;
    let gray = match img {
        image::DynamicImage::ImageLuma8(g) => g,
        _ => return Err(Error::format(path, "label maps must be 8-bit grayscale")),
    };
    let (w, h) = gray.dimensions();
    SemanticMap::new(w as usize, h as usize, gray.into_raw())
}

/// Grayscale little-endian PFM; rows are stored bottom to top.
pub fn write_pfm(path: &Path, depth: &DepthMap) -> Result<()> {
    let mut buf = format!("Pf\n{} {}\n-1.0\n", depth.width, depth.height).into_bytes();
    for y in (0..depth.height).rev() {
        for x in 0..depth.width {
            buf.extend_from_slice(&(depth.values[y * depth.width + x] as f32).to_le_bytes());
        }
    }
    write_bytes(path, &buf)
}

pub fn read_pfm(path: &Path) -> Result<DepthMap> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let line = |r: &mut BufReader<std::fs::File>| -> Result<String> {
        let mut s = String::new();
        r.read_line(&mut s).map_err(|e| Error::io(path, e))?;
        Ok(s.trim().to_string())
    };
    if line(&mut r)? != "Pf" {
        return Err(Error::format(path, "expected a grayscale PFM"));
    }
    let dims = line(&mut r)?;
    let mut it = dims.split_whitespace().map(str::parse::<usize>);
    let (w, h) = match (it.next(), it.next()) {
        (Some(Ok(w)), Some(Ok(h))) => (w, h),
        _ => return Err(Error::format(path, "bad PFM dimensions")),
    };
    let scale: f64 = line(&mut r)?.parse().map_err(|_| Error::format(path, "bad PFM scale"))?;
    let mut body = Vec::new();
    r.read_to_end(&mut body).map_err(|e| Error::io(path, e))?;
    if body.len() != 4 * w * h {
        return Err(Error::format(path, "PFM payload size mismatch"));
    }
    let mut values = vec![0.0; w * h];
    for (i, chunk) in body.chunks_exact(4).enumerate() {
        let b: [u8; 4] = chunk.try_into().unwrap();
        let v = if scale < 0.0 { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (row, x) = (i / w, i % w);
        values[(h - 1 - row) * w + x] = v as f64;
    }
    DepthMap::new(w, h, values).map_err(|e| Error::format(path, e.to_string()))
}

pub fn encode_records(cloud: &PointCloud) -> Vec<u8> {
    let mut buf = Vec::with_capacity(cloud.len() * LIDAR_RECORD_BYTES);
    for i in 0..cloud.len() {
        let p = cloud.positions[i];
        for v in [p.x, p.y, p.z] {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        buf.extend(cloud.colors[i].map(to_u8));
        buf.extend_from_slice(&cloud.object_ids[i].to_le_bytes());
    }
    buf
}

pub fn decode_records(bytes: &[u8], path: &Path) -> Result<PointCloud> {
    if !bytes.len().is_multiple_of(LIDAR_RECORD_BYTES) {
        return Err(Error::format(path, "record file size is not a multiple of 19 bytes"));
    }
    let n = bytes.len() / LIDAR_RECORD_BYTES;
    let mut cloud = PointCloud::with_capacity(n);
    for rec in bytes.chunks_exact(LIDAR_RECORD_BYTES) {
        let f = |o: usize| f32::from_le_bytes(rec[o..o + 4].try_into().unwrap()) as f64;
        let p = Vector3::new(f(0), f(4), f(8));
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::format(path, "non-finite point"));
        }
        let c = [rec[12], rec[13], rec[14]].map(|v| v as f64 / 255.0);
        let id = i32::from_le_bytes(rec[15..19].try_into().unwrap());
        cloud.push(p, c, id);
    }
    Ok(cloud)
}

/// Rounds positions to f32 and colors to 8 bits, matching the record format.
pub fn quantize_cloud(cloud: &PointCloud) -> PointCloud {
    PointCloud {
        positions: cloud.positions.iter().map(|p| p.map(|v| v as f32 as f64)).collect(),
        colors: cloud.colors.iter().map(|c| c.map(|v| to_u8(v) as f64 / 255.0)).collect(),
        object_ids: cloud.object_ids.clone(),
    }
}

pub fn write_records(path: &Path, cloud: &PointCloud) -> Result<()> {
    write_bytes(path, &encode_records(cloud))
}

pub fn read_records(path: &Path) -> Result<PointCloud> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_records(&bytes, path)
}

pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    Ok(())
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    ensure_parent(path)?;
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(bytes))
        .map_err(|e| Error::io(path, e))
}

/// Magic, `u32` header length, JSON header, payload.
pub(crate) fn write_framed(path: &Path, magic: &[u8; 8], header: &impl serde::Serialize, payload: &[u8]) -> Result<()> {
    let json = serde_json::to_vec(header)?;
    let mut buf = Vec::with_capacity(12 + json.len() + payload.len());
    buf.extend_from_slice(magic);
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    buf.extend_from_slice(payload);
    write_bytes(path, &buf)
}

pub(crate) fn read_framed<H: serde::de::DeserializeOwned>(path: &Path, magic: &[u8; 8]) -> Result<(H, Vec<u8>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[..8] != magic {
        return Err(Error::format(path, "unexpected file magic"));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = bytes.get(12..12 + hlen).ok_or_else(|| Error::format(path, "truncated header"))?;
    let header = serde_json::from_slice(body)?;
    Ok((header, bytes[12 + hlen..].to_vec()))
}
