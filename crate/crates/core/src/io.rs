//! On-disk rasters: PFM float maps, 16-bit PGM label images and JSON
//! sidecars. Every write goes to a temporary file that is renamed into
//! place.
//!
//! PFM stores 32-bit floats, so values are rounded to `f32` on write.
//! Reading a file and writing it back reproduces it byte for byte.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{CameraIntrinsics, DepthImage, HeatMap, SegmentationMask};
use crate::scene::shapes::Pose;

pub const FORMAT_VERSION: u32 = 1;

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Little-endian PFM (`Pf`, scale -1.0), rows stored bottom to top.
pub fn encode_pfm(width: usize, height: usize, values: &[f64]) -> Result<Vec<u8>> {
    if values.len() != width * height {
        return Err(Error::DimensionMismatch(format!("{} values for {width}x{height}", values.len())));
    }
    let mut out = format!("Pf\n{width} {height}\n-1.0\n").into_bytes();
    out.reserve(values.len() * 4);
    for row in (0..height).rev() {
        for v in &values[row * width..(row + 1) * width] {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

/// Reads the next whitespace-delimited header token, skipping `#`
/// comments. Returns the token and the offset after it.
fn header_token(bytes: &[u8], mut at: usize) -> Result<(&str, usize)> {
    loop {
        while at < bytes.len() && bytes[at].is_ascii_whitespace() {
            at += 1;
        }
        if at < bytes.len() && bytes[at] == b'#' {
            while at < bytes.len() && bytes[at] != b'\n' {
                at += 1;
            }
            continue;
        }
        break;
    }
    let start = at;
    while at < bytes.len() && !bytes[at].is_ascii_whitespace() {
        at += 1;
    }
    if start == at {
        return Err(Error::Format("truncated header".into()));
    }
    let tok = std::str::from_utf8(&bytes[start..at]).map_err(|_| Error::Format("non-ASCII header".into()))?;
    Ok((tok, at))
}

fn header_number<T: std::str::FromStr>(bytes: &[u8], at: usize, what: &str) -> Result<(T, usize)> {
    let (tok, at) = header_token(bytes, at)?;
    let v = tok.parse().map_err(|_| Error::Format(format!("bad {what}: {tok:?}")))?;
    Ok((v, at))
}

/// Parses a single-channel PFM of either endianness.
pub fn decode_pfm(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    let (magic, at) = header_token(bytes, 0)?;
    if magic != "Pf" {
        return Err(Error::Format(format!("expected a grayscale PFM (Pf), found {magic:?}")));
    }
    let (width, at): (usize, _) = header_number(bytes, at, "width")?;
    let (height, at): (usize, _) = header_number(bytes, at, "height")?;
    let (scale, at): (f64, _) = header_number(bytes, at, "scale")?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::Format(format!("bad scale {scale}")));
    }
    // Exactly one whitespace byte separates the header from the data.
    let data = &bytes[at + 1..];
    let n = width * height;
    if data.len() != n * 4 {
        return Err(Error::Format(format!("expected {} data bytes, found {}", n * 4, data.len())));
    }
    let mut values = vec![0.0; n];
    for (k, chunk) in data.chunks_exact(4).enumerate() {
        let b: [u8; 4] = chunk.try_into().unwrap();
        let v = if scale < 0.0 { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (row, col) = (height - 1 - k / width, k % width);
        values[row * width + col] = v as f64;
    }
    Ok((width, height, values))
}

/// Binary PGM with maxval 65535, big-endian samples, rows top to bottom.
pub fn encode_pgm16(width: usize, height: usize, values: &[u16]) -> Result<Vec<u8>> {
    if values.len() != width * height {
        return Err(Error::DimensionMismatch(format!("{} values for {width}x{height}", values.len())));
    }
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for v in values {
        out.extend_from_slice(&v.to_be_bytes());
    }
    Ok(out)
}

/// Parses a binary PGM with 8- or 16-bit samples.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u16>)> {
    let (magic, at) = header_token(bytes, 0)?;
    if magic != "P5" {
        return Err(Error::Format(format!("expected a binary PGM (P5), found {magic:?}")));
    }
    let (width, at): (usize, _) = header_number(bytes, at, "width")?;
    let (height, at): (usize, _) = header_number(bytes, at, "height")?;
    let (maxval, at): (u32, _) = header_number(bytes, at, "maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("bad maxval {maxval}")));
    }
    let data = &bytes[at + 1..];
    let n = width * height;
    let wide = maxval > 255;
    let expect = if wide { 2 * n } else { n };
    if data.len() != expect {
        return Err(Error::Format(format!("expected {expect} data bytes, found {}", data.len())));
    }
    let values = if wide {
        data.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    } else {
        data.iter().map(|&b| b as u16).collect()
    };
    Ok((width, height, values))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RasterKind {
    Depth,
    Segmentation,
    Quality,
    Reachability,
    Prediction,
}

/// Metadata stored next to every raster as `<stem>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub version: u32,
    pub kind: RasterKind,
    pub format: String,
    pub width: usize,
    pub height: usize,
    pub units: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsics: Option<CameraIntrinsics>,
    /// Optical frame to world.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera_pose: Option<Pose>,
}

pub fn sidecar_path(raster: &Path) -> PathBuf {
    raster.with_extension("json")
}

fn write_sidecar(raster: &Path, sidecar: &Sidecar) -> Result<()> {
    let mut text = serde_json::to_string_pretty(sidecar)?;
    text.push('\n');
    atomic_write(&sidecar_path(raster), text.as_bytes())
}

pub fn read_sidecar(raster: &Path) -> Result<Sidecar> {
    let p = sidecar_path(raster);
    let s = fs::read_to_string(&p)?;
    let car: Sidecar = serde_json::from_str(&s)?;
    if car.version != FORMAT_VERSION {
        return Err(Error::Format(format!("{}: unsupported version {}", p.display(), car.version)));
    }
    Ok(car)
}

fn check_dims(path: &Path, car: &Sidecar, w: usize, h: usize) -> Result<()> {
    if car.width != w || car.height != h {
        return Err(Error::DimensionMismatch(format!(
            "{}: raster is {w}x{h} but its sidecar says {}x{}",
            path.display(),
            car.width,
            car.height
        )));
    }
    Ok(())
}

/// Depth in meters as PFM, with intrinsics and the optional camera pose in
/// the sidecar.
pub fn save_depth(path: &Path, depth: &DepthImage, camera_pose: Option<&Pose>) -> Result<()> {
    atomic_write(path, &encode_pfm(depth.width, depth.height, &depth.data)?)?;
    write_sidecar(
        path,
        &Sidecar {
            version: FORMAT_VERSION,
            kind: RasterKind::Depth,
            format: "pfm".into(),
            width: depth.width,
            height: depth.height,
            units: "m".into(),
            intrinsics: Some(depth.intrinsics),
            camera_pose: camera_pose.cloned(),
        },
    )
}

pub fn load_depth(path: &Path) -> Result<(DepthImage, Option<Pose>)> {
    let car = read_sidecar(path)?;
    let (w, h, data) = decode_pfm(&fs::read(path)?)?;
    check_dims(path, &car, w, h)?;
    let k = car
        .intrinsics
        .ok_or_else(|| Error::Format(format!("{}: depth sidecar lacks intrinsics", path.display())))?;
    Ok((DepthImage::new(k, data)?, car.camera_pose))
}

pub fn save_heatmap(path: &Path, map: &HeatMap, kind: RasterKind) -> Result<()> {
    atomic_write(path, &encode_pfm(map.width, map.height, &map.values)?)?;
    write_sidecar(
        path,
        &Sidecar {
            version: FORMAT_VERSION,
            kind,
            format: "pfm".into(),
            width: map.width,
            height: map.height,
            units: "score".into(),
            intrinsics: None,
            camera_pose: None,
        },
    )
}

/// Loads a heatmap. The sidecar is optional here so that externally
/// produced predictions can be evaluated.
pub fn load_heatmap(path: &Path) -> Result<HeatMap> {
    let (w, h, values) = decode_pfm(&fs::read(path)?)?;
    if sidecar_path(path).exists() {
        check_dims(path, &read_sidecar(path)?, w, h)?;
    }
    HeatMap::new(w, h, values)
}

pub fn save_segmentation(path: &Path, seg: &SegmentationMask) -> Result<()> {
    atomic_write(path, &encode_pgm16(seg.width, seg.height, &seg.labels)?)?;
    write_sidecar(
        path,
        &Sidecar {
            version: FORMAT_VERSION,
            kind: RasterKind::Segmentation,
            format: "pgm16".into(),
            width: seg.width,
            height: seg.height,
            units: "label".into(),
            intrinsics: None,
            camera_pose: None,
        },
    )
}

pub fn load_segmentation(path: &Path) -> Result<SegmentationMask> {
    let (w, h, labels) = decode_pgm(&fs::read(path)?)?;
    if sidecar_path(path).exists() {
        check_dims(path, &read_sidecar(path)?, w, h)?;
    }
    SegmentationMask::new(w, h, labels)
}

/// Pretty JSON with a trailing newline, written atomically.
pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}
