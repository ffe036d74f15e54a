//! 16-bit PNG map I/O and JSON sidecars.

use std::fs;
use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::material::{decode_normals, encode_normals, ImageGrid, MapStack, NormalMap};

pub const NORMALS_FILE: &str = "normals.png";
pub const SPECULAR_FILE: &str = "specular.png";
pub const ROUGHNESS_FILE: &str = "roughness.png";
pub const SCAN_FILE: &str = "scan.png";
pub const META_FILE: &str = "meta.json";

/// Per-material JSON sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialMeta {
    pub name: String,
    pub family: String,
    pub ppi: f64,
    pub width: usize,
    pub height: usize,
}

#[inline]
pub fn quantize16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

#[inline]
pub fn dequantize16(q: u16) -> f64 {
    q as f64 / 65535.0
}

/// Writes a 1- or 3-channel image as a 16-bit PNG. Values are clamped to [0, 1].
pub fn write_png16(path: &Path, img: &ImageGrid) -> Result<()> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let raw: Vec<u16> = img.data().iter().map(|&v| quantize16(v)).collect();
    let res = match img.channels() {
        1 => ImageBuffer::<Luma<u16>, _>::from_raw(w, h, raw).map(|b| b.save(path)),
        _ => ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, raw).map(|b| b.save(path)),
    };
    match res {
        Some(r) => r.map_err(|source| Error::Image { path: path.to_path_buf(), source }),
        None => Err(Error::DimensionMismatch(format!("buffer for {}", path.display()))),
    }
}

/// Reads a PNG as linear values in [0, 1]. Gray images stay single-channel,
/// everything else is converted to RGB.
pub fn read_png16(path: &Path, ppi: f64) -> Result<ImageGrid> {
    let dynimg = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let is_gray = matches!(
        dynimg.color(),
        image::ColorType::L8 | image::ColorType::L16 | image::ColorType::La8 | image::ColorType::La16
    );
    if is_gray {
        let buf = dynimg.into_luma16();
        ImageGrid::new(w, h, 1, buf.into_raw().into_iter().map(dequantize16).collect(), ppi)
    } else {
        let buf = dynimg.into_rgb16();
        ImageGrid::new(w, h, 3, buf.into_raw().into_iter().map(dequantize16).collect(), ppi)
    }
}

pub fn write_normals_png(path: &Path, n: &NormalMap) -> Result<()> {
    write_png16(path, &encode_normals(n, 1.0)?)
}

pub fn read_normals_png(path: &Path) -> Result<NormalMap> {
    let img = read_png16(path, 1.0)?;
    decode_normals(&img)
}

/// Writes `normals.png`, `specular.png` and `roughness.png` into `dir`.
pub fn write_stack(dir: &Path, m: &MapStack) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_normals_png(&dir.join(NORMALS_FILE), &m.normals)?;
    write_png16(&dir.join(SPECULAR_FILE), &m.specular)?;
    write_png16(&dir.join(ROUGHNESS_FILE), &m.roughness)
}

pub fn read_stack(dir: &Path, ppi: f64) -> Result<MapStack> {
    let normals = read_normals_png(&dir.join(NORMALS_FILE))?;
    let specular = read_png16(&dir.join(SPECULAR_FILE), ppi)?.luminance();
    let roughness = read_png16(&dir.join(ROUGHNESS_FILE), ppi)?.luminance();
    MapStack::new(normals, specular, roughness)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value)?;
    fs::write(path, s + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
}
