//! RGB image samples and the VSLI container pairing an image with its
//! ground-truth voxels.
//!
//! VSLI layout: `"VSLI"`, version byte 1, u32 LE width, u32 LE height,
//! width·height·3 f32 LE intensities (row-major, RGB interleaved), one flag
//! byte (1 = a VSLV record follows), then the optional VSLV record.

use std::io::{Read, Write};
use std::path::Path;

use image::imageops::FilterType;
use image::RgbImage;

use super::{read_voxel, write_voxel, VoxelGrid};
use crate::error::{Error, Result};

pub const IMAGE_SIDE: usize = 100;
pub const VSLI_MAGIC: &[u8; 4] = b"VSLI";

#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample {
    /// `side × side × 3`, row-major, channel-interleaved, values in [0, 1].
    pub pixels: Vec<f32>,
    pub side: usize,
    pub paired_voxel: Option<VoxelGrid>,
    pub category: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropBox {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl ImageSample {
    pub fn new(side: usize, pixels: Vec<f32>, category: impl Into<String>) -> Result<Self> {
        if pixels.len() != side * side * 3 {
            return Err(Error::shape(format!(
                "{} intensities do not fill a {side}×{side}×3 image",
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Data(format!("pixel intensity {v} outside [0, 1]")));
        }
        Ok(ImageSample {
            pixels,
            side,
            paired_voxel: None,
            category: category.into(),
        })
    }

    pub fn with_voxel(mut self, grid: VoxelGrid) -> Self {
        self.paired_voxel = Some(grid);
        self
    }

    /// Channel-major `[3, side, side]` layout used by the image regressor.
    pub fn to_chw(&self) -> Vec<f32> {
        let n = self.side * self.side;
        let mut out = vec![0.0; 3 * n];
        for (i, px) in self.pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * n + i] = px[c];
            }
        }
        out
    }
}

/// Crops `raw` to `bbox`, scales the longest side to 100 pixels keeping the
/// aspect ratio, centers the result on a black 100×100 canvas and maps
/// intensities to [0, 1].
pub fn prepare_image(raw: &RgbImage, bbox: CropBox, category: &str) -> Result<ImageSample> {
    prepare_image_sized(raw, bbox, IMAGE_SIDE, category)
}

pub fn prepare_image_sized(
    raw: &RgbImage,
    bbox: CropBox,
    side: usize,
    category: &str,
) -> Result<ImageSample> {
    if bbox.width == 0 || bbox.height == 0 {
        return Err(Error::Geometry("empty crop box".into()));
    }
    if bbox.x + bbox.width > raw.width() || bbox.y + bbox.height > raw.height() {
        return Err(Error::Geometry(format!(
            "crop box {bbox:?} exceeds {}×{} image",
            raw.width(),
            raw.height()
        )));
    }
    let crop = image::imageops::crop_imm(raw, bbox.x, bbox.y, bbox.width, bbox.height).to_image();
    let long = bbox.width.max(bbox.height) as f64;
    let s = side as u32;
    let nw = ((bbox.width as f64 * side as f64 / long).round() as u32).clamp(1, s);
    let nh = ((bbox.height as f64 * side as f64 / long).round() as u32).clamp(1, s);
    let scaled = if (nw, nh) == (crop.width(), crop.height()) {
        crop
    } else {
        image::imageops::resize(&crop, nw, nh, FilterType::Triangle)
    };
    let left = (s - nw) / 2;
    let top = (s - nh) / 2;
    let mut pixels = vec![0.0f32; side * side * 3];
    for (x, y, p) in scaled.enumerate_pixels() {
        let o = (((y + top) * s + x + left) * 3) as usize;
        for c in 0..3 {
            pixels[o + c] = p[c] as f32 / 255.0;
        }
    }
    ImageSample::new(side, pixels, category)
}

pub fn write_image_sample<W: Write>(sample: &ImageSample, mut sink: W) -> Result<()> {
    sink.write_all(VSLI_MAGIC)?;
    sink.write_all(&[1])?;
    let side = sample.side as u32;
    sink.write_all(&side.to_le_bytes())?;
    sink.write_all(&side.to_le_bytes())?;
    let mut buf = Vec::with_capacity(sample.pixels.len() * 4);
    for v in &sample.pixels {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    sink.write_all(&buf)?;
    match &sample.paired_voxel {
        Some(g) => {
            sink.write_all(&[1])?;
            write_voxel(g, sink)
        }
        None => Ok(sink.write_all(&[0])?),
    }
}

pub fn read_image_sample<R: Read>(mut source: R, category: &str) -> Result<ImageSample> {
    let mut header = [0u8; 13];
    source
        .read_exact(&mut header)
        .map_err(|_| Error::Format("stream shorter than the VSLI header".into()))?;
    if &header[..4] != VSLI_MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &header[..4])));
    }
    if header[4] != 1 {
        return Err(Error::Format(format!("unsupported VSLI version {}", header[4])));
    }
    let w = u32::from_le_bytes(header[5..9].try_into().expect("4 bytes")) as usize;
    let h = u32::from_le_bytes(header[9..13].try_into().expect("4 bytes")) as usize;
    if w != h || w == 0 {
        return Err(Error::Format(format!("image must be square, got {w}×{h}")));
    }
    let mut raw = vec![0u8; w * h * 12];
    source
        .read_exact(&mut raw)
        .map_err(|_| Error::Format("VSLI pixel payload truncated".into()))?;
    let pixels = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    let mut flag = [0u8];
    source
        .read_exact(&mut flag)
        .map_err(|_| Error::Format("VSLI voxel flag missing".into()))?;
    let mut sample = ImageSample::new(w, pixels, category)?;
    match flag[0] {
        0 => {}
        1 => sample.paired_voxel = Some(read_voxel(source)?),
        f => return Err(Error::Format(format!("bad VSLI voxel flag {f}"))),
    }
    Ok(sample)
}

pub fn load_image_file(path: &Path, bbox: Option<CropBox>, category: &str) -> Result<ImageSample> {
    let raw = image::open(path)?.to_rgb8();
    let bbox = bbox.unwrap_or(CropBox {
        x: 0,
        y: 0,
        width: raw.width(),
        height: raw.height(),
    });
    prepare_image(&raw, bbox, category)
}
