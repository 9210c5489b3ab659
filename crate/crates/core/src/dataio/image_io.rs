use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma};

use super::{GrayImage, Mask};
use crate::error::{Error, Result};

fn open(path: &Path) -> Result<DynamicImage> {
    if !path.exists() {
        return Err(Error::Ingest { path: path.to_path_buf(), reason: "file not found".into() });
    }
    image::open(path).map_err(|e| Error::Ingest { path: path.to_path_buf(), reason: e.to_string() })
}

/// Reads an 8- or 16-bit grayscale PNG keeping the stored integer values.
pub fn read_gray_png(path: &Path) -> Result<GrayImage> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<u16> = match img {
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(u16::from).collect(),
        DynamicImage::ImageLuma16(b) => b.into_raw(),
        other => {
            return Err(Error::Ingest { path: path.to_path_buf(), reason: format!("expected grayscale PNG, found {:?}", other.color()) })
        }
    };
    GrayImage::new(h, w, data)
}

pub fn read_mask_png(path: &Path) -> Result<Mask> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.to_luma8().into_raw().into_iter().map(|v| u8::from(v != 0)).collect();
    Mask::new(h, w, data)
}

/// Writes 8-bit when every value fits, 16-bit otherwise.
pub fn write_gray_png(path: &Path, img: &GrayImage) -> Result<()> {
    let (w, h) = (img.w as u32, img.h as u32);
    if img.data.iter().all(|&v| v <= 255) {
        let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
            ImageBuffer::from_raw(w, h, img.data.iter().map(|&v| v as u8).collect()).expect("buffer size");
        buf.save(path)?;
    } else {
        let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(w, h, img.data.clone()).expect("buffer size");
        buf.save(path)?;
    }
    Ok(())
}

pub fn write_mask_png(path: &Path, mask: &Mask) -> Result<()> {
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(mask.w as u32, mask.h as u32, mask.data.iter().map(|&v| if v != 0 { 255 } else { 0 }).collect())
            .expect("buffer size");
    buf.save(path)?;
    Ok(())
}
