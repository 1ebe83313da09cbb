//! Grayscale rasters and PNG helpers.

use std::io::Cursor;
use std::path::Path;

use image::{ExtendedColorType, ImageEncoder};

use crate::mask::MaskError;

/// 8-bit single-channel image, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, MaskError> {
        if pixels.len() != width as usize * height as usize {
            return Err(MaskError::DimensionMismatch(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: u8) {
        let w = self.width;
        self.pixels[(y * w + x) as usize] = v;
    }

    /// Decodes any supported image and converts it to 8-bit luma.
    pub fn decode(bytes: &[u8]) -> Result<Self, MaskError> {
        let img = image::load_from_memory(bytes)?.into_luma8();
        let (width, height) = img.dimensions();
        Ok(Self {
            width,
            height,
            pixels: img.into_raw(),
        })
    }

    pub fn open(path: &Path) -> Result<Self, MaskError> {
        Self::decode(&std::fs::read(path)?)
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>, MaskError> {
        encode_png_luma8(self.width, self.height, &self.pixels)
    }
}

pub fn encode_png_luma8(width: u32, height: u32, data: &[u8]) -> Result<Vec<u8>, MaskError> {
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(Cursor::new(&mut out)).write_image(
        data,
        width,
        height,
        ExtendedColorType::L8,
    )?;
    Ok(out)
}

/// 16-bit grayscale PNG, used for vote-count audit maps.
pub fn encode_png_luma16(width: u32, height: u32, data: &[u16]) -> Result<Vec<u8>, MaskError> {
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_ne_bytes()).collect();
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(Cursor::new(&mut out)).write_image(
        &bytes,
        width,
        height,
        ExtendedColorType::L16,
    )?;
    Ok(out)
}

pub fn decode_png_luma16(bytes: &[u8]) -> Result<(u32, u32, Vec<u16>), MaskError> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?.into_luma16();
    let (w, h) = img.dimensions();
    Ok((w, h, img.into_raw()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trips() {
        let img = GrayImage::new(3, 2, vec![0, 1, 2, 253, 254, 255]).unwrap();
        let back = GrayImage::decode(&img.to_png_bytes().unwrap()).unwrap();
        assert_eq!(back, img);

        let counts = vec![0u16, 1, 300, 65535];
        let png = encode_png_luma16(2, 2, &counts).unwrap();
        assert_eq!(decode_png_luma16(&png).unwrap(), (2, 2, counts));
    }
}
