//! Binary PGM (P5) / PPM (P6) images and conversion to int8 input tensors.

use std::path::Path;

use thiserror::Error;

use crate::model::TensorShape;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a binary PGM/PPM file")]
    Magic,
    #[error("malformed header: {0}")]
    Header(String),
    #[error("maxval {0} is not 8-bit")]
    MaxVal(u32),
    #[error("pixel data truncated: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },
    #[error("cannot map a {from}-channel image to {to} input channels")]
    Channels { from: usize, to: usize },
}

/// Interleaved 8-bit image, 1 (gray) or 3 (RGB) channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn parse(bytes: &[u8]) -> Result<Self, ImageError> {
        let channels = match bytes.get(..2) {
            Some(b"P5") => 1,
            Some(b"P6") => 3,
            _ => return Err(ImageError::Magic),
        };
        let mut pos = 2;
        let mut fields = [0u32; 3];
        for f in fields.iter_mut() {
            loop {
                match bytes.get(pos) {
                    Some(b'#') => {
                        while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                            pos += 1;
                        }
                    }
                    Some(b) if b.is_ascii_whitespace() => pos += 1,
                    Some(_) => break,
                    None => return Err(ImageError::Header("unexpected end of header".into())),
                }
            }
            let start = pos;
            while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
                pos += 1;
            }
            let text = std::str::from_utf8(&bytes[start..pos]).unwrap_or("");
            *f = text.parse().map_err(|_| ImageError::Header(format!("bad number at byte {start}")))?;
        }
        if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
            return Err(ImageError::Header("missing whitespace after maxval".into()));
        }
        pos += 1;
        let [width, height, maxval] = fields;
        if width == 0 || height == 0 {
            return Err(ImageError::Header("zero dimension".into()));
        }
        if maxval == 0 || maxval > 255 {
            return Err(ImageError::MaxVal(maxval));
        }
        let expected = width as usize * height as usize * channels;
        let data = &bytes[pos..];
        if data.len() < expected {
            return Err(ImageError::Truncated { expected, got: data.len() });
        }
        let pixels = data[..expected]
            .iter()
            .map(|&v| if maxval == 255 { v } else { ((v.min(maxval as u8) as u32 * 255 + maxval / 2) / maxval) as u8 })
            .collect();
        Ok(Self { width: width as usize, height: height as usize, channels, pixels })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ImageError> {
        Self::parse(&std::fs::read(path)?)
    }

    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    /// Nearest-neighbor resize to a `size`x`size` channel-major tensor,
    /// shifted to the signed range by -128. Gray images are replicated to
    /// every input channel.
    pub fn to_input(&self, size: usize, in_channels: usize) -> Result<Tensor<i8>, ImageError> {
        if self.channels != in_channels && self.channels != 1 {
            return Err(ImageError::Channels { from: self.channels, to: in_channels });
        }
        let shape = TensorShape::new(in_channels, size, size);
        let mut data = Vec::with_capacity(shape.len());
        for c in 0..in_channels {
            let src_c = if self.channels == 1 { 0 } else { c };
            for y in 0..size {
                let sy = y * self.height / size;
                for x in 0..size {
                    let sx = x * self.width / size;
                    let v = self.pixels[(sy * self.width + sx) * self.channels + src_c];
                    data.push((v as i16 - 128) as i8);
                }
            }
        }
        Ok(Tensor::from_vec(shape, data))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_with_comments() {
        let img = Image::parse(b"P5\n# hi\n2 1\n# x\n255\n\x00\xff").unwrap();
        assert_eq!((img.width, img.height, img.channels), (2, 1, 1));
        assert_eq!(img.pixels, vec![0, 255]);
        let t = img.to_input(2, 3).unwrap();
        assert_eq!(t.data, vec![-128, 127, -128, 127, -128, 127, -128, 127, -128, 127, -128, 127]);
    }

    #[test]
    fn ppm_roundtrip_and_resize() {
        let img = Image { width: 2, height: 2, channels: 3, pixels: (0..12).map(|v| v * 20).collect() };
        let back = Image::parse(&img.encode()).unwrap();
        assert_eq!(back, img);
        let t = back.to_input(4, 3).unwrap();
        assert_eq!(t.shape, TensorShape::new(3, 4, 4));
        assert_eq!(t.at(0, 0, 0), -128);
        assert_eq!(t.at(0, 3, 3), (9 * 20 - 128) as i8);
        assert_eq!(t.at(2, 0, 1), (2 * 20 - 128) as i8);
        assert!(back.to_input(4, 1).is_err());
    }

    #[test]
    fn rejects_bad_files() {
        assert!(matches!(Image::parse(b"P2\n1 1\n255\n0"), Err(ImageError::Magic)));
        assert!(matches!(Image::parse(b"P5\n1 1\n65535\n00"), Err(ImageError::MaxVal(65535))));
        assert!(matches!(Image::parse(b"P6\n2 2\n255\n\x00"), Err(ImageError::Truncated { .. })));
        assert!(Image::parse(b"P5\n1").is_err());
    }

    #[test]
    fn rescales_small_maxval() {
        let img = Image::parse(b"P5 2 1 15 \x00\x0f").unwrap();
        assert_eq!(img.pixels, vec![0, 255]);
    }
}
