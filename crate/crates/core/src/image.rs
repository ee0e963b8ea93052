//! 8-bit RGB images and the binary PPM (P6) codec used for datasets and
//! pair sets. HWC byte order in memory; models consume CHW tensors via
//! [`crate::verify::preprocess`].

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    pub height: usize,
    pub width: usize,
    /// Interleaved RGB rows, `height * width * 3` bytes.
    pub data: Vec<u8>,
}

impl RawImage {
    pub fn new(height: usize, width: usize) -> RawImage {
        RawImage {
            height,
            width,
            data: vec![0; height * width * 3],
        }
    }

    pub fn from_data(height: usize, width: usize, data: Vec<u8>) -> Result<RawImage> {
        if data.len() != height * width * 3 {
            return Err(Error::Image(format!(
                "{} bytes for {}x{} RGB image (need {})",
                data.len(),
                width,
                height,
                height * width * 3
            )));
        }
        Ok(RawImage { height, width, data })
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize, ch: usize) -> u8 {
        self.data[(y * self.width + x) * 3 + ch]
    }

    #[inline]
    pub fn pixel_mut(&mut self, y: usize, x: usize, ch: usize) -> &mut u8 {
        &mut self.data[(y * self.width + x) * 3 + ch]
    }

    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::with_capacity(self.data.len() + 32);
        write!(buf, "P6\n{} {}\n255\n", self.width, self.height)?;
        buf.extend_from_slice(&self.data);
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn read_ppm(path: impl AsRef<Path>) -> Result<RawImage> {
        let path = path.as_ref();
        let data = std::fs::read(path)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
        parse_ppm(&data).map_err(|e| Error::Image(format!("{}: {e}", path.display())))
    }
}

fn parse_ppm(data: &[u8]) -> std::result::Result<RawImage, String> {
    let mut pos = 0usize;
    let mut token = |data: &[u8]| -> std::result::Result<String, String> {
        // Skip whitespace and '#' comments between header tokens.
        loop {
            while pos < data.len() && data[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < data.len() && data[pos] == b'#' {
                while pos < data.len() && data[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        Ok(String::from_utf8_lossy(&data[start..pos]).into_owned())
    };

    if token(data)? != "P6" {
        return Err("not a binary PPM (P6)".into());
    }
    let width: usize = token(data)?.parse().map_err(|_| "bad width")?;
    let height: usize = token(data)?.parse().map_err(|_| "bad height")?;
    let maxval: usize = token(data)?.parse().map_err(|_| "bad maxval")?;
    if maxval != 255 {
        return Err(format!("unsupported maxval {maxval}"));
    }
    // Exactly one whitespace byte separates the header from the pixels.
    pos += 1;
    let need = width * height * 3;
    if data.len() < pos + need {
        return Err(format!("pixel data truncated: {} of {need} bytes", data.len().saturating_sub(pos)));
    }
    RawImage::from_data(height, width, data[pos..pos + need].to_vec()).map_err(|e| e.to_string())
}
