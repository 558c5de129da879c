//! Frame buffers and their on-disk formats.
//!
//! * [`ColorImage`]: RGB8, binary PPM (`P6`).
//! * [`DepthImage`]: f32 millimetres, `+inf` = empty; raw little-endian raster
//!   preceded by an 8-byte header (`width: u32`, `height: u32`, little-endian).
//! * [`Mask`]: boolean per pixel, binary PGM (`P5`, 0 / 255).

use std::io::{self, Read, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("malformed raster: {0}")]
    Format(String),
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    Size(u32, u32, u32, u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColorImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl ColorImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self::filled(width, height, [0, 0, 0])
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let n = width as usize * height as usize;
        let mut data = Vec::with_capacity(n * 3);
        for _ in 0..n {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn index(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let i = self.index(x, y);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn put(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = self.index(x, y);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn same_size(&self, w: u32, h: u32) -> Result<(), ImageError> {
        if self.width == w && self.height == h {
            Ok(())
        } else {
            Err(ImageError::Size(self.width, self.height, w, h))
        }
    }

    pub fn write_ppm<W: Write>(&self, mut w: W) -> Result<(), ImageError> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.data)?;
        Ok(())
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() + 20);
        self.write_ppm(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_ppm<R: Read>(mut r: R) -> Result<Self, ImageError> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        let (magic, w, h, maxval, offset) = parse_pnm_header(&buf)?;
        if magic != "P6" || maxval != 255 {
            return Err(ImageError::Format(format!("expected P6/255, got {magic}/{maxval}")));
        }
        let n = w as usize * h as usize * 3;
        if buf.len() < offset + n {
            return Err(ImageError::Format("truncated PPM payload".into()));
        }
        Ok(Self {
            width: w,
            height: h,
            data: buf[offset..offset + n].to_vec(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl DepthImage {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![f32::INFINITY; width as usize * height as usize],
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn write_raw<W: Write>(&self, mut w: W) -> Result<(), ImageError> {
        w.write_all(&self.width.to_le_bytes())?;
        w.write_all(&self.height.to_le_bytes())?;
        let mut bytes = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_raw<R: Read>(mut r: R) -> Result<Self, ImageError> {
        let mut hdr = [0u8; 8];
        r.read_exact(&mut hdr)?;
        let width = u32::from_le_bytes(hdr[0..4].try_into().unwrap());
        let height = u32::from_le_bytes(hdr[4..8].try_into().unwrap());
        let n = width as usize * height as usize;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != n * 4 {
            return Err(ImageError::Format(format!(
                "depth payload is {} bytes, expected {}",
                bytes.len(),
                n * 4
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self { width, height, data })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![false; width as usize * height as usize],
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        let w = self.width as usize;
        self.data[y as usize * w + x as usize] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    /// Number of pixels where both masks are set; sizes must match.
    pub fn intersection_count(&self, other: &Mask) -> usize {
        self.data.iter().zip(&other.data).filter(|(a, b)| **a && **b).count()
    }

    pub fn write_pgm<W: Write>(&self, mut w: W) -> Result<(), ImageError> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_pgm(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    /// Reads a P5 PGM; any non-zero sample is `true`.
    pub fn read_pgm<R: Read>(mut r: R) -> Result<Self, ImageError> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        let (magic, w, h, maxval, offset) = parse_pnm_header(&buf)?;
        if magic != "P5" || maxval > 255 {
            return Err(ImageError::Format(format!("expected 8-bit P5, got {magic}/{maxval}")));
        }
        let n = w as usize * h as usize;
        if buf.len() < offset + n {
            return Err(ImageError::Format("truncated PGM payload".into()));
        }
        Ok(Self {
            width: w,
            height: h,
            data: buf[offset..offset + n].iter().map(|&b| b != 0).collect(),
        })
    }

    /// Run-length encoding, row-major: alternating run lengths starting with
    /// an unset run (which may be zero).
    pub fn to_rle(&self) -> Vec<u32> {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0u32;
        for &b in &self.data {
            if b == current {
                len += 1;
            } else {
                runs.push(len);
                current = b;
                len = 1;
            }
        }
        runs.push(len);
        runs
    }

    pub fn from_rle(width: u32, height: u32, runs: &[u32]) -> Result<Self, ImageError> {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        let mut v = false;
        for &r in runs {
            data.extend(std::iter::repeat_n(v, r as usize));
            v = !v;
        }
        if data.len() != width as usize * height as usize {
            return Err(ImageError::Format("run lengths do not cover the mask".into()));
        }
        Ok(Self { width, height, data })
    }
}

/// Parses `magic width height maxval` plus the single whitespace byte that
/// separates the header from binary data. Comments (`#`) are skipped.
fn parse_pnm_header(buf: &[u8]) -> Result<(String, u32, u32, u32, usize), ImageError> {
    let mut pos = 0usize;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < buf.len() && (buf[pos].is_ascii_whitespace() || buf[pos] == b'#') {
            if buf[pos] == b'#' {
                while pos < buf.len() && buf[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < buf.len() && !buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(ImageError::Format("truncated header".into()));
        }
        tokens.push(String::from_utf8_lossy(&buf[start..pos]).into_owned());
    }
    pos += 1;
    let num = |s: &str| {
        s.parse::<u32>()
            .map_err(|_| ImageError::Format(format!("bad header field {s:?}")))
    };
    Ok((tokens[0].clone(), num(&tokens[1])?, num(&tokens[2])?, num(&tokens[3])?, pos))
}

/// Full-range BT.601 luma (0..255).
#[inline]
pub fn luma(rgb: [u8; 3]) -> f32 {
    0.299 * rgb[0] as f32 + 0.587 * rgb[1] as f32 + 0.114 * rgb[2] as f32
}

/// Full-range BT.601 chroma `(Cb, Cr)`, unrounded.
#[inline]
pub fn rgb_to_cbcr(rgb: [u8; 3]) -> (f64, f64) {
    let (r, g, b) = (rgb[0] as f64, rgb[1] as f64, rgb[2] as f64);
    let cb = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b;
    let cr = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b;
    (cb, cr)
}

/// Inverse of the full-range conversion, clamped to 0..255.
pub fn ycbcr_to_rgb(y: f64, cb: f64, cr: f64) -> [u8; 3] {
    let r = y + 1.402 * (cr - 128.0);
    let g = y - 0.344136 * (cb - 128.0) - 0.714136 * (cr - 128.0);
    let b = y + 1.772 * (cb - 128.0);
    [clamp_u8(r), clamp_u8(g), clamp_u8(b)]
}

#[inline]
pub fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip() {
        let mut img = ColorImage::new(3, 2);
        img.put(1, 1, [9, 8, 7]);
        let bytes = img.to_ppm();
        assert!(bytes.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(ColorImage::read_ppm(&bytes[..]).unwrap(), img);
    }

    #[test]
    fn depth_header_layout() {
        let mut d = DepthImage::empty(2, 1);
        d.data[0] = 12.5;
        let mut bytes = Vec::new();
        d.write_raw(&mut bytes).unwrap();
        assert_eq!(&bytes[0..8], &[2, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(bytes.len(), 8 + 8);
        let back = DepthImage::read_raw(&bytes[..]).unwrap();
        assert_eq!(back.data[0], 12.5);
        assert!(back.data[1].is_infinite());
    }

    #[test]
    fn pgm_and_rle() {
        let mut m = Mask::new(4, 2);
        m.set(1, 0, true);
        m.set(2, 0, true);
        m.set(3, 1, true);
        assert_eq!(Mask::read_pgm(&m.to_pgm()[..]).unwrap(), m);
        let rle = m.to_rle();
        assert_eq!(rle, vec![1, 2, 4, 1]);
        assert_eq!(Mask::from_rle(4, 2, &rle).unwrap(), m);
    }

    #[test]
    fn header_comments_are_skipped() {
        let bytes = b"P5\n# hello\n2 1\n255\n\x00\xff";
        let m = Mask::read_pgm(&bytes[..]).unwrap();
        assert_eq!(m.data, vec![false, true]);
    }

    #[test]
    fn ycbcr_round_trip() {
        let rgb = ycbcr_to_rgb(150.0, 110.0, 155.0);
        let (cb, cr) = rgb_to_cbcr(rgb);
        assert!((cb - 110.0).abs() < 1.5 && (cr - 155.0).abs() < 1.5);
        let (cb, cr) = rgb_to_cbcr([77, 77, 77]);
        assert!((cb - 128.0).abs() < 1e-9 && (cr - 128.0).abs() < 1e-9);
    }
}
