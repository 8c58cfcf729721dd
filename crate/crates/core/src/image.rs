//! 8-bit grayscale rasters and binary PGM (P5) I/O.

use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PgmError {
    #[error("not a binary PGM (expected magic P5)")]
    Magic,
    #[error("malformed PGM header")]
    Header,
    #[error("unsupported maxval {0} (only 255 is accepted)")]
    MaxVal(u32),
    #[error("PGM data truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for GrayImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "GrayImage({}x{})", self.width, self.height)
    }
}

impl GrayImage {
    pub fn new(width: usize, height: usize, fill: u8) -> Self {
        Self { width, height, data: vec![fill; width * height] }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Option<Self> {
        (data.len() == width * height).then_some(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn rows_mut(&mut self) -> std::slice::ChunksExactMut<'_, u8> {
        self.data.chunks_exact_mut(self.width)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    /// Bilinear sample at a subpixel position where pixel centres sit at
    /// integer coordinates. Returns `None` outside the image.
    pub fn sample(&self, x: f64, y: f64) -> Option<f64> {
        if !(x >= 0.0 && y >= 0.0) {
            return None;
        }
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        if x0 + 1 >= self.width || y0 + 1 >= self.height {
            if x0 < self.width && y0 < self.height && x == x0 as f64 && y == y0 as f64 {
                return Some(self.get(x0, y0) as f64);
            }
            return None;
        }
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let p = |xx, yy| self.get(xx, yy) as f64;
        let top = p(x0, y0) * (1.0 - fx) + p(x0 + 1, y0) * fx;
        let bottom = p(x0, y0 + 1) * (1.0 - fx) + p(x0 + 1, y0 + 1) * fx;
        Some(top * (1.0 - fy) + bottom * fy)
    }

    /// 3x3 box filter with edge replication.
    pub fn box_blur3(&self) -> GrayImage {
        let (w, h) = (self.width, self.height);
        if w == 0 || h == 0 {
            return self.clone();
        }
        // Horizontal sums with edge replication, then vertical.
        let mut rows = vec![0u16; w * h];
        for (src, dst) in self.data.chunks_exact(w).zip(rows.chunks_exact_mut(w)) {
            dst[0] = src[0] as u16 * 2 + src[(1).min(w - 1)] as u16;
            for (d, t) in dst[1..].iter_mut().zip(src.windows(3)) {
                *d = t[0] as u16 + t[1] as u16 + t[2] as u16;
            }
            if w > 1 {
                dst[w - 1] = src[w - 2] as u16 + src[w - 1] as u16 * 2;
            }
        }
        let mut out = GrayImage::new(w, h, 0);
        for (y, dst) in out.data.chunks_exact_mut(w).enumerate() {
            let up = &rows[y.saturating_sub(1) * w..][..w];
            let mid = &rows[y * w..][..w];
            let down = &rows[(y + 1).min(h - 1) * w..][..w];
            for (((d, &a), &b), &c) in dst.iter_mut().zip(up).zip(mid).zip(down) {
                *d = ((a as u32 + b as u32 + c as u32 + 4) / 9) as u8;
            }
        }
        out
    }

    pub fn write_pgm<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.data)
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> io::Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = io::BufWriter::new(f);
        self.write_pgm(&mut w)?;
        w.flush()
    }

    pub fn read_pgm<R: Read>(mut r: R) -> Result<Self, PgmError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::parse_pgm(&bytes)
    }

    pub fn load_pgm(path: impl AsRef<Path>) -> Result<Self, PgmError> {
        Self::parse_pgm(&std::fs::read(path)?)
    }

    pub fn parse_pgm(bytes: &[u8]) -> Result<Self, PgmError> {
        if bytes.len() < 2 || &bytes[..2] != b"P5" {
            return Err(PgmError::Magic);
        }
        let mut pos = 2;
        let mut fields = [0u32; 3];
        for field in fields.iter_mut() {
            *field = next_header_int(bytes, &mut pos)?;
        }
        // Exactly one whitespace byte separates the header from the raster.
        if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
            return Err(PgmError::Header);
        }
        pos += 1;
        let [width, height, maxval] = fields;
        if maxval != 255 {
            return Err(PgmError::MaxVal(maxval));
        }
        let (width, height) = (width as usize, height as usize);
        let expected = width * height;
        let raster = &bytes[pos..];
        if raster.len() < expected {
            return Err(PgmError::Truncated { expected, found: raster.len() });
        }
        Ok(Self { width, height, data: raster[..expected].to_vec() })
    }
}

fn next_header_int(bytes: &[u8], pos: &mut usize) -> Result<u32, PgmError> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while let Some(&b) = bytes.get(*pos) {
                    *pos += 1;
                    if b == b'\n' {
                        break;
                    }
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(PgmError::Header),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| b.is_ascii_digit()) {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or(PgmError::Header)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip() {
        let mut img = GrayImage::new(5, 3, 7);
        img.set(4, 2, 200);
        let mut buf = Vec::new();
        img.write_pgm(&mut buf).unwrap();
        assert!(buf.starts_with(b"P5\n5 3\n255\n"));
        assert_eq!(GrayImage::read_pgm(&buf[..]).unwrap(), img);
    }

    #[test]
    fn pgm_header_comments_are_skipped() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2]);
        let img = GrayImage::parse_pgm(&bytes).unwrap();
        assert_eq!((img.width(), img.height(), img.get(1, 0)), (2, 1, 2));
    }

    #[test]
    fn pgm_rejects_bad_input() {
        assert!(matches!(GrayImage::parse_pgm(b"P2\n1 1\n255\n0"), Err(PgmError::Magic)));
        assert!(matches!(GrayImage::parse_pgm(b"P5\n1 1\n65535\n00"), Err(PgmError::MaxVal(65535))));
        assert!(matches!(GrayImage::parse_pgm(b"P5\n4 4\n255\n0"), Err(PgmError::Truncated { .. })));
    }

    #[test]
    fn bilinear_sampling() {
        let img = GrayImage::from_raw(2, 2, vec![0, 100, 100, 200]).unwrap();
        assert_eq!(img.sample(0.5, 0.5), Some(100.0));
        assert_eq!(img.sample(0.0, 0.0), Some(0.0));
        assert_eq!(img.sample(1.0, 1.0), Some(200.0));
        assert_eq!(img.sample(-0.1, 0.0), None);
        assert_eq!(img.sample(1.5, 0.0), None);
    }
}
