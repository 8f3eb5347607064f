//! Binary PPM (P6) and PGM (P5) image files, 8-bit or 16-bit big-endian
//! samples per the Netpbm convention. Values map to [0,1] on read.

use crate::tensor::{Elem, Tensor};
use crate::{Error, Result};
use std::io::{Read, Write};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ImageFormat {
    /// P6 color, maxval 255.
    Ppm8,
    /// P5 gray, maxval 255.
    Pgm8,
    /// P5 gray, maxval 65535 (big-endian samples).
    Pgm16,
}

struct HeaderScan<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderScan<'a> {
    fn token(&mut self) -> Result<&'a str> {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b' ' | b'\t' | b'\r' | b'\n' => self.pos += 1,
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Parse { offset: start, msg: "unexpected end of header".into() });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| Error::Parse { offset: start, msg: "non-utf8 header token".into() })
    }

    fn number(&mut self) -> Result<usize> {
        let at = self.pos;
        let tok = self.token()?;
        tok.parse().map_err(|_| Error::Parse { offset: at, msg: format!("bad number {tok:?}") })
    }
}

/// Read a P5/P6 file into `[3,H,W]` (P6) or `[1,H,W]` (P5) with values in
/// [0,1].
pub fn read_image<E: Elem>(path: &Path) -> Result<Tensor<E>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut scan = HeaderScan { bytes: &bytes, pos: 0 };
    let magic = scan.token()?;
    let channels = match magic {
        "P6" => 3,
        "P5" => 1,
        other => {
            return Err(Error::Parse { offset: 0, msg: format!("bad magic {other:?} (want P5/P6)") })
        }
    };
    let w = scan.number()?;
    let h = scan.number()?;
    let maxval = scan.number()?;
    if maxval != 255 && maxval != 65535 {
        return Err(Error::Parse { offset: scan.pos, msg: format!("unsupported maxval {maxval}") });
    }
    // exactly one whitespace byte separates header and raster
    let data_at = scan.pos + 1;
    let bytes_per = if maxval == 255 { 1 } else { 2 };
    let want = channels * h * w * bytes_per;
    let raster = bytes
        .get(data_at..data_at + want)
        .ok_or(Error::Parse { offset: data_at, msg: format!("raster truncated, want {want} bytes") })?;
    let mut data = vec![E::ZERO; channels * h * w];
    let scale = 1.0 / maxval as f64;
    for y in 0..h {
        for x in 0..w {
            for c in 0..channels {
                let i = (y * w + x) * channels + c;
                let v = if bytes_per == 1 {
                    raster[i] as f64
                } else {
                    u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]) as f64
                };
                data[(c * h + y) * w + x] = E::from_f64(v * scale);
            }
        }
    }
    Tensor::from_vec(&[channels, h, w], data)
}

/// Write `[3,H,W]` (Ppm8) or `[1,H,W]` (Pgm8/Pgm16) with values in [0,1].
pub fn write_image<E: Elem>(path: &Path, img: &Tensor<E>, format: ImageFormat) -> Result<()> {
    let s = img.shape();
    let (magic, channels, maxval) = match format {
        ImageFormat::Ppm8 => ("P6", 3, 255u32),
        ImageFormat::Pgm8 => ("P5", 1, 255),
        ImageFormat::Pgm16 => ("P5", 1, 65535),
    };
    if s.len() != 3 || s[0] != channels {
        return Err(Error::invalid("write_image", format!("expected [{channels},H,W], got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let mut f = std::fs::File::create(path)?;
    write!(f, "{magic}\n{w} {h}\n{maxval}\n")?;
    let d = img.data();
    let mut raster = Vec::with_capacity(channels * h * w * if maxval == 255 { 1 } else { 2 });
    for y in 0..h {
        for x in 0..w {
            for c in 0..channels {
                let v = d[(c * h + y) * w + x].to_f64().clamp(0.0, 1.0);
                let q = (v * maxval as f64).round() as u32;
                if maxval == 255 {
                    raster.push(q as u8);
                } else {
                    raster.extend_from_slice(&(q as u16).to_be_bytes());
                }
            }
        }
    }
    f.write_all(&raster)?;
    Ok(())
}

/// 16-bit depth codec: sample = round(depth / max_depth * 65535). The reader
/// inverts via [`read_image`] output * max_depth.
pub fn write_depth_pgm16<E: Elem>(path: &Path, depth: &Tensor<E>, max_depth: f64) -> Result<()> {
    let s = depth.shape();
    if s.len() != 3 || s[0] != 1 {
        return Err(Error::invalid("write_depth", format!("expected [1,H,W], got {s:?}")));
    }
    let norm: Vec<E> = depth.data().iter().map(|v| E::from_f64(v.to_f64() / max_depth)).collect();
    write_image(path, &Tensor::from_vec(s, norm)?, ImageFormat::Pgm16)
}
