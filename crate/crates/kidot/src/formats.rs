//! Raw little-endian `f64` arrays and 16-bit PGM images.
//!
//! Raw layout: the 8-byte magic `KIDOTARR`, a `u32` rank, one `u64` per
//! dimension, then the values in row-major order.

use std::fs;
use std::path::Path;

use kidot_core::Image;

use crate::error::{Error, Result};

const ARRAY_MAGIC: &[u8; 8] = b"KIDOTARR";

/// A dense row-major array of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct RawArray {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl RawArray {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Config(format!(
                "array shape {shape:?} holds {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn from_image(x: &Image) -> Self {
        Self {
            shape: vec![x.side(), x.side()],
            data: x.data().to_vec(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 8 * self.shape.len() + 8 * self.data.len());
        out.extend_from_slice(ARRAY_MAGIC);
        out.extend_from_slice(&(self.shape.len() as u32).to_le_bytes());
        for &d in &self.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        if r.take(8)? != ARRAY_MAGIC {
            return Err(Error::corrupt(path, "not a raw array (bad magic)"));
        }
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(Error::corrupt(path, format!("implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::corrupt(path, "shape overflows"))?;
        let data = r.f64s(n)?;
        r.finish()?;
        Ok(Self { shape, data })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(Error::io(path))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(Error::io(path))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn into_image(self, path: &Path) -> Result<Image> {
        match self.shape.as_slice() {
            [r, c] if r == c => Ok(Image::from_vec(*r, self.data)?),
            s => Err(Error::corrupt(
                path,
                format!("expected a square image, found shape {s:?}"),
            )),
        }
    }
}

pub fn write_image_raw(x: &Image, path: &Path) -> Result<()> {
    RawArray::from_image(x).write(path)
}

pub fn read_image_raw(path: &Path) -> Result<Image> {
    RawArray::read(path)?.into_image(path)
}

/// Bounds-checked cursor over a byte buffer.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Self { bytes, pos: 0, path }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::corrupt(
                    self.path,
                    format!(
                        "truncated: wanted {n} bytes at offset {}, file has {}",
                        self.pos,
                        self.bytes.len()
                    ),
                )
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n
            .checked_mul(8)
            .ok_or_else(|| Error::corrupt(self.path, "length overflows"))?;
        Ok(self
            .take(len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::corrupt(
                self.path,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}

/// Writes a 16-bit binary PGM scaled linearly from `[min, max]` of the
/// image to `[0, 65535]`. Returns the `(min, max)` used.
pub fn write_pgm16(x: &Image, path: &Path) -> Result<(f64, f64)> {
    let (lo, hi) = x.min_max();
    let span = if hi > lo { hi - lo } else { 1.0 };
    let n = x.side();
    let mut out = format!("P5\n# min {lo:e} max {hi:e}\n{n} {n}\n65535\n").into_bytes();
    for &v in x.data() {
        let q = (((v - lo) / span) * 65535.0).round().clamp(0.0, 65535.0) as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    fs::write(path, out).map_err(Error::io(path))?;
    Ok((lo, hi))
}

/// Reads a 16-bit PGM written by [`write_pgm16`], undoing the scaling
/// recorded in its comment line.
pub fn read_pgm16(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    let bad = |why: &str| Error::corrupt(path, why.to_string());
    let mut lines = 0;
    let mut pos = 0;
    while lines < 4 {
        let nl = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("truncated header"))?;
        pos += nl + 1;
        lines += 1;
    }
    let header = std::str::from_utf8(&bytes[..pos]).map_err(|_| bad("header is not text"))?;
    let h: Vec<&str> = header.lines().collect();
    if h[0] != "P5" || h[3] != "65535" {
        return Err(bad("not a 16-bit binary PGM"));
    }
    let meta: Vec<&str> = h[1].split_whitespace().collect();
    let (lo, hi) = match meta.as_slice() {
        ["#", "min", lo, "max", hi] => (
            lo.parse::<f64>().map_err(|_| bad("bad min"))?,
            hi.parse::<f64>().map_err(|_| bad("bad max"))?,
        ),
        _ => return Err(bad("missing min/max comment")),
    };
    let dims: Vec<usize> = h[2].split_whitespace().filter_map(|s| s.parse().ok()).collect();
    let n = match dims.as_slice() {
        [w, hgt] if w == hgt => *w,
        _ => return Err(bad("expected square dimensions")),
    };
    let body = &bytes[pos..];
    if body.len() != 2 * n * n {
        return Err(bad("pixel data has the wrong length"));
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let data = body
        .chunks_exact(2)
        .map(|c| lo + f64::from(u16::from_be_bytes([c[0], c[1]])) / 65535.0 * span)
        .collect();
    Ok(Image::from_vec(n, data)?)
}
