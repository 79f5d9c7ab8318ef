//! Multi-channel float rasters, binary masks, and the binary tensor file format.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Channel-major (CHW) float raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Raster {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Raster {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_data(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::DimensionMismatch {
                left: format!("{} values", data.len()),
                right: format!("{channels}x{height}x{width}"),
            });
        }
        Ok(Raster {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Bilinear sample at continuous coordinates (pixel centers at integers).
    /// Out-of-bounds neighbors contribute zero.
    pub fn sample_bilinear(&self, c: usize, x: f64, y: f64) -> f32 {
        let x0 = x.floor();
        let y0 = y.floor();
        let dx = (x - x0) as f32;
        let dy = (y - y0) as f32;
        let x0 = x0 as i64;
        let y0 = y0 as i64;

        let mut acc = 0.0f32;
        for (ny, wy) in [(y0, 1.0 - dy), (y0 + 1, dy)] {
            if wy == 0.0 || ny < 0 || ny >= self.height as i64 {
                continue;
            }
            for (nx, wx) in [(x0, 1.0 - dx), (x0 + 1, dx)] {
                if wx == 0.0 || nx < 0 || nx >= self.width as i64 {
                    continue;
                }
                acc += wy * wx * self.get(c, ny as usize, nx as usize);
            }
        }
        acc
    }
}

/// Row-major binary mask with 0/1 bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn zeros(width: usize, height: usize) -> Self {
        BinaryMask {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch {
                left: format!("{} values", data.len()),
                right: format!("{width}x{height}"),
            });
        }
        Ok(BinaryMask {
            width,
            height,
            data: data.into_iter().map(|v| u8::from(v != 0)).collect(),
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = u8::from(v);
    }

    /// Number of foreground pixels.
    pub fn area(&self) -> u64 {
        self.data.iter().map(|&v| v as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }
}

const TENSOR_MAGIC: &[u8; 8] = b"P2STNSR\0";

/// Write a raster as the binary tensor format: 8-byte magic, u32 ndim,
/// u32 dims (C, H, W), then f32 data in C order. All integers and floats
/// little-endian.
pub fn write_tensor<W: Write>(mut w: W, raster: &Raster) -> Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&3u32.to_le_bytes())?;
    for dim in [raster.channels, raster.height, raster.width] {
        w.write_all(&(dim as u32).to_le_bytes())?;
    }
    for v in raster.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_tensor_file(path: &Path, raster: &Raster) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_tensor(std::io::BufWriter::new(file), raster)
}

pub fn read_tensor<R: Read>(mut r: R) -> Result<Raster> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::Format("bad tensor magic".into()));
    }
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4)?;
    let ndim = u32::from_le_bytes(buf4);
    if ndim != 3 {
        return Err(Error::Format(format!("expected 3 dims, got {ndim}")));
    }
    let mut dims = [0usize; 3];
    for d in &mut dims {
        r.read_exact(&mut buf4)?;
        *d = u32::from_le_bytes(buf4) as usize;
    }
    let n = dims[0] * dims[1] * dims[2];
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut buf4)?;
        data.push(f32::from_le_bytes(buf4));
    }
    Raster::from_data(dims[0], dims[1], dims[2], data)
}

pub fn read_tensor_file(path: &Path) -> Result<Raster> {
    let file = std::fs::File::open(path)?;
    read_tensor(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_interpolates_and_zeros_outside() {
        let mut r = Raster::zeros(1, 2, 2);
        r.set(0, 0, 0, 1.0);
        r.set(0, 0, 1, 3.0);
        r.set(0, 1, 0, 5.0);
        r.set(0, 1, 1, 7.0);
        assert_eq!(r.sample_bilinear(0, 0.0, 0.0), 1.0);
        assert_eq!(r.sample_bilinear(0, 0.5, 0.0), 2.0);
        assert_eq!(r.sample_bilinear(0, 0.5, 0.5), 4.0);
        // Half outside: remaining neighbors keep their weights, missing ones are zero.
        assert_eq!(r.sample_bilinear(0, -0.5, 0.0), 0.5);
        assert_eq!(r.sample_bilinear(0, -2.0, 0.0), 0.0);
        assert_eq!(r.sample_bilinear(0, 0.0, 100.0), 0.0);
    }

    #[test]
    fn tensor_roundtrip() {
        let mut r = Raster::zeros(2, 3, 4);
        for (i, v) in r.data.iter_mut().enumerate() {
            *v = i as f32 * 0.5;
        }
        let mut buf = Vec::new();
        write_tensor(&mut buf, &r).unwrap();
        assert_eq!(&buf[..8], TENSOR_MAGIC);
        let back = read_tensor(buf.as_slice()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn tensor_rejects_bad_magic() {
        let buf = vec![0u8; 32];
        assert!(read_tensor(buf.as_slice()).is_err());
    }
}
