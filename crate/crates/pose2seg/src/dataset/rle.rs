//! Binary mask codecs: column-major run-length encoding in both the raw-counts
//! and the compressed 6-bit varint string form used by COCO interchange files,
//! plus even-odd polygon rasterization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::BinaryMask;

/// Column-major run-length encoding: alternating background/foreground run
/// lengths, starting with background.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    pub height: u32,
    pub width: u32,
    pub counts: Vec<u32>,
}

/// One instance's mask payload as found in annotation files.
#[derive(Debug, Clone, PartialEq)]
pub enum MaskSource {
    /// Flattened x,y vertex sequences; multiple rings union together.
    Polygons(Vec<Vec<f64>>),
    /// Raw counts RLE.
    Rle(Rle),
    /// Varint-string RLE.
    CompressedRle {
        counts: String,
        height: u32,
        width: u32,
    },
}

/// Decode any mask source to a binary raster of the owning image's size.
pub fn decode_mask(src: &MaskSource, width: u32, height: u32) -> Result<BinaryMask> {
    match src {
        MaskSource::Polygons(polys) => Ok(rasterize_polygons(polys, width, height)),
        MaskSource::Rle(rle) => {
            if rle.width != width || rle.height != height {
                return Err(Error::DimensionMismatch {
                    left: format!("rle {}x{}", rle.width, rle.height),
                    right: format!("image {width}x{height}"),
                });
            }
            decode_rle(rle)
        }
        MaskSource::CompressedRle {
            counts,
            height: h,
            width: w,
        } => {
            if *w != width || *h != height {
                return Err(Error::DimensionMismatch {
                    left: format!("rle {w}x{h}"),
                    right: format!("image {width}x{height}"),
                });
            }
            decode_rle(&decompress_rle(counts, *h, *w)?)
        }
    }
}

/// Encode a binary raster as column-major RLE counts.
pub fn encode_rle(mask: &BinaryMask) -> Rle {
    let w = mask.width();
    let h = mask.height();
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for x in 0..w {
        for y in 0..h {
            let v = mask.get(x, y);
            if v == current {
                run += 1;
            } else {
                counts.push(run);
                current = v;
                run = 1;
            }
        }
    }
    counts.push(run);
    Rle {
        height: h as u32,
        width: w as u32,
        counts,
    }
}

/// Decode column-major RLE counts; errors when the counts do not sum to
/// exactly width * height.
pub fn decode_rle(rle: &Rle) -> Result<BinaryMask> {
    let n = rle.width as u64 * rle.height as u64;
    let total: u64 = rle.counts.iter().map(|&c| c as u64).sum();
    if total != n {
        return Err(Error::CorruptMask(format!(
            "counts sum to {total}, expected {n}"
        )));
    }
    let w = rle.width as usize;
    let h = rle.height as usize;
    let mut mask = BinaryMask::zeros(w, h);
    let mut idx = 0u64;
    let mut value = false;
    for &c in &rle.counts {
        if value {
            for k in idx..idx + c as u64 {
                let x = (k / rle.height as u64) as usize;
                let y = (k % rle.height as u64) as usize;
                mask.set(x, y, true);
            }
        }
        idx += c as u64;
        value = !value;
    }
    Ok(mask)
}

/// Compress RLE counts to the COCO varint string: 5 data bits per byte offset
/// by 48, sign-extended, with runs past the second stored as deltas to the
/// count two positions back.
pub fn compress_rle(rle: &Rle) -> String {
    let mut out = String::new();
    for (i, &count) in rle.counts.iter().enumerate() {
        let mut x = count as i64;
        if i > 2 {
            x -= rle.counts[i - 2] as i64;
        }
        loop {
            let mut c = (x & 0x1f) as u8;
            x >>= 5;
            let more = if c & 0x10 != 0 { x != -1 } else { x != 0 };
            if more {
                c |= 0x20;
            }
            out.push((c + 48) as char);
            if !more {
                break;
            }
        }
    }
    out
}

/// Inverse of [`compress_rle`].
pub fn decompress_rle(s: &str, height: u32, width: u32) -> Result<Rle> {
    let bytes = s.as_bytes();
    let mut counts: Vec<u32> = Vec::new();
    let mut i = 0usize;
    while i < bytes.len() {
        let mut x: i64 = 0;
        let mut shift = 0u32;
        loop {
            if i >= bytes.len() {
                return Err(Error::CorruptMask("truncated compressed rle".into()));
            }
            let c = bytes[i].wrapping_sub(48) as i64;
            if !(0..64).contains(&c) {
                return Err(Error::CorruptMask(format!(
                    "invalid compressed rle byte {:#x}",
                    bytes[i]
                )));
            }
            i += 1;
            x |= (c & 0x1f) << shift;
            shift += 5;
            if c & 0x20 == 0 {
                // Sign-extend the final 5-bit group.
                if c & 0x10 != 0 {
                    x |= -1i64 << shift;
                }
                break;
            }
        }
        if counts.len() > 2 {
            x += counts[counts.len() - 2] as i64;
        }
        if x < 0 || x > u32::MAX as i64 {
            return Err(Error::CorruptMask(format!("run length {x} out of range")));
        }
        counts.push(x as u32);
    }
    Ok(Rle {
        height,
        width,
        counts,
    })
}

/// Rasterize polygons with even-odd fill sampled at pixel centers; the rings
/// of one instance union together.
pub fn rasterize_polygons(polygons: &[Vec<f64>], width: u32, height: u32) -> BinaryMask {
    let w = width as usize;
    let h = height as usize;
    let mut mask = BinaryMask::zeros(w, h);
    let mut crossings: Vec<f64> = Vec::new();
    for poly in polygons {
        let n = poly.len() / 2;
        if n < 3 {
            continue;
        }
        for row in 0..h {
            let yc = row as f64 + 0.5;
            crossings.clear();
            for i in 0..n {
                let (x1, y1) = (poly[2 * i], poly[2 * i + 1]);
                let j = (i + 1) % n;
                let (x2, y2) = (poly[2 * j], poly[2 * j + 1]);
                // Half-open span so shared vertices count once.
                if (y1 <= yc && yc < y2) || (y2 <= yc && yc < y1) {
                    crossings.push(x1 + (yc - y1) * (x2 - x1) / (y2 - y1));
                }
            }
            crossings.sort_by(|a, b| a.total_cmp(b));
            for pair in crossings.chunks_exact(2) {
                // Pixel centers x+0.5 inside [pair0, pair1).
                let start = (pair[0] - 0.5).ceil().max(0.0) as usize;
                let end = (pair[1] - 0.5).ceil().min(w as f64) as usize;
                for x in start..end {
                    mask.set(x, row, true);
                }
            }
        }
    }
    mask
}
