//! RFG/RFM containers.
//!
//! Little-endian layout: magic (4) | width u32 | height u32 |
//! six GDAL-ordered geotransform terms f64 | nodata f32 | payload.
//! RFG payloads are `f32` row-major (top row first); RFM payloads are `u8`
//! and carry the same header, with the nodata field written as zero.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::{GeoTransform, MaskGrid, RasterGrid};

pub const RFG_MAGIC: &[u8; 4] = b"RFG1";
pub const RFM_MAGIC: &[u8; 4] = b"RFM1";
/// Header bytes preceding the payload.
pub const RFG_HEADER_LEN: usize = 4 + 4 + 4 + 48 + 4;

fn encode_header(
    magic: &[u8; 4],
    width: usize,
    height: usize,
    t: &GeoTransform,
    nodata: f32,
) -> Result<Vec<u8>> {
    let w = u32::try_from(width)
        .map_err(|_| Error::Validation(format!("width {width} exceeds u32")))?;
    let h = u32::try_from(height)
        .map_err(|_| Error::Validation(format!("height {height} exceeds u32")))?;
    let mut buf = Vec::with_capacity(RFG_HEADER_LEN);
    buf.extend_from_slice(magic);
    buf.extend_from_slice(&w.to_le_bytes());
    buf.extend_from_slice(&h.to_le_bytes());
    for c in t.coefficients() {
        buf.extend_from_slice(&c.to_le_bytes());
    }
    buf.extend_from_slice(&nodata.to_le_bytes());
    Ok(buf)
}

struct Header {
    width: usize,
    height: usize,
    transform: GeoTransform,
    nodata: f32,
}

fn decode_header(bytes: &[u8], magic: &[u8; 4], value_size: usize) -> Result<Header> {
    if bytes.len() < 4 || &bytes[..4] != magic {
        return Err(Error::Format(format!(
            "expected magic {:?}, found {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(&bytes[..bytes.len().min(4)])
        )));
    }
    if bytes.len() < RFG_HEADER_LEN {
        return Err(Error::Length(format!(
            "header truncated at {} bytes",
            bytes.len()
        )));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let width = u32_at(4) as usize;
    let height = u32_at(8) as usize;
    let mut coeffs = [0.0; 6];
    for (i, c) in coeffs.iter_mut().enumerate() {
        *c = f64_at(12 + 8 * i);
    }
    let nodata = f32::from_le_bytes(bytes[60..64].try_into().expect("4 bytes"));
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(value_size))
        .and_then(|n| n.checked_add(RFG_HEADER_LEN))
        .ok_or_else(|| Error::Length(format!("{width}x{height} payload overflows")))?;
    if bytes.len() != expected {
        return Err(Error::Length(format!(
            "{width}x{height} grid needs {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    Ok(Header {
        width,
        height,
        transform: GeoTransform::from_coefficients(coeffs)?,
        nodata,
    })
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_rfg(grid: &RasterGrid) -> Result<Vec<u8>> {
    grid.validate()?;
    let mut buf = encode_header(
        RFG_MAGIC,
        grid.width(),
        grid.height(),
        grid.transform(),
        grid.nodata(),
    )?;
    buf.reserve(grid.values().len() * 4);
    for v in grid.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(buf)
}

pub fn decode_rfg(bytes: &[u8]) -> Result<RasterGrid> {
    let h = decode_header(bytes, RFG_MAGIC, 4)?;
    let values = bytes[RFG_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    RasterGrid::new(h.width, h.height, h.transform, h.nodata, values)
}

pub fn write_rfg(grid: &RasterGrid, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_rfg(grid)?)
}

pub fn read_rfg(path: impl AsRef<Path>) -> Result<RasterGrid> {
    decode_rfg(&read_bytes(path.as_ref())?)
}

pub fn write_rfm(mask: &MaskGrid, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = encode_header(
        RFM_MAGIC,
        mask.width(),
        mask.height(),
        mask.transform(),
        0.0,
    )?;
    buf.extend_from_slice(mask.values());
    write_bytes(path.as_ref(), &buf)
}

pub fn read_rfm(path: impl AsRef<Path>) -> Result<MaskGrid> {
    let bytes = read_bytes(path.as_ref())?;
    let h = decode_header(&bytes, RFM_MAGIC, 1)?;
    MaskGrid::new(
        h.width,
        h.height,
        h.transform,
        bytes[RFG_HEADER_LEN..].to_vec(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(w: usize, h: usize, values: Vec<f32>) -> RasterGrid {
        RasterGrid::new(
            w,
            h,
            GeoTransform::north_up(100.0, 200.0, 0.5),
            -9999.0,
            values,
        )
        .unwrap()
    }

    #[test]
    fn one_pixel_file_size() {
        let bytes = encode_rfg(&grid(1, 1, vec![5.0])).unwrap();
        assert_eq!(bytes.len(), 4 + 4 + 4 + 48 + 4 + 4);
        assert_eq!(&bytes[..4], b"RFG1");
        assert_eq!(&bytes[64..68], &5.0f32.to_le_bytes());
    }

    #[test]
    fn deterministic_bytes() {
        let g = grid(3, 2, vec![0.5, 1.5, -2.0, 4.0, -9999.0, 7.25]);
        assert_eq!(encode_rfg(&g).unwrap(), encode_rfg(&g).unwrap());
    }

    #[test]
    fn bad_magic_and_truncation() {
        let mut bytes = encode_rfg(&grid(2, 2, vec![0.0, 1.0, 2.0, 3.0])).unwrap();
        let truncated = &bytes[..bytes.len() - 1];
        assert!(matches!(decode_rfg(truncated), Err(Error::Length(_))));
        assert!(matches!(decode_rfg(&bytes[..20]), Err(Error::Length(_))));
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_rfg(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn non_finite_payload_rejected() {
        let mut bytes = encode_rfg(&grid(1, 1, vec![5.0])).unwrap();
        bytes[64..68].copy_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(matches!(decode_rfg(&bytes), Err(Error::Validation(_))));
    }

    #[test]
    fn nan_value_refused_on_write() {
        let g = RasterGrid {
            width: 1,
            height: 1,
            transform: GeoTransform::default(),
            nodata: -9999.0,
            values: vec![f32::NAN],
        };
        assert!(matches!(encode_rfg(&g), Err(Error::Validation(_))));
    }

    #[test]
    fn mask_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.rfm");
        let m = MaskGrid::new(3, 1, GeoTransform::default(), vec![0, 1, 1]).unwrap();
        write_rfm(&m, &p).unwrap();
        assert_eq!(read_rfm(&p).unwrap(), m);
        assert!(matches!(read_rfg(&p), Err(Error::Format(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn rfg_roundtrip_is_bit_exact(
            w in 1usize..12,
            h in 1usize..12,
            ox in -1e6f64..1e6,
            oy in -1e6f64..1e6,
            px in 0.01f64..10.0,
            seed in any::<u64>(),
        ) {
            let mut state = seed;
            let values: Vec<f32> = (0..w * h).map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let bits = (state >> 32) as u32;
                let v = f32::from_bits(bits);
                if v.is_finite() { v } else { -9999.0 }
            }).collect();
            let g = RasterGrid::new(w, h, GeoTransform::north_up(ox, oy, px), -9999.0, values).unwrap();
            let back = decode_rfg(&encode_rfg(&g).unwrap()).unwrap();
            prop_assert_eq!(back.transform(), g.transform());
            let a: Vec<u32> = g.values().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = back.values().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
