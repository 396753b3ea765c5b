//! Binary slice (MRSL) and codebook (MRCB) files. All integers and floats are little-endian.

use std::path::Path;

use num_complex::Complex32;

use crate::error::{Error, Result};
use crate::image::ComplexImage;

const SLICE_MAGIC: &[u8; 4] = b"MRSL";
const SLICE_VERSION: u16 = 1;
const SLICE_HEADER: usize = 16;

const CODEBOOK_MAGIC: &[u8; 4] = b"MRCB";
const CODEBOOK_HEADER: usize = 12;

fn read_all(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn u32_at(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

fn check_magic(bytes: &[u8], magic: &[u8; 4], what: &'static str) -> Result<()> {
    let found: [u8; 4] = bytes[..4].try_into().unwrap();
    if &found != magic {
        return Err(Error::BadMagic {
            what,
            expected: *magic,
            found,
        });
    }
    Ok(())
}

/// Serializes coil images as `MRSL | u16 version | u16 n_coils | u32 H | u32 W` followed by
/// `(re, im)` f32 pairs, coil-major and row-major. The header is 16 bytes.
pub fn slice_to_bytes(coils: &[ComplexImage]) -> Result<Vec<u8>> {
    let first = coils
        .first()
        .ok_or_else(|| Error::InvalidArgument("a slice needs at least one coil".into()))?;
    let (h, w) = first.shape();
    if coils.iter().any(|c| c.shape() != (h, w)) {
        return Err(Error::InvalidArgument("coil images differ in shape".into()));
    }
    let mut out = Vec::with_capacity(SLICE_HEADER + coils.len() * h * w * 8);
    out.extend_from_slice(SLICE_MAGIC);
    if coils.len() > u16::MAX as usize {
        return Err(Error::InvalidArgument("too many coils for MRSL".into()));
    }
    out.extend_from_slice(&SLICE_VERSION.to_le_bytes());
    out.extend_from_slice(&(coils.len() as u16).to_le_bytes());
    for v in [h as u32, w as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for c in coils {
        for p in c.data() {
            out.extend_from_slice(&p.re.to_le_bytes());
            out.extend_from_slice(&p.im.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn slice_from_bytes(bytes: &[u8]) -> Result<Vec<ComplexImage>> {
    if bytes.len() < SLICE_HEADER {
        return Err(Error::Length {
            what: "MRSL header",
            expected: SLICE_HEADER,
            actual: bytes.len(),
        });
    }
    check_magic(bytes, SLICE_MAGIC, "MRSL")?;
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != SLICE_VERSION {
        return Err(Error::Version {
            what: "MRSL",
            found: version as u32,
            supported: SLICE_VERSION as u32,
        });
    }
    let n = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let (h, w) = (u32_at(bytes, 8) as usize, u32_at(bytes, 12) as usize);
    let expected = SLICE_HEADER + n * h * w * 8;
    if bytes.len() != expected {
        return Err(Error::Length {
            what: "MRSL",
            expected,
            actual: bytes.len(),
        });
    }
    let mut floats = bytes[SLICE_HEADER..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    (0..n)
        .map(|_| {
            let data = (0..h * w)
                .map(|_| {
                    let re = floats.next().unwrap();
                    let im = floats.next().unwrap();
                    Complex32::new(re, im)
                })
                .collect();
            ComplexImage::new(h, w, data)
        })
        .collect()
}

pub fn write_slice(path: &Path, coils: &[ComplexImage]) -> Result<()> {
    std::fs::write(path, slice_to_bytes(coils)?).map_err(|e| Error::io(path, e))
}

pub fn read_slice(path: &Path) -> Result<Vec<ComplexImage>> {
    slice_from_bytes(&read_all(path)?)
}

/// Reads a slice file that must hold exactly one coil image.
pub fn read_single_slice(path: &Path) -> Result<ComplexImage> {
    let mut coils = read_slice(path)?;
    if coils.len() != 1 {
        return Err(Error::Format(format!(
            "{}: expected a single-coil slice, found {} coils",
            path.display(),
            coils.len()
        )));
    }
    Ok(coils.remove(0))
}

/// `MRCB | V | d | V*d f32`, row-major.
pub fn codebook_to_bytes(size: usize, dim: usize, vectors: &[f32]) -> Result<Vec<u8>> {
    if vectors.len() != size * dim {
        return Err(Error::Length {
            what: "codebook",
            expected: size * dim,
            actual: vectors.len(),
        });
    }
    let mut out = Vec::with_capacity(CODEBOOK_HEADER + vectors.len() * 4);
    out.extend_from_slice(CODEBOOK_MAGIC);
    out.extend_from_slice(&(size as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for v in vectors {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Returns `(V, d, vectors)`.
pub fn codebook_from_bytes(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    if bytes.len() < CODEBOOK_HEADER {
        return Err(Error::Length {
            what: "MRCB header",
            expected: CODEBOOK_HEADER,
            actual: bytes.len(),
        });
    }
    check_magic(bytes, CODEBOOK_MAGIC, "MRCB")?;
    let (v, d) = (u32_at(bytes, 4) as usize, u32_at(bytes, 8) as usize);
    let expected = CODEBOOK_HEADER + v * d * 4;
    if bytes.len() != expected {
        return Err(Error::Length {
            what: "MRCB",
            expected,
            actual: bytes.len(),
        });
    }
    let vectors = bytes[CODEBOOK_HEADER..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((v, d, vectors))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(h: usize, w: usize, s: f32) -> ComplexImage {
        ComplexImage::from_fn(h, w, |i, j| Complex32::new(i as f32 * s, -(j as f32) / s)).unwrap()
    }

    #[test]
    fn single_coil_64_file_size() {
        let bytes = slice_to_bytes(&[image(64, 64, 0.1)]).unwrap();
        assert_eq!(bytes.len(), 32784);
    }

    #[test]
    fn slice_round_trip_multi_coil() {
        let coils = vec![image(8, 16, 0.3), image(8, 16, 1.7)];
        let back = slice_from_bytes(&slice_to_bytes(&coils).unwrap()).unwrap();
        assert_eq!(back, coils);
    }

    #[test]
    fn truncation_reports_lengths() {
        let bytes = slice_to_bytes(&[image(8, 8, 1.0)]).unwrap();
        let err = slice_from_bytes(&bytes[..bytes.len() - 1]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(&bytes.len().to_string()), "{msg}");
        assert!(msg.contains(&(bytes.len() - 1).to_string()), "{msg}");
    }

    #[test]
    fn version_and_magic_checked() {
        let mut bytes = slice_to_bytes(&[image(8, 8, 1.0)]).unwrap();
        bytes[4] = 2;
        assert!(matches!(slice_from_bytes(&bytes), Err(Error::Version { found: 2, .. })));
        bytes[0] = b'Z';
        assert!(matches!(slice_from_bytes(&bytes), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn codebook_round_trip() {
        let v: Vec<f32> = (0..12).map(|k| k as f32 * 0.25 - 1.0).collect();
        let bytes = codebook_to_bytes(3, 4, &v).unwrap();
        assert_eq!(bytes.len(), 12 + 48);
        assert_eq!(codebook_from_bytes(&bytes).unwrap(), (3, 4, v));
        assert!(codebook_from_bytes(&bytes[..20]).is_err());
    }
}
