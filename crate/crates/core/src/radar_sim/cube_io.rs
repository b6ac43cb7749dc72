//! Raw cube files: `FMC1`, little-endian u32 `(L, P, N)`, then interleaved
//! f32 `(re, im)` pairs in `(l, p, n)` row-major order. A recording is a
//! concatenation of such records.

use std::fs;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64;

use super::RadarCube;
use crate::{Error, Result};

pub const CUBE_MAGIC: &[u8; 4] = b"FMC1";

pub fn write_cube<W: Write>(out: &mut W, cube: &RadarCube) -> std::io::Result<()> {
    let (l, p, n) = cube.shape();
    out.write_all(CUBE_MAGIC)?;
    for dim in [l, p, n] {
        out.write_all(&(dim as u32).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(cube.as_slice().len() * 8);
    for z in cube.as_slice() {
        buf.extend_from_slice(&(z.re as f32).to_le_bytes());
        buf.extend_from_slice(&(z.im as f32).to_le_bytes());
    }
    out.write_all(&buf)
}

pub fn write_cubes(path: &Path, cubes: &[RadarCube]) -> Result<()> {
    let mut buf = Vec::new();
    for cube in cubes {
        write_cube(&mut buf, cube).map_err(|e| Error::io(path, e))?;
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads every cube record in a file.
pub fn read_cubes(path: &Path) -> Result<Vec<RadarCube>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cubes = Vec::new();
    let mut pos = 0usize;
    while pos < bytes.len() {
        let header = bytes
            .get(pos..pos + 16)
            .ok_or_else(|| Error::format(path, pos as u64, "truncated cube header"))?;
        if &header[..4] != CUBE_MAGIC {
            return Err(Error::format(path, pos as u64, "bad magic, expected FMC1"));
        }
        let dim = |i: usize| u32::from_le_bytes(header[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (l, p, n) = (dim(0), dim(1), dim(2));
        let count = l
            .checked_mul(p)
            .and_then(|x| x.checked_mul(n))
            .filter(|&c| c > 0)
            .ok_or_else(|| Error::format(path, pos as u64 + 4, "invalid cube dimensions"))?;
        let body_start = pos + 16;
        let body = bytes
            .get(body_start..body_start + count * 8)
            .ok_or_else(|| Error::format(path, body_start as u64, "truncated cube samples"))?;
        let data = body
            .chunks_exact(8)
            .map(|c| {
                let re = f32::from_le_bytes(c[..4].try_into().unwrap());
                let im = f32::from_le_bytes(c[4..].try_into().unwrap());
                Complex64::new(re as f64, im as f64)
            })
            .collect();
        cubes.push(RadarCube::from_vec(l, p, n, data)?);
        pos = body_start + count * 8;
    }
    Ok(cubes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radar_sim::{synthesize_frame, ChirpConfig, ScattererState};

    #[test]
    fn round_trip_through_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rec.fmc");
        let cfg = ChirpConfig {
            noise_std: 0.1,
            ..ChirpConfig::default()
        };
        let frames: Vec<_> = (0..3)
            .map(|k| synthesize_frame(&cfg, &[ScattererState::new(0.3, 0.2, 0.1, 1.0)], k).unwrap())
            .collect();
        write_cubes(&path, &frames).unwrap();
        let back = read_cubes(&path).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in frames.iter().zip(&back) {
            assert_eq!(a.shape(), b.shape());
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                assert_eq!(x.re as f32, y.re as f32);
                assert_eq!(x.im as f32, y.im as f32);
            }
        }
    }

    #[test]
    fn corrupt_magic_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.fmc");
        let mut buf = Vec::new();
        write_cube(&mut buf, &RadarCube::zeros(1, 1, 2)).unwrap();
        buf.extend_from_slice(b"XXXX0000");
        fs::write(&path, &buf).unwrap();
        match read_cubes(&path) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 32),
            other => panic!("expected format error, got {other:?}"),
        }
    }
}
