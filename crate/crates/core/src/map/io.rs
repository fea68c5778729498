//! Binary map file.
//!
//! Layout (little-endian): magic `GSMAP\0`, version `u16 = 1`, voxel size
//! `f64`, cell count `u64`; then per cell the packed key `u64`, the
//! Gaussian count `u64` and that many records of 14 `f32`
//! (mu x3, log-scale x3, quaternion w,x,y,z, rgb x3, opacity logit).

use std::fs;
use std::path::Path;

use super::{voxel_key, Gaussian3D, GaussianMap, VoxelKey, PARAM_COUNT};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"GSMAP\0";
pub const VERSION: u16 = 1;
const RECORD_BYTES: u64 = PARAM_COUNT as u64 * 4;

pub fn write_map(map: &GaussianMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + map.gaussian_count() * RECORD_BYTES as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&map.voxel_size().to_le_bytes());
    out.extend_from_slice(&(map.cell_count() as u64).to_le_bytes());
    for (key, gaussians) in map.cells() {
        out.extend_from_slice(&key.id().to_le_bytes());
        out.extend_from_slice(&(gaussians.len() as u64).to_le_bytes());
        for g in gaussians {
            for v in g.to_params() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated {
                offset: self.pos as u64,
                expected: n as u64,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn remaining(&self) -> u64 {
        (self.buf.len() - self.pos) as u64
    }
}

/// Parses a map file image. Nothing is returned unless the whole buffer is
/// valid.
pub fn read_map(buf: &[u8]) -> Result<GaussianMap> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::format(0, "bad magic"));
    }
    let at = r.pos as u64;
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::format(at, format!("unsupported version {version}")));
    }
    let at = r.pos as u64;
    let voxel_size = r.f64()?;
    let mut map = GaussianMap::new(voxel_size)
        .map_err(|_| Error::format(at, format!("invalid voxel size {voxel_size}")))?;
    let at = r.pos as u64;
    let cell_count = r.u64()?;
    // every cell needs at least its 16-byte header
    if cell_count > r.remaining() / 16 {
        return Err(Error::Truncated {
            offset: at,
            expected: cell_count.saturating_mul(16),
        });
    }
    let mut prev: Option<VoxelKey> = None;
    for _ in 0..cell_count {
        let key_at = r.pos as u64;
        let key = VoxelKey::from_id(r.u64()?);
        if prev.is_some_and(|p| p >= key) {
            return Err(Error::format(key_at, "cell keys not strictly ascending"));
        }
        prev = Some(key);
        let count_at = r.pos as u64;
        let count = r.u64()?;
        if count == 0 {
            return Err(Error::format(count_at, "empty cell"));
        }
        if count > r.remaining() / RECORD_BYTES {
            return Err(Error::Truncated {
                offset: r.pos as u64,
                expected: count.saturating_mul(RECORD_BYTES),
            });
        }
        let mut gaussians = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let rec_at = r.pos as u64;
            let bytes = r.take(RECORD_BYTES as usize)?;
            let mut p = [0.0f64; PARAM_COUNT];
            for (i, c) in bytes.chunks_exact(4).enumerate() {
                p[i] = f32::from_le_bytes(c.try_into().unwrap()) as f64;
            }
            let g = Gaussian3D::from_params(&p);
            g.validate()
                .map_err(|e| Error::format(rec_at, format!("invalid Gaussian: {e}")))?;
            let k = voxel_key(g.mu[0], g.mu[1], voxel_size)
                .map_err(|e| Error::format(rec_at, e.to_string()))?;
            if k != key {
                return Err(Error::format(rec_at, "Gaussian center outside its cell"));
            }
            gaussians.push(g);
        }
        map.insert_cell_raw(key, gaussians);
    }
    if r.remaining() != 0 {
        return Err(Error::format(r.pos as u64, "trailing bytes after last cell"));
    }
    Ok(map)
}

pub fn save(map: &GaussianMap, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, write_map(map))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<GaussianMap> {
    read_map(&fs::read(path)?)
}
