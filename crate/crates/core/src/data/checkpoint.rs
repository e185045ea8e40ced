//! Checkpoint serialization.
//!
//! Binary layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "SJSC"
//! version u32      currently 1
//! count   u32      number of tensors
//! tensor  repeated:
//!   name_len u32, name bytes (UTF-8)
//!   dtype    u8   (1 = f32, 2 = f64)
//!   rank     u8
//!   dims     rank x u32
//!   payload  product(dims) scalars, little-endian
//! crc32   u32      over every preceding byte
//! ```
//!
//! Round trips are bit-exact. Version mismatches and CRC failures are hard
//! errors; there is no silent migration.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{ParameterSet, Real, Tensor};

pub const MAGIC: [u8; 4] = *b"SJSC";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn to_u8(self) -> u8 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    fn from_u8(v: u8) -> Option<Self> {
        match v {
            1 => Some(Dtype::F32),
            2 => Some(Dtype::F64),
            _ => None,
        }
    }
}

// ── CRC32 (IEEE, reflected) ─────────────────────────────────────────────

const fn crc_table() -> [u32; 256] {
    let mut table = [0u32; 256];
    let mut i = 0;
    while i < 256 {
        let mut c = i as u32;
        let mut k = 0;
        while k < 8 {
            c = if c & 1 != 0 { 0xedb8_8320 ^ (c >> 1) } else { c >> 1 };
            k += 1;
        }
        table[i as usize] = c;
        i += 1;
    }
    table
}

static CRC_TABLE: [u32; 256] = crc_table();

pub fn crc32(bytes: &[u8]) -> u32 {
    let mut c = 0xffff_ffffu32;
    for &b in bytes {
        c = CRC_TABLE[((c ^ b as u32) & 0xff) as usize] ^ (c >> 8);
    }
    c ^ 0xffff_ffff
}

// ── Encode ──────────────────────────────────────────────────────────────

pub fn to_bytes<T: Real>(params: &ParameterSet<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(T::DTYPE.to_u8());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match T::DTYPE {
            Dtype::F32 => {
                for v in t.data() {
                    out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
                }
            }
            Dtype::F64 => {
                for v in t.data() {
                    out.extend_from_slice(&v.as_f64().to_le_bytes());
                }
            }
        }
    }
    let crc = crc32(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn save_checkpoint<T: Real>(params: &ParameterSet<T>, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(params)).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

// ── Decode ──────────────────────────────────────────────────────────────

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated);
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

pub fn from_bytes<T: Real>(bytes: &[u8]) -> Result<ParameterSet<T>> {
    if bytes.len() < MAGIC.len() + 12 {
        return Err(Error::Truncated);
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    let computed = crc32(body);
    if stored != computed {
        return Err(Error::CrcMismatch { stored, computed });
    }

    let mut cur = Cursor { bytes: body, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::UnknownVersion(version));
    }
    let count = cur.u32()? as usize;
    let mut params = ParameterSet::new();
    for _ in 0..count {
        let name_len = cur.u32()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|_| Error::Truncated)?;
        let dtype = Dtype::from_u8(cur.u8()?).ok_or(Error::Truncated)?;
        if dtype != T::DTYPE {
            return Err(Error::DtypeMismatch {
                name,
                stored: dtype,
                requested: T::DTYPE,
            });
        }
        let rank = cur.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let data: Vec<T> = match dtype {
            Dtype::F32 => cur
                .take(4 * numel)?
                .chunks_exact(4)
                .map(|c| T::from_f64(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                .collect(),
            Dtype::F64 => cur
                .take(8 * numel)?
                .chunks_exact(8)
                .map(|c| T::from_f64(f64::from_le_bytes(c.try_into().unwrap())))
                .collect(),
        };
        let tensor = Tensor::new(shape, data)?.with_grad();
        params.insert(name.clone(), tensor).map_err(|_| Error::DuplicateTensor(name))?;
    }
    if cur.pos != body.len() {
        return Err(Error::Truncated);
    }
    Ok(params)
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<ParameterSet<T>> {
    let bytes = fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn sample_params() -> ParameterSet<f32> {
        let mut rng = RngStream::new(3, &[1]);
        let mut p = ParameterSet::new();
        p.insert("a.w", Tensor::new(vec![2, 3], rng.normal_vec(6, 1.0)).unwrap())
            .unwrap();
        p.insert("a.b", Tensor::new(vec![3], rng.normal_vec(3, 1.0)).unwrap())
            .unwrap();
        p
    }

    #[test]
    fn roundtrip_is_bytewise_identical() {
        let p = sample_params();
        let bytes = to_bytes(&p);
        let q = from_bytes::<f32>(&bytes).unwrap();
        assert_eq!(to_bytes(&q), bytes);
        for ((n1, t1), (n2, t2)) in p.iter().zip(q.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            assert_eq!(t1.data(), t2.data());
        }
    }

    #[test]
    fn every_corrupted_byte_fails_crc() {
        let bytes = to_bytes(&sample_params());
        for pos in [0, 5, 12, bytes.len() / 2, bytes.len() - 5] {
            let mut bad = bytes.clone();
            bad[pos] ^= 0x40;
            let err = from_bytes::<f32>(&bad).unwrap_err();
            assert!(
                matches!(err, Error::CrcMismatch { .. }),
                "pos {pos}: {err:?}"
            );
        }
    }

    #[test]
    fn version_and_magic_are_checked() {
        // Version bump (with CRC recomputed) must be rejected explicitly.
        let mut bytes = to_bytes(&sample_params());
        bytes[4] = 9;
        let len = bytes.len();
        let crc = crc32(&bytes[..len - 4]);
        bytes[len - 4..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(
            from_bytes::<f32>(&bytes),
            Err(Error::UnknownVersion(9))
        ));

        let mut bytes = to_bytes(&sample_params());
        bytes[0] = b'X';
        let len = bytes.len();
        let crc = crc32(&bytes[..len - 4]);
        bytes[len - 4..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(from_bytes::<f32>(&bytes), Err(Error::BadMagic)));
    }

    #[test]
    fn dtype_mismatch_is_explicit() {
        let bytes = to_bytes(&sample_params());
        assert!(matches!(
            from_bytes::<f64>(&bytes),
            Err(Error::DtypeMismatch { .. })
        ));
    }

    #[test]
    fn duplicate_tensor_names_rejected() {
        // Hand-build a payload with the same tensor twice.
        let mut body = Vec::new();
        body.extend_from_slice(&MAGIC);
        body.extend_from_slice(&VERSION.to_le_bytes());
        body.extend_from_slice(&2u32.to_le_bytes());
        for _ in 0..2 {
            body.extend_from_slice(&1u32.to_le_bytes());
            body.push(b'w');
            body.push(Dtype::F32.to_u8());
            body.push(1);
            body.extend_from_slice(&1u32.to_le_bytes());
            body.extend_from_slice(&1.0f32.to_le_bytes());
        }
        let crc = crc32(&body);
        body.extend_from_slice(&crc.to_le_bytes());
        assert!(matches!(
            from_bytes::<f32>(&body),
            Err(Error::DuplicateTensor(_))
        ));
    }

    #[test]
    fn crc32_known_answer() {
        // Standard test vector: crc32("123456789") = 0xcbf43926.
        assert_eq!(crc32(b"123456789"), 0xcbf4_3926);
    }

    #[test]
    fn file_roundtrip() {
        let dir = std::env::temp_dir().join("sjsc-ckpt-tests");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("params.ckpt");
        let p = sample_params();
        save_checkpoint(&p, &path).unwrap();
        let q = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(to_bytes(&p), to_bytes(&q));
    }
}
