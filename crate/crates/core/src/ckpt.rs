//! E1CK checkpoint files.
//!
//! Layout: magic bytes `E1CK`, format version (u32 LE), entry count
//! (u64 LE), then per entry: name length (u64 LE), UTF-8 name, rank
//! (u64 LE), dims (u64 LE each), raw f64 LE payload. Round-trips are
//! bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::nn::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"E1CK";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CkptError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes {0:?}, expected {MAGIC:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {found} (this build reads {VERSION})")]
    VersionMismatch { found: u32 },
    #[error("truncated checkpoint while reading {context}")]
    Truncated { context: &'static str },
    #[error("entry name is not UTF-8")]
    BadName,
    #[error("duplicate entry `{0}`")]
    DuplicateEntry(String),
}

pub fn save(path: &Path, store: &ParamStore) -> Result<(), CkptError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u64).to_le_bytes())?;
    for (name, value) in store.iter() {
        w.write_all(&(name.len() as u64).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(value.rank() as u64).to_le_bytes())?;
        for &d in value.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &x in value.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParamStore, CkptError> {
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if magic != MAGIC {
        return Err(CkptError::BadMagic(magic));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(CkptError::VersionMismatch { found: version });
    }

    let count = read_u64(&mut r, "entry count")?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = read_u64(&mut r, "name length")? as usize;
        let mut name_bytes = vec![0u8; name_len];
        read_exact(&mut r, &mut name_bytes, "name")?;
        let name = String::from_utf8(name_bytes).map_err(|_| CkptError::BadName)?;

        let rank = read_u64(&mut r, "rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r, "dims")? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            read_exact(&mut r, &mut buf, "payload")?;
            data.push(f64::from_le_bytes(buf));
        }
        store
            .insert(name.clone(), Tensor::new(shape, data))
            .map_err(|_| CkptError::DuplicateEntry(name))?;
    }
    Ok(store)
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], context: &'static str) -> Result<(), CkptError> {
    r.read_exact(buf).map_err(|_| CkptError::Truncated { context })
}

fn read_u32(r: &mut impl Read) -> Result<u32, CkptError> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf, "version")?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read, context: &'static str) -> Result<u64, CkptError> {
    let mut buf = [0u8; 8];
    read_exact(r, &mut buf, context)?;
    Ok(u64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut r = rng::seed_rng(11);
        let mut store = ParamStore::new();
        store.insert("a.w", rng::randn(&[3, 4], &mut r)).unwrap();
        store.insert("a.b", rng::randn(&[4], &mut r)).unwrap();
        store.insert("scalarish", Tensor::scalar(-0.0)).unwrap();

        let dir = std::env::temp_dir().join("e1ck_roundtrip_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("s.e1ck");
        save(&path, &store).unwrap();
        let back = load(&path).unwrap();

        assert_eq!(store.len(), back.len());
        for ((n1, v1), (n2, v2)) in store.iter().zip(back.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(v1.shape(), v2.shape());
            for (a, b) in v1.data().iter().zip(v2.data()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn wrong_magic_is_named() {
        let dir = std::env::temp_dir().join("e1ck_magic_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.e1ck");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00").unwrap();
        let err = load(&path).unwrap_err();
        assert!(matches!(err, CkptError::BadMagic(_)));
    }

    #[test]
    fn truncation_is_detected() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::from_vec(vec![1.0, 2.0])).unwrap();
        let dir = std::env::temp_dir().join("e1ck_trunc_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.e1ck");
        save(&path, &store).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load(&path).unwrap_err(), CkptError::Truncated { .. }));
    }
}
