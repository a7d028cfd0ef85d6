//! Parameter checkpoint container.
//!
//! Byte layout (all integers little-endian):
//!
//! ```text
//! offset  size       field
//! 0       4          magic "MPCK"
//! 4       1          version byte (currently 1)
//! 5       4          entry count, u32
//! then per entry, in ascending name order:
//!         2          name length, u16
//!         name_len   name, UTF-8
//!         1          rank, u8
//!         4 * rank   dimensions, u32 each
//!         4 * n      values, f32 each (n = product of dimensions)
//! ```
//!
//! Values are stored at 32-bit precision; loading widens back to f64, so a
//! save/load round trip is bitwise stable once values are f32-representable.

use crate::error::{Error, Result};
use crate::nn::params::ParamStore;
use std::io::{Read, Write};

pub const MAGIC: &[u8; 4] = b"MPCK";
pub const VERSION: u8 = 1;

pub fn write_checkpoint<W: Write>(store: &ParamStore, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (name, p) in store.iter() {
        let bytes = name.as_bytes();
        if bytes.len() > u16::MAX as usize {
            return Err(Error::Format(format!("parameter name too long: {name}")));
        }
        w.write_all(&(bytes.len() as u16).to_le_bytes())?;
        w.write_all(bytes)?;
        if p.shape.len() > u8::MAX as usize {
            return Err(Error::Format(format!("parameter rank too large: {name}")));
        }
        w.write_all(&[p.shape.len() as u8])?;
        for d in &p.shape {
            w.write_all(&(*d as u32).to_le_bytes())?;
        }
        for v in &p.values {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ParamStore> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "not a checkpoint file (magic {magic:02x?})"
        )));
    }
    let mut version = [0u8; 1];
    r.read_exact(&mut version)?;
    if version[0] != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {}",
            version[0]
        )));
    }
    let count = read_u32(&mut r)? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = read_u16(&mut r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Format("non-UTF-8 parameter name".into()))?;
        let mut rank = [0u8; 1];
        r.read_exact(&mut rank)?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            shape.push(read_u32(&mut r)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut values = Vec::with_capacity(n);
        let mut buf = [0u8; 4];
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            values.push(f32::from_le_bytes(buf) as f64);
        }
        store.insert(name, &shape, values);
    }
    Ok(store)
}

pub fn save_checkpoint(store: &ParamStore, path: &std::path::Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(store, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<ParamStore> {
    let data = std::fs::read(path)?;
    read_checkpoint(&data[..])
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut buf = [0u8; 2];
    r.read_exact(&mut buf)?;
    Ok(u16::from_le_bytes(buf))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn round_trip_preserves_f32_snapped_values() {
        let mut rng = Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        store.init_uniform("layer.w", &[3, 4], &mut rng);
        store.init_uniform("layer.b", &[3], &mut rng);
        store.snap_to_f32();

        let mut buf = Vec::new();
        write_checkpoint(&store, &mut buf).unwrap();
        let loaded = read_checkpoint(&buf[..]).unwrap();

        assert_eq!(loaded.len(), store.len());
        for (name, p) in store.iter() {
            let lp = loaded.get(name).unwrap();
            assert_eq!(lp.shape, p.shape);
            assert_eq!(lp.values, p.values, "values differ for {name}");
        }
    }

    #[test]
    fn serialization_is_deterministic() {
        let mut rng = Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        store.init_uniform("b.w", &[2, 2], &mut rng);
        store.init_uniform("a.w", &[2], &mut rng);
        let mut buf1 = Vec::new();
        write_checkpoint(&store, &mut buf1).unwrap();
        let mut buf2 = Vec::new();
        write_checkpoint(&store, &mut buf2).unwrap();
        assert_eq!(buf1, buf2);
    }

    #[test]
    fn rejects_bad_magic() {
        let buf = b"NOPE\x01\x00\x00\x00\x00".to_vec();
        assert!(read_checkpoint(&buf[..]).is_err());
    }

    #[test]
    fn rejects_unknown_version() {
        let mut buf = Vec::new();
        write_checkpoint(&ParamStore::new(), &mut buf).unwrap();
        buf[4] = 99;
        assert!(read_checkpoint(&buf[..]).is_err());
    }
}
