//! Flat binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!   magic "CDSV" | u32 version | u32 tensor count
//!   per tensor: u16 name length | name UTF-8 | u8 ndim | ndim x u32 dims
//!               | prod(dims) x f32 values
//!
//! Tensors are written in insertion order and re-added in file order, so a
//! write/read round trip reproduces the store bitwise, parameter ids included.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};

const MAGIC: [u8; 4] = *b"CDSV";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint(path: &Path, store: &ParamStore) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut emit = || -> std::io::Result<()> {
        w.write_all(&MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(store.len() as u32).to_le_bytes())?;
        for id in store.ids() {
            let name = store.name(id);
            let tensor = store.get(id);
            w.write_all(&(name.len() as u16).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&[tensor.dims().len() as u8])?;
            for &d in tensor.dims() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for &v in tensor.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    };
    emit().map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<ParamStore> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |reason: &str| Error::format(path, reason);

    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, path)?;
    if magic != MAGIC {
        return Err(bad("not a checkpoint file (bad magic)"));
    }
    let version = read_u32(&mut r, path)?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!(
            "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let count = read_u32(&mut r, path)? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = read_u16(&mut r, path)? as usize;
        let mut name_buf = vec![0u8; name_len];
        read_exact(&mut r, &mut name_buf, path)?;
        let name = String::from_utf8(name_buf)
            .map_err(|_| bad("tensor name is not valid UTF-8"))?;
        let mut ndim = [0u8; 1];
        read_exact(&mut r, &mut ndim, path)?;
        if ndim[0] == 0 {
            return Err(bad(&format!("tensor {name} has zero dimensions")));
        }
        let mut dims = Vec::with_capacity(ndim[0] as usize);
        for _ in 0..ndim[0] {
            dims.push(read_u32(&mut r, path)? as usize);
        }
        let len: usize = dims.iter().product();
        // 256 MiB guard against corrupted headers allocating absurd buffers
        if len == 0 || len > (1 << 26) {
            return Err(bad(&format!("tensor {name} has implausible size {len}")));
        }
        let mut raw = vec![0u8; len * 4];
        read_exact(&mut r, &mut raw, path)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let tensor = Tensor::new(dims, data)?;
        store
            .add(&name, tensor)
            .map_err(|_| bad(&format!("duplicate tensor name {name}")))?;
    }
    let mut tail = [0u8; 1];
    match r.read(&mut tail) {
        Ok(0) => Ok(store),
        Ok(_) => Err(bad("trailing bytes after final tensor")),
        Err(e) => Err(Error::io(path, e)),
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], path: &Path) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::format(path, "file truncated")
        } else {
            Error::io(path, e)
        }
    })
}

fn read_u16(r: &mut impl Read, path: &Path) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b, path)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, path)?;
    Ok(u32::from_le_bytes(b))
}
