//! Versioned binary checkpoints of model parameters.
//!
//! Layout, little-endian: magic `MGCK`, u32 version, u32 array count, then
//! per array: u32 name length, UTF-8 name, u64 element count, f64 values.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::net::model::Model;

const MAGIC: &[u8; 4] = b"MGCK";
const VERSION: u32 = 1;

pub fn save(path: &Path, model: &mut Model) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    write_params(&mut file, model)
}

pub fn write_params(w: &mut impl Write, model: &mut Model) -> Result<()> {
    let params = model.params();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for p in params {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(p.values.len() as u64).to_le_bytes())?;
        for v in p.values.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load(path: &Path, model: &mut Model) -> Result<()> {
    let mut file = std::fs::File::open(path)?;
    read_params(&mut file, model)
}

pub fn read_params(r: &mut impl Read, model: &mut Model) -> Result<()> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    r.read_exact(&mut u32buf)?;
    let count = u32::from_le_bytes(u32buf) as usize;
    let params = model.params();
    if count != params.len() {
        return Err(Error::Format(format!(
            "checkpoint has {count} arrays, model has {}",
            params.len()
        )));
    }
    for p in params {
        r.read_exact(&mut u32buf)?;
        let name_len = u32::from_le_bytes(u32buf) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("bad name".into()))?;
        if name != p.name {
            return Err(Error::Format(format!(
                "parameter order mismatch: file has {name}, model expects {}",
                p.name
            )));
        }
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u64buf)?;
        let len = u64::from_le_bytes(u64buf) as usize;
        if len != p.values.len() {
            return Err(Error::Format(format!(
                "parameter {name} has {len} values in file, {} in model",
                p.values.len()
            )));
        }
        for v in p.values.iter_mut() {
            let mut f64buf = [0u8; 8];
            r.read_exact(&mut f64buf)?;
            *v = f64::from_le_bytes(f64buf);
        }
    }
    Ok(())
}
