//! Binary checkpoint container.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic      8 bytes  "DAGNATCK"
//! version    u32
//! header     u32 length + UTF-8 text: the model configuration as key=value
//!            lines followed by `step=<n>`
//! arrays     u32 count, then per array:
//!              u16 name length + UTF-8 name
//!              u8 dtype tag (1 = f64)
//!              u8 rank, u64 per dimension
//!              row-major payload
//! ```
//!
//! Model parameters are stored under their own names; optimizer moments, when
//! present, under `adam.m.<name>` and `adam.v.<name>`.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use crate::config::{parse_kv, ModelConfig};
use crate::network::Model;
use crate::optim::AdamW;
use crate::params::ParamStore;
use crate::ModelError;

pub const MAGIC: &[u8; 8] = b"DAGNATCK";
pub const VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    /// Completed optimizer steps.
    pub step: usize,
    pub optimizer: Option<AdamW>,
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &Model,
    step: usize,
    optimizer: Option<&AdamW>,
) -> Result<(), ModelError> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, model, step, optimizer)?;
    // Write then rename so a crash never leaves a truncated checkpoint.
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &buf)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_checkpoint<W: Write>(
    mut w: W,
    model: &Model,
    step: usize,
    optimizer: Option<&AdamW>,
) -> Result<(), ModelError> {
    w.write_all(MAGIC)?;
    w.write_u32::<LE>(VERSION)?;
    let mut header = model.cfg.to_text();
    header.push_str(&format!("step={step}\n"));
    if let Some(opt) = optimizer {
        header.push_str(&format!("adam_t={}\n", opt.t));
    }
    w.write_u32::<LE>(header.len() as u32)?;
    w.write_all(header.as_bytes())?;
    let p = &model.params;
    let mut arrays: Vec<(String, &Array2<f64>)> = (0..p.len()).map(|i| (p.name(i).to_string(), p.value(i))).collect();
    if let Some(opt) = optimizer {
        for i in 0..p.len() {
            arrays.push((format!("adam.m.{}", p.name(i)), &opt.m[i]));
        }
        for i in 0..p.len() {
            arrays.push((format!("adam.v.{}", p.name(i)), &opt.v[i]));
        }
    }
    w.write_u32::<LE>(arrays.len() as u32)?;
    for (name, a) in arrays {
        w.write_u16::<LE>(name.len() as u16)?;
        w.write_all(name.as_bytes())?;
        w.write_u8(DTYPE_F64)?;
        w.write_u8(2)?;
        w.write_u64::<LE>(a.nrows() as u64)?;
        w.write_u64::<LE>(a.ncols() as u64)?;
        for &x in a.iter() {
            w.write_f64::<LE>(x)?;
        }
    }
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, ModelError> {
    let bytes = std::fs::read(path)?;
    read_checkpoint(bytes.as_slice())
}

fn corrupt(e: std::io::Error) -> ModelError {
    ModelError::Checkpoint(format!("truncated or unreadable checkpoint: {e}"))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint, ModelError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(corrupt)?;
    if &magic != MAGIC {
        return Err(ModelError::VersionMismatch("not a checkpoint (bad magic bytes)".into()));
    }
    let version = r.read_u32::<LE>().map_err(corrupt)?;
    if version != VERSION {
        return Err(ModelError::VersionMismatch(format!(
            "format version {version}, this build reads version {VERSION}"
        )));
    }
    let header_len = r.read_u32::<LE>().map_err(corrupt)? as usize;
    let mut header = vec![0u8; header_len];
    r.read_exact(&mut header).map_err(corrupt)?;
    let header = String::from_utf8(header).map_err(|_| ModelError::Checkpoint("header is not UTF-8".into()))?;
    let mut kv = parse_kv(&header)?;
    let step: usize = kv
        .remove("step")
        .ok_or_else(|| ModelError::Checkpoint("header lacks step".into()))?
        .parse()
        .map_err(|_| ModelError::Checkpoint("bad step".into()))?;
    let adam_t: Option<u64> = match kv.remove("adam_t") {
        Some(t) => Some(t.parse().map_err(|_| ModelError::Checkpoint("bad adam_t".into()))?),
        None => None,
    };
    let cfg_text: String = kv.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    let cfg = ModelConfig::from_text(&cfg_text)?;

    let count = r.read_u32::<LE>().map_err(corrupt)? as usize;
    let mut named = Vec::with_capacity(count);
    for _ in 0..count {
        let len = r.read_u16::<LE>().map_err(corrupt)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(corrupt)?;
        let name = String::from_utf8(name).map_err(|_| ModelError::Checkpoint("array name is not UTF-8".into()))?;
        if r.read_u8().map_err(corrupt)? != DTYPE_F64 {
            return Err(ModelError::Checkpoint(format!("{name}: unsupported dtype")));
        }
        if r.read_u8().map_err(corrupt)? != 2 {
            return Err(ModelError::Checkpoint(format!("{name}: expected a matrix")));
        }
        let rows = r.read_u64::<LE>().map_err(corrupt)? as usize;
        let cols = r.read_u64::<LE>().map_err(corrupt)? as usize;
        let mut data = vec![0.0; rows * cols];
        r.read_f64_into::<LE>(&mut data).map_err(corrupt)?;
        let a = Array2::from_shape_vec((rows, cols), data).expect("shape matches length");
        named.push((name, a));
    }
    let mut params = ParamStore::default();
    let mut m = Vec::new();
    let mut v = Vec::new();
    for (name, a) in named {
        if name.starts_with("adam.m.") {
            m.push(a);
        } else if name.starts_with("adam.v.") {
            v.push(a);
        } else {
            params.add(&name, a);
        }
    }
    let model = Model::from_params(cfg, params)?;
    let optimizer = match adam_t {
        Some(t) if m.len() == model.params.len() && v.len() == model.params.len() => Some(AdamW { m, v, t }),
        Some(_) => return Err(ModelError::Checkpoint("incomplete optimizer state".into())),
        None => None,
    };
    Ok(Checkpoint { model, step, optimizer })
}
