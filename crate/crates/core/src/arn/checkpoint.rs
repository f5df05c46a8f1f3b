//! Checkpoint files: magic `ARNC`, format version, the architecture config,
//! every named parameter as f32 payload, and a footer with the provenance
//! metadata (epoch, validation loss, validation STOI).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::ArnConfig;
use crate::autodiff::ParamSet;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"ARNC";
const VERSION: u32 = 1;

/// Trained weights plus where they came from.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ArnConfig,
    pub params: ParamSet,
    pub epoch: u32,
    pub val_pcm: f64,
    pub val_stoi: f64,
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));

    put(MAGIC)?;
    put(&VERSION.to_le_bytes())?;
    let cfg = &ck.config;
    for v in [
        cfg.frame_len,
        cfg.hop,
        cfg.latent,
        cfg.num_blocks,
        cfg.heads,
        cfg.ffn_expansion,
    ] {
        put(&(v as u32).to_le_bytes())?;
    }
    put(&(cfg.dropout_p as f32).to_le_bytes())?;

    put(&(ck.params.len() as u32).to_le_bytes())?;
    for entry in ck.params.iter() {
        let name = entry.name.as_bytes();
        put(&(name.len() as u16).to_le_bytes())?;
        put(name)?;
        put(&[entry.dims.len() as u8])?;
        for &d in &entry.dims {
            put(&(d as u32).to_le_bytes())?;
        }
        for &v in entry.values.iter() {
            put(&(v as f32).to_le_bytes())?;
        }
    }

    put(&ck.epoch.to_le_bytes())?;
    put(&ck.val_pcm.to_le_bytes())?;
    put(&ck.val_stoi.to_le_bytes())?;
    w.flush().map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::MalformedCheckpoint(format!(
                "unexpected end of file at offset {}",
                self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    let mut c = Cursor {
        bytes: &bytes,
        pos: 0,
    };

    if c.take(4)? != MAGIC {
        return Err(Error::MalformedCheckpoint("missing ARNC magic".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::MalformedCheckpoint(format!(
            "unsupported format version {version}"
        )));
    }
    let config = ArnConfig {
        frame_len: c.u32()? as usize,
        hop: c.u32()? as usize,
        latent: c.u32()? as usize,
        num_blocks: c.u32()? as usize,
        heads: c.u32()? as usize,
        ffn_expansion: c.u32()? as usize,
        dropout_p: f64::from(c.f32()?),
    };
    config.validate().map_err(|e| {
        Error::MalformedCheckpoint(format!("invalid stored config: {e}"))
    })?;

    let count = c.u32()? as usize;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name_len = c.u16()? as usize;
        let name = String::from_utf8(c.take(name_len)?.to_vec())
            .map_err(|_| Error::MalformedCheckpoint("non-utf8 parameter name".into()))?;
        let rank = c.take(1)?[0] as usize;
        if rank == 0 || rank > 2 {
            return Err(Error::MalformedCheckpoint(format!(
                "parameter {name} has unsupported rank {rank}"
            )));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(c.u32()? as usize);
        }
        let total: usize = dims.iter().product();
        let mut data = Vec::with_capacity(total);
        for _ in 0..total {
            data.push(f64::from(c.f32()?));
        }
        let shape = if rank == 1 {
            (1, dims[0])
        } else {
            (dims[0], dims[1])
        };
        let values = Array2::from_shape_vec(shape, data)
            .map_err(|e| Error::MalformedCheckpoint(format!("bad shape for {name}: {e}")))?;
        params.push(name, dims, values);
    }

    let epoch = c.u32()?;
    let val_pcm = c.f64()?;
    let val_stoi = c.f64()?;
    if c.pos != bytes.len() {
        return Err(Error::MalformedCheckpoint(format!(
            "{} trailing bytes after footer",
            bytes.len() - c.pos
        )));
    }
    Ok(Checkpoint {
        config,
        params,
        epoch,
        val_pcm,
        val_stoi,
    })
}
