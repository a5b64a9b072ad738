//! Checkpoint file: a `dagcn-ckpt v1` header line, one line of JSON
//! metadata, then every parameter array in [`ParamId::ALL`] order. Each
//! array is written as `u32` rank, `u64` dims, then row-major `f64` data,
//! all little-endian. `E_U` is written with rank 3 (`n × h × d`).

use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use super::{Matrix, ModelConfig, ModelParams, ParamId};
use crate::data::VocabSizes;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "dagcn-ckpt v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub sizes: VocabSizes,
    pub seed: u64,
    /// Free-form run description supplied by the caller.
    #[serde(default)]
    pub manifest: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{CHECKPOINT_MAGIC}")?;
        let meta = serde_json::to_string(&self.meta)
            .map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
        writeln!(w, "{meta}")?;
        let h = self.meta.config.h;
        for id in ParamId::ALL {
            let m = self.params.get(id);
            let dims: Vec<u64> = if id == ParamId::Users {
                vec![(m.nrows() / h) as u64, h as u64, m.ncols() as u64]
            } else {
                vec![m.nrows() as u64, m.ncols() as u64]
            };
            w.write_all(&(dims.len() as u32).to_le_bytes())?;
            for d in &dims {
                w.write_all(&d.to_le_bytes())?;
            }
            for x in m.iter() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)
            .expect("writing to memory cannot fail");
        buf
    }

    pub fn read_from<R: BufRead>(mut r: R) -> Result<Checkpoint> {
        let mut line = String::new();
        r.read_line(&mut line)?;
        if line.trim_end() != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint(format!(
                "expected header '{CHECKPOINT_MAGIC}', found '{}'",
                line.trim_end()
            )));
        }
        line.clear();
        r.read_line(&mut line)?;
        let meta: CheckpointMeta = serde_json::from_str(line.trim_end())
            .map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;

        let mut read_array = |id: ParamId| -> Result<Matrix> {
            let rank = read_u32(&mut r)? as usize;
            if rank != 2 && rank != 3 {
                return Err(Error::Checkpoint(format!("{}: bad rank {rank}", id.name())));
            }
            let dims = (0..rank)
                .map(|_| read_u64(&mut r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let cols = dims[rank - 1];
            let rows: usize = dims[..rank - 1].iter().product();
            let n = rows
                .checked_mul(cols)
                .filter(|&n| n <= 1 << 32)
                .ok_or_else(|| Error::Checkpoint(format!("{}: dims too large", id.name())))?;
            let mut data = Vec::with_capacity(n);
            let mut buf = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut buf).map_err(truncated)?;
                data.push(f64::from_le_bytes(buf));
            }
            Ok(Matrix::from_shape_vec((rows, cols), data).expect("length matches dims"))
        };

        let mut arrays = Vec::with_capacity(ParamId::ALL.len());
        for id in ParamId::ALL {
            arrays.push(read_array(id)?);
        }
        let mut it = arrays.into_iter();
        let mut next = || it.next().expect("nine arrays");
        let params = ModelParams {
            item_a: next(),
            item_b: next(),
            users: next(),
            w1: next(),
            w2: next(),
            w3: next(),
            w4: next(),
            out_a: next(),
            out_b: next(),
        };
        meta.config.validate()?;
        params
            .check_shapes(&meta.config, meta.sizes)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
        }
        Ok(Checkpoint { meta, params })
    }
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Checkpoint("truncated array data".into())
    } else {
        Error::Io(e)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}
