//! Flat little-endian checkpoint format.
//!
//! ```text
//! magic            8 bytes  "LTLCKPT\0"
//! version          u32      1
//! arch             u8       0 = Vanilla, 1 = Informer, 2 = PatchTST
//! d_model          u32
//! n_heads          u32
//! n_encoder_layers u32
//! n_decoder_layers u32
//! ff_dim           u32
//! lookback         u32
//! horizon          u32
//! patch_len        u32
//! stride           u32
//! dropout          f64
//! probsparse       f64
//! custom_horizon   u8       0 or 1
//! input_width      u32
//! n_params         u32
//! per parameter, in canonical order:
//!   name_len u32, name (UTF-8), ndim u32, dims u32 x ndim, data f64 x numel
//! ```

use std::path::Path;

use super::config::{Arch, ModelConfig};
use super::forecaster::Forecaster;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"LTLCKPT\0";
const VERSION: u32 = 1;

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("value {v} does not fit in u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode(model: &Forecaster) -> Result<Vec<u8>> {
    let c = model.config();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(c.arch.id());
    for v in [
        c.d_model,
        c.n_heads,
        c.n_encoder_layers,
        c.n_decoder_layers,
        c.ff_dim,
        c.lookback,
        c.horizon,
        c.patch_len,
        c.stride,
    ] {
        put_u32(&mut buf, v)?;
    }
    buf.extend_from_slice(&c.dropout.to_le_bytes());
    buf.extend_from_slice(&c.probsparse_factor.to_le_bytes());
    buf.push(u8::from(c.allow_custom_horizon));
    put_u32(&mut buf, model.input_width())?;
    put_u32(&mut buf, model.params().len())?;
    for (name, t) in model.params().iter() {
        put_u32(&mut buf, name.len())?;
        buf.extend_from_slice(name.as_bytes());
        put_u32(&mut buf, t.ndim())?;
        for &d in t.shape() {
            put_u32(&mut buf, d)?;
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Forecaster> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let arch_id = r.u8()?;
    let arch = Arch::from_id(arch_id).ok_or_else(|| Error::Format(format!("unknown arch id {arch_id}")))?;
    let config = ModelConfig {
        arch,
        d_model: r.u32()?,
        n_heads: r.u32()?,
        n_encoder_layers: r.u32()?,
        n_decoder_layers: r.u32()?,
        ff_dim: r.u32()?,
        lookback: r.u32()?,
        horizon: r.u32()?,
        patch_len: r.u32()?,
        stride: r.u32()?,
        dropout: r.f64()?,
        probsparse_factor: r.f64()?,
        allow_custom_horizon: r.u8()? != 0,
    };
    let input_width = r.u32()?;
    let mut model = Forecaster::zeroed(&config, input_width)?;
    let n = r.u32()?;
    if n != model.params().len() {
        return Err(Error::Format(format!(
            "checkpoint has {n} parameters, layout expects {}",
            model.params().len()
        )));
    }
    let names = model.params().names().to_vec();
    for (i, expected) in names.iter().enumerate() {
        let name_len = r.u32()?;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
        if name != expected {
            return Err(Error::Format(format!("parameter {i} is '{name}', expected '{expected}'")));
        }
        let ndim = r.u32()?;
        let dims = (0..ndim).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let target = &mut model.params_mut().tensors_mut()[i];
        if dims != target.shape() {
            return Err(Error::Format(format!(
                "parameter '{name}' has shape {dims:?}, expected {:?}",
                target.shape()
            )));
        }
        for v in target.data_mut() {
            *v = r.f64()?;
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok(model)
}

pub fn save(model: &Forecaster, path: &Path) -> Result<()> {
    std::fs::write(path, encode(model)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Forecaster> {
    decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
