//! `model.dpsg`: a trained parameter bundle with enough of its layer plan
//! to rebuild the shape map.
//!
//! Layout, little-endian: magic `DCAM` | version u16 | input_length u32 |
//! pool u32 | hidden_dim u32 | lambda f64 | encoder count u32 |
//! (feature_maps u32, kernel_len u32)* | decoder count u32 | (…)* |
//! param version u64 | payload as on the wire.

use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{LayerSpec, ModelConfig, ParamBundle, ParamLayout};
use crate::ps::wire::{decode_payload, Payload};
use crate::scalar::Scalar;

pub const MODEL_MAGIC: &[u8; 4] = b"DCAM";
pub const MODEL_VERSION: u16 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::config(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode_model<T: Scalar>(p: &ParamBundle<T>) -> Result<Vec<u8>> {
    let cfg = p.config();
    let mut out = Vec::with_capacity(64 + p.values().len() * T::PRECISION.bytes());
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    put_u32(&mut out, cfg.input_length)?;
    put_u32(&mut out, cfg.pool)?;
    put_u32(&mut out, cfg.hidden_dim)?;
    out.extend_from_slice(&cfg.lambda_reg.to_le_bytes());
    for layers in [&cfg.encoder, &cfg.decoder] {
        put_u32(&mut out, layers.len())?;
        for l in layers.iter() {
            put_u32(&mut out, l.feature_maps)?;
            put_u32(&mut out, l.kernel_len)?;
        }
    }
    out.extend_from_slice(&p.version.to_le_bytes());
    Payload::from_slice(p.values()).encode(&mut out);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + N)
            .ok_or_else(|| Error::format(self.pos, format!("truncated {what}")))?;
        self.pos += N;
        Ok(s.try_into().unwrap())
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(what)?) as usize)
    }

    fn layers(&mut self, what: &str) -> Result<Vec<LayerSpec>> {
        let n = self.u32(what)?;
        if n > 64 {
            return Err(Error::format(self.pos - 4, format!("{n} {what} layers is implausible")));
        }
        (0..n)
            .map(|_| Ok(LayerSpec::new(self.u32(what)?, self.u32(what)?)))
            .collect()
    }
}

/// Parses a model file. The precision stored in the file must match `T`.
pub fn decode_model<T: Scalar>(bytes: &[u8]) -> Result<ParamBundle<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if &r.take::<4>("magic")? != MODEL_MAGIC {
        return Err(Error::format(0, "bad magic, expected DCAM"));
    }
    let version = u16::from_le_bytes(r.take("version")?);
    if version != MODEL_VERSION {
        return Err(Error::format(4, format!("unsupported model file version {version}")));
    }
    let input_length = r.u32("input length")?;
    let pool = r.u32("pool")?;
    let hidden_dim = r.u32("hidden dim")?;
    let lambda_reg = f64::from_le_bytes(r.take("lambda")?);
    let encoder = r.layers("encoder")?;
    let decoder = r.layers("decoder")?;
    let cfg = ModelConfig {
        input_length,
        encoder,
        decoder,
        pool,
        hidden_dim,
        lambda_reg,
    };
    let layout = ParamLayout::new(&cfg).map_err(|e| Error::format(6, format!("layer plan: {e}")))?;
    let param_version = u64::from_le_bytes(r.take("parameter version")?);
    let at = r.pos;
    let payload = decode_payload(&bytes[at..]).map_err(|e| match e {
        Error::Protocol { offset, reason } => Error::format(at + offset, reason),
        other => other,
    })?;
    if payload.precision() != T::PRECISION {
        return Err(Error::format(
            at,
            format!("model stored as {:?}, requested {:?}", payload.precision(), T::PRECISION),
        ));
    }
    if payload.len() != layout.len() {
        return Err(Error::format(
            at + 1,
            format!("{} values stored, layer plan needs {}", payload.len(), layout.len()),
        ));
    }
    ParamBundle::from_values(Arc::new(layout), param_version, payload.to_vec()?)
}

pub fn write_model<T: Scalar>(path: impl AsRef<Path>, p: &ParamBundle<T>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_model(p)?).map_err(|e| Error::io_at(path, e))?;
    Ok(())
}

pub fn read_model<T: Scalar>(path: impl AsRef<Path>) -> Result<ParamBundle<T>> {
    let path = path.as_ref();
    decode_model(&std::fs::read(path).map_err(|e| Error::io_at(path, e))?)
}

/// Precision a model file was written at, without decoding the values.
pub fn model_precision(bytes: &[u8]) -> Result<crate::Precision> {
    if bytes.get(..4) != Some(MODEL_MAGIC.as_slice()) {
        return Err(Error::format(0, "bad magic, expected DCAM"));
    }
    let mut r = Reader { bytes, pos: 6 };
    r.pos += 12 + 8;
    for what in ["encoder", "decoder"] {
        let n = r.u32(what)?;
        r.pos += 8 * n;
    }
    r.pos += 8;
    let flag = *bytes
        .get(r.pos)
        .ok_or_else(|| Error::format(r.pos, "truncated payload precision"))?;
    crate::Precision::from_flag(flag).ok_or_else(|| Error::format(r.pos, format!("bad precision flag {flag}")))
}
