//! `.fmts` dataset files: a fixed little-endian header followed by the
//! row-major signal payload.

use std::fs;
use std::path::Path;

use crate::datagen::synth::SignalBatch;
use crate::error::{Error, Result};
use crate::scalar::{Precision, Scalar};

pub const DATASET_MAGIC: &[u8; 4] = b"FMTS";
pub const DATASET_VERSION: u16 = 1;
/// magic 4 | version 2 | n_signals 8 | length 2 | precision 1 | seed 8 | fingerprint 8
pub const DATASET_HEADER_LEN: usize = 33;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DatasetHeader {
    pub version: u16,
    pub n_signals: u64,
    pub length: u16,
    pub precision: Precision,
    pub seed: u64,
    pub design_fingerprint: u64,
}

impl DatasetHeader {
    pub fn new<T: Scalar>(batch: &SignalBatch<T>, seed: u64, design_fingerprint: u64) -> Result<Self> {
        let length = u16::try_from(batch.length())
            .map_err(|_| Error::config(format!("signal length {} exceeds u16", batch.length())))?;
        Ok(DatasetHeader {
            version: DATASET_VERSION,
            n_signals: batch.len() as u64,
            length,
            precision: T::PRECISION,
            seed,
            design_fingerprint,
        })
    }

    pub fn payload_len(&self) -> usize {
        self.n_signals as usize * self.length as usize * self.precision.bytes()
    }

    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.n_signals.to_le_bytes());
        out.extend_from_slice(&self.length.to_le_bytes());
        out.push(self.precision.flag());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.design_fingerprint.to_le_bytes());
    }

    fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < DATASET_HEADER_LEN {
            return Err(Error::format(bytes.len(), "truncated dataset header"));
        }
        if &bytes[..4] != DATASET_MAGIC {
            return Err(Error::format(0, "bad dataset magic"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != DATASET_VERSION {
            return Err(Error::format(4, format!("unsupported dataset version {version}")));
        }
        let n_signals = u64::from_le_bytes(bytes[6..14].try_into().unwrap());
        let length = u16::from_le_bytes([bytes[14], bytes[15]]);
        let precision = Precision::from_flag(bytes[16])
            .ok_or_else(|| Error::format(16, format!("bad precision flag {}", bytes[16])))?;
        let seed = u64::from_le_bytes(bytes[17..25].try_into().unwrap());
        let design_fingerprint = u64::from_le_bytes(bytes[25..33].try_into().unwrap());
        if length == 0 {
            return Err(Error::format(14, "zero signal length"));
        }
        Ok(DatasetHeader {
            version,
            n_signals,
            length,
            precision,
            seed,
            design_fingerprint,
        })
    }
}

pub fn encode_dataset<T: Scalar>(header: &DatasetHeader, signals: &SignalBatch<T>) -> Result<Vec<u8>> {
    if header.precision != T::PRECISION
        || header.n_signals != signals.len() as u64
        || header.length as usize != signals.length()
    {
        return Err(Error::shape("dataset header does not describe the payload"));
    }
    let mut out = Vec::with_capacity(DATASET_HEADER_LEN + header.payload_len());
    header.encode(&mut out);
    for &v in signals.data() {
        v.write_le(&mut out);
    }
    Ok(out)
}

/// Parses a dataset, converting the stored values to `T`.
pub fn decode_dataset<T: Scalar>(bytes: &[u8]) -> Result<(DatasetHeader, SignalBatch<T>)> {
    let header = DatasetHeader::decode(bytes)?;
    let body = &bytes[DATASET_HEADER_LEN..];
    let want = header.payload_len();
    if body.len() != want {
        return Err(Error::format(
            DATASET_HEADER_LEN + body.len().min(want),
            format!("payload holds {} bytes, header implies {want}", body.len()),
        ));
    }
    let data = match header.precision {
        Precision::F32 => body
            .chunks_exact(4)
            .map(|c| T::of(f32::read_le(c) as f64))
            .collect(),
        Precision::F64 => body.chunks_exact(8).map(|c| T::of(f64::read_le(c))).collect(),
    };
    Ok((header, SignalBatch::new(header.length as usize, data)?))
}

pub fn write_dataset<T: Scalar>(
    path: impl AsRef<Path>,
    header: &DatasetHeader,
    signals: &SignalBatch<T>,
) -> Result<()> {
    let bytes = encode_dataset(header, signals)?;
    let path = path.as_ref();
    fs::write(path, bytes).map_err(|e| Error::io_at(path, e))?;
    Ok(())
}

pub fn read_dataset<T: Scalar>(path: impl AsRef<Path>) -> Result<(DatasetHeader, SignalBatch<T>)> {
    let path = path.as_ref();
    decode_dataset(&fs::read(path).map_err(|e| Error::io_at(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_dataset_round_trips() {
        let b = SignalBatch::<f32>::empty(284);
        let h = DatasetHeader::new(&b, 1, 2).unwrap();
        let bytes = encode_dataset(&h, &b).unwrap();
        assert_eq!(bytes.len(), DATASET_HEADER_LEN);
        let (h2, b2) = decode_dataset::<f32>(&bytes).unwrap();
        assert_eq!(h, h2);
        assert_eq!(b, b2);
    }

    #[test]
    fn file_size_matches_layout() {
        let b = SignalBatch::new(284, vec![0.5f32; 1000 * 284]).unwrap();
        let h = DatasetHeader::new(&b, 0, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.fmts");
        write_dataset(&p, &h, &b).unwrap();
        assert_eq!(fs::metadata(&p).unwrap().len() as usize, DATASET_HEADER_LEN + 1000 * 284 * 4);
        let (_, back) = read_dataset::<f32>(&p).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let b = SignalBatch::new(4, vec![1.0f64; 8]).unwrap();
        let h = DatasetHeader::new(&b, 0, 0).unwrap();
        let mut bytes = encode_dataset(&h, &b).unwrap();
        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(decode_dataset::<f64>(truncated), Err(Error::Format { .. })));
        bytes[0] = b'X';
        assert!(matches!(
            decode_dataset::<f64>(&bytes),
            Err(Error::Format { offset: 0, .. })
        ));
    }
}
