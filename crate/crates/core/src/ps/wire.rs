//! Framed binary messages between workers and the parameter server.
//!
//! Frame: magic `DPSG` | version u16 | msg_type u8 | body_len u64 | body,
//! all integers little-endian. Parameter and gradient payloads are written
//! as: precision u8 (element width) | count u64 | values in shape-map order.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::scalar::{Precision, Scalar};

pub const WIRE_MAGIC: &[u8; 4] = b"DPSG";
pub const WIRE_VERSION: u16 = 1;
pub const FRAME_HEADER_LEN: usize = 15;
/// Largest body a reader accepts.
pub const MAX_BODY_LEN: u64 = 1 << 32;

const MSG_FETCH: u8 = 1;
const MSG_PARAMS: u8 = 2;
const MSG_PUSH: u8 = 3;
const MSG_ACK: u8 = 4;

/// Dense vector of parameters or gradients at the run precision.
#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl Payload {
    pub fn from_slice<T: Scalar>(values: &[T]) -> Self {
        match T::PRECISION {
            Precision::F32 => Payload::F32(values.iter().map(|v| v.as_f64() as f32).collect()),
            Precision::F64 => Payload::F64(values.iter().map(|v| v.as_f64()).collect()),
        }
    }

    pub fn precision(&self) -> Precision {
        match self {
            Payload::F32(_) => Precision::F32,
            Payload::F64(_) => Precision::F64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Values as `T`; the payload precision must match.
    pub fn to_vec<T: Scalar>(&self) -> Result<Vec<T>> {
        if self.precision() != T::PRECISION {
            return Err(Error::protocol(
                0,
                format!("payload is {:?}, run uses {:?}", self.precision(), T::PRECISION),
            ));
        }
        Ok(match self {
            Payload::F32(v) => v.iter().map(|&x| T::of(x as f64)).collect(),
            Payload::F64(v) => v.iter().map(|&x| T::of(x)).collect(),
        })
    }

    fn encoded_len(&self) -> usize {
        9 + self.len() * self.precision().bytes()
    }

    pub(crate) fn encode(&self, out: &mut Vec<u8>) {
        out.push(self.precision().flag());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        match self {
            Payload::F32(v) => v.iter().for_each(|x| x.write_le(out)),
            Payload::F64(v) => v.iter().for_each(|x| x.write_le(out)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum WireMessage {
    FetchParams {
        worker_id: u32,
    },
    Params {
        version: u64,
        payload: Payload,
    },
    PushGrad {
        worker_id: u32,
        base_version: u64,
        payload: Payload,
        sample_count: u64,
    },
    Ack {
        applied_version: u64,
    },
}

impl WireMessage {
    fn msg_type(&self) -> u8 {
        match self {
            WireMessage::FetchParams { .. } => MSG_FETCH,
            WireMessage::Params { .. } => MSG_PARAMS,
            WireMessage::PushGrad { .. } => MSG_PUSH,
            WireMessage::Ack { .. } => MSG_ACK,
        }
    }

    pub fn body_len(&self) -> usize {
        match self {
            WireMessage::FetchParams { .. } => 4,
            WireMessage::Params { payload, .. } => 8 + payload.encoded_len(),
            WireMessage::PushGrad { payload, .. } => 4 + 8 + 8 + payload.encoded_len(),
            WireMessage::Ack { .. } => 8,
        }
    }
}

pub fn encode_message(m: &WireMessage) -> Vec<u8> {
    let body_len = m.body_len();
    let mut out = Vec::with_capacity(FRAME_HEADER_LEN + body_len);
    out.extend_from_slice(WIRE_MAGIC);
    out.extend_from_slice(&WIRE_VERSION.to_le_bytes());
    out.push(m.msg_type());
    out.extend_from_slice(&(body_len as u64).to_le_bytes());
    match m {
        WireMessage::FetchParams { worker_id } => out.extend_from_slice(&worker_id.to_le_bytes()),
        WireMessage::Params { version, payload } => {
            out.extend_from_slice(&version.to_le_bytes());
            payload.encode(&mut out);
        }
        WireMessage::PushGrad {
            worker_id,
            base_version,
            payload,
            sample_count,
        } => {
            out.extend_from_slice(&worker_id.to_le_bytes());
            out.extend_from_slice(&base_version.to_le_bytes());
            out.extend_from_slice(&sample_count.to_le_bytes());
            payload.encode(&mut out);
        }
        WireMessage::Ack { applied_version } => {
            out.extend_from_slice(&applied_version.to_le_bytes())
        }
    }
    debug_assert_eq!(out.len(), FRAME_HEADER_LEN + body_len);
    out
}

/// Bounds-checked little-endian reader that tracks its absolute offset.
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::protocol(self.pos, format!("truncated {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn payload(&mut self) -> Result<Payload> {
        let at = self.pos;
        let flag = self.u8("payload precision")?;
        let precision = Precision::from_flag(flag)
            .ok_or_else(|| Error::protocol(at, format!("bad precision flag {flag}")))?;
        let count = self.u64("payload count")?;
        let remaining = (self.bytes.len() - self.pos) as u64;
        let width = precision.bytes() as u64;
        if count.checked_mul(width).is_none_or(|n| n != remaining) {
            return Err(Error::protocol(
                self.pos,
                format!("payload of {count} values does not fill the {remaining} remaining bytes"),
            ));
        }
        let raw = self.take(remaining as usize, "payload values")?;
        Ok(match precision {
            Precision::F32 => Payload::F32(raw.chunks_exact(4).map(f32::read_le).collect()),
            Precision::F64 => Payload::F64(raw.chunks_exact(8).map(f64::read_le).collect()),
        })
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::protocol(self.pos, "trailing bytes after message body"));
        }
        Ok(())
    }
}

/// Decodes a payload that fills `bytes` exactly.
pub(crate) fn decode_payload(bytes: &[u8]) -> Result<Payload> {
    let mut c = Cursor { bytes, pos: 0 };
    let p = c.payload()?;
    c.finish()?;
    Ok(p)
}

/// Parsed frame header: message type and body length.
fn decode_header(bytes: &[u8]) -> Result<(u8, u64)> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != WIRE_MAGIC {
        return Err(Error::protocol(0, "bad magic"));
    }
    let version = c.u16("version")?;
    if version != WIRE_VERSION {
        return Err(Error::protocol(4, format!("unsupported wire version {version}")));
    }
    let ty = c.u8("message type")?;
    if !(MSG_FETCH..=MSG_ACK).contains(&ty) {
        return Err(Error::protocol(6, format!("unknown message type {ty}")));
    }
    let body_len = c.u64("body length")?;
    if body_len > MAX_BODY_LEN {
        return Err(Error::protocol(7, format!("body length {body_len} exceeds limit")));
    }
    Ok((ty, body_len))
}

fn decode_body(ty: u8, body: &[u8]) -> Result<WireMessage> {
    let mut c = Cursor {
        bytes: body,
        pos: 0,
    };
    let m = match ty {
        MSG_FETCH => WireMessage::FetchParams {
            worker_id: c.u32("worker id")?,
        },
        MSG_PARAMS => {
            let version = c.u64("version")?;
            WireMessage::Params {
                version,
                payload: c.payload()?,
            }
        }
        MSG_PUSH => {
            let worker_id = c.u32("worker id")?;
            let base_version = c.u64("base version")?;
            let sample_count = c.u64("sample count")?;
            WireMessage::PushGrad {
                worker_id,
                base_version,
                sample_count,
                payload: c.payload()?,
            }
        }
        MSG_ACK => WireMessage::Ack {
            applied_version: c.u64("applied version")?,
        },
        _ => unreachable!("message type checked in header"),
    };
    c.finish()?;
    Ok(m)
}

/// Decodes one complete frame. Errors carry the absolute byte offset.
pub fn decode_message(bytes: &[u8]) -> Result<WireMessage> {
    let (ty, body_len) = decode_header(bytes)?;
    let body = &bytes[FRAME_HEADER_LEN.min(bytes.len())..];
    if (body.len() as u64) < body_len {
        return Err(Error::protocol(
            bytes.len(),
            format!("truncated body: {} of {body_len} bytes", body.len()),
        ));
    }
    if body.len() as u64 > body_len {
        return Err(Error::protocol(
            FRAME_HEADER_LEN + body_len as usize,
            "trailing bytes after frame",
        ));
    }
    decode_body(ty, body).map_err(|e| match e {
        Error::Protocol { offset, reason } => Error::Protocol {
            offset: offset + FRAME_HEADER_LEN,
            reason,
        },
        other => other,
    })
}

pub fn write_message<W: Write>(w: &mut W, m: &WireMessage) -> Result<()> {
    w.write_all(&encode_message(m))?;
    w.flush()?;
    Ok(())
}

/// Reads one frame from a stream. Returns `Ok(None)` on a clean end of
/// stream before any header byte.
pub fn read_message<R: Read>(r: &mut R) -> Result<Option<WireMessage>> {
    let mut header = [0u8; FRAME_HEADER_LEN];
    let mut got = 0;
    while got < FRAME_HEADER_LEN {
        let n = r.read(&mut header[got..])?;
        if n == 0 {
            if got == 0 {
                return Ok(None);
            }
            return Err(Error::protocol(got, "stream ended inside frame header"));
        }
        got += n;
    }
    let (ty, body_len) = decode_header(&header)?;
    let mut body = vec![0u8; body_len as usize];
    r.read_exact(&mut body).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::protocol(FRAME_HEADER_LEN, "stream ended inside frame body")
        } else {
            Error::Io(e)
        }
    })?;
    decode_body(ty, &body)
        .map(Some)
        .map_err(|e| match e {
            Error::Protocol { offset, reason } => Error::Protocol {
                offset: offset + FRAME_HEADER_LEN,
                reason,
            },
            other => other,
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ack_round_trips() {
        let m = WireMessage::Ack { applied_version: 7 };
        let bytes = encode_message(&m);
        assert_eq!(bytes.len(), FRAME_HEADER_LEN + 8);
        assert_eq!(&bytes[..4], b"DPSG");
        assert_eq!(decode_message(&bytes).unwrap(), m);
    }

    #[test]
    fn push_body_length() {
        let m = WireMessage::PushGrad {
            worker_id: 3,
            base_version: 11,
            sample_count: 32,
            payload: Payload::F32(vec![0.25; 704]),
        };
        assert_eq!(m.body_len(), 704 * 4 + 29);
        assert_eq!(decode_message(&encode_message(&m)).unwrap(), m);
    }

    #[test]
    fn truncation_and_bad_magic() {
        let m = WireMessage::Params {
            version: 2,
            payload: Payload::F64(vec![1.0, 2.0, 3.0]),
        };
        let bytes = encode_message(&m);
        for cut in [0, 3, 10, FRAME_HEADER_LEN, bytes.len() - 1] {
            assert!(matches!(
                decode_message(&bytes[..cut]),
                Err(Error::Protocol { .. })
            ));
        }
        let mut bad = bytes.clone();
        bad[1] = b'X';
        assert!(matches!(
            decode_message(&bad),
            Err(Error::Protocol { offset: 0, .. })
        ));
    }

    #[test]
    fn payload_count_must_fill_body() {
        let m = WireMessage::Params {
            version: 1,
            payload: Payload::F32(vec![1.0; 4]),
        };
        let mut bytes = encode_message(&m);
        // claim five values while only four follow
        let count_at = FRAME_HEADER_LEN + 8 + 1;
        bytes[count_at] = 5;
        assert!(matches!(decode_message(&bytes), Err(Error::Protocol { .. })));
    }

    #[test]
    fn stream_reader_handles_eof() {
        let m = WireMessage::FetchParams { worker_id: 9 };
        let bytes = encode_message(&m);
        let mut r = &bytes[..];
        assert_eq!(read_message(&mut r).unwrap(), Some(m));
        assert_eq!(read_message(&mut r).unwrap(), None);
        let mut short = &bytes[..bytes.len() - 1];
        assert!(read_message(&mut short).is_err());
    }

    #[test]
    fn precision_mismatch_is_a_protocol_error() {
        let p = Payload::F32(vec![1.0]);
        assert!(p.to_vec::<f64>().is_err());
        assert_eq!(p.to_vec::<f32>().unwrap(), vec![1.0]);
    }
}
