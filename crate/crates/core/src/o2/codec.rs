//! Bit-exact frame codec.
//!
//! ```text
//! frame   = len:u32be body
//! body    = version:u8 qos:u8 seq:u64be
//!           sender_len:u32be sender
//!           site_len:u32be site
//!           kind:u8
//!           payload_len:u32be payload
//! ```

use std::io::{self, Read, Write};

use thiserror::Error;

use super::messages::{Envelope, PayloadKind, QosClass, PROTOCOL_VERSION};

/// Largest payload a frame may carry.
pub const MAX_PAYLOAD: usize = 16 * 1024 * 1024;
/// Longest sender or site identifier.
pub const MAX_ID_LEN: usize = 1024;
/// Fixed body overhead: version, qos, seq, three length prefixes, kind.
pub const BODY_OVERHEAD: usize = 1 + 1 + 8 + 4 + 4 + 1 + 4;
/// Largest body length accepted on decode.
pub const MAX_BODY: usize = MAX_PAYLOAD + 2 * MAX_ID_LEN + BODY_OVERHEAD;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("needs {needed} more bytes")]
    NeedsMoreBytes { needed: usize },
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u8),
    #[error("frame too large: {size} bytes (max {max})")]
    FrameTooLarge { size: usize, max: usize },
    #[error("identifier longer than {MAX_ID_LEN} bytes")]
    IdTooLong,
    #[error("unknown qos class {0}")]
    UnknownQos(u8),
    #[error("unknown payload kind {0}")]
    UnknownKind(u8),
    #[error("payload kind {kind:?} must travel as {expected:?}")]
    QosMismatch { kind: PayloadKind, expected: QosClass },
    #[error("malformed frame: {0}")]
    Malformed(&'static str),
}

pub fn encode(env: &Envelope) -> Result<Vec<u8>, CodecError> {
    if env.version != PROTOCOL_VERSION {
        return Err(CodecError::UnsupportedVersion(env.version));
    }
    if env.payload.len() > MAX_PAYLOAD {
        return Err(CodecError::FrameTooLarge {
            size: env.payload.len(),
            max: MAX_PAYLOAD,
        });
    }
    if env.sender.len() > MAX_ID_LEN || env.site.len() > MAX_ID_LEN {
        return Err(CodecError::IdTooLong);
    }
    let expected = env.payload_kind.qos_class();
    if env.qos_class != expected {
        return Err(CodecError::QosMismatch {
            kind: env.payload_kind,
            expected,
        });
    }
    let body_len = BODY_OVERHEAD + env.sender.len() + env.site.len() + env.payload.len();
    let mut out = Vec::with_capacity(4 + body_len);
    out.extend_from_slice(&(body_len as u32).to_be_bytes());
    out.push(env.version);
    out.push(env.qos_class as u8);
    out.extend_from_slice(&env.seq.to_be_bytes());
    out.extend_from_slice(&(env.sender.len() as u32).to_be_bytes());
    out.extend_from_slice(env.sender.as_bytes());
    out.extend_from_slice(&(env.site.len() as u32).to_be_bytes());
    out.extend_from_slice(env.site.as_bytes());
    out.push(env.payload_kind as u8);
    out.extend_from_slice(&(env.payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&env.payload);
    Ok(out)
}

/// Length of the frame `encode` would produce, without encoding.
pub fn encoded_len(env: &Envelope) -> usize {
    4 + BODY_OVERHEAD + env.sender.len() + env.site.len() + env.payload.len()
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.buf.len())
            .ok_or(CodecError::Malformed("field overruns declared body length"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, CodecError> {
        let n = self.u32()? as usize;
        if n > MAX_ID_LEN {
            return Err(CodecError::IdTooLong);
        }
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| CodecError::Malformed("identifier is not UTF-8"))
    }
}

/// Decodes one frame from the front of `buf`, returning the envelope and
/// the number of bytes consumed. Never reads past the declared length.
pub fn decode(buf: &[u8]) -> Result<(Envelope, usize), CodecError> {
    if buf.len() < 4 {
        return Err(CodecError::NeedsMoreBytes { needed: 4 - buf.len() });
    }
    let body_len = u32::from_be_bytes(buf[..4].try_into().unwrap()) as usize;
    if body_len > MAX_BODY {
        return Err(CodecError::FrameTooLarge {
            size: body_len,
            max: MAX_BODY,
        });
    }
    if buf.len() < 4 + body_len {
        return Err(CodecError::NeedsMoreBytes {
            needed: 4 + body_len - buf.len(),
        });
    }
    let env = decode_body(&buf[4..4 + body_len])?;
    Ok((env, 4 + body_len))
}

fn decode_body(body: &[u8]) -> Result<Envelope, CodecError> {
    let mut c = Cursor { buf: body, pos: 0 };
    let version = c.u8()?;
    if version != PROTOCOL_VERSION {
        return Err(CodecError::UnsupportedVersion(version));
    }
    let qos_raw = c.u8()?;
    let qos_class = QosClass::from_u8(qos_raw).ok_or(CodecError::UnknownQos(qos_raw))?;
    let seq = c.u64()?;
    let sender = c.string()?;
    let site = c.string()?;
    let kind_raw = c.u8()?;
    let payload_kind = PayloadKind::from_u8(kind_raw).ok_or(CodecError::UnknownKind(kind_raw))?;
    if payload_kind.qos_class() != qos_class {
        return Err(CodecError::QosMismatch {
            kind: payload_kind,
            expected: payload_kind.qos_class(),
        });
    }
    let n = c.u32()? as usize;
    if n > MAX_PAYLOAD {
        return Err(CodecError::FrameTooLarge {
            size: n,
            max: MAX_PAYLOAD,
        });
    }
    let payload = c.take(n)?.to_vec();
    if c.pos != body.len() {
        return Err(CodecError::Malformed("trailing bytes after payload"));
    }
    Ok(Envelope {
        version,
        qos_class,
        seq,
        sender,
        site,
        payload_kind,
        payload,
    })
}

/// Accumulates bytes from a stream and yields complete frames.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn extend(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Next complete envelope, `Ok(None)` if more bytes are needed.
    pub fn next_frame(&mut self) -> Result<Option<Envelope>, CodecError> {
        match decode(&self.buf) {
            Ok((env, used)) => {
                self.buf.drain(..used);
                Ok(Some(env))
            }
            Err(CodecError::NeedsMoreBytes { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("codec: {0}")]
    Codec(#[from] CodecError),
    #[error("connection closed")]
    Closed,
}

/// Reads exactly one frame from a blocking reader.
pub fn read_frame(r: &mut impl Read) -> Result<Envelope, StreamError> {
    let mut len = [0u8; 4];
    if let Err(e) = r.read_exact(&mut len) {
        return Err(if e.kind() == io::ErrorKind::UnexpectedEof {
            StreamError::Closed
        } else {
            e.into()
        });
    }
    let body_len = u32::from_be_bytes(len) as usize;
    if body_len > MAX_BODY {
        return Err(CodecError::FrameTooLarge {
            size: body_len,
            max: MAX_BODY,
        }
        .into());
    }
    let mut body = vec![0u8; body_len];
    r.read_exact(&mut body)?;
    Ok(decode_body(&body)?)
}

pub fn write_frame(w: &mut impl Write, env: &Envelope) -> Result<(), StreamError> {
    w.write_all(&encode(env)?)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fixture() -> Envelope {
        Envelope {
            version: 1,
            qos_class: QosClass::RanControl,
            seq: 42,
            sender: "smo".into(),
            site: "edge-1".into(),
            payload_kind: PayloadKind::PolicyUpdate,
            payload: br#"{"x":1}"#.to_vec(),
        }
    }

    #[test]
    fn layout_is_bit_exact() {
        let bytes = encode(&fixture()).unwrap();
        let mut expected = vec![];
        let body_len = 1 + 1 + 8 + 4 + 3 + 4 + 6 + 1 + 4 + 7;
        expected.extend_from_slice(&(body_len as u32).to_be_bytes());
        expected.extend_from_slice(&[1, 0]);
        expected.extend_from_slice(&42u64.to_be_bytes());
        expected.extend_from_slice(&[0, 0, 0, 3]);
        expected.extend_from_slice(b"smo");
        expected.extend_from_slice(&[0, 0, 0, 6]);
        expected.extend_from_slice(b"edge-1");
        expected.push(PayloadKind::PolicyUpdate as u8);
        expected.extend_from_slice(&[0, 0, 0, 7]);
        expected.extend_from_slice(br#"{"x":1}"#);
        assert_eq!(bytes, expected);
        assert_eq!(encoded_len(&fixture()), bytes.len());
    }

    #[test]
    fn round_trip_fixture() {
        let bytes = encode(&fixture()).unwrap();
        assert_eq!(decode(&bytes).unwrap(), (fixture(), bytes.len()));
    }

    #[test]
    fn truncated_needs_more_bytes() {
        let bytes = encode(&fixture()).unwrap();
        for cut in [0, 2, 4, 10, bytes.len() - 1] {
            assert!(matches!(decode(&bytes[..cut]), Err(CodecError::NeedsMoreBytes { .. })));
        }
    }

    #[test]
    fn version_two_rejected() {
        let mut bytes = encode(&fixture()).unwrap();
        bytes[4] = 2;
        assert_eq!(decode(&bytes), Err(CodecError::UnsupportedVersion(2)));
        let mut env = fixture();
        env.version = 2;
        assert_eq!(encode(&env), Err(CodecError::UnsupportedVersion(2)));
    }

    #[test]
    fn oversized_payload_rejected() {
        let mut env = fixture();
        env.payload = vec![0; MAX_PAYLOAD + 1];
        assert!(matches!(encode(&env), Err(CodecError::FrameTooLarge { .. })));
        let huge = ((MAX_BODY + 1) as u32).to_be_bytes();
        assert!(matches!(decode(&huge), Err(CodecError::FrameTooLarge { .. })));
    }

    #[test]
    fn qos_must_match_kind() {
        let mut env = fixture();
        env.qos_class = QosClass::AiMgmt;
        assert!(matches!(encode(&env), Err(CodecError::QosMismatch { .. })));
        let mut bytes = encode(&fixture()).unwrap();
        bytes[5] = QosClass::AiMgmt as u8;
        assert!(matches!(decode(&bytes), Err(CodecError::QosMismatch { .. })));
    }

    #[test]
    fn inner_length_cannot_escape_body() {
        let mut bytes = encode(&fixture()).unwrap();
        // Inflate the sender length past the body.
        bytes[14..18].copy_from_slice(&200u32.to_be_bytes());
        assert!(matches!(decode(&bytes), Err(CodecError::Malformed(_))));
    }

    #[test]
    fn stream_decoder_handles_split_frames() {
        let a = encode(&fixture()).unwrap();
        let mut second = fixture();
        second.seq = 43;
        let b = encode(&second).unwrap();
        let all: Vec<u8> = a.iter().chain(b.iter()).copied().collect();
        let mut dec = FrameDecoder::default();
        let mut out = vec![];
        for chunk in all.chunks(5) {
            dec.extend(chunk);
            while let Some(e) = dec.next_frame().unwrap() {
                out.push(e.seq);
            }
        }
        assert_eq!(out, vec![42, 43]);
    }

    #[test]
    fn blocking_stream_helpers() {
        let mut buf = vec![];
        write_frame(&mut buf, &fixture()).unwrap();
        let mut r = buf.as_slice();
        assert_eq!(read_frame(&mut r).unwrap(), fixture());
        assert!(matches!(read_frame(&mut r), Err(StreamError::Closed)));
    }

    pub(crate) fn arb_envelope() -> impl Strategy<Value = Envelope> {
        (
            any::<u64>(),
            "[a-z0-9-]{0,20}",
            "[a-zA-Z0-9_.é-]{0,20}",
            proptest::sample::select(PayloadKind::ALL.to_vec()),
            proptest::collection::vec(any::<u8>(), 0..256),
        )
            .prop_map(|(seq, sender, site, kind, payload)| Envelope {
                version: PROTOCOL_VERSION,
                qos_class: kind.qos_class(),
                seq,
                sender,
                site,
                payload_kind: kind,
                payload,
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]
        #[test]
        fn decode_inverts_encode(env in arb_envelope()) {
            let bytes = encode(&env).unwrap();
            let (back, used) = decode(&bytes).unwrap();
            prop_assert_eq!(used, bytes.len());
            prop_assert_eq!(back, env);
        }

        #[test]
        fn garbage_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
            let _ = decode(&bytes);
        }
    }
}
