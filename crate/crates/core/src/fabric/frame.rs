//! Wire frames exchanged by the reliable-connection engine.
//!
//! Layout (big-endian):
//!
//! ```text
//! +--------+------+-----+----------+-------+-------------+---------+
//! | 0x5642 | kind | seg | dest_qpn |  psn  | payload_len | payload |
//! |   2    |  1   |  1  |    3     |   3   |      4      |   ...   |
//! +--------+------+-----+----------+-------+-------------+---------+
//! ```
//!
//! `RNR_NAK` frames carry their delay hint in the low byte of `payload_len`
//! and have no payload.

use thiserror::Error;

use super::psn::PSN_MASK;
use crate::verbs::Mtu;

pub const FRAME_MAGIC: u16 = 0x5642;
pub const FRAME_HEADER_LEN: usize = 14;

/// Largest payload any frame may carry (the largest path MTU).
pub const MAX_FRAME_PAYLOAD: usize = 4096;

#[derive(Clone, Copy, Debug, Error, PartialEq, Eq)]
pub enum FrameError {
    #[error("bad frame magic {0:#06x}")]
    BadMagic(u16),
    #[error("frame truncated: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("unknown frame kind {0}")]
    UnknownKind(u8),
    #[error("unknown segment marker {0}")]
    UnknownSegment(u8),
    #[error("payload of {len} bytes exceeds limit of {limit}")]
    Oversized { len: usize, limit: usize },
    #[error("{0} bytes trailing after frame")]
    TrailingBytes(usize),
    #[error("malformed frame: {0}")]
    Malformed(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FrameKind {
    Data = 0,
    Ack = 1,
    RnrNak = 2,
}

/// Position of a data frame within its message.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Segment {
    Only = 0,
    First = 1,
    Middle = 2,
    Last = 3,
}

impl Segment {
    pub fn starts_message(self) -> bool {
        matches!(self, Segment::Only | Segment::First)
    }

    pub fn ends_message(self) -> bool {
        matches!(self, Segment::Only | Segment::Last)
    }

    fn from_u8(v: u8) -> Result<Self, FrameError> {
        Ok(match v {
            0 => Segment::Only,
            1 => Segment::First,
            2 => Segment::Middle,
            3 => Segment::Last,
            other => return Err(FrameError::UnknownSegment(other)),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FrameBody {
    Data { seg: Segment, payload: Vec<u8> },
    Ack,
    RnrNak { delay_hint: u8 },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub dest_qpn: u32,
    pub psn: u32,
    pub body: FrameBody,
}

impl Frame {
    pub fn data(dest_qpn: u32, psn: u32, seg: Segment, payload: Vec<u8>) -> Self {
        Frame { dest_qpn, psn, body: FrameBody::Data { seg, payload } }
    }

    pub fn ack(dest_qpn: u32, psn: u32) -> Self {
        Frame { dest_qpn, psn, body: FrameBody::Ack }
    }

    pub fn rnr_nak(dest_qpn: u32, psn: u32, delay_hint: u8) -> Self {
        Frame { dest_qpn, psn, body: FrameBody::RnrNak { delay_hint } }
    }

    pub fn kind(&self) -> FrameKind {
        match self.body {
            FrameBody::Data { .. } => FrameKind::Data,
            FrameBody::Ack => FrameKind::Ack,
            FrameBody::RnrNak { .. } => FrameKind::RnrNak,
        }
    }

    pub fn payload(&self) -> &[u8] {
        match &self.body {
            FrameBody::Data { payload, .. } => payload,
            _ => &[],
        }
    }

    pub fn encoded_len(&self) -> usize {
        FRAME_HEADER_LEN + self.payload().len()
    }

    /// Serializes the frame, rejecting payloads longer than `mtu`.
    pub fn encode(&self, mtu: Mtu) -> Result<Vec<u8>, FrameError> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode_into(mtu, &mut out)?;
        Ok(out)
    }

    pub fn encode_into(&self, mtu: Mtu, out: &mut Vec<u8>) -> Result<(), FrameError> {
        if self.dest_qpn > PSN_MASK {
            return Err(FrameError::Malformed("dest_qpn exceeds 24 bits"));
        }
        if self.psn > PSN_MASK {
            return Err(FrameError::Malformed("psn exceeds 24 bits"));
        }
        let (seg, len_field, payload): (u8, u32, &[u8]) = match &self.body {
            FrameBody::Data { seg, payload } => {
                if payload.len() > mtu.bytes() {
                    return Err(FrameError::Oversized { len: payload.len(), limit: mtu.bytes() });
                }
                (*seg as u8, payload.len() as u32, payload)
            }
            FrameBody::Ack => (Segment::Only as u8, 0, &[]),
            FrameBody::RnrNak { delay_hint } => (Segment::Only as u8, u32::from(*delay_hint), &[]),
        };
        out.extend_from_slice(&FRAME_MAGIC.to_be_bytes());
        out.push(self.kind() as u8);
        out.push(seg);
        out.extend_from_slice(&self.dest_qpn.to_be_bytes()[1..]);
        out.extend_from_slice(&self.psn.to_be_bytes()[1..]);
        out.extend_from_slice(&len_field.to_be_bytes());
        out.extend_from_slice(payload);
        Ok(())
    }

    /// Parses exactly one frame from `bytes`.
    pub fn decode(bytes: &[u8]) -> Result<Frame, FrameError> {
        if bytes.len() < 2 {
            return Err(FrameError::Truncated { needed: FRAME_HEADER_LEN, have: bytes.len() });
        }
        let magic = u16::from_be_bytes([bytes[0], bytes[1]]);
        if magic != FRAME_MAGIC {
            return Err(FrameError::BadMagic(magic));
        }
        if bytes.len() < FRAME_HEADER_LEN {
            return Err(FrameError::Truncated { needed: FRAME_HEADER_LEN, have: bytes.len() });
        }
        let kind = bytes[2];
        let seg = bytes[3];
        let dest_qpn = u32::from_be_bytes([0, bytes[4], bytes[5], bytes[6]]);
        let psn = u32::from_be_bytes([0, bytes[7], bytes[8], bytes[9]]);
        let len_field = u32::from_be_bytes([bytes[10], bytes[11], bytes[12], bytes[13]]);
        let rest = &bytes[FRAME_HEADER_LEN..];

        let body = match kind {
            0 => {
                let seg = Segment::from_u8(seg)?;
                let len = len_field as usize;
                if len > MAX_FRAME_PAYLOAD {
                    return Err(FrameError::Oversized { len, limit: MAX_FRAME_PAYLOAD });
                }
                if rest.len() < len {
                    return Err(FrameError::Truncated { needed: FRAME_HEADER_LEN + len, have: bytes.len() });
                }
                if rest.len() > len {
                    return Err(FrameError::TrailingBytes(rest.len() - len));
                }
                FrameBody::Data { seg, payload: rest.to_vec() }
            }
            1 | 2 => {
                if seg != Segment::Only as u8 {
                    return Err(FrameError::Malformed("control frame with segment marker"));
                }
                if !rest.is_empty() {
                    return Err(FrameError::TrailingBytes(rest.len()));
                }
                if kind == 1 {
                    if len_field != 0 {
                        return Err(FrameError::Malformed("ACK with nonzero length"));
                    }
                    FrameBody::Ack
                } else {
                    if len_field > 0xFF {
                        return Err(FrameError::Malformed("RNR_NAK hint exceeds one byte"));
                    }
                    FrameBody::RnrNak { delay_hint: len_field as u8 }
                }
            }
            other => return Err(FrameError::UnknownKind(other)),
        };
        Ok(Frame { dest_qpn, psn, body })
    }
}
