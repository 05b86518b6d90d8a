//! Framed messages exchanged between the two peers.
//!
//! Every frame is a 16-byte header (magic `XVQP`, version u16, message type u8, camera id
//! u8, frame index u32, payload length u32) followed by the payload. Integers are
//! little-endian.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FrameFeatures;
use crate::io::{decode_frame, encode_frame, read_array, read_u16, read_u32, read_u8, FormatError};
use crate::io::{FEATURE_RECORD_BYTES, FRAME_HEADER_BYTES};

pub const WIRE_MAGIC: &[u8; 4] = b"XVQP";
pub const WIRE_VERSION: u16 = 1;
pub const WIRE_HEADER_BYTES: usize = 16;
pub const REPLY_PAYLOAD_BYTES: usize = 7;
const NO_FRAME: u32 = u32::MAX;

#[derive(Debug, Error)]
pub enum WireError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("unknown reply status {0}")]
    UnknownStatus(u8),
    #[error("{0}")]
    Malformed(String),
}

impl From<std::io::Error> for WireError {
    fn from(e: std::io::Error) -> Self {
        WireError::Format(FormatError::Io(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[repr(u8)]
pub enum MessageType {
    Query = 0,
    Reply = 1,
    Heartbeat = 2,
    Fin = 3,
}

impl TryFrom<u8> for MessageType {
    type Error = WireError;

    fn try_from(v: u8) -> Result<Self, WireError> {
        Ok(match v {
            0 => MessageType::Query,
            1 => MessageType::Reply,
            2 => MessageType::Heartbeat,
            3 => MessageType::Fin,
            other => return Err(WireError::UnknownType(other)),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
#[repr(u8)]
pub enum ReplyStatus {
    Match = 0,
    NoMatch = 1,
    Initialising = 2,
}

impl TryFrom<u8> for ReplyStatus {
    type Error = WireError;

    fn try_from(v: u8) -> Result<Self, WireError> {
        Ok(match v {
            0 => ReplyStatus::Match,
            1 => ReplyStatus::NoMatch,
            2 => ReplyStatus::Initialising,
            other => return Err(WireError::UnknownStatus(other)),
        })
    }
}

/// A camera's query: the local features of one of its frames.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryMessage {
    pub camera_id: u8,
    pub frame_index: u32,
    pub features: FrameFeatures,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplyMessage {
    pub status: ReplyStatus,
    pub matched_frame: Option<u32>,
    pub inlier_count: u16,
}

impl ReplyMessage {
    pub fn matched(frame: u32, inlier_count: u16) -> Self {
        ReplyMessage {
            status: ReplyStatus::Match,
            matched_frame: Some(frame),
            inlier_count,
        }
    }

    pub fn no_match() -> Self {
        ReplyMessage {
            status: ReplyStatus::NoMatch,
            matched_frame: None,
            inlier_count: 0,
        }
    }

    pub fn initialising() -> Self {
        ReplyMessage {
            status: ReplyStatus::Initialising,
            matched_frame: None,
            inlier_count: 0,
        }
    }

    pub fn is_match(&self) -> bool {
        self.status == ReplyStatus::Match
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Query(QueryMessage),
    /// Answer to the partner's request for `frame_index`.
    Reply {
        camera_id: u8,
        frame_index: u32,
        reply: ReplyMessage,
    },
    /// Round marker for frames that do not share a query.
    Heartbeat { camera_id: u8, frame_index: u32 },
    /// The sender's sequence has ended.
    Fin { camera_id: u8, frame_index: u32 },
}

impl Message {
    pub fn message_type(&self) -> MessageType {
        match self {
            Message::Query(_) => MessageType::Query,
            Message::Reply { .. } => MessageType::Reply,
            Message::Heartbeat { .. } => MessageType::Heartbeat,
            Message::Fin { .. } => MessageType::Fin,
        }
    }

    pub fn camera_id(&self) -> u8 {
        match self {
            Message::Query(q) => q.camera_id,
            Message::Reply { camera_id, .. }
            | Message::Heartbeat { camera_id, .. }
            | Message::Fin { camera_id, .. } => *camera_id,
        }
    }

    pub fn frame_index(&self) -> u32 {
        match self {
            Message::Query(q) => q.frame_index,
            Message::Reply { frame_index, .. }
            | Message::Heartbeat { frame_index, .. }
            | Message::Fin { frame_index, .. } => *frame_index,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        match self {
            Message::Query(q) => encode_frame(&q.features, &mut payload),
            Message::Reply { reply, .. } => {
                payload.push(reply.status as u8);
                payload.extend_from_slice(&reply.matched_frame.unwrap_or(NO_FRAME).to_le_bytes());
                payload.extend_from_slice(&reply.inlier_count.to_le_bytes());
            }
            Message::Heartbeat { .. } | Message::Fin { .. } => {}
        }
        let mut out = Vec::with_capacity(WIRE_HEADER_BYTES + payload.len());
        out.extend_from_slice(WIRE_MAGIC);
        out.extend_from_slice(&WIRE_VERSION.to_le_bytes());
        out.push(self.message_type() as u8);
        out.push(self.camera_id());
        out.extend_from_slice(&self.frame_index().to_le_bytes());
        out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&payload);
        out
    }

    /// Reads one message, rejecting queries with more than `max_features` features.
    pub fn read_from<R: Read>(r: &mut R, max_features: usize) -> Result<Message, WireError> {
        let magic: [u8; 4] = read_array(r)?;
        if &magic != WIRE_MAGIC {
            return Err(FormatError::BadMagic {
                expected: *WIRE_MAGIC,
                found: magic,
            }
            .into());
        }
        let version = read_u16(r)?;
        if version != WIRE_VERSION {
            return Err(FormatError::Version {
                expected: WIRE_VERSION,
                found: version,
            }
            .into());
        }
        let kind = MessageType::try_from(read_u8(r)?)?;
        let camera_id = read_u8(r)?;
        let frame_index = read_u32(r)?;
        let len = read_u32(r)? as usize;
        let max_payload = FRAME_HEADER_BYTES + FEATURE_RECORD_BYTES * max_features;
        let expected_len = |n: usize| -> Result<(), WireError> {
            if len != n {
                return Err(WireError::Malformed(format!(
                    "{kind:?} payload is {len} bytes, expected {n}"
                )));
            }
            Ok(())
        };
        match kind {
            MessageType::Query => {
                if len < FRAME_HEADER_BYTES {
                    return Err(WireError::Malformed(format!("query payload of {len} bytes")));
                }
                if len > max_payload {
                    let count = (len - FRAME_HEADER_BYTES) / FEATURE_RECORD_BYTES;
                    return Err(FormatError::TooManyFeatures {
                        count,
                        max: max_features,
                    }
                    .into());
                }
                let mut body = vec![0u8; len];
                r.read_exact(&mut body).map_err(|e| match e.kind() {
                    std::io::ErrorKind::UnexpectedEof => FormatError::Truncated,
                    _ => FormatError::Io(e),
                })?;
                let mut cursor = body.as_slice();
                let features = decode_frame(&mut cursor, max_features)?;
                if !cursor.is_empty() {
                    return Err(WireError::Malformed(format!(
                        "{} trailing bytes after query features",
                        cursor.len()
                    )));
                }
                if features.frame_index != frame_index {
                    return Err(WireError::Malformed(format!(
                        "query header frame {frame_index} disagrees with payload frame {}",
                        features.frame_index
                    )));
                }
                Ok(Message::Query(QueryMessage {
                    camera_id,
                    frame_index,
                    features,
                }))
            }
            MessageType::Reply => {
                expected_len(REPLY_PAYLOAD_BYTES)?;
                let status = ReplyStatus::try_from(read_u8(r)?)?;
                let frame = read_u32(r)?;
                let inlier_count = read_u16(r)?;
                let matched_frame = (frame != NO_FRAME).then_some(frame);
                if (status == ReplyStatus::Match) != matched_frame.is_some() {
                    return Err(WireError::Malformed(format!(
                        "{status:?} reply with matched frame {matched_frame:?}"
                    )));
                }
                Ok(Message::Reply {
                    camera_id,
                    frame_index,
                    reply: ReplyMessage {
                        status,
                        matched_frame,
                        inlier_count,
                    },
                })
            }
            MessageType::Heartbeat => {
                expected_len(0)?;
                Ok(Message::Heartbeat {
                    camera_id,
                    frame_index,
                })
            }
            MessageType::Fin => {
                expected_len(0)?;
                Ok(Message::Fin {
                    camera_id,
                    frame_index,
                })
            }
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(&self.encode())?;
        w.flush()
    }
}

pub fn encode_query(msg: &QueryMessage) -> Vec<u8> {
    Message::Query(msg.clone()).encode()
}

pub fn decode_query(bytes: &[u8], max_features: usize) -> Result<QueryMessage, WireError> {
    let mut cursor = bytes;
    match Message::read_from(&mut cursor, max_features)? {
        Message::Query(q) if cursor.is_empty() => Ok(q),
        Message::Query(_) => Err(WireError::Malformed("trailing bytes after query".into())),
        other => Err(WireError::Malformed(format!(
            "expected a query, got {:?}",
            other.message_type()
        ))),
    }
}
