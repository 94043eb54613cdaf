//! Length-prefixed frames for cross-process knowledge exchange.
//!
//! A frame on the stream is:
//!
//! ```text
//! u32 LE  length of everything after this field
//! u8      message kind (0 = knowledge)
//! ...     body
//! ```
//!
//! The knowledge body is `sender_id u16`, `update_counter u64`,
//! `accumulated reward f64` (bit pattern; the reserved quiet-NaN
//! [`UNSCORED_AR_BITS`] means "no completed episode yet"), `wall_step
//! u64`, the policy snapshot, and optionally the value snapshot, all
//! little-endian. Snapshots are self-delimiting, so the value model's
//! presence is determined by whether bytes remain after the policy.
//!
//! In-process runs never touch this module; it exists for running agents
//! in separate processes over any `Read`/`Write` stream (e.g. a TCP
//! socket).

use super::KnowledgeMessage;
use crate::nn::snapshot::{self, SnapshotError};
use crate::AgentId;
use std::io::{self, Read, Write};
use thiserror::Error;

pub const FRAME_KIND_KNOWLEDGE: u8 = 0;

/// Quiet-NaN bit pattern reserved for "unscored" accumulated reward.
pub const UNSCORED_AR_BITS: u64 = 0x7FF8_0000_4E4F_4E45;

/// Frames larger than this are rejected as corrupt.
pub const MAX_FRAME_LEN: u32 = 64 << 20;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("frame too short: need {needed} bytes, have {have}")]
    TooShort { needed: usize, have: usize },
    #[error("unknown message kind {0}")]
    BadKind(u8),
    #[error("frame length {0} exceeds the {MAX_FRAME_LEN}-byte cap")]
    Oversized(u32),
    #[error("accumulated reward has a non-finite bit pattern {0:#018x} that is not the unscored sentinel")]
    BadReward(u64),
    #[error("model snapshot inside frame: {0}")]
    Snapshot(#[from] SnapshotError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

fn encode_ar(ar: Option<f64>) -> u64 {
    match ar {
        Some(v) => v.to_bits(),
        None => UNSCORED_AR_BITS,
    }
}

fn decode_ar(bits: u64) -> Result<Option<f64>, WireError> {
    if bits == UNSCORED_AR_BITS {
        return Ok(None);
    }
    let v = f64::from_bits(bits);
    if !v.is_finite() {
        return Err(WireError::BadReward(bits));
    }
    Ok(Some(v))
}

/// Encode one message as a complete frame (length prefix included).
pub fn encode_frame(msg: &KnowledgeMessage) -> Vec<u8> {
    let mut body = Vec::with_capacity(1 + 2 + 8 + 8 + 8 + msg.policy.len());
    body.push(FRAME_KIND_KNOWLEDGE);
    body.extend_from_slice(&msg.sender.0.to_le_bytes());
    body.extend_from_slice(&msg.update_counter.to_le_bytes());
    body.extend_from_slice(&encode_ar(msg.accumulated_reward).to_le_bytes());
    body.extend_from_slice(&msg.wall_step.to_le_bytes());
    body.extend_from_slice(&msg.policy);
    if let Some(value) = &msg.value {
        body.extend_from_slice(value);
    }
    let mut out = Vec::with_capacity(4 + body.len());
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend_from_slice(&body);
    out
}

/// Decode the payload of one frame (everything after the length prefix).
pub fn decode_payload(payload: &[u8]) -> Result<KnowledgeMessage, WireError> {
    let need = |n: usize| -> Result<(), WireError> {
        if payload.len() < n {
            Err(WireError::TooShort {
                needed: n,
                have: payload.len(),
            })
        } else {
            Ok(())
        }
    };
    need(1)?;
    if payload[0] != FRAME_KIND_KNOWLEDGE {
        return Err(WireError::BadKind(payload[0]));
    }
    need(1 + 2 + 8 + 8 + 8)?;
    let sender = AgentId(u16::from_le_bytes(payload[1..3].try_into().unwrap()));
    let update_counter = u64::from_le_bytes(payload[3..11].try_into().unwrap());
    let ar_bits = u64::from_le_bytes(payload[11..19].try_into().unwrap());
    let wall_step = u64::from_le_bytes(payload[19..27].try_into().unwrap());
    let accumulated_reward = decode_ar(ar_bits)?;
    let rest = &payload[27..];
    let (_, policy_len) = snapshot::deserialize_prefix(rest)?;
    let policy = rest[..policy_len].to_vec();
    let value_bytes = &rest[policy_len..];
    let value = if value_bytes.is_empty() {
        None
    } else {
        // Must parse as exactly one snapshot.
        snapshot::deserialize(value_bytes)?;
        Some(value_bytes.to_vec())
    };
    Ok(KnowledgeMessage {
        sender,
        update_counter,
        wall_step,
        accumulated_reward,
        policy,
        value,
    })
}

/// Decode one whole frame (length prefix plus payload, nothing more).
pub fn decode_frame(frame: &[u8]) -> Result<KnowledgeMessage, WireError> {
    if frame.len() < 4 {
        return Err(WireError::TooShort {
            needed: 4,
            have: frame.len(),
        });
    }
    let len = u32::from_le_bytes(frame[..4].try_into().unwrap());
    if len > MAX_FRAME_LEN {
        return Err(WireError::Oversized(len));
    }
    let needed = 4 + len as usize;
    if frame.len() < needed {
        return Err(WireError::TooShort {
            needed,
            have: frame.len(),
        });
    }
    decode_payload(&frame[4..needed])
}

/// Write one frame to a stream.
pub fn write_frame<W: Write>(writer: &mut W, msg: &KnowledgeMessage) -> io::Result<()> {
    writer.write_all(&encode_frame(msg))
}

/// Read one frame from a stream (blocking until complete).
pub fn read_frame<R: Read>(reader: &mut R) -> Result<KnowledgeMessage, WireError> {
    let mut len_buf = [0u8; 4];
    reader.read_exact(&mut len_buf)?;
    let len = u32::from_le_bytes(len_buf);
    if len > MAX_FRAME_LEN {
        return Err(WireError::Oversized(len));
    }
    let mut payload = vec![0u8; len as usize];
    reader.read_exact(&mut payload)?;
    decode_payload(&payload)
}
