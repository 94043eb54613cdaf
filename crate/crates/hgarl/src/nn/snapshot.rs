//! Bit-exact model snapshots: the wire representation of a network.
//!
//! Layout, all little-endian:
//!
//! ```text
//! offset 0   magic  "HGRL"           4 bytes
//!        4   format version          u16   (currently 1)
//!        6   head kind               u8    (0 = softmax, 1 = value)
//!        7   layer count             u8    (number of layer dims, >= 2)
//!        8   layer dims              u32 x count
//!        ..  parameters              f32 bit patterns, fixed flat order
//!        ..  CRC32 (IEEE)            u32 over every preceding byte
//! ```
//!
//! Round-tripping reproduces every parameter bit for bit; after a model
//! adoption the adopter's snapshot therefore equals the sender's.

use super::{HeadKind, MlpModel};
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"HGRL";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum SnapshotError {
    #[error("bad magic byte at offset {offset}")]
    BadMagic { offset: usize },
    #[error("unsupported format version {got} (expected {expected})")]
    Version { got: u16, expected: u16 },
    #[error("unknown head kind code {0}")]
    BadHeadKind(u8),
    #[error("layer count {0} is invalid (need at least 2 dims)")]
    BadLayerCount(u8),
    #[error("zero layer dimension at index {0}")]
    ZeroDim(usize),
    #[error("truncated snapshot: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("{excess} trailing bytes after snapshot")]
    TrailingBytes { excess: usize },
}

const fn crc32_table() -> [u32; 256] {
    let mut table = [0u32; 256];
    let mut i = 0;
    while i < 256 {
        let mut c = i as u32;
        let mut k = 0;
        while k < 8 {
            c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
            k += 1;
        }
        table[i] = c;
        i += 1;
    }
    table
}

static CRC_TABLE: [u32; 256] = crc32_table();

/// CRC32 (IEEE 802.3, reflected polynomial 0xEDB88320).
pub fn crc32(bytes: &[u8]) -> u32 {
    let mut c = 0xFFFF_FFFFu32;
    for b in bytes {
        c = CRC_TABLE[((c ^ *b as u32) & 0xFF) as usize] ^ (c >> 8);
    }
    c ^ 0xFFFF_FFFF
}

/// Serialize a model into the snapshot format.
pub fn serialize(model: &MlpModel) -> Vec<u8> {
    let dims = model.layer_dims();
    assert!(dims.len() <= u8::MAX as usize, "too many layers to snapshot");
    let params = model.flat_params();
    let mut out = Vec::with_capacity(8 + dims.len() * 4 + params.len() * 4 + 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(model.head().code());
    out.push(dims.len() as u8);
    for d in dims {
        out.extend_from_slice(&(*d as u32).to_le_bytes());
    }
    for p in &params {
        out.extend_from_slice(&p.to_bits().to_le_bytes());
    }
    let crc = crc32(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Parse one snapshot from the start of `bytes`; returns the model and
/// the number of bytes consumed.
pub fn deserialize_prefix(bytes: &[u8]) -> Result<(MlpModel, usize), SnapshotError> {
    let need = |needed: usize| -> Result<(), SnapshotError> {
        if bytes.len() < needed {
            Err(SnapshotError::Truncated {
                needed,
                have: bytes.len(),
            })
        } else {
            Ok(())
        }
    };
    need(8)?;
    for (i, (got, want)) in bytes.iter().zip(MAGIC.iter()).enumerate() {
        if got != want {
            return Err(SnapshotError::BadMagic { offset: i });
        }
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(SnapshotError::Version {
            got: version,
            expected: FORMAT_VERSION,
        });
    }
    let head = HeadKind::from_code(bytes[6]).ok_or(SnapshotError::BadHeadKind(bytes[6]))?;
    let count = bytes[7] as usize;
    if count < 2 {
        return Err(SnapshotError::BadLayerCount(bytes[7]));
    }
    let dims_end = 8 + count * 4;
    need(dims_end)?;
    let mut dims = Vec::with_capacity(count);
    for i in 0..count {
        let off = 8 + i * 4;
        let d = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
        if d == 0 {
            return Err(SnapshotError::ZeroDim(i));
        }
        dims.push(d);
    }
    let param_count: usize = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
    let params_end = dims_end + param_count * 4;
    let total = params_end + 4;
    need(total)?;
    let mut params = Vec::with_capacity(param_count);
    for i in 0..param_count {
        let off = dims_end + i * 4;
        params.push(f32::from_bits(u32::from_le_bytes(
            bytes[off..off + 4].try_into().unwrap(),
        )));
    }
    let stored = u32::from_le_bytes(bytes[params_end..total].try_into().unwrap());
    let computed = crc32(&bytes[..params_end]);
    if stored != computed {
        return Err(SnapshotError::Checksum { stored, computed });
    }
    let mut model = MlpModel::zeros(&dims, head).expect("validated dims");
    model.set_flat_params(&params).expect("validated count");
    Ok((model, total))
}

/// Parse a snapshot that must span the whole input.
pub fn deserialize(bytes: &[u8]) -> Result<MlpModel, SnapshotError> {
    let (model, consumed) = deserialize_prefix(bytes)?;
    if consumed != bytes.len() {
        return Err(SnapshotError::TrailingBytes {
            excess: bytes.len() - consumed,
        });
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    #[test]
    fn crc32_known_value() {
        // The classic check value for "123456789".
        assert_eq!(crc32(b"123456789"), 0xCBF4_3926);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = SplitMix64::new(31415);
        for _ in 0..20 {
            let m =
                MlpModel::initialized(&[4, 16, 16, 2], HeadKind::SoftmaxPolicy, &mut rng).unwrap();
            let bytes = serialize(&m);
            let back = deserialize(&bytes).unwrap();
            assert_eq!(m.flat_params(), back.flat_params());
            assert_eq!(m.layer_dims(), back.layer_dims());
            assert_eq!(m.head(), back.head());
            // And re-serialization is byte-identical (canonical form).
            assert_eq!(bytes, serialize(&back));
        }
    }

    #[test]
    fn empty_input_is_a_format_error() {
        assert!(matches!(
            deserialize(&[]),
            Err(SnapshotError::Truncated { .. })
        ));
    }

    #[test]
    fn wrong_magic_names_the_offset() {
        let m = MlpModel::zeros(&[2, 2], HeadKind::LinearValue).unwrap();
        let mut bytes = serialize(&m);
        bytes[2] = b'X';
        assert_eq!(
            deserialize(&bytes),
            Err(SnapshotError::BadMagic { offset: 2 })
        );
    }

    #[test]
    fn version_mismatch_rejected() {
        let m = MlpModel::zeros(&[2, 2], HeadKind::LinearValue).unwrap();
        let mut bytes = serialize(&m);
        bytes[4] = 9;
        assert!(matches!(
            deserialize(&bytes),
            Err(SnapshotError::Version { got: 9, .. })
        ));
    }

    #[test]
    fn truncation_rejected() {
        let m = MlpModel::zeros(&[3, 4], HeadKind::SoftmaxPolicy).unwrap();
        let bytes = serialize(&m);
        for cut in [1, 7, 10, bytes.len() - 1] {
            assert!(matches!(
                deserialize(&bytes[..cut]),
                Err(SnapshotError::Truncated { .. })
            ));
        }
    }

    #[test]
    fn corrupted_payload_fails_checksum() {
        let mut rng = SplitMix64::new(8);
        let m = MlpModel::initialized(&[3, 4], HeadKind::SoftmaxPolicy, &mut rng).unwrap();
        let mut bytes = serialize(&m);
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(
            deserialize(&bytes),
            Err(SnapshotError::Checksum { .. })
        ));
    }
}
