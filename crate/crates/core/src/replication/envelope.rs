//! The wire unit and its bit-exact framing.
//!
//! ```text
//! frame   := len:u32 body            len = byte length of body
//! body    := kind:u8 from:u64 to:u64 key_len:u8 key payload_len:u32 payload
//! kind    := 1 state_sync | 2 digest | 3 digest_reply
//! ```
//!
//! All integers big-endian. `key_len` 0 means no key: state syncs carry
//! exactly one key, digests and digest replies summarize many keys inside
//! their payload.
//!
//! Digest payload (one entry per key, ascending key bytes):
//!
//! ```text
//! summary := count:u32 entry*
//! entry   := key_len:u8 key tag:u8 state_hash:u64 has_ctx:u8 [vv]
//! vv      := count:u32 (actor:u64 counter:u64)*
//! ```
//!
//! `state_hash` is FNV-1a 64 of the canonical state bytes; observed-remove
//! sets also carry their causal context for cheap inequality detection.
//! Digest-reply payload is a sorted key list: `count:u32 (key_len:u8 key)*`.

use crate::crdt::encoding::Reader;
use crate::crdt::{CrdtTypeTag, VersionVector};
use crate::replication::{NodeId, ReplicationError};
use crate::storage::StoreKey;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvelopeKind {
    StateSync,
    Digest,
    DigestReply,
}

impl EnvelopeKind {
    pub fn to_byte(self) -> u8 {
        match self {
            EnvelopeKind::StateSync => 1,
            EnvelopeKind::Digest => 2,
            EnvelopeKind::DigestReply => 3,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            1 => Some(EnvelopeKind::StateSync),
            2 => Some(EnvelopeKind::Digest),
            3 => Some(EnvelopeKind::DigestReply),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EnvelopeKind::StateSync => "state_sync",
            EnvelopeKind::Digest => "digest",
            EnvelopeKind::DigestReply => "digest_reply",
        }
    }
}

/// Addressed, typed wire unit. The payload is canonical state bytes for
/// state syncs and an encoded version summary for the digest kinds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub from: NodeId,
    pub to: NodeId,
    pub kind: EnvelopeKind,
    pub key: Option<StoreKey>,
    pub payload: Vec<u8>,
}

impl Envelope {
    pub fn state_sync(from: NodeId, to: NodeId, key: StoreKey, state: Vec<u8>) -> Self {
        Envelope {
            from,
            to,
            kind: EnvelopeKind::StateSync,
            key: Some(key),
            payload: state,
        }
    }

    /// Encoded frame length in bytes (what a socket transport would carry).
    pub fn wire_len(&self) -> usize {
        let key_len = self.key.as_ref().map_or(0, |k| k.as_bytes().len());
        4 + 1 + 8 + 8 + 1 + key_len + 4 + self.payload.len()
    }
}

pub fn encode_frame(env: &Envelope) -> Vec<u8> {
    let key_bytes = env.key.as_ref().map_or(&[][..], |k| k.as_bytes());
    let body_len = 1 + 8 + 8 + 1 + key_bytes.len() + 4 + env.payload.len();
    let mut out = Vec::with_capacity(4 + body_len);
    out.extend_from_slice(&(body_len as u32).to_be_bytes());
    out.push(env.kind.to_byte());
    out.extend_from_slice(&env.from.0.to_be_bytes());
    out.extend_from_slice(&env.to.0.to_be_bytes());
    out.push(key_bytes.len() as u8);
    out.extend_from_slice(key_bytes);
    out.extend_from_slice(&(env.payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&env.payload);
    out
}

pub fn decode_frame(bytes: &[u8]) -> Result<Envelope, ReplicationError> {
    let corrupt = |what: &str| ReplicationError::CorruptEnvelope(what.to_string());
    let mut r = Reader::new(bytes);
    let body_len = r.u32().map_err(|_| corrupt("truncated length"))? as usize;
    if r.remaining() != body_len {
        return Err(corrupt("frame length mismatch"));
    }
    let kind = EnvelopeKind::from_byte(r.u8().map_err(|_| corrupt("truncated kind"))?)
        .ok_or_else(|| corrupt("unknown kind"))?;
    let from = NodeId(r.u64().map_err(|_| corrupt("truncated from"))?);
    let to = NodeId(r.u64().map_err(|_| corrupt("truncated to"))?);
    if from == to {
        return Err(corrupt("from == to"));
    }
    let key_len = r.u8().map_err(|_| corrupt("truncated key length"))? as usize;
    let key = if key_len == 0 {
        None
    } else {
        let raw = r.take(key_len).map_err(|_| corrupt("truncated key"))?;
        let text = std::str::from_utf8(raw).map_err(|_| corrupt("key not UTF-8"))?;
        Some(StoreKey::new(text).map_err(|_| corrupt("invalid key"))?)
    };
    let payload_len = r.u32().map_err(|_| corrupt("truncated payload length"))? as usize;
    let payload = r
        .take(payload_len)
        .map_err(|_| corrupt("truncated payload"))?
        .to_vec();
    if r.remaining() != 0 {
        return Err(corrupt("trailing bytes"));
    }
    if kind == EnvelopeKind::StateSync && key.is_none() {
        return Err(corrupt("state sync without key"));
    }
    Ok(Envelope {
        from,
        to,
        kind,
        key,
        payload,
    })
}

/// One key's version summary inside a digest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DigestEntry {
    pub key: StoreKey,
    pub tag: CrdtTypeTag,
    pub state_hash: u64,
    pub context: Option<VersionVector>,
}

/// Per-key summaries, ascending by key.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DigestSummary {
    pub entries: Vec<DigestEntry>,
}

impl DigestSummary {
    pub fn encode(&self) -> Vec<u8> {
        debug_assert!(self
            .entries
            .windows(2)
            .all(|w| w[0].key.as_bytes() < w[1].key.as_bytes()));
        let mut out = Vec::new();
        out.extend_from_slice(&(self.entries.len() as u32).to_be_bytes());
        for e in &self.entries {
            let key = e.key.as_bytes();
            out.push(key.len() as u8);
            out.extend_from_slice(key);
            out.push(e.tag.to_byte());
            out.extend_from_slice(&e.state_hash.to_be_bytes());
            match &e.context {
                Some(vv) => {
                    out.push(1);
                    out.extend_from_slice(&(vv.len() as u32).to_be_bytes());
                    for (actor, counter) in vv.iter() {
                        out.extend_from_slice(&actor.0.to_be_bytes());
                        out.extend_from_slice(&counter.to_be_bytes());
                    }
                }
                None => out.push(0),
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ReplicationError> {
        let corrupt = |what: &str| ReplicationError::CorruptEnvelope(format!("digest: {what}"));
        let mut r = Reader::new(bytes);
        let count = r.u32().map_err(|_| corrupt("truncated count"))? as usize;
        let mut entries = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let key_len = r.u8().map_err(|_| corrupt("truncated key length"))? as usize;
            let raw = r.take(key_len).map_err(|_| corrupt("truncated key"))?;
            let text = std::str::from_utf8(raw).map_err(|_| corrupt("key not UTF-8"))?;
            let key = StoreKey::new(text).map_err(|_| corrupt("invalid key"))?;
            let tag = CrdtTypeTag::from_byte(r.u8().map_err(|_| corrupt("truncated tag"))?)
                .ok_or_else(|| corrupt("unknown tag"))?;
            let state_hash = r.u64().map_err(|_| corrupt("truncated hash"))?;
            let has_ctx = r.u8().map_err(|_| corrupt("truncated context flag"))?;
            let context = match has_ctx {
                0 => None,
                1 => {
                    let n = r.u32().map_err(|_| corrupt("truncated context"))? as usize;
                    let mut vv = VersionVector::new();
                    for _ in 0..n {
                        let actor = r.u64().map_err(|_| corrupt("truncated context actor"))?;
                        let counter = r.u64().map_err(|_| corrupt("truncated context counter"))?;
                        vv.observe(crate::crdt::ActorId(actor), counter);
                    }
                    Some(vv)
                }
                _ => return Err(corrupt("bad context flag")),
            };
            entries.push(DigestEntry {
                key,
                tag,
                state_hash,
                context,
            });
        }
        if r.remaining() != 0 {
            return Err(corrupt("trailing bytes"));
        }
        Ok(DigestSummary { entries })
    }
}

pub(crate) fn encode_key_list(keys: &[StoreKey]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(keys.len() as u32).to_be_bytes());
    for key in keys {
        let raw = key.as_bytes();
        out.push(raw.len() as u8);
        out.extend_from_slice(raw);
    }
    out
}

pub(crate) fn decode_key_list(bytes: &[u8]) -> Result<Vec<StoreKey>, ReplicationError> {
    let corrupt = |what: &str| ReplicationError::CorruptEnvelope(format!("key list: {what}"));
    let mut r = Reader::new(bytes);
    let count = r.u32().map_err(|_| corrupt("truncated count"))? as usize;
    let mut keys = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let key_len = r.u8().map_err(|_| corrupt("truncated key length"))? as usize;
        let raw = r.take(key_len).map_err(|_| corrupt("truncated key"))?;
        let text = std::str::from_utf8(raw).map_err(|_| corrupt("key not UTF-8"))?;
        keys.push(StoreKey::new(text).map_err(|_| corrupt("invalid key"))?);
    }
    if r.remaining() != 0 {
        return Err(corrupt("trailing bytes"));
    }
    Ok(keys)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_golden_bytes() {
        let env = Envelope::state_sync(
            NodeId(1),
            NodeId(2),
            StoreKey::new("k").unwrap(),
            vec![0xAA, 0xBB],
        );
        let frame = encode_frame(&env);
        let want = [
            0x00, 0x00, 0x00, 0x19, // body length = 25
            0x01, // kind: state sync
            0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x01, // from
            0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x02, // to
            0x01, 0x6B, // key "k"
            0x00, 0x00, 0x00, 0x02, 0xAA, 0xBB, // payload
        ];
        assert_eq!(frame, want);
        assert_eq!(frame.len(), env.wire_len());
        assert_eq!(decode_frame(&frame).unwrap(), env);
    }

    #[test]
    fn frame_rejects_damage() {
        let env = Envelope::state_sync(
            NodeId(1),
            NodeId(2),
            StoreKey::new("k").unwrap(),
            vec![1, 2, 3],
        );
        let frame = encode_frame(&env);

        let mut short = frame.clone();
        short.truncate(frame.len() - 1);
        assert!(decode_frame(&short).is_err());

        let mut bad_kind = frame.clone();
        bad_kind[4] = 9;
        assert!(decode_frame(&bad_kind).is_err());

        let mut self_addressed = frame.clone();
        self_addressed[12] = 2; // from = to = 2
        assert!(decode_frame(&self_addressed).is_err());

        let mut trailing = frame;
        trailing.push(0);
        assert!(decode_frame(&trailing).is_err());
    }

    #[test]
    fn digest_summary_roundtrip() {
        use crate::crdt::ActorId;
        let summary = DigestSummary {
            entries: vec![
                DigestEntry {
                    key: StoreKey::new("alpha").unwrap(),
                    tag: CrdtTypeTag::GCounter,
                    state_hash: 0xDEAD_BEEF,
                    context: None,
                },
                DigestEntry {
                    key: StoreKey::new("beta").unwrap(),
                    tag: CrdtTypeTag::OrSet,
                    state_hash: 7,
                    context: Some([(ActorId(1), 4)].into_iter().collect()),
                },
            ],
        };
        let bytes = summary.encode();
        assert_eq!(DigestSummary::decode(&bytes).unwrap(), summary);
    }

    #[test]
    fn key_list_roundtrip() {
        let keys = vec![StoreKey::new("a").unwrap(), StoreKey::new("zz").unwrap()];
        let bytes = encode_key_list(&keys);
        assert_eq!(decode_key_list(&bytes).unwrap(), keys);
    }
}
