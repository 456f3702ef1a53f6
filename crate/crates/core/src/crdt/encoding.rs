//! Canonical binary encoding of lattice states.
//!
//! The encoding is bit-exact: two implementations must produce identical
//! bytes for the same canonical state, because replicas converge on byte
//! equality and digests hash these bytes directly.
//!
//! Layout (all integers big-endian):
//!
//! ```text
//! state      := tag:u8 body
//! tag        := 1 g_counter | 2 pn_counter | 3 g_set | 4 or_set | 5 lww_register
//! bytes      := len:u32 raw[len]
//! counter_map:= count:u32 (actor:u64 value:u64)*      ascending actor, values > 0
//! vv         := count:u32 (actor:u64 counter:u64)*    ascending actor, counters > 0
//! g_counter  := counter_map
//! pn_counter := counter_map(increments) counter_map(decrements)
//! g_set      := count:u32 bytes*                      ascending element bytes
//! or_set     := count:u32 (bytes(elem) dots:u32 (actor:u64 counter:u64)*)* vv(context)
//!               entries ascending by element, dots ascending (actor, counter)
//! lww        := bytes(value) timestamp:u64 writer:u64
//! ```
//!
//! Decoding is strict: unsorted or zero-valued entries, uncovered dots,
//! empty dot sets, and trailing bytes are all rejected, so every decoded
//! value is canonical by construction.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::counter::{GCounter, PnCounter};
use super::dot::{ActorId, Dot, VersionVector};
use super::register::LwwRegister;
use super::set::OrSet;
use super::{CrdtTypeTag, CrdtValue};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("truncated input: needed {needed} more bytes")]
    Truncated { needed: usize },
    #[error("unknown variant tag {0}")]
    UnknownTag(u8),
    #[error("trailing {0} bytes after value")]
    TrailingBytes(usize),
    #[error("non-canonical encoding: {0}")]
    NonCanonical(&'static str),
}

pub fn encode(v: &CrdtValue) -> Vec<u8> {
    let mut out = vec![v.tag().to_byte()];
    match v {
        CrdtValue::GCounter(c) => put_counter_map(&mut out, c),
        CrdtValue::PnCounter(c) => {
            put_counter_map(&mut out, &c.inc);
            put_counter_map(&mut out, &c.dec);
        }
        CrdtValue::GSet(s) => {
            put_u32(&mut out, s.elements().len() as u32);
            for e in s.elements() {
                put_bytes(&mut out, e);
            }
        }
        CrdtValue::OrSet(s) => {
            let entries: Vec<_> = s.entries().collect();
            put_u32(&mut out, entries.len() as u32);
            for (element, dots) in entries {
                put_bytes(&mut out, element);
                put_u32(&mut out, dots.len() as u32);
                for dot in dots {
                    put_u64(&mut out, dot.actor.0);
                    put_u64(&mut out, dot.counter);
                }
            }
            put_vv(&mut out, s.context());
        }
        CrdtValue::LwwRegister(r) => {
            put_bytes(&mut out, &r.value);
            put_u64(&mut out, r.timestamp);
            put_u64(&mut out, r.writer.0);
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<CrdtValue, DecodeError> {
    let mut r = Reader::new(bytes);
    let tag = CrdtTypeTag::from_byte(r.u8()?).ok_or(DecodeError::UnknownTag(bytes[0]))?;
    let value = decode_body(&mut r, tag)?;
    if r.remaining() > 0 {
        return Err(DecodeError::TrailingBytes(r.remaining()));
    }
    Ok(value)
}

fn decode_body(r: &mut Reader<'_>, tag: CrdtTypeTag) -> Result<CrdtValue, DecodeError> {
    Ok(match tag {
        CrdtTypeTag::GCounter => CrdtValue::GCounter(read_counter_map(r)?),
        CrdtTypeTag::PnCounter => {
            let inc = read_counter_map(r)?;
            let dec = read_counter_map(r)?;
            CrdtValue::PnCounter(PnCounter { inc, dec })
        }
        CrdtTypeTag::GSet => {
            let count = r.u32()? as usize;
            let mut elements = Vec::with_capacity(count.min(4096));
            for _ in 0..count {
                elements.push(r.bytes()?.to_vec());
            }
            if !strictly_ascending(elements.iter()) {
                return Err(DecodeError::NonCanonical("g_set elements not sorted"));
            }
            CrdtValue::GSet(elements.into_iter().collect())
        }
        CrdtTypeTag::OrSet => {
            let count = r.u32()? as usize;
            let mut entries: BTreeMap<Vec<u8>, BTreeSet<Dot>> = BTreeMap::new();
            let mut prev_element: Option<Vec<u8>> = None;
            for _ in 0..count {
                let element = r.bytes()?.to_vec();
                if let Some(prev) = &prev_element {
                    if *prev >= element {
                        return Err(DecodeError::NonCanonical("or_set entries not sorted"));
                    }
                }
                let dot_count = r.u32()? as usize;
                if dot_count == 0 {
                    return Err(DecodeError::NonCanonical("or_set entry with no dots"));
                }
                let mut dots = BTreeSet::new();
                let mut prev_dot: Option<Dot> = None;
                for _ in 0..dot_count {
                    let actor = ActorId(r.u64()?);
                    let counter = r.u64()?;
                    if counter == 0 {
                        return Err(DecodeError::NonCanonical("dot counter zero"));
                    }
                    let dot = Dot::new(actor, counter);
                    if let Some(prev) = prev_dot {
                        if prev >= dot {
                            return Err(DecodeError::NonCanonical("or_set dots not sorted"));
                        }
                    }
                    prev_dot = Some(dot);
                    dots.insert(dot);
                }
                prev_element = Some(element.clone());
                entries.insert(element, dots);
            }
            let context = read_vv(r)?;
            let set = OrSet::from_parts(entries, context);
            if !set.is_well_formed() {
                return Err(DecodeError::NonCanonical("or_set dot outside context"));
            }
            CrdtValue::OrSet(set)
        }
        CrdtTypeTag::LwwRegister => {
            let value = r.bytes()?.to_vec();
            let timestamp = r.u64()?;
            let writer = ActorId(r.u64()?);
            if timestamp == 0 && (!value.is_empty() || writer != ActorId(0)) {
                return Err(DecodeError::NonCanonical("non-bottom register at ts 0"));
            }
            CrdtValue::LwwRegister(LwwRegister {
                value,
                timestamp,
                writer,
            })
        }
    })
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_be_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_be_bytes());
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    put_u32(out, b.len() as u32);
    out.extend_from_slice(b);
}

fn put_counter_map(out: &mut Vec<u8>, c: &GCounter) {
    let entries: Vec<_> = c.iter().collect();
    put_u32(out, entries.len() as u32);
    for (actor, count) in entries {
        put_u64(out, actor.0);
        put_u64(out, count);
    }
}

fn put_vv(out: &mut Vec<u8>, vv: &VersionVector) {
    put_u32(out, vv.len() as u32);
    for (actor, counter) in vv.iter() {
        put_u64(out, actor.0);
        put_u64(out, counter);
    }
}

fn read_counter_map(r: &mut Reader<'_>) -> Result<GCounter, DecodeError> {
    let count = r.u32()? as usize;
    let mut c = GCounter::new();
    let mut prev: Option<ActorId> = None;
    for _ in 0..count {
        let actor = ActorId(r.u64()?);
        let value = r.u64()?;
        if value == 0 {
            return Err(DecodeError::NonCanonical("zero counter entry"));
        }
        if let Some(p) = prev {
            if p >= actor {
                return Err(DecodeError::NonCanonical("counter entries not sorted"));
            }
        }
        prev = Some(actor);
        c.set_entry(actor, value);
    }
    Ok(c)
}

fn read_vv(r: &mut Reader<'_>) -> Result<VersionVector, DecodeError> {
    let count = r.u32()? as usize;
    let mut vv = VersionVector::new();
    let mut prev: Option<ActorId> = None;
    for _ in 0..count {
        let actor = ActorId(r.u64()?);
        let counter = r.u64()?;
        if counter == 0 {
            return Err(DecodeError::NonCanonical("zero version vector entry"));
        }
        if let Some(p) = prev {
            if p >= actor {
                return Err(DecodeError::NonCanonical("version vector not sorted"));
            }
        }
        prev = Some(actor);
        vv.observe(actor, counter);
    }
    Ok(vv)
}

fn strictly_ascending<'a, I: Iterator<Item = &'a Vec<u8>>>(mut iter: I) -> bool {
    let mut prev: Option<&Vec<u8>> = None;
    for e in iter.by_ref() {
        if let Some(p) = prev {
            if p >= e {
                return false;
            }
        }
        prev = Some(e);
    }
    true
}

pub(crate) struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(data: &'a [u8]) -> Self {
        Reader { data, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.remaining() < n {
            return Err(DecodeError::Truncated {
                needed: n - self.remaining(),
            });
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn bytes(&mut self) -> Result<&'a [u8], DecodeError> {
        let len = self.u32()? as usize;
        self.take(len)
    }
}

/// Serde adapter: byte-string payloads appear as UTF-8 strings in scenario
/// documents but stay `Vec<u8>` in memory.
pub mod serde_bytes_as_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        match std::str::from_utf8(bytes) {
            Ok(text) => s.serialize_str(text),
            Err(_) => Err(serde::ser::Error::custom("non-UTF-8 element")),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        Ok(String::deserialize(d)?.into_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crdt::GSet;

    fn a(n: u64) -> ActorId {
        ActorId(n)
    }

    #[test]
    fn gcounter_golden_bytes() {
        let v = CrdtValue::GCounter([(a(1), 3), (a(2), 5)].into_iter().collect());
        let want = [
            0x01, // tag
            0x00, 0x00, 0x00, 0x02, // entry count
            0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x01, // actor 1
            0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x03, // value 3
            0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x02, // actor 2
            0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x05, // value 5
        ];
        assert_eq!(encode(&v), want);
        assert_eq!(decode(&want).unwrap(), v);
    }

    #[test]
    fn gset_golden_bytes() {
        let v = CrdtValue::GSet([b"a".to_vec(), b"b".to_vec()].into_iter().collect());
        let want = [
            0x03, 0x00, 0x00, 0x00, 0x02, // tag, count
            0x00, 0x00, 0x00, 0x01, 0x61, // "a"
            0x00, 0x00, 0x00, 0x01, 0x62, // "b"
        ];
        assert_eq!(encode(&v), want);
        assert_eq!(decode(&want).unwrap(), v);
    }

    #[test]
    fn orset_golden_bytes() {
        let mut s = OrSet::new();
        s.add(b"x".to_vec(), a(1));
        s.add(b"x".to_vec(), a(1));
        let v = CrdtValue::OrSet(s);
        let want = [
            0x04, // tag
            0x00, 0x00, 0x00, 0x01, // one entry
            0x00, 0x00, 0x00, 0x01, 0x78, // element "x"
            0x00, 0x00, 0x00, 0x02, // two dots
            0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x01, // actor 1
            0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x01, // counter 1
            0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x01, // actor 1
            0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x02, // counter 2
            0x00, 0x00, 0x00, 0x01, // context: one entry
            0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x01, // actor 1
            0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x02, // max counter 2
        ];
        assert_eq!(encode(&v), want);
        assert_eq!(decode(&want).unwrap(), v);
    }

    #[test]
    fn lww_golden_bytes() {
        let v = CrdtValue::LwwRegister(LwwRegister {
            value: b"v".to_vec(),
            timestamp: 7,
            writer: a(9),
        });
        let want = [
            0x05, // tag
            0x00, 0x00, 0x00, 0x01, 0x76, // value "v"
            0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x07, // ts 7
            0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x09, // writer 9
        ];
        assert_eq!(encode(&v), want);
        assert_eq!(decode(&want).unwrap(), v);
    }

    #[test]
    fn strict_decode_rejects_non_canonical() {
        // GCounter with a zero entry.
        let zero_entry = [
            0x01, 0x00, 0x00, 0x00, 0x01, //
            0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x01, //
            0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00,
        ];
        assert!(decode(&zero_entry).is_err());

        // GSet with unsorted elements.
        let unsorted = [
            0x03, 0x00, 0x00, 0x00, 0x02, //
            0x00, 0x00, 0x00, 0x01, 0x62, //
            0x00, 0x00, 0x00, 0x01, 0x61,
        ];
        assert!(decode(&unsorted).is_err());

        // Unknown tag, truncation, trailing bytes.
        assert!(matches!(decode(&[0x09]), Err(DecodeError::UnknownTag(9))));
        assert!(matches!(
            decode(&[0x01, 0x00]),
            Err(DecodeError::Truncated { .. })
        ));
        let mut trailing = encode(&CrdtValue::GSet(GSet::new()));
        trailing.push(0xFF);
        assert!(matches!(
            decode(&trailing),
            Err(DecodeError::TrailingBytes(1))
        ));
    }

    #[test]
    fn orset_dot_outside_context_rejected() {
        let mut bytes = vec![0x04];
        bytes.extend_from_slice(&1u32.to_be_bytes());
        bytes.extend_from_slice(&1u32.to_be_bytes());
        bytes.push(b'x');
        bytes.extend_from_slice(&1u32.to_be_bytes());
        bytes.extend_from_slice(&1u64.to_be_bytes()); // actor 1
        bytes.extend_from_slice(&5u64.to_be_bytes()); // counter 5
        bytes.extend_from_slice(&0u32.to_be_bytes()); // empty context
        assert!(matches!(decode(&bytes), Err(DecodeError::NonCanonical(_))));
    }
}
