//! Node-local snapshot file format.
//!
//! ```text
//! "LSPSNAP1"                          8-byte magic
//! record_count: u32 (big-endian)
//! per record:
//!   key_len:   u8
//!   key:       key_len bytes (UTF-8)
//!   type_tag:  u8
//!   state_len: u32 (big-endian)
//!   state:     canonical state bytes
//! checksum: u64 (big-endian) FNV-1a 64 of everything before it
//! ```
//!
//! Written atomically: temp file in the target directory, fsync, rename.

use std::fs::{self, File};
use std::io::{Read, Write};
use std::path::Path;

use super::{StorageError, StoreKey, StoredRecord};
use crate::crdt::encoding::Reader;
use crate::crdt::CrdtTypeTag;
use crate::hash::Fnv1a64;

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"LSPSNAP1";

pub(super) fn write<'a, I>(path: &Path, records: I) -> Result<(), StorageError>
where
    I: Iterator<Item = &'a StoredRecord>,
{
    let records: Vec<&StoredRecord> = records.collect();
    let mut buf = Vec::new();
    buf.extend_from_slice(SNAPSHOT_MAGIC);
    buf.extend_from_slice(&(records.len() as u32).to_be_bytes());
    for record in records {
        let key = record.key.as_bytes();
        buf.push(key.len() as u8);
        buf.extend_from_slice(key);
        buf.push(record.type_tag.to_byte());
        buf.extend_from_slice(&(record.state.len() as u32).to_be_bytes());
        buf.extend_from_slice(&record.state);
    }
    let mut hasher = Fnv1a64::new();
    hasher.update(&buf);
    buf.extend_from_slice(&hasher.finish().to_be_bytes());

    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    if let Some(dir) = dir {
        // Rename durability needs the directory synced too; ignore
        // filesystems that refuse to open directories.
        if let Ok(d) = File::open(dir) {
            let _ = d.sync_all();
        }
    }
    Ok(())
}

type RawRecord = (StoreKey, CrdtTypeTag, Vec<u8>);

pub(super) fn read(path: &Path) -> Result<Vec<RawRecord>, StorageError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < SNAPSHOT_MAGIC.len() + 4 + 8 {
        return Err(StorageError::CorruptSnapshot("file too short".into()));
    }
    if &bytes[..8] != SNAPSHOT_MAGIC {
        return Err(StorageError::CorruptSnapshot("bad magic".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 8);
    let stored_sum = u64::from_be_bytes(trailer.try_into().unwrap());
    let mut hasher = Fnv1a64::new();
    hasher.update(body);
    if hasher.finish() != stored_sum {
        return Err(StorageError::CorruptSnapshot("checksum mismatch".into()));
    }

    let mut r = Reader::new(&body[8..]);
    let truncated = |_| StorageError::CorruptSnapshot("truncated record".into());
    let count = r.u32().map_err(truncated)? as usize;
    let mut records = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let key_len = r.u8().map_err(truncated)? as usize;
        let key_bytes = r.take(key_len).map_err(truncated)?;
        let key = std::str::from_utf8(key_bytes)
            .map_err(|_| StorageError::CorruptSnapshot("key is not UTF-8".into()))
            .and_then(StoreKey::new)?;
        let tag_byte = r.u8().map_err(truncated)?;
        let tag = CrdtTypeTag::from_byte(tag_byte)
            .ok_or_else(|| StorageError::CorruptSnapshot(format!("unknown tag {tag_byte}")))?;
        let state_len = r.u32().map_err(truncated)? as usize;
        let state = r.take(state_len).map_err(truncated)?.to_vec();
        records.push((key, tag, state));
    }
    if r.remaining() != 0 {
        return Err(StorageError::CorruptSnapshot(format!(
            "{} trailing bytes",
            r.remaining()
        )));
    }
    Ok(records)
}
