//! Little-endian binary formats for embedding and prototype files.
//!
//! Embedding file:
//! ```text
//! "ODAE" | version u32 | dim u32 | num_known u32 | num_total u32 | count u64
//! per record: id u64 | domain u8 | label i32 | dim x f32
//! ```
//! Prototype file:
//! ```text
//! "ODAP" | version u32 | dim u32 | class_count u32
//! per class: name_len u16 | name bytes (UTF-8) | dim x f32
//! ```

use std::fs;
use std::path::Path;

use super::{Domain, EmbeddingDataset, EmbeddingRecord, PrototypeBank};
use crate::error::{OdaError, Result};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"ODAE";
pub const PROTOTYPE_MAGIC: &[u8; 4] = b"ODAP";
pub const FORMAT_VERSION: u32 = 1;

pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| OdaError::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != expected {
            return Err(OdaError::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(expected)
            )));
        }
        Ok(())
    }

    pub(crate) fn version(&mut self) -> Result<()> {
        let v = self.u32()?;
        if v != FORMAT_VERSION {
            return Err(OdaError::Format(format!("unsupported version {v}")));
        }
        Ok(())
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| {
            OdaError::Format("vector length overflows".into())
        })?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        self.take(n)
    }

    pub(crate) fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(OdaError::Format(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub(crate) fn put_f32s(out: &mut Vec<u8>, values: impl IntoIterator<Item = f32>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn to_u32(value: usize, what: &str) -> Result<u32> {
    u32::try_from(value).map_err(|_| OdaError::Invariant(format!("{what} {value} exceeds u32")))
}

pub fn encode_embeddings(ds: &EmbeddingDataset) -> Result<Vec<u8>> {
    let dim = ds.dim();
    let mut out = Vec::with_capacity(28 + ds.records().len() * (13 + 4 * dim));
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(dim, "dim")?.to_le_bytes());
    out.extend_from_slice(&to_u32(ds.num_known_classes(), "num_known_classes")?.to_le_bytes());
    out.extend_from_slice(&to_u32(ds.num_total_classes(), "num_total_classes")?.to_le_bytes());
    out.extend_from_slice(&(ds.records().len() as u64).to_le_bytes());
    for r in ds.records() {
        out.extend_from_slice(&r.id.to_le_bytes());
        out.push(r.domain.to_byte());
        out.extend_from_slice(&r.label.to_le_bytes());
        put_f32s(&mut out, r.vector.iter().copied());
    }
    Ok(out)
}

pub fn decode_embeddings(buf: &[u8]) -> Result<EmbeddingDataset> {
    let mut rd = ByteReader::new(buf);
    rd.magic(EMBEDDING_MAGIC)?;
    rd.version()?;
    let dim = rd.u32()? as usize;
    let num_known = rd.u32()? as usize;
    let num_total = rd.u32()? as usize;
    let count = rd.u64()?;
    // Each record needs at least 13 bytes; reject counts the buffer cannot hold
    // before allocating.
    if count > (buf.len() as u64) / 13 {
        return Err(OdaError::Format(format!(
            "record count {count} exceeds file size"
        )));
    }
    let mut records = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let id = rd.u64()?;
        let domain_byte = rd.u8()?;
        let domain = Domain::from_byte(domain_byte)
            .ok_or_else(|| OdaError::Format(format!("unknown domain tag {domain_byte}")))?;
        let label = rd.i32()?;
        let vector = rd.f32s(dim)?;
        records.push(EmbeddingRecord {
            id,
            vector,
            label,
            domain,
        });
    }
    rd.finish()?;
    EmbeddingDataset::new(dim, num_known, num_total, records)
}

pub fn encode_prototypes(bank: &PrototypeBank) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(PROTOTYPE_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(bank.dim(), "dim")?.to_le_bytes());
    out.extend_from_slice(&to_u32(bank.len(), "class_count")?.to_le_bytes());
    for (name, proto) in bank.class_names().iter().zip(bank.prototypes()) {
        let len = u16::try_from(name.len())
            .map_err(|_| OdaError::Invariant(format!("class name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        put_f32s(&mut out, proto.iter().copied());
    }
    Ok(out)
}

pub fn decode_prototypes(buf: &[u8]) -> Result<PrototypeBank> {
    let mut rd = ByteReader::new(buf);
    rd.magic(PROTOTYPE_MAGIC)?;
    rd.version()?;
    let dim = rd.u32()? as usize;
    let count = rd.u32()? as usize;
    if count > buf.len() / 2 {
        return Err(OdaError::Format(format!("class count {count} exceeds file size")));
    }
    let mut names = Vec::with_capacity(count);
    let mut protos = Vec::with_capacity(count);
    for _ in 0..count {
        let len = rd.u16()? as usize;
        let name = std::str::from_utf8(rd.bytes(len)?)
            .map_err(|e| OdaError::Format(format!("class name is not UTF-8: {e}")))?;
        names.push(name.to_owned());
        protos.push(rd.f32s(dim)?);
    }
    rd.finish()?;
    PrototypeBank::new(dim, names, protos)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| OdaError::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| OdaError::io(path, e))
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingDataset> {
    decode_embeddings(&read_file(path.as_ref())?)
}

pub fn write_embeddings(ds: &EmbeddingDataset, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_embeddings(ds)?)
}

pub fn load_prototypes(path: impl AsRef<Path>) -> Result<PrototypeBank> {
    decode_prototypes(&read_file(path.as_ref())?)
}

pub fn write_prototypes(bank: &PrototypeBank, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_prototypes(bank)?)
}
