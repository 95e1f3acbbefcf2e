use std::fs;
use std::path::Path;

use super::{EmbeddingRecord, IndexError, PlanIndex};
use crate::kv::KvDoc;
use crate::volumes::{CaseMeta, ClassCriteria};

pub const INDEX_MAGIC: &[u8; 4] = b"PLIX";
pub const INDEX_VERSION: u32 = 1;

fn meta_text(r: &EmbeddingRecord) -> String {
    let m = &r.meta;
    let mut doc = KvDoc::new();
    doc.push("site", m.criteria.site)
        .push("levels", m.criteria.levels)
        .push("size", m.criteria.size)
        .push("location", m.criteria.location)
        .push("class_id", m.class_id)
        .push("protocol", &m.protocol)
        .push("split", m.split)
        .push("prescription", m.prescription)
        .push("dose_ref", &r.dose_ref);
    doc.to_text()
}

fn parse_meta(case_id: &str, text: &str) -> Result<(CaseMeta, String), IndexError> {
    let doc = KvDoc::parse(text)?;
    let bad = |e: String| IndexError::Format(format!("record `{case_id}`: {e}"));
    let criteria = ClassCriteria {
        site: doc.require("site")?.parse().map_err(bad)?,
        levels: doc.require("levels")?.parse().map_err(bad)?,
        size: doc.require("size")?.parse().map_err(bad)?,
        location: doc.require("location")?.parse().map_err(bad)?,
    };
    let meta = CaseMeta {
        case_id: case_id.to_string(),
        criteria,
        class_id: doc.parse_value("class_id")?,
        protocol: doc.require("protocol")?.to_string(),
        split: doc.require("split")?.parse().map_err(bad)?,
        prescription: doc.parse_value("prescription")?,
    };
    Ok((meta, doc.require("dose_ref")?.to_string()))
}

/// `PLIX`, version, dim, count, then per record: id, key-value meta block and
/// the vector. Integers are little-endian; lengths are u32 byte counts.
pub fn write_index(index: &PlanIndex) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(INDEX_MAGIC);
    out.extend_from_slice(&INDEX_VERSION.to_le_bytes());
    out.extend_from_slice(&(index.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(index.len() as u64).to_le_bytes());
    for r in index.records() {
        out.extend_from_slice(&(r.case_id.len() as u32).to_le_bytes());
        out.extend_from_slice(r.case_id.as_bytes());
        let meta = meta_text(r);
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        for v in &r.vector {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], IndexError> {
        if self.bytes.len() < n {
            return Err(IndexError::Format(format!("truncated while reading {what}")));
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn u32(&mut self, what: &str) -> Result<u32, IndexError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, IndexError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn text(&mut self, what: &str) -> Result<&'a str, IndexError> {
        let n = self.u32(what)? as usize;
        std::str::from_utf8(self.take(n, what)?).map_err(|_| IndexError::Format(format!("{what} is not UTF-8")))
    }
}

pub fn read_index(bytes: &[u8]) -> Result<PlanIndex, IndexError> {
    let mut r = Reader { bytes };
    if r.take(4, "magic")? != INDEX_MAGIC {
        return Err(IndexError::Format("bad magic bytes (not a PLIX index)".into()));
    }
    let version = r.u32("version")?;
    if version != INDEX_VERSION {
        return Err(IndexError::Format(format!("unsupported version {version}")));
    }
    let dim = r.u32("dim")? as usize;
    let count = r.u64("record count")?;
    let mut index = PlanIndex::new(dim);
    for _ in 0..count {
        let id = r.text("case id")?.to_string();
        let (meta, dose_ref) = parse_meta(&id, r.text("meta block")?)?;
        let vector = r
            .take(dim * 4, "vector")?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        index.insert(EmbeddingRecord {
            case_id: id,
            vector,
            meta,
            dose_ref,
        })?;
    }
    if !r.bytes.is_empty() {
        return Err(IndexError::Format(format!("{} trailing bytes", r.bytes.len())));
    }
    Ok(index)
}

pub fn save_index(index: &PlanIndex, path: &Path) -> Result<(), IndexError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, write_index(index))?;
    Ok(())
}

pub fn load_index(path: &Path) -> Result<PlanIndex, IndexError> {
    read_index(&fs::read(path)?)
}
