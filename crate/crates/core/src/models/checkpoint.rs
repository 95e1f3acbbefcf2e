use std::fs;
use std::path::Path;

use super::{EncoderConfig, Model, ModelError, ModelKind, ParamStore};
use crate::autodiff::Tensor;
use crate::kv::KvDoc;

pub const CHECKPOINT_MAGIC: &str = "planret-checkpoint";
const VERSION: u32 = 1;
const END_HEADER: &[u8] = b"end_header\n";

fn header(model: &Model) -> KvDoc {
    let c = model.config();
    let p = model.params();
    let mut doc = KvDoc::new();
    doc.push("format", CHECKPOINT_MAGIC)
        .push("version", VERSION)
        .push("kind", model.kind())
        .push_list("widths", &c.widths)
        .push("groups", c.groups)
        .push("slope", c.slope)
        .push("embed_dim", c.embed_dim)
        .push("in_channels", c.in_channels)
        .push_list("input_dims", &c.input_dims)
        .push("params", p.len());
    for (i, (name, t)) in p.names().iter().zip(p.tensors()).enumerate() {
        let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        doc.push(&format!("param.{i}"), format!("{name} {}", dims.join(" ")));
    }
    doc.push("checksum", model.checksum());
    doc
}

/// Header text, `end_header`, then each tensor as little-endian f32 in
/// parameter order.
pub fn write_checkpoint(model: &Model) -> Vec<u8> {
    let mut out = header(model).to_text().into_bytes();
    out.extend_from_slice(END_HEADER);
    for t in model.params().tensors() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn corrupt(detail: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(detail.into())
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Model, ModelError> {
    let split = bytes
        .windows(END_HEADER.len())
        .position(|w| w == END_HEADER)
        .filter(|&p| p == 0 || bytes[p - 1] == b'\n')
        .ok_or_else(|| corrupt("missing end_header marker"))?;
    let text = std::str::from_utf8(&bytes[..split]).map_err(|_| corrupt("header is not UTF-8"))?;
    let doc = KvDoc::parse(text)?;
    if doc.get("format") != Some(CHECKPOINT_MAGIC) {
        return Err(corrupt("not a planret checkpoint"));
    }
    let version: u32 = doc.parse_value("version")?;
    if version != VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let kind: ModelKind = doc.require("kind")?.parse().map_err(corrupt)?;
    let dims: Vec<usize> = doc.parse_list("input_dims")?;
    let config = EncoderConfig {
        widths: doc.parse_list("widths")?,
        groups: doc.parse_value("groups")?,
        slope: doc.parse_value("slope")?,
        embed_dim: doc.parse_value("embed_dim")?,
        in_channels: doc.parse_value("in_channels")?,
        input_dims: dims
            .try_into()
            .map_err(|_| corrupt("input_dims needs three values"))?,
    };
    let count: usize = doc.parse_value("params")?;
    let mut blob = &bytes[split + END_HEADER.len()..];
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let key = format!("param.{i}");
        let raw = doc.require(&key)?;
        let mut parts = raw.split_whitespace();
        let name = parts.next().ok_or_else(|| corrupt(format!("{key} is empty")))?.to_string();
        let shape: Vec<usize> = parts
            .map(|s| s.parse().map_err(|_| corrupt(format!("{key}: bad dimension `{s}`"))))
            .collect::<Result<_, _>>()?;
        let n: usize = shape.iter().product();
        if blob.len() < n * 4 {
            return Err(corrupt(format!("truncated data for `{name}`")));
        }
        let (head, rest) = blob.split_at(n * 4);
        blob = rest;
        let data = head
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        entries.push((name, Tensor::new(shape, data)?));
    }
    if !blob.is_empty() {
        return Err(corrupt(format!("{} trailing bytes after parameter data", blob.len())));
    }
    let model = Model::from_parts(kind, config, ParamStore::new(entries))?;
    let expected = doc.require("checksum")?;
    if model.checksum() != expected {
        return Err(corrupt("checksum mismatch"));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<(), ModelError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, write_checkpoint(model))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model, ModelError> {
    read_checkpoint(&fs::read(path)?)
}
