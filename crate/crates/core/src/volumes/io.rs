//! Case files: raw little-endian voxel blocks plus a key-value `.meta` sidecar,
//! and the dataset manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    BodySite, CaseMeta, CaseVolume, ClassCriteria, PtvLocation, PtvSize, Split, TargetLevels, VolumeError, VoxelGrid,
};
use crate::kv::KvDoc;

pub const MANIFEST_FILE: &str = "manifest.csv";

fn format_err(path: &Path, detail: impl Into<String>) -> VolumeError {
    VolumeError::Format {
        path: path.display().to_string(),
        detail: detail.into(),
    }
}

fn case_path(dir: &Path, case_id: &str, ext: &str) -> PathBuf {
    dir.join(format!("{case_id}.{ext}"))
}

pub fn encode_f32(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_f32(bytes: &[u8]) -> Option<Vec<f32>> {
    if !bytes.len().is_multiple_of(4) {
        return None;
    }
    Some(
        bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
    )
}

fn meta_doc(case: &CaseVolume, meta: &CaseMeta) -> KvDoc {
    let mut doc = KvDoc::new();
    doc.push("case_id", &meta.case_id)
        .push_list("dims", &case.dims())
        .push_list("spacing", &case.spacing)
        .push("ct_dtype", "f32le")
        .push("mask_dtype", "u8")
        .push("dose_dtype", "f32le")
        .push("site", meta.criteria.site)
        .push("levels", meta.criteria.levels)
        .push("size", meta.criteria.size)
        .push("location", meta.criteria.location)
        .push("class_id", meta.class_id)
        .push("protocol", &meta.protocol)
        .push("split", meta.split)
        .push("prescription", meta.prescription);
    doc
}

pub fn write_case(dir: &Path, case: &CaseVolume, meta: &CaseMeta) -> Result<(), VolumeError> {
    case.validate()?;
    fs::create_dir_all(dir)?;
    let id = &meta.case_id;
    fs::write(case_path(dir, id, "ct.vol"), encode_f32(case.ct.data()))?;
    fs::write(case_path(dir, id, "mask.vol"), case.mask.data())?;
    fs::write(case_path(dir, id, "dose.vol"), encode_f32(case.dose.data()))?;
    fs::write(case_path(dir, id, "meta"), meta_doc(case, meta).to_text())?;
    Ok(())
}

pub fn read_meta(dir: &Path, case_id: &str) -> Result<(CaseMeta, [usize; 3], [f64; 3]), VolumeError> {
    let path = case_path(dir, case_id, "meta");
    let doc = KvDoc::parse(&fs::read_to_string(&path)?)?;
    let parse_enum = |key: &str| -> Result<String, VolumeError> { Ok(doc.require(key)?.to_string()) };
    let criteria = ClassCriteria {
        site: parse_enum("site")?.parse::<BodySite>().map_err(|e| format_err(&path, e))?,
        levels: parse_enum("levels")?.parse::<TargetLevels>().map_err(|e| format_err(&path, e))?,
        size: parse_enum("size")?.parse::<PtvSize>().map_err(|e| format_err(&path, e))?,
        location: parse_enum("location")?.parse::<PtvLocation>().map_err(|e| format_err(&path, e))?,
    };
    let class_id: u8 = doc.parse_value("class_id")?;
    if class_id != criteria.class_id() {
        return Err(format_err(
            &path,
            format!("class_id {class_id} disagrees with criteria ({})", criteria.class_id()),
        ));
    }
    let dims: Vec<usize> = doc.parse_list("dims")?;
    let spacing: Vec<f64> = doc.parse_list("spacing")?;
    let (Ok(dims), Ok(spacing)) = (<[usize; 3]>::try_from(dims), <[f64; 3]>::try_from(spacing)) else {
        return Err(format_err(&path, "dims and spacing need three values"));
    };
    let meta = CaseMeta {
        case_id: doc.require("case_id")?.to_string(),
        criteria,
        class_id,
        protocol: doc.get("protocol").unwrap_or("").to_string(),
        split: parse_enum("split")?.parse::<Split>().map_err(|e| format_err(&path, e))?,
        prescription: doc.parse_value("prescription")?,
    };
    if meta.case_id != case_id {
        return Err(format_err(&path, format!("sidecar names case `{}`", meta.case_id)));
    }
    Ok((meta, dims, spacing))
}

pub fn read_case(dir: &Path, case_id: &str) -> Result<(CaseVolume, CaseMeta), VolumeError> {
    let (meta, dims, spacing) = read_meta(dir, case_id)?;
    let n: usize = dims.iter().product();
    let read_f32 = |ext: &str| -> Result<VoxelGrid<f32>, VolumeError> {
        let path = case_path(dir, case_id, ext);
        let bytes = fs::read(&path)?;
        let values = decode_f32(&bytes).filter(|v| v.len() == n).ok_or_else(|| {
            format_err(&path, format!("expected {} bytes for dims {dims:?}, found {}", n * 4, bytes.len()))
        })?;
        VoxelGrid::new(dims, values)
    };
    let ct = read_f32("ct.vol")?;
    let dose = read_f32("dose.vol")?;
    let mask_path = case_path(dir, case_id, "mask.vol");
    let mask_bytes = fs::read(&mask_path)?;
    if mask_bytes.len() != n {
        return Err(format_err(
            &mask_path,
            format!("expected {n} bytes for dims {dims:?}, found {}", mask_bytes.len()),
        ));
    }
    let mask = VoxelGrid::new(dims, mask_bytes)?;
    Ok((CaseVolume::new(ct, mask, dose, spacing)?, meta))
}

/// One manifest row.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub case_id: String,
    pub class_id: u8,
    pub split: Split,
    pub protocol: String,
}

impl From<&CaseMeta> for ManifestEntry {
    fn from(m: &CaseMeta) -> Self {
        Self {
            case_id: m.case_id.clone(),
            class_id: m.class_id,
            split: m.split,
            protocol: m.protocol.clone(),
        }
    }
}

pub fn write_manifest(dir: &Path, entries: &[ManifestEntry]) -> Result<PathBuf, VolumeError> {
    fs::create_dir_all(dir)?;
    let path = dir.join(MANIFEST_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| format_err(&path, e.to_string()))?;
    for e in entries {
        w.serialize(e).map_err(|e| format_err(&path, e.to_string()))?;
    }
    w.flush()?;
    Ok(path)
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>, VolumeError> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(format_err(&path, "dataset manifest not found"));
    }
    let mut r = csv::Reader::from_path(&path).map_err(|e| format_err(&path, e.to_string()))?;
    r.deserialize()
        .map(|row| row.map_err(|e| format_err(&path, e.to_string())))
        .collect()
}
