//! `DL3D` case container.
//!
//! ```text
//! "DL3D" | version u8 | C D H W id_len (u32 LE each) | id bytes
//! | image f32 LE, C-D-H-W row-major | labels u8, D-H-W
//! ```

use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::case::{CaseRecord, NUM_CLASSES};

pub const CASE_MAGIC: [u8; 4] = *b"DL3D";
pub const CASE_VERSION: u8 = 1;
pub const CASE_EXT: &str = "dl3d";
const HEADER: usize = 4 + 1 + 5 * 4;
const DEFAULT_BUCKETS: usize = 8;

pub fn case_path(root: &Path, case_id: &str) -> PathBuf {
    root.join(format!("{case_id}.{CASE_EXT}"))
}

pub fn write_case(path: &Path, case: &CaseRecord) -> Result<()> {
    let dims = case.image.dims();
    let mut header = Vec::with_capacity(HEADER + case.case_id.len());
    header.extend_from_slice(&CASE_MAGIC);
    header.push(CASE_VERSION);
    let id = case.case_id.as_bytes();
    for v in [dims[0], dims[1], dims[2], dims[3], id.len()] {
        let v = u32::try_from(v).map_err(|_| Error::DimensionOverflow(format!("{v} does not fit 32 bits")))?;
        header.extend_from_slice(&v.to_le_bytes());
    }
    header.extend_from_slice(id);
    let mut buf = header;
    buf.reserve(case.image.numel() * 4 + case.labels.len());
    for &v in case.image.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    buf.extend_from_slice(&case.labels);
    fs::write(path, buf)?;
    Ok(())
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

fn truncated(expected: usize, actual: usize) -> Error {
    Error::Truncated { expected: expected as u64, actual: actual as u64 }
}

/// Reads a case, deriving its bucket over the default 8 buckets.
pub fn read_case(path: &Path) -> Result<CaseRecord> {
    read_case_with(path, DEFAULT_BUCKETS)
}

pub fn read_case_with(path: &Path, buckets: usize) -> Result<CaseRecord> {
    let bytes = read_bytes(path)?;
    if bytes.len() < 4 {
        return Err(truncated(HEADER, bytes.len()));
    }
    let found: [u8; 4] = bytes[..4].try_into().expect("four bytes");
    if found != CASE_MAGIC {
        return Err(Error::BadMagic { expected: CASE_MAGIC, found });
    }
    if bytes.len() < HEADER {
        return Err(truncated(HEADER, bytes.len()));
    }
    if bytes[4] != CASE_VERSION {
        return Err(Error::VersionMismatch { expected: CASE_VERSION, found: bytes[4] });
    }
    let field = |i: usize| {
        let at = 5 + 4 * i;
        u32::from_le_bytes(bytes[at..at + 4].try_into().expect("four bytes")) as usize
    };
    let (c, d, h, w, id_len) = (field(0), field(1), field(2), field(3), field(4));
    if [c, d, h, w].contains(&0) {
        return Err(Error::Malformed(format!("zero extent in [{c}, {d}, {h}, {w}]")));
    }
    let overflow = || Error::DimensionOverflow(format!("[{c}, {d}, {h}, {w}] overflows the address space"));
    let voxels = d.checked_mul(h).and_then(|v| v.checked_mul(w)).ok_or_else(overflow)?;
    let image_bytes = voxels.checked_mul(c).and_then(|v| v.checked_mul(4)).ok_or_else(overflow)?;
    let expected = [id_len, image_bytes, voxels]
        .iter()
        .try_fold(HEADER, |acc, &n| acc.checked_add(n))
        .ok_or_else(overflow)?;
    if bytes.len() < expected {
        return Err(truncated(expected, bytes.len()));
    }
    if bytes.len() > expected {
        return Err(Error::Malformed(format!("{} trailing bytes", bytes.len() - expected)));
    }
    let id = std::str::from_utf8(&bytes[HEADER..HEADER + id_len])
        .map_err(|_| Error::Malformed("case id is not UTF-8".into()))?;
    let body = &bytes[HEADER + id_len..];
    let image: Vec<f64> = body[..image_bytes]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("four bytes")) as f64)
        .collect();
    let labels = body[image_bytes..].to_vec();
    if let Some(&l) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
        return Err(Error::LabelOutOfRange { label: l as usize, classes: NUM_CLASSES });
    }
    CaseRecord::new(id, Tensor::from_vec(vec![c, d, h, w], image)?, labels, buckets)
}

/// Case identifiers under `root`, sorted.
pub fn list_cases(root: &Path) -> Result<Vec<String>> {
    if !root.is_dir() {
        return Err(Error::MissingFile(root.to_path_buf()));
    }
    let mut ids = Vec::new();
    for entry in fs::read_dir(root)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some(CASE_EXT) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}
