//! Binary feature and label files.
//!
//! ```text
//! features: "BNDLFEAT" | version u32 = 1 | n u64 | dim u32 | n·dim f32
//! labels:   "BNDLLABL" | version u32 = 1 | n u64 | classes u32 | n u32
//! ```
//!
//! All integers and floats are little-endian.

use std::io::Write;
use std::path::Path;

use crate::data::{Dataset, Matrix};
use crate::error::{BndlError, Result};

pub const FEATURE_MAGIC: &[u8; 8] = b"BNDLFEAT";
pub const LABEL_MAGIC: &[u8; 8] = b"BNDLLABL";
pub const FORMAT_VERSION: u32 = 1;

const HEADER_LEN: usize = 8 + 4 + 8 + 4;

fn ingest(path: &Path, field: &str, offset: usize, msg: impl std::fmt::Display) -> BndlError {
    BndlError::Ingestion(format!(
        "{}: field `{field}` at byte {offset}: {msg}",
        path.display()
    ))
}

struct Header {
    n: u64,
    width: u32,
}

fn read_header(path: &Path, bytes: &[u8], magic: &[u8; 8], width_field: &str) -> Result<Header> {
    if bytes.len() < 8 || &bytes[..8] != magic {
        return Err(ingest(
            path,
            "magic",
            0,
            format!("expected {}", String::from_utf8_lossy(magic)),
        ));
    }
    if bytes.len() < HEADER_LEN {
        return Err(ingest(
            path,
            "header",
            bytes.len(),
            "file ends inside the header",
        ));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(ingest(
            path,
            "version",
            8,
            format!("unsupported version {version}"),
        ));
    }
    let n = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let width = u32::from_le_bytes(bytes[20..24].try_into().unwrap());
    if width == 0 {
        return Err(ingest(path, width_field, 20, "must be positive"));
    }
    Ok(Header { n, width })
}

fn expect_payload(path: &Path, bytes: &[u8], n: u64, width: u32, elem: u64) -> Result<usize> {
    let want = n
        .checked_mul(width as u64)
        .and_then(|v| v.checked_mul(elem))
        .ok_or_else(|| ingest(path, "n_samples", 12, "payload size overflows"))?;
    let have = (bytes.len() - HEADER_LEN) as u64;
    if have != want {
        return Err(ingest(
            path,
            "payload",
            HEADER_LEN,
            format!("declared {want} bytes, found {have}"),
        ));
    }
    Ok(want as usize)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| BndlError::io(path, e))?;
    f.write_all(bytes).map_err(|e| BndlError::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| BndlError::io(path, e))
}

pub fn encode_features(features: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + features.as_slice().len() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(features.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(features.cols() as u32).to_le_bytes());
    for v in features.as_slice() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_features(path: &Path, bytes: &[u8]) -> Result<Matrix> {
    let h = read_header(path, bytes, FEATURE_MAGIC, "dim")?;
    expect_payload(path, bytes, h.n, h.width, 4)?;
    let dim = h.width as usize;
    let payload = &bytes[HEADER_LEN..];
    let mut values = Vec::with_capacity(payload.len() / 4);
    for (idx, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(BndlError::Ingestion(format!(
                "{}: non-finite feature at row {}, column {}",
                path.display(),
                idx / dim,
                idx % dim
            )));
        }
        values.push(v as f64);
    }
    Matrix::from_vec(h.n as usize, dim, values)
}

pub fn encode_labels(labels: &[usize], n_classes: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + labels.len() * 4);
    out.extend_from_slice(LABEL_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(labels.len() as u64).to_le_bytes());
    out.extend_from_slice(&(n_classes as u32).to_le_bytes());
    for &y in labels {
        out.extend_from_slice(&(y as u32).to_le_bytes());
    }
    out
}

/// Returns `(labels, n_classes)`; every label is checked against `n_classes`.
pub fn decode_labels(path: &Path, bytes: &[u8]) -> Result<(Vec<usize>, usize)> {
    let h = read_header(path, bytes, LABEL_MAGIC, "n_classes")?;
    expect_payload(path, bytes, h.n, 1, 4)?;
    let classes = h.width as usize;
    let mut labels = Vec::with_capacity(h.n as usize);
    for (row, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let y = u32::from_le_bytes(chunk.try_into().unwrap()) as usize;
        if y >= classes {
            return Err(BndlError::Ingestion(format!(
                "{}: row {row}: label {y} is not below n_classes={classes}",
                path.display()
            )));
        }
        labels.push(y);
    }
    Ok((labels, classes))
}

pub fn write_feature_file(path: &Path, features: &Matrix) -> Result<()> {
    write_file(path, &encode_features(features))
}

pub fn read_feature_file(path: &Path) -> Result<Matrix> {
    decode_features(path, &read_file(path)?)
}

pub fn write_label_file(path: &Path, labels: &[usize], n_classes: usize) -> Result<()> {
    write_file(path, &encode_labels(labels, n_classes))
}

pub fn read_label_file(path: &Path) -> Result<(Vec<usize>, usize)> {
    decode_labels(path, &read_file(path)?)
}

/// Loads a paired feature and label file.
pub fn load_dataset(features_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let features = read_feature_file(features_path)?;
    let (labels, classes) = read_label_file(labels_path)?;
    if labels.len() != features.rows() {
        return Err(ingest(
            labels_path,
            "n_samples",
            12,
            format!(
                "{} labels but {} has {} rows",
                labels.len(),
                features_path.display(),
                features.rows()
            ),
        ));
    }
    Dataset::new(features, labels, classes)
}

/// Writes a hard-labelled dataset as a feature/label file pair.
pub fn save_dataset(data: &Dataset, features_path: &Path, labels_path: &Path) -> Result<()> {
    write_feature_file(features_path, &data.features)?;
    write_label_file(labels_path, &data.labels(), data.n_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn round_trip_is_f32_exact() {
        let m = Matrix::from_fn(5, 3, |i, j| (i as f64 - 2.0) * 0.1 + j as f64 / 3.0);
        let back = decode_features(p(), &encode_features(&m)).unwrap();
        for (a, b) in m.as_slice().iter().zip(back.as_slice()) {
            assert_eq!(*b, *a as f32 as f64);
        }
        let (l, c) = decode_labels(p(), &encode_labels(&[0, 2, 1], 3)).unwrap();
        assert_eq!((l, c), (vec![0, 2, 1], 3));
    }

    #[test]
    fn header_errors_name_field_and_offset() {
        let m = Matrix::zeros(2, 2);
        let mut b = encode_features(&m);
        b[0] = b'X';
        let e = decode_features(p(), &b).unwrap_err().to_string();
        assert!(e.contains("`magic` at byte 0"), "{e}");
        let mut b = encode_features(&m);
        b[8] = 9;
        let e = decode_features(p(), &b).unwrap_err().to_string();
        assert!(e.contains("`version` at byte 8"), "{e}");
        let b = encode_features(&m);
        let e = decode_features(p(), &b[..b.len() - 1])
            .unwrap_err()
            .to_string();
        assert!(e.contains("`payload`"), "{e}");
        let e = decode_features(p(), &b[..10]).unwrap_err().to_string();
        assert!(e.contains("header"), "{e}");
    }

    #[test]
    fn bad_values_are_reported_by_row() {
        let mut m = Matrix::zeros(3, 2);
        m.set(2, 1, f64::NAN);
        let e = decode_features(p(), &encode_features(&m))
            .unwrap_err()
            .to_string();
        assert!(e.contains("row 2"), "{e}");
        let e = decode_labels(p(), &encode_labels(&[0, 1, 5], 3)).unwrap_err();
        assert!(matches!(e, BndlError::Ingestion(_)));
        assert!(e.to_string().contains("row 2"));
    }
}
