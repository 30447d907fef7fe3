//! IDX container parsing (the MNIST distribution format).
//!
//! Layout: a 4-byte big-endian magic (2051 for images, 2049 for labels),
//! big-endian `u32` extents (three for images, one for labels), then raw
//! unsigned bytes.

use std::fs;
use std::path::{Path, PathBuf};

use structvae_core::data::Dataset;
use structvae_core::Tensor;

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;

#[derive(Debug, thiserror::Error)]
pub enum IdxError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: bad magic {found} (expected {expected})")]
    Magic {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("{path}: truncated file, {expected} bytes needed but {found} present")]
    Length {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}: {detail}")]
    Invalid { path: PathBuf, detail: String },
}

fn read_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32, IdxError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| IdxError::Length {
            path: path.to_owned(),
            expected: at + 4,
            found: bytes.len(),
        })
}

/// Header dims and payload of an IDX buffer with the given magic and rank.
fn parse<'a>(
    bytes: &'a [u8],
    magic: u32,
    rank: usize,
    path: &Path,
) -> Result<(Vec<usize>, &'a [u8]), IdxError> {
    let found = read_u32(bytes, 0, path)?;
    if found != magic {
        return Err(IdxError::Magic {
            path: path.to_owned(),
            found,
            expected: magic,
        });
    }
    let dims = (0..rank)
        .map(|i| read_u32(bytes, 4 + 4 * i, path).map(|d| d as usize))
        .collect::<Result<Vec<_>, _>>()?;
    let header = 4 + 4 * rank;
    let expected = header + dims.iter().product::<usize>();
    if bytes.len() < expected {
        return Err(IdxError::Length {
            path: path.to_owned(),
            expected,
            found: bytes.len(),
        });
    }
    Ok((dims, &bytes[header..expected]))
}

/// Images as an `N×(rows·cols)` tensor with bytes scaled by 1/255.
pub fn parse_images(bytes: &[u8], path: &Path) -> Result<Tensor, IdxError> {
    let (dims, payload) = parse(bytes, IMAGE_MAGIC, 3, path)?;
    let (n, pixels) = (dims[0], dims[1] * dims[2]);
    let data = payload.iter().map(|&b| f64::from(b) / 255.0).collect();
    Tensor::new([n, pixels], data).map_err(|e| IdxError::Invalid {
        path: path.to_owned(),
        detail: e.to_string(),
    })
}

pub fn parse_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>, IdxError> {
    let (_, payload) = parse(bytes, LABEL_MAGIC, 1, path)?;
    Ok(payload.iter().map(|&b| usize::from(b)).collect())
}

fn read(path: &Path) -> Result<Vec<u8>, IdxError> {
    fs::read(path).map_err(|source| IdxError::Io {
        path: path.to_owned(),
        source,
    })
}

/// Loads an image file and its label file into a 10-class dataset.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset, IdxError> {
    let images = parse_images(&read(images_path)?, images_path)?;
    let labels = parse_labels(&read(labels_path)?, labels_path)?;
    if images.rows() != labels.len() {
        return Err(IdxError::CountMismatch {
            images: images.rows(),
            labels: labels.len(),
        });
    }
    Dataset::new(images, labels, 10).map_err(|e| IdxError::Invalid {
        path: labels_path.to_owned(),
        detail: e.to_string(),
    })
}

/// Serialises images (values rounded to bytes) in IDX form; used to build
/// fixtures.
pub fn encode_images(n: usize, rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len());
    out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    for d in [n, rows, cols] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> PathBuf {
        PathBuf::from("fixture")
    }

    #[test]
    fn hand_built_fixture() {
        // magic 2051, dims 1x2x2, then the four pixel bytes
        let bytes = [
            0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 0, 255, 128, 0,
        ];
        let t = parse_images(&bytes, &p()).unwrap();
        assert_eq!(t.dims(), &[1, 4]);
        assert_eq!(t.data(), &[0.0, 1.0, 128.0 / 255.0, 0.0]);
        assert_eq!(encode_images(1, 2, 2, &[0, 255, 128, 0]), bytes);
    }

    #[test]
    fn bad_magic_is_reported() {
        let mut bytes = encode_images(1, 1, 1, &[7]);
        bytes[..4].copy_from_slice(&9999u32.to_be_bytes());
        match parse_images(&bytes, &p()) {
            Err(IdxError::Magic { found: 9999, expected: 2051, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_labels(&encode_images(1, 1, 1, &[7]), &p()),
            Err(IdxError::Magic { found: 2051, .. })
        ));
    }

    #[test]
    fn truncation_is_a_length_error() {
        let bytes = encode_images(2, 2, 2, &[1; 8]);
        assert!(matches!(
            parse_images(&bytes[..bytes.len() - 1], &p()),
            Err(IdxError::Length { expected: 24, found: 23, .. })
        ));
        assert!(matches!(parse_labels(&[0, 0, 8], &p()), Err(IdxError::Length { .. })));
    }

    #[test]
    fn count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        fs::write(&ip, encode_images(2, 1, 1, &[0, 1])).unwrap();
        fs::write(&lp, encode_labels(&[0, 1, 2])).unwrap();
        assert!(matches!(
            load_idx(&ip, &lp),
            Err(IdxError::CountMismatch { images: 2, labels: 3 })
        ));
        fs::write(&lp, encode_labels(&[0, 1])).unwrap();
        let d = load_idx(&ip, &lp).unwrap();
        assert_eq!(d.labels, vec![0, 1]);
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_idx(Path::new("/nonexistent/imgs"), Path::new("/nonexistent/lbls"))
            .unwrap_err();
        assert!(err.to_string().contains("/nonexistent/imgs"));
    }
}
