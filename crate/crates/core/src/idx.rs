//! IDX image/label files (the big-endian MNIST layout).
//!
//! Images are read from unsigned-byte files (magic `0x00000803`, pixels
//! scaled by 1/255) or double-precision files (magic `0x00000E03`, values
//! taken as-is). Labels are unsigned bytes (magic `0x00000801`).

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};

pub const IMAGES_U8_MAGIC: u32 = 0x0000_0803;
pub const IMAGES_F64_MAGIC: u32 = 0x0000_0E03;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Element type used when writing image files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    U8,
    F64,
}

fn format_err(offset: u64, message: impl Into<String>) -> Error {
    Error::Format {
        offset,
        message: message.into(),
    }
}

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| format_err(offset as u64, format!("file truncated while reading {what}")))
}

struct Images {
    count: usize,
    dim: usize,
    values: Vec<f64>,
}

fn parse_images(bytes: &[u8]) -> Result<Images> {
    let magic = be_u32(bytes, 0, "magic number")?;
    let elem = match magic {
        IMAGES_U8_MAGIC => 1,
        IMAGES_F64_MAGIC => 8,
        other => {
            return Err(format_err(
                0,
                format!("bad image magic 0x{other:08X}, expected 0x{IMAGES_U8_MAGIC:08X}"),
            ))
        }
    };
    let count = be_u32(bytes, 4, "image count")? as usize;
    let rows = be_u32(bytes, 8, "row count")? as usize;
    let cols = be_u32(bytes, 12, "column count")? as usize;
    let dim = rows * cols;
    let needed = 16 + count * dim * elem;
    if bytes.len() < needed {
        return Err(format_err(
            bytes.len() as u64,
            format!("image data truncated: {count} images of {rows}x{cols} need {needed} bytes"),
        ));
    }
    let body = &bytes[16..needed];
    let values = if elem == 1 {
        body.iter().map(|&b| f64::from(b) / 255.0).collect()
    } else {
        let mut out = Vec::with_capacity(count * dim);
        for (k, chunk) in body.chunks_exact(8).enumerate() {
            let v = f64::from_be_bytes(chunk.try_into().expect("8 bytes"));
            if !(0.0..=1.0).contains(&v) {
                return Err(format_err(16 + 8 * k as u64, format!("pixel value {v} outside [0, 1]")));
            }
            out.push(v);
        }
        out
    };
    Ok(Images { count, dim, values })
}

fn parse_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = be_u32(bytes, 0, "magic number")?;
    if magic != LABELS_MAGIC {
        return Err(format_err(
            0,
            format!("bad label magic 0x{magic:08X}, expected 0x{LABELS_MAGIC:08X}"),
        ));
    }
    let count = be_u32(bytes, 4, "label count")? as usize;
    if bytes.len() < 8 + count {
        return Err(format_err(
            bytes.len() as u64,
            format!("label data truncated: {count} labels need {} bytes", 8 + count),
        ));
    }
    Ok(bytes[8..8 + count].iter().map(|&b| b as usize).collect())
}

/// Parses an image/label pair held in memory.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let img = parse_images(images)?;
    let labels = parse_labels(labels)?;
    if labels.len() != img.count {
        return Err(format_err(
            4,
            format!("{} labels for {} images", labels.len(), img.count),
        ));
    }
    if img.count == 0 || img.dim == 0 {
        return Err(format_err(4, "empty dataset"));
    }
    let class_count = labels.iter().max().map_or(1, |m| m + 1);
    Dataset::new(img.values, img.dim, labels, class_count)
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images = fs::read(images_path)?;
    let labels = fs::read(labels_path)?;
    parse_idx(&images, &labels)
}

/// Encodes a dataset as `(images, labels)` IDX bytes with shape `count x 1 x dim`.
pub fn encode_idx(data: &Dataset, precision: Precision) -> Result<(Vec<u8>, Vec<u8>)> {
    if data.class_count() > 256 {
        return Err(Error::Input("IDX labels hold at most 256 classes".into()));
    }
    let count = u32::try_from(data.len()).map_err(|_| Error::Input("too many samples".into()))?;
    let dim = u32::try_from(data.dim()).map_err(|_| Error::Input("dimension too large".into()))?;
    let magic = match precision {
        Precision::U8 => IMAGES_U8_MAGIC,
        Precision::F64 => IMAGES_F64_MAGIC,
    };
    let mut images = Vec::new();
    for word in [magic, count, 1, dim] {
        images.extend_from_slice(&word.to_be_bytes());
    }
    for &v in data.features() {
        match precision {
            Precision::U8 => images.push((v * 255.0).round().clamp(0.0, 255.0) as u8),
            Precision::F64 => images.extend_from_slice(&v.to_be_bytes()),
        }
    }
    let mut labels = Vec::with_capacity(8 + data.len());
    labels.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&count.to_be_bytes());
    labels.extend(data.labels().iter().map(|&y| y as u8));
    Ok((images, labels))
}

pub fn write_idx(
    data: &Dataset,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    precision: Precision,
) -> Result<()> {
    let (images, labels) = encode_idx(data, precision)?;
    fs::File::create(images_path)?.write_all(&images)?;
    fs::File::create(labels_path)?.write_all(&labels)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> (Vec<u8>, Vec<u8>) {
        // two 2x2 images
        let mut images = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        images.extend_from_slice(&[0, 255, 51, 102, 255, 0, 0, 204]);
        let labels = vec![0, 0, 8, 1, 0, 0, 0, 2, 7, 3];
        (images, labels)
    }

    #[test]
    fn hand_built_fixture_parses_exactly() {
        let (images, labels) = fixture();
        let d = parse_idx(&images, &labels).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.dim(), 4);
        assert_eq!(d.labels(), &[7, 3]);
        assert_eq!(d.class_count(), 8);
        assert_eq!(d.row(0), &[0.0, 1.0, 0.2, 0.4]);
        assert_eq!(d.row(1), &[1.0, 0.0, 0.0, 0.8]);
    }

    #[test]
    fn wrong_label_magic_names_offset_zero() {
        let (images, mut labels) = fixture();
        labels[3] = 3;
        match parse_idx(&images, &labels) {
            Err(Error::Format { offset, message }) => {
                assert_eq!(offset, 0);
                assert!(message.contains("label magic"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncation_and_count_mismatch_are_format_errors() {
        let (images, labels) = fixture();
        assert!(matches!(parse_idx(&images[..20], &labels), Err(Error::Format { offset: 20, .. })));
        assert!(matches!(parse_idx(&images[..10], &labels), Err(Error::Format { offset: 8, .. })));
        let mut short = labels.clone();
        short[7] = 1;
        short.pop();
        assert!(matches!(parse_idx(&images, &short), Err(Error::Format { offset: 4, .. })));
    }

    #[test]
    fn f64_encoding_round_trips_exactly() {
        let d = Dataset::new(vec![0.1, 0.2, 0.3, 0.123456789], 2, vec![1, 0], 2).unwrap();
        let (i, l) = encode_idx(&d, Precision::F64).unwrap();
        assert_eq!(parse_idx(&i, &l).unwrap(), d);
        let (i, l) = encode_idx(&d, Precision::U8).unwrap();
        let q = parse_idx(&i, &l).unwrap();
        for (a, b) in q.features().iter().zip(d.features()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
}
