//! IDX binary tensors (the MNIST / Fashion-MNIST distribution format).
//!
//! Layout: a big-endian `u32` magic (`0x00000803` for 3-D `u8` image stacks,
//! `0x00000801` for 1-D `u8` label vectors), one big-endian `u32` per
//! dimension, then the row-major payload. The payload length must match the
//! dimension product exactly.

use std::path::Path;

use ndarray::Array2;

use super::{Dataset, DatasetMeta};
use crate::error::{Error, FormatError, FormatErrorKind, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub magic: u32,
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], FormatError> {
        let available = self.bytes.len() - self.pos;
        if available < n {
            return Err(FormatError::new(
                self.bytes.len(),
                FormatErrorKind::Truncated {
                    needed: n - available,
                    available,
                },
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32_be(&mut self) -> std::result::Result<u32, FormatError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn parse_idx(bytes: &[u8]) -> std::result::Result<IdxTensor, FormatError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.u32_be()?;
    let ndims = match magic {
        IMAGE_MAGIC => 3,
        LABEL_MAGIC => 1,
        other => return Err(FormatError::new(0, FormatErrorKind::BadMagic(other))),
    };
    let mut dims = Vec::with_capacity(ndims);
    let mut count: usize = 1;
    for _ in 0..ndims {
        let at = cur.pos;
        let d = cur.u32_be()? as usize;
        count = count
            .checked_mul(d)
            .ok_or_else(|| FormatError::new(at, FormatErrorKind::DimOverflow))?;
        dims.push(d);
    }
    let data = cur.take(count)?.to_vec();
    if cur.pos != bytes.len() {
        return Err(FormatError::new(
            cur.pos,
            FormatErrorKind::TrailingBytes(bytes.len() - cur.pos),
        ));
    }
    Ok(IdxTensor { magic, dims, data })
}

/// Serializes a tensor; the inverse of [`parse_idx`].
pub fn encode_idx(t: &IdxTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * t.dims.len() + t.data.len());
    out.extend_from_slice(&t.magic.to_be_bytes());
    for &d in &t.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&t.data);
    out
}

pub fn read_idx(path: &Path) -> Result<IdxTensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes).map_err(|err| Error::Format {
        source_name: path.display().to_string(),
        err,
    })
}

/// Flattens an image stack into one row per image, scaled to `[0, 1]`.
pub fn images_to_features(t: &IdxTensor) -> Result<Array2<f64>> {
    if t.magic != IMAGE_MAGIC {
        return Err(Error::data(format!(
            "expected an image tensor, got magic 0x{:08x}",
            t.magic
        )));
    }
    let n = t.dims[0];
    let width = t.dims[1] * t.dims[2];
    let values = t.data.iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok(Array2::from_shape_vec((n, width), values).expect("payload length checked by parser"))
}

pub fn labels_from(t: &IdxTensor) -> Result<Vec<usize>> {
    if t.magic != LABEL_MAGIC {
        return Err(Error::data(format!(
            "expected a label tensor, got magic 0x{:08x}",
            t.magic
        )));
    }
    Ok(t.data.iter().map(|&b| usize::from(b)).collect())
}

pub fn load_idx_dataset(images: &Path, labels: &Path, name: &str) -> Result<Dataset> {
    let features = images_to_features(&read_idx(images)?)?;
    let labels_v = labels_from(&read_idx(labels)?)?;
    Dataset::new(
        features,
        labels_v,
        DatasetMeta {
            name: name.to_string(),
            source: Some(images.to_path_buf()),
            normalization: "pixels / 255".into(),
            subsampled_from: None,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn four_byte_file_is_truncated() {
        let err = parse_idx(&IMAGE_MAGIC.to_be_bytes()).unwrap_err();
        assert_eq!(err.offset, 4);
        assert!(matches!(err.kind, FormatErrorKind::Truncated { .. }));
    }

    #[test]
    fn image_round_trip() {
        let t = IdxTensor {
            magic: IMAGE_MAGIC,
            dims: vec![2, 2, 2],
            data: vec![0, 51, 102, 153, 204, 255, 1, 2],
        };
        let bytes = encode_idx(&t);
        assert_eq!(bytes.len(), 4 + 12 + 8);
        assert_eq!(parse_idx(&bytes).unwrap(), t);
        let f = images_to_features(&t).unwrap();
        assert_eq!(f.dim(), (2, 4));
        assert_eq!(f[[0, 1]], 0.2);
        assert_eq!(f[[1, 1]], 1.0);
    }

    #[test]
    fn label_vector() {
        let mut bytes = LABEL_MAGIC.to_be_bytes().to_vec();
        bytes.extend_from_slice(&3u32.to_be_bytes());
        bytes.extend_from_slice(&[0, 1, 2]);
        let t = parse_idx(&bytes).unwrap();
        assert_eq!(labels_from(&t).unwrap(), vec![0, 1, 2]);
        assert!(images_to_features(&t).is_err());
    }

    #[test]
    fn bad_magic_is_reported_at_zero() {
        let err = parse_idx(&[0, 0, 0x0d, 0x03, 0, 0, 0, 0]).unwrap_err();
        assert_eq!(
            err,
            FormatError::new(0, FormatErrorKind::BadMagic(0x0000_0d03))
        );
        // little-endian magic is rejected, not auto-detected
        let err = parse_idx(&[3, 8, 0, 0]).unwrap_err();
        assert!(matches!(err.kind, FormatErrorKind::BadMagic(_)));
    }

    #[test]
    fn short_payload_and_trailing_bytes() {
        let mut bytes = LABEL_MAGIC.to_be_bytes().to_vec();
        bytes.extend_from_slice(&5u32.to_be_bytes());
        bytes.extend_from_slice(&[1, 2]);
        let err = parse_idx(&bytes).unwrap_err();
        assert_eq!(
            err,
            FormatError::new(
                10,
                FormatErrorKind::Truncated {
                    needed: 3,
                    available: 2
                }
            )
        );
        bytes.extend_from_slice(&[3, 4, 5, 6]);
        let err = parse_idx(&bytes).unwrap_err();
        assert_eq!(err, FormatError::new(13, FormatErrorKind::TrailingBytes(1)));
    }

    #[test]
    fn oversized_dims_do_not_allocate() {
        let mut bytes = IMAGE_MAGIC.to_be_bytes().to_vec();
        for _ in 0..3 {
            bytes.extend_from_slice(&u32::MAX.to_be_bytes());
        }
        let err = parse_idx(&bytes).unwrap_err();
        assert!(matches!(
            err.kind,
            FormatErrorKind::DimOverflow | FormatErrorKind::Truncated { .. }
        ));
    }

    proptest! {
        #[test]
        fn never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
            let _ = parse_idx(&bytes);
        }

        #[test]
        fn prefixes_of_valid_files_fail_with_truncation(n in 1usize..5, cut in 0usize..100) {
            let t = IdxTensor { magic: IMAGE_MAGIC, dims: vec![n, 2, 3], data: (0..n * 6).map(|v| v as u8).collect() };
            let bytes = encode_idx(&t);
            let cut = cut % bytes.len();
            let err = parse_idx(&bytes[..cut]).unwrap_err();
            let truncated = matches!(err.kind, FormatErrorKind::Truncated { .. });
            prop_assert!(truncated);
            prop_assert_eq!(err.offset, cut);
        }
    }
}
