//! IDX (MNIST) binary files: big-endian header `0x00 0x00 type ndims`,
//! `ndims` u32 dimension sizes, then raw unsigned bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum IdxError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad IDX magic {0:#010x}")]
    BadMagic(u32),
    #[error("truncated IDX file: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("IDX dimensions overflow")]
    DimensionOverflow,
}

#[derive(Clone, Debug, PartialEq)]
pub enum IdxData {
    /// Row-major images, pixels scaled to [0, 1].
    Images { count: usize, rows: usize, cols: usize, pixels: Vec<f32> },
    Labels(Vec<u8>),
}

pub fn load_idx(path: impl AsRef<Path>) -> Result<IdxData, IdxError> {
    parse_idx(&fs::read(path)?)
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxData, IdxError> {
    if bytes.len() < 4 {
        return Err(IdxError::Truncated { expected: 4, found: bytes.len() });
    }
    let magic = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    let ndims = match magic {
        IMAGE_MAGIC => 3,
        LABEL_MAGIC => 1,
        other => return Err(IdxError::BadMagic(other)),
    };
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(IdxError::Truncated { expected: header, found: bytes.len() });
    }
    let dims: Vec<usize> = (0..ndims)
        .map(|i| {
            let o = 4 + 4 * i;
            u32::from_be_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
        })
        .collect();
    let payload = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or(IdxError::DimensionOverflow)?;
    let expected = header.checked_add(payload).ok_or(IdxError::DimensionOverflow)?;
    if bytes.len() < expected {
        return Err(IdxError::Truncated { expected, found: bytes.len() });
    }
    let body = &bytes[header..expected];
    Ok(match ndims {
        1 => IdxData::Labels(body.to_vec()),
        _ => IdxData::Images {
            count: dims[0],
            rows: dims[1],
            cols: dims[2],
            pixels: body.iter().map(|&p| f32::from(p) / 255.0).collect(),
        },
    })
}

pub fn encode_images(rows: usize, cols: usize, images: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    for d in [images.len(), rows, cols] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    for img in images {
        assert_eq!(img.len(), rows * cols, "image size");
        out.extend_from_slice(img);
    }
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

pub fn write_idx_images(path: impl AsRef<Path>, rows: usize, cols: usize, images: &[Vec<u8>]) -> Result<(), IdxError> {
    fs::File::create(path)?.write_all(&encode_images(rows, cols, images))?;
    Ok(())
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<(), IdxError> {
    fs::File::create(path)?.write_all(&encode_labels(labels))?;
    Ok(())
}

/// Images and labels read from a pair of IDX files.
#[derive(Clone, Debug)]
pub struct LabelledImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<f32>,
    pub labels: Vec<u8>,
}

impl LabelledImages {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let p = self.rows * self.cols;
        &self.pixels[i * p..(i + 1) * p]
    }

    /// Keeps the first `n` samples.
    pub fn truncate(&mut self, n: usize) {
        let n = n.min(self.len());
        self.labels.truncate(n);
        self.pixels.truncate(n * self.rows * self.cols);
    }
}

/// Loads `train-images-idx3-ubyte` / `train-labels-idx1-ubyte` from `dir`.
pub fn load_mnist_train(dir: impl AsRef<Path>) -> Result<LabelledImages, IdxError> {
    let dir = dir.as_ref();
    load_pair(dir.join("train-images-idx3-ubyte"), dir.join("train-labels-idx1-ubyte"))
}

pub fn load_pair(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<LabelledImages, IdxError> {
    let (count, rows, cols, pixels) = match load_idx(images)? {
        IdxData::Images { count, rows, cols, pixels } => (count, rows, cols, pixels),
        IdxData::Labels(_) => return Err(IdxError::BadMagic(LABEL_MAGIC)),
    };
    let labels = match load_idx(labels)? {
        IdxData::Labels(l) => l,
        IdxData::Images { .. } => return Err(IdxError::BadMagic(IMAGE_MAGIC)),
    };
    if labels.len() != count {
        return Err(IdxError::Truncated { expected: count, found: labels.len() });
    }
    Ok(LabelledImages { rows, cols, pixels, labels })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_image_fixture_round_trips() {
        let imgs = vec![(0..6).map(|i| i * 40).collect::<Vec<u8>>(), vec![255, 0, 1, 2, 3, 4]];
        let dir = tempfile::tempdir().unwrap();
        let ip = dir.path().join("img");
        let lp = dir.path().join("lab");
        write_idx_images(&ip, 2, 3, &imgs).unwrap();
        write_idx_labels(&lp, &[7, 3]).unwrap();
        let bytes = fs::read(&ip).unwrap();
        assert_eq!(&bytes[..4], &[0, 0, 8, 3]);
        assert_eq!(bytes, encode_images(2, 3, &imgs));
        let data = load_pair(&ip, &lp).unwrap();
        assert_eq!((data.rows, data.cols, data.len()), (2, 3, 2));
        assert_eq!(data.labels, vec![7, 3]);
        let raw: Vec<u8> = data.pixels.iter().map(|p| (p * 255.0).round() as u8).collect();
        assert_eq!(raw, imgs.concat());
        assert_eq!(data.image(1)[0], 1.0);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(matches!(parse_idx(&[0, 0, 8, 2, 0, 0, 0, 1]), Err(IdxError::BadMagic(0x0802))));
        let mut lab = encode_labels(&[1, 2, 3]);
        lab.pop();
        assert!(matches!(parse_idx(&lab), Err(IdxError::Truncated { expected: 11, found: 10 })));
        assert!(matches!(parse_idx(&[0, 0]), Err(IdxError::Truncated { .. })));
    }

    #[test]
    fn rejects_overflowing_dimensions() {
        let mut b = IMAGE_MAGIC.to_be_bytes().to_vec();
        for _ in 0..3 {
            b.extend_from_slice(&u32::MAX.to_be_bytes());
        }
        assert!(matches!(parse_idx(&b), Err(IdxError::DimensionOverflow)));
    }
}
