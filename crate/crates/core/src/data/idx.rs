//! IDX files as distributed with MNIST: big-endian header, `u8` payload.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::LabeledDataset;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Parsed IDX payload: dimensions and raw bytes.
#[derive(Debug)]
pub struct Idx {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

/// Parses an unsigned-byte IDX buffer whose magic must equal `magic`.
pub fn parse_idx(bytes: &[u8], magic: u32, path: &str) -> Result<Idx> {
    let truncated = |expected| Error::IdxTruncated {
        path: path.to_string(),
        expected,
        actual: bytes.len(),
    };
    if bytes.len() < 4 {
        return Err(truncated(4));
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(Error::IdxMagic {
            path: path.to_string(),
            expected: magic,
            found,
        });
    }
    let rank = (magic & 0xff) as usize;
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(truncated(header));
    }
    let dims: Vec<usize> = (0..rank)
        .map(|i| be_u32(bytes, 4 + 4 * i) as usize)
        .collect();
    let expected = header + dims.iter().product::<usize>();
    if bytes.len() < expected {
        return Err(truncated(expected));
    }
    Ok(Idx {
        dims,
        data: bytes[header..expected].to_vec(),
    })
}

/// Loads an image/label IDX pair. Pixels are scaled to `[0, 1]`; the class count
/// is one past the largest label.
pub fn load_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<LabeledDataset> {
    let ip = images_path.as_ref();
    let lp = labels_path.as_ref();
    let images = parse_idx(&fs::read(ip)?, IDX_IMAGES_MAGIC, &ip.display().to_string())?;
    let labels = parse_idx(&fs::read(lp)?, IDX_LABELS_MAGIC, &lp.display().to_string())?;
    if images.dims[0] != labels.dims[0] {
        return Err(Error::IdxCountMismatch {
            images: images.dims[0],
            labels: labels.dims[0],
        });
    }
    let (rows, cols) = (images.dims[1], images.dims[2]);
    let per = rows * cols;
    let samples = images
        .data
        .chunks(per.max(1))
        .take(images.dims[0])
        .map(|px| {
            Tensor::new(
                vec![1, rows, cols],
                px.iter().map(|&p| f64::from(p) / 255.0).collect(),
            )
            .expect("pixel count matches header")
        })
        .collect();
    let labels: Vec<usize> = labels.data.iter().map(|&l| usize::from(l)).collect();
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    LabeledDataset::new(samples, labels, classes)
}

pub const MNIST_TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const MNIST_TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const MNIST_TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const MNIST_TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// Loads the train and test splits from a directory holding the four
/// uncompressed MNIST files under their standard names.
pub fn load_mnist(dir: impl AsRef<Path>) -> Result<(LabeledDataset, LabeledDataset)> {
    let dir = dir.as_ref();
    let train = load_idx(dir.join(MNIST_TRAIN_IMAGES), dir.join(MNIST_TRAIN_LABELS))?;
    let test = load_idx(dir.join(MNIST_TEST_IMAGES), dir.join(MNIST_TEST_LABELS))?;
    Ok((train, test))
}

/// Encodes `count` images of `rows x cols` bytes as an IDX image file.
pub fn write_idx_images(pixels: &[u8], count: usize, rows: usize, cols: usize) -> Vec<u8> {
    let mut out = IDX_IMAGES_MAGIC.to_be_bytes().to_vec();
    for d in [count, rows, cols] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = IDX_LABELS_MAGIC.to_be_bytes().to_vec();
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
