//! IDX files as used by MNIST: big-endian `u32` magic and dimension sizes
//! followed by unsigned bytes.

use std::fs;
use std::path::Path;

use super::LabeledImageSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Conventional file names inside an MNIST directory.
pub const MNIST_TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const MNIST_TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::TruncatedFile {
                path: self.path.to_path_buf(),
                needed: end,
                available: self.bytes.len(),
            });
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let found = self.u32()?;
        if found != expected {
            return Err(Error::BadMagic {
                path: self.path.to_path_buf(),
                found,
                expected,
            });
        }
        Ok(())
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads an IDX image file and its label file. Pixels keep their 0–255
/// byte values; images come out as `1×rows×cols`.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledImageSet> {
    let (images_path, labels_path) = (images_path.as_ref(), labels_path.as_ref());
    let image_bytes = read(images_path)?;
    let label_bytes = read(labels_path)?;

    let mut r = Reader {
        path: images_path,
        bytes: &image_bytes,
        pos: 0,
    };
    r.magic(IMAGES_MAGIC)?;
    let count = r.u32()? as usize;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let payload = r.take(count * rows * cols)?;

    let mut l = Reader {
        path: labels_path,
        bytes: &label_bytes,
        pos: 0,
    };
    l.magic(LABELS_MAGIC)?;
    let label_count = l.u32()? as usize;
    if label_count != count {
        return Err(Error::CountMismatch {
            images: count,
            labels: label_count,
        });
    }
    let labels: Vec<usize> = l.take(label_count)?.iter().map(|&b| b as usize).collect();

    let plane = rows * cols;
    let images = (0..count)
        .map(|i| {
            let px = payload[i * plane..(i + 1) * plane].iter().map(|&b| b as f32).collect();
            Tensor::new(vec![1, rows, cols], px)
        })
        .collect::<Result<Vec<_>>>()?;
    let categories = labels.iter().max().map_or(0, |m| m + 1).max(10);
    let names = (0..categories).map(|c| c.to_string()).collect();
    LabeledImageSet::new(images, labels, names)
}

/// Loads the test split from an MNIST directory.
pub fn load_mnist_dir(dir: impl AsRef<Path>) -> Result<LabeledImageSet> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        ));
    }
    load_idx(dir.join(MNIST_TEST_IMAGES), dir.join(MNIST_TEST_LABELS))
}

/// Serializes a 1-channel set back to IDX bytes `(images, labels)`. Pixel
/// values are rounded and clamped to bytes.
pub fn encode_idx(set: &LabeledImageSet) -> Result<(Vec<u8>, Vec<u8>)> {
    let (rows, cols) = match set.image_shape() {
        Some(&[1, r, c]) => (r, c),
        Some(other) => return Err(Error::shape("IDX image", "1×rows×cols", other)),
        None => (0, 0),
    };
    let mut images = Vec::with_capacity(16 + set.len() * rows * cols);
    for v in [IMAGES_MAGIC, set.len() as u32, rows as u32, cols as u32] {
        images.extend_from_slice(&v.to_be_bytes());
    }
    for img in &set.images {
        images.extend(img.data().iter().map(|&p| p.round().clamp(0.0, 255.0) as u8));
    }
    let mut labels = Vec::with_capacity(8 + set.len());
    labels.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(set.len() as u32).to_be_bytes());
    labels.extend(set.labels.iter().map(|&l| l as u8));
    Ok((images, labels))
}
