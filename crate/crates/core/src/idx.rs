//! IDX container reader (the MNIST distribution format).
//!
//! All header integers are 32-bit big-endian. Image files carry magic
//! `0x00000803` followed by count, rows and columns; label files carry
//! `0x00000801` and a count. Files ending in `.gz` are decompressed
//! transparently.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// Source file and the SHA-256 of its on-disk bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub path: PathBuf,
    pub sha256: String,
}

/// Images scaled to `[0, 1]` with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHandle {
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub provenance: Vec<Provenance>,
}

impl DatasetHandle {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// All indices in a fixed pseudo-random order determined by `seed`.
    pub fn shuffled_indices(&self, seed: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        order
    }

    /// Sub-dataset with the given indices, in order.
    pub fn select(&self, indices: &[usize]) -> DatasetHandle {
        DatasetHandle {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            provenance: self.provenance.clone(),
        }
    }
}

fn read_file(path: &Path) -> Result<(Vec<u8>, Provenance)> {
    let raw = fs::read(path)?;
    let sha256 = hex::encode(Sha256::digest(&raw));
    let bytes = if path.extension().is_some_and(|e| e == "gz") {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::Corrupt(format!("{}: {e}", path.display())))?;
        out
    } else {
        raw
    };
    Ok((
        bytes,
        Provenance {
            path: path.to_path_buf(),
            sha256,
        },
    ))
}

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Corrupt(format!("{what}: header truncated")))
}

/// Decodes an image container into `(rows, cols, tensors)`.
pub fn parse_images(bytes: &[u8]) -> Result<(usize, usize, Vec<Tensor>)> {
    let magic = be_u32(bytes, 0, "images")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::BadMagic {
            expected: IMAGE_MAGIC,
            found: magic,
        });
    }
    let count = be_u32(bytes, 4, "images")? as usize;
    let rows = be_u32(bytes, 8, "images")? as usize;
    let cols = be_u32(bytes, 12, "images")? as usize;
    let plane = rows * cols;
    let payload = &bytes[16..];
    if payload.len() != count * plane {
        return Err(Error::Corrupt(format!(
            "images: expected {} pixel bytes, found {}",
            count * plane,
            payload.len()
        )));
    }
    let images = payload
        .chunks_exact(plane.max(1))
        .take(count)
        .map(|px| {
            Tensor::from_parts_unchecked(
                vec![rows, cols],
                px.iter().map(|&b| f64::from(b) / 255.0).collect(),
            )
        })
        .collect();
    Ok((rows, cols, images))
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = be_u32(bytes, 0, "labels")?;
    if magic != LABEL_MAGIC {
        return Err(Error::BadMagic {
            expected: LABEL_MAGIC,
            found: magic,
        });
    }
    let count = be_u32(bytes, 4, "labels")? as usize;
    let payload = &bytes[8..];
    if payload.len() != count {
        return Err(Error::Corrupt(format!(
            "labels: expected {count} bytes, found {}",
            payload.len()
        )));
    }
    Ok(payload.iter().map(|&b| usize::from(b)).collect())
}

pub fn load_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<DatasetHandle> {
    let (image_bytes, image_prov) = read_file(images_path.as_ref())?;
    let (label_bytes, label_prov) = read_file(labels_path.as_ref())?;
    let (_, _, images) = parse_images(&image_bytes)?;
    let labels = parse_labels(&label_bytes)?;
    if images.len() != labels.len() {
        return Err(Error::Corrupt(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    Ok(DatasetHandle {
        images,
        labels,
        provenance: vec![image_prov, label_prov],
    })
}

/// Encodes 8-bit images as an IDX image container.
pub fn write_idx_images(
    w: &mut impl Write,
    rows: usize,
    cols: usize,
    images: &[Vec<u8>],
) -> Result<()> {
    w.write_all(&IMAGE_MAGIC.to_be_bytes())?;
    for v in [images.len(), rows, cols] {
        w.write_all(&(v as u32).to_be_bytes())?;
    }
    for img in images {
        if img.len() != rows * cols {
            return Err(Error::InvalidInput(
                "image size does not match header".into(),
            ));
        }
        w.write_all(img)?;
    }
    Ok(())
}

pub fn write_idx_labels(w: &mut impl Write, labels: &[u8]) -> Result<()> {
    w.write_all(&LABEL_MAGIC.to_be_bytes())?;
    w.write_all(&(labels.len() as u32).to_be_bytes())?;
    w.write_all(labels)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(dir: &Path, images: &[Vec<u8>], labels: &[u8]) -> (PathBuf, PathBuf) {
        let ip = dir.join("images-idx3-ubyte");
        let lp = dir.join("labels-idx1-ubyte");
        let mut buf = Vec::new();
        write_idx_images(&mut buf, 28, 28, images).unwrap();
        fs::write(&ip, buf).unwrap();
        let mut buf = Vec::new();
        write_idx_labels(&mut buf, labels).unwrap();
        fs::write(&lp, buf).unwrap();
        (ip, lp)
    }

    #[test]
    fn single_zero_image() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = fixture(dir.path(), &[vec![0u8; 784]], &[7]);
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.images[0].shape(), &[28, 28]);
        assert!(ds.images[0].data().iter().all(|&v| v == 0.0));
        assert_eq!(ds.labels, vec![7]);
        assert_eq!(ds.provenance.len(), 2);
        assert_eq!(ds.provenance[0].sha256.len(), 64);
    }

    #[test]
    fn pixels_scale_by_255() {
        let mut img = vec![0u8; 784];
        img[0] = 255;
        img[1] = 51;
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = fixture(dir.path(), &[img], &[1]);
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.images[0].data()[0], 1.0);
        assert_eq!(ds.images[0].data()[1], 0.2);
    }

    #[test]
    fn swapped_files_give_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, _) = fixture(dir.path(), &[vec![0u8; 784]], &[7]);
        assert!(matches!(
            load_idx(&ip, &ip),
            Err(Error::BadMagic {
                expected: LABEL_MAGIC,
                found: IMAGE_MAGIC
            })
        ));
    }

    #[test]
    fn truncated_and_mismatched() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = fixture(dir.path(), &[vec![0u8; 784], vec![1u8; 784]], &[1, 2]);
        let bytes = fs::read(&ip).unwrap();
        fs::write(&ip, &bytes[..bytes.len() - 10]).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Corrupt(_))));
        fs::write(&ip, &bytes).unwrap();
        let mut buf = Vec::new();
        write_idx_labels(&mut buf, &[1]).unwrap();
        fs::write(&lp, buf).unwrap();
        assert!(matches!(load_idx(&ip, &lp), Err(Error::Corrupt(_))));
    }

    #[test]
    fn gzip_is_transparent() {
        use flate2::write::GzEncoder;
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = fixture(dir.path(), &[vec![3u8; 784]], &[4]);
        let gz = dir.path().join("images.gz");
        let mut enc = GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(&fs::read(&ip).unwrap()).unwrap();
        fs::write(&gz, enc.finish().unwrap()).unwrap();
        assert_eq!(
            load_idx(&gz, &lp).unwrap().images,
            load_idx(&ip, &lp).unwrap().images
        );
    }
}
