//! Readers for the CIFAR binary distributions.
//!
//! Expected layout, either directly in the data directory or in the archive's
//! own subdirectory:
//!
//! ```text
//! <dir>/cifar-10-batches-bin/data_batch_{1..5}.bin, test_batch.bin
//! <dir>/cifar-100-binary/train.bin, test.bin
//! ```
//!
//! CIFAR-10 records are `<label u8><3072 pixel bytes>`; CIFAR-100 records are
//! `<coarse u8><fine u8><3072 pixel bytes>` and fine labels are used.

use std::path::{Path, PathBuf};

use super::{Dataset, DatasetId, DatasetSplits, ImageShape};
use crate::{Error, Result};

const PIXELS: usize = 3 * 32 * 32;

fn locate(dir: &Path, subdir: &str, file: &str) -> Result<PathBuf> {
    for candidate in [dir.join(subdir).join(file), dir.join(file)] {
        if candidate.is_file() {
            return Ok(candidate);
        }
    }
    Err(Error::MissingDataset {
        path: dir.join(subdir).join(file),
    })
}

/// Decodes concatenated binary records; `label_offset` selects the label byte.
pub fn parse_records(bytes: &[u8], header: usize, label_offset: usize, num_classes: u32) -> Result<(Vec<f32>, Vec<u32>)> {
    let record = header + PIXELS;
    if bytes.len() % record != 0 {
        return Err(Error::Data(format!("{} bytes is not a multiple of the {record}-byte record", bytes.len())));
    }
    let n = bytes.len() / record;
    let mut images = Vec::with_capacity(n * PIXELS);
    let mut labels = Vec::with_capacity(n);
    for rec in bytes.chunks_exact(record) {
        let y = rec[label_offset] as u32;
        if y >= num_classes {
            return Err(Error::Data(format!("label {y} out of range")));
        }
        labels.push(y);
        images.extend(rec[header..].iter().map(|&p| p as f32 / 255.0));
    }
    Ok((images, labels))
}

fn read_files(paths: &[PathBuf], header: usize, label_offset: usize, num_classes: u32) -> Result<Dataset> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for p in paths {
        let bytes = std::fs::read(p)?;
        let (im, lb) = parse_records(&bytes, header, label_offset, num_classes)?;
        images.extend(im);
        labels.extend(lb);
    }
    Dataset::new(ImageShape::CIFAR, num_classes, images, labels)
}

pub fn load_cifar10(dir: &Path) -> Result<DatasetSplits> {
    let sub = "cifar-10-batches-bin";
    let train: Vec<PathBuf> = (1..=5)
        .map(|i| locate(dir, sub, &format!("data_batch_{i}.bin")))
        .collect::<Result<_>>()?;
    let test = vec![locate(dir, sub, "test_batch.bin")?];
    Ok(DatasetSplits {
        id: DatasetId::Cifar10,
        train: read_files(&train, 1, 0, 10)?,
        test: read_files(&test, 1, 0, 10)?,
    })
}

pub fn load_cifar100(dir: &Path) -> Result<DatasetSplits> {
    let sub = "cifar-100-binary";
    Ok(DatasetSplits {
        id: DatasetId::Cifar100,
        train: read_files(&[locate(dir, sub, "train.bin")?], 2, 1, 100)?,
        test: read_files(&[locate(dir, sub, "test.bin")?], 2, 1, 100)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cifar100_uses_fine_label() {
        let mut bytes = vec![3u8, 42];
        bytes.extend(std::iter::repeat_n(255u8, PIXELS));
        let (im, lb) = parse_records(&bytes, 2, 1, 100).unwrap();
        assert_eq!(lb, vec![42]);
        assert_eq!(im.len(), PIXELS);
        assert!(im.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn truncated_file_is_rejected() {
        assert!(parse_records(&[0u8; 100], 1, 0, 10).is_err());
    }

    #[test]
    fn reads_cifar10_layout_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let sub = dir.path().join("cifar-10-batches-bin");
        std::fs::create_dir(&sub).unwrap();
        for (i, name) in ["data_batch_1", "data_batch_2", "data_batch_3", "data_batch_4", "data_batch_5", "test_batch"]
            .iter()
            .enumerate()
        {
            let mut rec = vec![(i % 10) as u8];
            rec.extend(std::iter::repeat_n(0u8, PIXELS));
            std::fs::write(sub.join(format!("{name}.bin")), rec).unwrap();
        }
        let splits = load_cifar10(dir.path()).unwrap();
        assert_eq!(splits.train.len(), 5);
        assert_eq!(splits.test.labels(), &[5]);
        assert!(matches!(load_cifar100(dir.path()), Err(Error::MissingDataset { .. })));
    }
}
