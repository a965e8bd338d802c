//! Synthetic datasets and paths shared by the integration tests.

#![allow(dead_code)]

use std::io::Write;
use std::path::{Path, PathBuf};

use qlif::data::{Dataset, DatasetName, Split};
use qlif::idx::{serialize_idx, IdxTensor};

pub const SIDE: usize = 8;

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("testdata/mnist-subset")
}

pub fn gzip(bytes: &[u8]) -> Vec<u8> {
    let mut gz = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::fast());
    gz.write_all(bytes).unwrap();
    gz.finish().unwrap()
}

/// Class `c` lights a horizontal bar of six pixels starting at `6c`, with
/// a sample-dependent speck elsewhere.
pub fn pattern(n: usize, offset: usize) -> (IdxTensor, IdxTensor) {
    let px = SIDE * SIDE;
    let mut images = vec![0u8; n * px];
    let mut labels = vec![0u8; n];
    for i in 0..n {
        let c = (i + offset) % 10;
        labels[i] = c as u8;
        let img = &mut images[i * px..(i + 1) * px];
        for p in &mut img[6 * c..6 * c + 6] {
            *p = 255;
        }
        img[60 + (i * 7 + offset) % 4] = 128;
    }
    (IdxTensor::new(vec![n, SIDE, SIDE], images).unwrap(), IdxTensor::new(vec![n], labels).unwrap())
}

pub fn pattern_dataset(n: usize, split: Split) -> Dataset {
    let (images, labels) = pattern(n, 0);
    Dataset::from_idx(DatasetName::Mnist, split, images, labels).unwrap()
}

/// Writes gzip IDX files with the canonical names for both splits.
pub fn write_pattern_dir(dir: &Path, train: usize, test: usize) {
    std::fs::create_dir_all(dir).unwrap();
    for (split, n, offset) in [(Split::Train, train, 0), (Split::Test, test, 3)] {
        let (images, labels) = pattern(n, offset);
        std::fs::write(dir.join(split.image_file()), gzip(&serialize_idx(&images))).unwrap();
        std::fs::write(dir.join(split.label_file()), gzip(&serialize_idx(&labels))).unwrap();
    }
}

/// Gzipped `[n, 1, 1]` images and `[n]` labels cycling through the classes.
pub fn canonical_count_files(split: Split) -> (Vec<u8>, Vec<u8>) {
    let n = split.expected_count();
    let images = IdxTensor::new(vec![n, 1, 1], (0..n).map(|i| (i % 251) as u8).collect()).unwrap();
    let labels = IdxTensor::new(vec![n], (0..n).map(|i| (i % 10) as u8).collect()).unwrap();
    (gzip(&serialize_idx(&images)), gzip(&serialize_idx(&labels)))
}
