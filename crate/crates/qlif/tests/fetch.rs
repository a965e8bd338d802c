mod common;

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Duration;

use qlif::data::{DatasetName, Fetcher, Split, Transport};
use qlif::Error;

/// Serves canned files by name and records every request.
#[derive(Default)]
struct Stub {
    files: HashMap<String, Vec<u8>>,
    failures_before_success: usize,
    calls: Mutex<Vec<String>>,
}

impl Stub {
    fn canonical() -> Self {
        let mut files = HashMap::new();
        for split in [Split::Train, Split::Test] {
            let (images, labels) = common::canonical_count_files(split);
            files.insert(split.image_file().to_string(), images);
            files.insert(split.label_file().to_string(), labels);
        }
        Self { files, ..Self::default() }
    }

    fn calls(&self) -> Vec<String> {
        self.calls.lock().unwrap().clone()
    }
}

impl Transport for Stub {
    fn get(&self, url: &str) -> Result<Vec<u8>, String> {
        let mut calls = self.calls.lock().unwrap();
        calls.push(url.to_string());
        let attempts = calls.iter().filter(|u| *u == url).count();
        if attempts <= self.failures_before_success {
            return Err("connection reset".into());
        }
        let name = url.rsplit('/').next().unwrap();
        self.files.get(name).cloned().ok_or_else(|| format!("404 {name}"))
    }
}

fn fetcher<'t>(dir: &std::path::Path, stub: &'t Stub) -> Fetcher<'t> {
    let mut f = Fetcher::new(dir, stub);
    f.backoff = Duration::from_millis(1);
    f
}

#[test]
fn cold_then_warm_cache() {
    let tmp = tempfile::tempdir().unwrap();
    let stub = Stub::canonical();
    let f = fetcher(tmp.path(), &stub);
    let (train, test) = f.fetch(DatasetName::Mnist).unwrap();
    assert_eq!((train.len(), test.len()), (60000, 10000));
    assert_eq!(stub.calls().len(), 4);
    assert!(f.dataset_dir(DatasetName::Mnist).join("manifest.json").exists());

    let (train, _) = f.fetch(DatasetName::Mnist).unwrap();
    assert_eq!(train.len(), 60000);
    assert_eq!(stub.calls().len(), 4, "warm cache must not touch the network");
    assert!(train.class_histogram().iter().all(|&c| c > 0));
}

#[test]
fn download_retries_then_gives_up() {
    let tmp = tempfile::tempdir().unwrap();
    let stub = Stub { failures_before_success: usize::MAX, ..Stub::canonical() };
    let err = fetcher(tmp.path(), &stub).fetch(DatasetName::Mnist).unwrap_err();
    assert!(matches!(err, Error::Download { attempts: 3, .. }), "{err}");
    assert_eq!(stub.calls().len(), 3);
}

#[test]
fn transient_failures_are_retried() {
    let tmp = tempfile::tempdir().unwrap();
    let stub = Stub { failures_before_success: 2, ..Stub::canonical() };
    fetcher(tmp.path(), &stub).fetch(DatasetName::Mnist).unwrap();
    assert_eq!(stub.calls().len(), 12);
}

#[test]
fn corrupt_cached_gzip_is_quarantined() {
    let tmp = tempfile::tempdir().unwrap();
    let stub = Stub::canonical();
    let f = fetcher(tmp.path(), &stub);
    f.fetch(DatasetName::Mnist).unwrap();
    let path = f.dataset_dir(DatasetName::Mnist).join(Split::Test.label_file());
    let len = std::fs::metadata(&path).unwrap().len() as usize;
    let mut junk = vec![0x5a; len];
    junk[..2].copy_from_slice(&[0x1f, 0x8b]);
    std::fs::write(&path, junk).unwrap();

    match f.load(DatasetName::Mnist, Split::Test).unwrap_err() {
        Error::Corrupt { quarantined, .. } => {
            assert!(quarantined.exists());
            assert!(quarantined.to_string_lossy().ends_with(".corrupt"));
        }
        e => panic!("expected corrupt-cache error, got {e}"),
    }
    assert!(!path.exists());
    assert_eq!(f.load(DatasetName::Mnist, Split::Test).unwrap().len(), 10000);
    assert_eq!(stub.calls().len(), 5);
}

#[test]
fn size_mismatch_is_quarantined() {
    let tmp = tempfile::tempdir().unwrap();
    let stub = Stub::canonical();
    let f = fetcher(tmp.path(), &stub);
    f.fetch(DatasetName::Mnist).unwrap();
    let path = f.dataset_dir(DatasetName::Mnist).join(Split::Train.image_file());
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();

    let err = f.fetch(DatasetName::Mnist).unwrap_err();
    assert!(matches!(err, Error::SizeMismatch { ref quarantined, .. } if quarantined.exists()), "{err}");
    f.fetch(DatasetName::Mnist).unwrap();
}

#[test]
fn wrong_sample_count_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let mut stub = Stub::canonical();
    let (images, labels) = common::pattern(100, 0);
    stub.files.insert(Split::Train.image_file().into(), common::gzip(&qlif::idx::serialize_idx(&images)));
    stub.files.insert(Split::Train.label_file().into(), common::gzip(&qlif::idx::serialize_idx(&labels)));
    let err = fetcher(tmp.path(), &stub).fetch(DatasetName::Mnist).unwrap_err();
    assert!(matches!(err, Error::SampleCount { expected: 60000, actual: 100, .. }), "{err}");
    assert!(!tmp.path().join("mnist").join(Split::Train.image_file()).exists());
}

#[test]
fn mirror_url_comes_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let stub = Stub::canonical();
    std::env::set_var(DatasetName::Kmnist.url_env(), "http://mirror.invalid/kmnist/");
    fetcher(tmp.path(), &stub).fetch(DatasetName::Kmnist).unwrap();
    std::env::remove_var(DatasetName::Kmnist.url_env());
    let calls = stub.calls();
    assert_eq!(calls.len(), 4);
    assert!(calls.iter().all(|u| u.starts_with("http://mirror.invalid/kmnist/")), "{calls:?}");
    assert!(calls.contains(&"http://mirror.invalid/kmnist/t10k-images-idx3-ubyte.gz".to_string()));
}
