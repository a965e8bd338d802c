//! MNIST-family datasets: download, cache, decompress and parse.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use crate::error::{Error, IoContext, Result};
use crate::fsutil::write_atomic;
use crate::idx::{parse_idx, IdxTensor};

pub const CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetName {
    Mnist,
    FashionMnist,
    Kmnist,
}

impl DatasetName {
    pub const ALL: [DatasetName; 3] = [DatasetName::Mnist, DatasetName::FashionMnist, DatasetName::Kmnist];

    pub fn as_str(&self) -> &'static str {
        match self {
            DatasetName::Mnist => "mnist",
            DatasetName::FashionMnist => "fashion-mnist",
            DatasetName::Kmnist => "kmnist",
        }
    }

    /// Environment variable that overrides the mirror base URL.
    pub fn url_env(&self) -> &'static str {
        match self {
            DatasetName::Mnist => "QLIF_MNIST_URL",
            DatasetName::FashionMnist => "QLIF_FASHION_MNIST_URL",
            DatasetName::Kmnist => "QLIF_KMNIST_URL",
        }
    }

    pub fn default_base_url(&self) -> &'static str {
        match self {
            DatasetName::Mnist => "https://storage.googleapis.com/cvdf-datasets/mnist/",
            DatasetName::FashionMnist => "https://storage.googleapis.com/tensorflow/tf-keras-datasets/",
            DatasetName::Kmnist => "https://codh.rois.ac.jp/kmnist/dataset/kmnist/",
        }
    }

    pub fn base_url(&self) -> String {
        std::env::var(self.url_env()).unwrap_or_else(|_| self.default_base_url().to_string())
    }
}

impl std::fmt::Display for DatasetName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "mnist" => Ok(DatasetName::Mnist),
            "fashion-mnist" | "fashionmnist" | "fashion" => Ok(DatasetName::FashionMnist),
            "kmnist" | "kuzushiji-mnist" => Ok(DatasetName::Kmnist),
            other => Err(Error::Config(format!("unknown dataset '{other}' (mnist, fashion-mnist, kmnist)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn image_file(&self) -> &'static str {
        match self {
            Split::Train => "train-images-idx3-ubyte.gz",
            Split::Test => "t10k-images-idx3-ubyte.gz",
        }
    }

    pub fn label_file(&self) -> &'static str {
        match self {
            Split::Train => "train-labels-idx1-ubyte.gz",
            Split::Test => "t10k-labels-idx1-ubyte.gz",
        }
    }

    pub fn expected_count(&self) -> usize {
        match self {
            Split::Train => 60_000,
            Split::Test => 10_000,
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" | "t10k" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split '{other}' (train, test)"))),
        }
    }
}

/// One split of a dataset. Pixels are kept as bytes and normalized on access.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: DatasetName,
    pub split: Split,
    pub rows: usize,
    pub cols: usize,
    images: Vec<u8>,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn from_idx(name: DatasetName, split: Split, images: IdxTensor, labels: IdxTensor) -> Result<Self> {
        let (&[n, rows, cols], &[m]) = (&images.dims[..], &labels.dims[..]) else {
            return Err(Error::Config(format!("image dims {:?} / label dims {:?}", images.dims, labels.dims)));
        };
        if n != m {
            return Err(Error::SampleCount { file: split.label_file().into(), expected: n, actual: m });
        }
        if let Some(&bad) = labels.data.iter().find(|&&l| l as usize >= CLASSES) {
            return Err(Error::Config(format!("label {bad} outside 0..{CLASSES}")));
        }
        Ok(Self { name, split, rows, cols, images: images.data, labels: labels.data })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pixels_per_image(&self) -> usize {
        self.rows * self.cols
    }

    pub fn pixels(&self, i: usize) -> &[u8] {
        let n = self.pixels_per_image();
        &self.images[i * n..(i + 1) * n]
    }

    /// Intensities of image `i` in `[0, 1]`.
    pub fn intensities(&self, i: usize) -> Vec<f64> {
        self.pixels(i).iter().map(|&p| p as f64 / 255.0).collect()
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// First `n` samples (all of them if `n` exceeds the length).
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            images: self.images[..n * self.pixels_per_image()].to_vec(),
            labels: self.labels[..n].to_vec(),
            ..self.clone_header()
        }
    }

    /// Splits off the last `round(fraction * len)` samples.
    pub fn split_tail(&self, fraction: f64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::Config(format!("validation fraction {fraction} outside [0, 1)")));
        }
        let tail = (fraction * self.len() as f64).round() as usize;
        let keep = self.len() - tail;
        let px = self.pixels_per_image();
        let rest = Dataset {
            images: self.images[keep * px..].to_vec(),
            labels: self.labels[keep..].to_vec(),
            ..self.clone_header()
        };
        Ok((self.head(keep), rest))
    }

    pub fn class_histogram(&self) -> [usize; CLASSES] {
        let mut h = [0; CLASSES];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }

    fn clone_header(&self) -> Dataset {
        Dataset { images: Vec::new(), labels: Vec::new(), ..*self }
    }

    fn check_count(&self, expected: usize) -> Result<()> {
        if self.len() != expected {
            return Err(Error::SampleCount { file: self.split.image_file().into(), expected, actual: self.len() });
        }
        Ok(())
    }
}

/// Source of raw bytes for a URL.
pub trait Transport: Send + Sync {
    fn get(&self, url: &str) -> std::result::Result<Vec<u8>, String>;
}

/// HTTPS transport.
pub struct HttpTransport {
    agent: ureq::Agent,
}

impl Default for HttpTransport {
    fn default() -> Self {
        let config = ureq::Agent::config_builder().timeout_global(Some(Duration::from_secs(300))).build();
        Self { agent: config.into() }
    }
}

impl Transport for HttpTransport {
    fn get(&self, url: &str) -> std::result::Result<Vec<u8>, String> {
        let mut response = self.agent.get(url).call().map_err(|e| e.to_string())?;
        response.body_mut().with_config().limit(256 << 20).read_to_vec().map_err(|e| e.to_string())
    }
}

/// `$QLIF_CACHE_DIR`, else `$XDG_CACHE_HOME/qlif`, else `~/.cache/qlif`.
pub fn default_cache_dir() -> PathBuf {
    if let Some(dir) = std::env::var_os("QLIF_CACHE_DIR") {
        return dir.into();
    }
    if let Some(dir) = std::env::var_os("XDG_CACHE_HOME") {
        return PathBuf::from(dir).join("qlif");
    }
    std::env::var_os("HOME").map_or_else(|| PathBuf::from(".qlif-cache"), |h| PathBuf::from(h).join(".cache/qlif"))
}

const MANIFEST: &str = "manifest.json";

#[derive(Debug, Default, serde::Serialize, serde::Deserialize)]
struct Manifest {
    files: BTreeMap<String, u64>,
}

/// Downloads into and reads from `<cache_dir>/<dataset>/<file>`, with a
/// `manifest.json` of byte sizes per dataset directory.
pub struct Fetcher<'t> {
    pub cache_dir: PathBuf,
    pub attempts: u32,
    pub backoff: Duration,
    transport: &'t dyn Transport,
}

impl<'t> Fetcher<'t> {
    pub fn new(cache_dir: impl Into<PathBuf>, transport: &'t dyn Transport) -> Self {
        Self { cache_dir: cache_dir.into(), attempts: 3, backoff: Duration::from_millis(500), transport }
    }

    pub fn dataset_dir(&self, name: DatasetName) -> PathBuf {
        self.cache_dir.join(name.as_str())
    }

    /// Both splits with the canonical sample counts enforced.
    pub fn fetch(&self, name: DatasetName) -> Result<(Dataset, Dataset)> {
        Ok((self.load(name, Split::Train)?, self.load(name, Split::Test)?))
    }

    pub fn load(&self, name: DatasetName, split: Split) -> Result<Dataset> {
        self.ensure(name)?;
        let dir = self.dataset_dir(name);
        let images = read_cached(&dir.join(split.image_file()))?;
        let labels = read_cached(&dir.join(split.label_file()))?;
        let data = Dataset::from_idx(name, split, images, labels)?;
        data.check_count(split.expected_count())?;
        Ok(data)
    }

    /// Makes sure all four files are cached, downloading what is missing.
    /// Holds an exclusive lock on the dataset directory meanwhile.
    pub fn ensure(&self, name: DatasetName) -> Result<()> {
        let dir = self.dataset_dir(name);
        fs::create_dir_all(&dir).at(&dir)?;
        let lock_path = dir.join(".lock");
        let lock = File::options().create(true).truncate(false).write(true).open(&lock_path).at(&lock_path)?;
        lock.lock().at(&lock_path)?;

        let manifest_path = dir.join(MANIFEST);
        let mut manifest: Manifest = match fs::read(&manifest_path) {
            Ok(bytes) => serde_json::from_slice(&bytes).unwrap_or_default(),
            Err(_) => Manifest::default(),
        };
        let mut changed = false;
        for split in [Split::Train, Split::Test] {
            for (file, rank) in [(split.image_file(), 3), (split.label_file(), 1)] {
                let path = dir.join(file);
                if let Ok(meta) = fs::metadata(&path) {
                    match manifest.files.get(file) {
                        Some(&expected) if expected != meta.len() => {
                            let quarantined = quarantine(&path)?;
                            manifest.files.remove(file);
                            write_manifest(&manifest_path, &manifest)?;
                            return Err(Error::SizeMismatch { path, expected, actual: meta.len(), quarantined });
                        }
                        Some(_) => continue,
                        None => {
                            manifest.files.insert(file.to_string(), meta.len());
                            changed = true;
                            continue;
                        }
                    }
                }
                let url = format!("{}/{}", name.base_url().trim_end_matches('/'), file);
                let bytes = self.download(&url)?;
                let tensor = decode(&bytes).map_err(|reason| Error::Download { url: url.clone(), attempts: 1, last: reason })?;
                if tensor.rank() != rank || tensor.dims[0] != split.expected_count() {
                    return Err(Error::SampleCount { file: file.into(), expected: split.expected_count(), actual: tensor.dims[0] });
                }
                write_atomic(&path, &bytes)?;
                manifest.files.insert(file.to_string(), bytes.len() as u64);
                changed = true;
            }
        }
        if changed {
            write_manifest(&manifest_path, &manifest)?;
        }
        Ok(())
    }

    fn download(&self, url: &str) -> Result<Vec<u8>> {
        let mut last = String::new();
        for attempt in 0..self.attempts {
            if attempt > 0 {
                std::thread::sleep(self.backoff * (1 << (attempt - 1)));
            }
            match self.transport.get(url) {
                Ok(bytes) => return Ok(bytes),
                Err(e) => {
                    log::warn!("GET {url} attempt {} failed: {e}", attempt + 1);
                    last = e;
                }
            }
        }
        Err(Error::Download { url: url.to_string(), attempts: self.attempts, last })
    }
}

fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    write_atomic(path, &serde_json::to_vec_pretty(manifest)?)
}

fn quarantine(path: &Path) -> Result<PathBuf> {
    let mut target = path.as_os_str().to_owned();
    target.push(".corrupt");
    let target = PathBuf::from(target);
    fs::rename(path, &target).at(path)?;
    Ok(target)
}

/// Gunzips when the gzip magic is present, then parses.
fn decode(bytes: &[u8]) -> std::result::Result<IdxTensor, String> {
    let raw = if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(bytes).read_to_end(&mut out).map_err(|e| format!("gzip: {e}"))?;
        out
    } else {
        bytes.to_vec()
    };
    parse_idx(&raw).map_err(|e| e.to_string())
}

fn read_cached(path: &Path) -> Result<IdxTensor> {
    let bytes = fs::read(path).at(path)?;
    decode(&bytes).map_err(|reason| match quarantine(path) {
        Ok(quarantined) => Error::Corrupt { path: path.to_path_buf(), reason, quarantined },
        Err(e) => e,
    })
}

/// Reads one split from a directory of IDX files, gzipped (canonical
/// names) or plain (names without `.gz`). Sample counts are not enforced.
pub fn load_idx_dir(dir: &Path, name: DatasetName, split: Split) -> Result<Dataset> {
    let read = |file: &str| -> Result<IdxTensor> {
        let gz = dir.join(file);
        let path = if gz.exists() { gz } else { dir.join(file.trim_end_matches(".gz")) };
        let bytes = fs::read(&path).at(&path)?;
        decode(&bytes).map_err(|reason| Error::Config(format!("{}: {reason}", path.display())))
    };
    Dataset::from_idx(name, split, read(split.image_file())?, read(split.label_file())?)
}
