//! IDX (MNIST) ingestion and pair subsampling.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;
/// Environment variable naming a directory with IDX files.
pub const MNIST_DIR_ENV: &str = "MANIREG_MNIST_DIR";

#[derive(Debug, Clone, PartialEq)]
pub struct MnistDataset {
    /// one image per row, pixels scaled to [0, 1]
    pub images: Array2<f64>,
    pub labels: Vec<u8>,
    pub rows: usize,
    pub cols: usize,
}

impl MnistDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::TruncatedFile(format!("{}: header", path.display())))
}

pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<MnistDataset> {
    let img = fs::read(images_path)?;
    let lab = fs::read(labels_path)?;
    let magic = be_u32(&img, 0, images_path)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::BadMagic {
            expected: IMAGE_MAGIC,
            found: magic,
        });
    }
    let magic = be_u32(&lab, 0, labels_path)?;
    if magic != LABEL_MAGIC {
        return Err(Error::BadMagic {
            expected: LABEL_MAGIC,
            found: magic,
        });
    }
    let count = be_u32(&img, 4, images_path)? as usize;
    let rows = be_u32(&img, 8, images_path)? as usize;
    let cols = be_u32(&img, 12, images_path)? as usize;
    let label_count = be_u32(&lab, 4, labels_path)? as usize;
    if count != label_count {
        return Err(Error::CountMismatch {
            images: count,
            labels: label_count,
        });
    }
    let pixels = rows * cols;
    let body = img
        .get(16..16 + count * pixels)
        .ok_or_else(|| Error::TruncatedFile(format!("{}: pixel data", images_path.display())))?;
    let labels = lab
        .get(8..8 + count)
        .ok_or_else(|| Error::TruncatedFile(format!("{}: label data", labels_path.display())))?
        .to_vec();
    let images = Array2::from_shape_fn((count, pixels), |(i, j)| body[i * pixels + j] as f64 / 255.0);
    Ok(MnistDataset {
        images,
        labels,
        rows,
        cols,
    })
}

/// Write images (values in [0, 1], rounded to bytes) and labels as IDX files.
pub fn write_idx(images_path: &Path, labels_path: &Path, data: &MnistDataset) -> Result<()> {
    let n = data.len();
    let mut img = Vec::with_capacity(16 + data.images.len());
    for v in [IMAGE_MAGIC, n as u32, data.rows as u32, data.cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend(data.images.iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    let mut lab = Vec::with_capacity(8 + n);
    lab.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(n as u32).to_be_bytes());
    lab.extend_from_slice(&data.labels);
    fs::write(images_path, img)?;
    fs::write(labels_path, lab)?;
    Ok(())
}

/// Locate an (images, labels) IDX pair in `dir`, preferring the training set.
pub fn find_idx_pair(dir: &Path) -> Option<(PathBuf, PathBuf)> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .ok()?
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .filter(|n| n.contains("images-idx3-ubyte"))
        .collect();
    names.sort_by_key(|n| (!n.starts_with("train"), n.clone()));
    names.into_iter().find_map(|n| {
        let labels = dir.join(n.replace("images-idx3-ubyte", "labels-idx1-ubyte"));
        labels.exists().then(|| (dir.join(&n), labels))
    })
}

/// `$MANIREG_MNIST_DIR` if set, otherwise the bundled 4/9 test fixture.
pub fn default_mnist_dir() -> PathBuf {
    std::env::var_os(MNIST_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data"))
}

pub fn load_mnist_dir(dir: &Path) -> Result<MnistDataset> {
    let (images, labels) = find_idx_pair(dir).ok_or_else(|| {
        Error::InsufficientData(format!("no IDX image/label pair found in {}", dir.display()))
    })?;
    load_mnist_idx(&images, &labels)
}

/// n images of digits a and b, labels a → +1, b → −1.
#[derive(Debug, Clone, PartialEq)]
pub struct MnistSubset {
    pub images: Array2<f64>,
    pub digits: Vec<u8>,
    pub labels: Vec<i8>,
    /// rows of the source dataset
    pub indices: Vec<usize>,
    pub pair: (u8, u8),
}

/// Sample n images uniformly without replacement from the union of classes a and b.
pub fn select_pair(data: &MnistDataset, a: u8, b: u8, n: usize, seed: u64) -> Result<MnistSubset> {
    let pool: Vec<usize> = (0..data.len())
        .filter(|&i| data.labels[i] == a || data.labels[i] == b)
        .collect();
    if n > pool.len() || a == b {
        return Err(Error::InsufficientData(format!(
            "requested {n} images of digits {a} and {b}; {} available",
            pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks: Vec<usize> = sample(&mut rng, pool.len(), n).into_iter().map(|k| pool[k]).collect();
    picks.sort_unstable();
    let images = Array2::from_shape_fn((n, data.images.ncols()), |(i, j)| data.images[[picks[i], j]]);
    let digits: Vec<u8> = picks.iter().map(|&i| data.labels[i]).collect();
    let labels = digits.iter().map(|&d| if d == a { 1 } else { -1 }).collect();
    Ok(MnistSubset {
        images,
        digits,
        labels,
        indices: picks,
        pair: (a, b),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> MnistDataset {
        load_mnist_dir(&Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data")).unwrap()
    }

    #[test]
    fn fixture_loads() {
        let d = fixture();
        assert_eq!((d.rows, d.cols), (28, 28));
        assert_eq!(d.images.ncols(), 784);
        assert!(d.labels.iter().all(|&l| l == 4 || l == 9));
        assert!(d.images.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let size = fs::metadata(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/mnist-49-images-idx3-ubyte"))
            .unwrap()
            .len() as usize;
        assert_eq!(size, 16 + d.len() * 784);
    }

    #[test]
    fn select_pair_counts_and_determinism() {
        let d = fixture();
        let s = select_pair(&d, 4, 9, 1000, 3).unwrap();
        assert_eq!(s.images.nrows(), 1000);
        assert!(s.digits.iter().all(|&x| x == 4 || x == 9));
        assert!(s.digits.iter().zip(&s.labels).all(|(d, l)| (*d == 4) == (*l == 1)));
        assert_eq!(select_pair(&d, 4, 9, 1000, 3).unwrap(), s);
        assert_ne!(select_pair(&d, 4, 9, 1000, 4).unwrap().indices, s.indices);
        let all = select_pair(&d, 4, 9, d.len(), 0).unwrap();
        assert_eq!(all.indices, (0..d.len()).collect::<Vec<_>>());
        assert!(matches!(select_pair(&d, 4, 9, d.len() + 1, 0), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn round_trip_and_corruption() {
        let d = fixture();
        let s = select_pair(&d, 4, 9, 50, 1).unwrap();
        let sub = MnistDataset {
            images: s.images.clone(),
            labels: s.digits.clone(),
            rows: 28,
            cols: 28,
        };
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("x-images-idx3-ubyte"), dir.path().join("x-labels-idx1-ubyte"));
        write_idx(&ip, &lp, &sub).unwrap();
        assert_eq!(load_mnist_idx(&ip, &lp).unwrap(), sub);

        let mut bytes = fs::read(&ip).unwrap();
        bytes[3] = 0x04;
        fs::write(&ip, &bytes).unwrap();
        assert!(matches!(load_mnist_idx(&ip, &lp), Err(Error::BadMagic { expected: 2051, .. })));
        bytes[3] = 0x03;
        bytes.truncate(1000);
        fs::write(&ip, &bytes).unwrap();
        assert!(matches!(load_mnist_idx(&ip, &lp), Err(Error::TruncatedFile(_))));
        write_idx(&ip, &lp, &sub).unwrap();
        let mut lab = fs::read(&lp).unwrap();
        lab[7] = 49;
        lab.pop();
        fs::write(&lp, &lab).unwrap();
        assert!(matches!(load_mnist_idx(&ip, &lp), Err(Error::CountMismatch { images: 50, labels: 49 })));
    }
}
