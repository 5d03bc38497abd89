//! Labeled datasets: IDX (MNIST) loading and Gaussian-blob synthesis.

use std::io::Read;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{config_err, Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Row-major feature matrix with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    dims: usize,
    labels: Vec<usize>,
    class_count: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, dims: usize, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if features.len() != dims * labels.len() {
            return Err(config_err!(
                "feature matrix has {} values, expected {} rows x {dims}",
                features.len(),
                labels.len()
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= class_count) {
            return Err(config_err!("label {bad} outside [0, {class_count})"));
        }
        Ok(Dataset {
            features,
            dims,
            labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.features[i * self.dims..(i + 1) * self.dims]
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.class_count];
        for &y in &self.labels {
            h[y] += 1;
        }
        h
    }

    /// Sample indices grouped by class, each group in dataset order.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.class_count];
        for (i, &y) in self.labels.iter().enumerate() {
            groups[y].push(i);
        }
        groups
    }

    /// New dataset made of the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.dims);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.sample(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            features,
            dims: self.dims,
            labels,
            class_count: self.class_count,
        }
    }

    /// Keeps only samples whose label is in `classes`. The class count is
    /// unchanged so label indices stay meaningful.
    pub fn restrict_classes(&self, classes: &[usize]) -> Dataset {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| classes.contains(&self.labels[i]))
            .collect();
        self.subset(&keep)
    }

    /// Keeps the first `limit` samples of each class (dataset order).
    pub fn take_per_class(&self, limit: usize) -> Dataset {
        let mut seen = vec![0usize; self.class_count];
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| {
                let y = self.labels[i];
                seen[y] += 1;
                seen[y] <= limit
            })
            .collect();
        self.subset(&keep)
    }

    /// Moves the last `test_per_class` samples of every class into a
    /// second dataset.
    pub fn split_per_class(&self, test_per_class: usize) -> Result<(Dataset, Dataset)> {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (class, group) in self.indices_by_class().into_iter().enumerate() {
            if group.len() < test_per_class {
                return Err(Error::InsufficientSamples {
                    class,
                    needed: test_per_class,
                    available: group.len(),
                });
            }
            let cut = group.len() - test_per_class;
            train.extend_from_slice(&group[..cut]);
            test.extend_from_slice(&group[cut..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        Ok((self.subset(&train), self.subset(&test)))
    }
}

fn load_err(field: &str, reason: impl Into<String>) -> Error {
    Error::Load {
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn read_u32_be(r: &mut impl Read, field: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| load_err(field, "truncated header"))?;
    Ok(u32::from_be_bytes(buf))
}

fn open(path: &Path) -> Result<std::io::BufReader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(std::io::BufReader::new(file))
}

/// Parses an IDX image stream: returns (count, rows*cols, pixel bytes).
pub fn parse_idx_images(r: &mut impl Read) -> Result<(usize, usize, Vec<u8>)> {
    let magic = read_u32_be(r, "images.magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(load_err(
            "images.magic",
            format!("expected {IDX_IMAGES_MAGIC:#010x}, got {magic:#010x}"),
        ));
    }
    let count = read_u32_be(r, "images.count")? as usize;
    let rows = read_u32_be(r, "images.rows")? as usize;
    let cols = read_u32_be(r, "images.cols")? as usize;
    let mut pixels = vec![0u8; count * rows * cols];
    r.read_exact(&mut pixels).map_err(|_| {
        load_err(
            "images.pixels",
            format!("truncated: expected {} bytes", count * rows * cols),
        )
    })?;
    Ok((count, rows * cols, pixels))
}

pub fn parse_idx_labels(r: &mut impl Read) -> Result<Vec<u8>> {
    let magic = read_u32_be(r, "labels.magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(load_err(
            "labels.magic",
            format!("expected {IDX_LABELS_MAGIC:#010x}, got {magic:#010x}"),
        ));
    }
    let count = read_u32_be(r, "labels.count")? as usize;
    let mut labels = vec![0u8; count];
    r.read_exact(&mut labels)
        .map_err(|_| load_err("labels.data", format!("truncated: expected {count} bytes")))?;
    Ok(labels)
}

/// Loads an IDX image/label file pair, scaling pixels to [0,1].
///
/// The class count is `max(label) + 1`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let (count, dims, pixels) = parse_idx_images(&mut open(images_path)?)?;
    let labels = parse_idx_labels(&mut open(labels_path)?)?;
    if labels.len() != count {
        return Err(load_err(
            "labels.count",
            format!("{} labels for {count} images", labels.len()),
        ));
    }
    let features = pixels.iter().map(|&b| b as f64 / 255.0).collect();
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    let class_count = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(features, dims, labels, class_count)
}

/// Encodes images as IDX (`count x rows x cols`, unsigned bytes).
pub fn encode_idx_images(rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
    let per = (rows * cols) as usize;
    let count = pixels.len().checked_div(per).unwrap_or(0);
    let mut out = Vec::with_capacity(16 + pixels.len());
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(count as u32).to_be_bytes());
    out.extend_from_slice(&rows.to_be_bytes());
    out.extend_from_slice(&cols.to_be_bytes());
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// One isotropic Gaussian blob per class, `per_class` samples each, with
/// means drawn uniformly in `[0,1]^dims` and values clipped to `[0,1]`.
/// Samples are stored class by class.
pub fn gen_synthetic<R: Rng>(
    classes: usize,
    dims: usize,
    per_class: usize,
    spread: f64,
    rng: &mut R,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(config_err!("synthetic data needs at least 2 classes"));
    }
    if per_class == 0 || dims == 0 {
        return Err(config_err!("per_class and dims must be >= 1"));
    }
    if !(spread >= 0.0) || !spread.is_finite() {
        return Err(config_err!("spread must be finite and >= 0"));
    }
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dims).map(|_| rng.random::<f64>()).collect())
        .collect();
    let mut features = Vec::with_capacity(classes * per_class * dims);
    let mut labels = Vec::with_capacity(classes * per_class);
    for (class, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            for &mu in mean {
                let z: f64 = StandardNormal.sample(rng);
                features.push((mu + spread * z).clamp(0.0, 1.0));
            }
            labels.push(class);
        }
    }
    Dataset::new(features, dims, labels, classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn write_pair(dir: &Path, images: &[u8], labels: &[u8]) -> (std::path::PathBuf, std::path::PathBuf) {
        let ip = dir.join("images.idx");
        let lp = dir.join("labels.idx");
        std::fs::write(&ip, images).unwrap();
        std::fs::write(&lp, labels).unwrap();
        (ip, lp)
    }

    #[test]
    fn idx_fixture_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let pixels = [0u8, 51, 255, 128, 7, 9, 200, 1];
        let (ip, lp) = write_pair(
            dir.path(),
            &encode_idx_images(2, 2, &pixels),
            &encode_idx_labels(&[3, 1]),
        );
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dims(), 4);
        assert_eq!(ds.class_count(), 4);
        assert_eq!(ds.labels(), &[3, 1]);
        assert_eq!(ds.sample(0)[1], 51.0 / 255.0);
        assert_eq!(ds.sample(0)[2], 1.0);
        assert_eq!(ds.sample(1)[0], 7.0 / 255.0);
    }

    #[test]
    fn idx_empty() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_pair(dir.path(), &encode_idx_images(28, 28, &[]), &encode_idx_labels(&[]));
        let ds = load_idx(&ip, &lp).unwrap();
        assert!(ds.is_empty());
        assert_eq!(ds.dims(), 784);
    }

    #[test]
    fn idx_errors_name_field() {
        let dir = tempfile::tempdir().unwrap();
        let good_images = encode_idx_images(1, 2, &[1, 2, 3, 4]);

        let mut bad_magic = good_images.clone();
        bad_magic[3] = 0x01;
        let (ip, lp) = write_pair(dir.path(), &bad_magic, &encode_idx_labels(&[0, 1]));
        let err = load_idx(&ip, &lp).unwrap_err();
        assert!(matches!(&err, Error::Load { field, .. } if field == "images.magic"), "{err}");

        let truncated = &good_images[..good_images.len() - 1];
        let (ip, lp) = write_pair(dir.path(), truncated, &encode_idx_labels(&[0, 1]));
        let err = load_idx(&ip, &lp).unwrap_err();
        assert!(matches!(&err, Error::Load { field, .. } if field == "images.pixels"), "{err}");

        let (ip, lp) = write_pair(dir.path(), &good_images, &encode_idx_labels(&[0]));
        let err = load_idx(&ip, &lp).unwrap_err();
        assert!(matches!(&err, Error::Load { field, .. } if field == "labels.count"), "{err}");
    }

    #[test]
    fn synthetic_balanced() {
        let ds = gen_synthetic(10, 20, 50, 0.1, &mut seeded(1)).unwrap();
        assert_eq!(ds.len(), 500);
        assert_eq!(ds.class_histogram(), vec![50; 10]);
        assert!(ds.features().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn synthetic_zero_spread_is_mean() {
        let ds = gen_synthetic(3, 5, 4, 0.0, &mut seeded(2)).unwrap();
        for group in ds.indices_by_class() {
            for &i in &group[1..] {
                assert_eq!(ds.sample(i), ds.sample(group[0]));
            }
        }
    }

    #[test]
    fn synthetic_rejects_bad_params() {
        assert!(gen_synthetic(1, 2, 3, 0.1, &mut seeded(0)).is_err());
        assert!(gen_synthetic(2, 2, 0, 0.1, &mut seeded(0)).is_err());
    }

    #[test]
    fn split_and_restrict() {
        let ds = gen_synthetic(4, 3, 10, 0.1, &mut seeded(3)).unwrap();
        let (train, test) = ds.split_per_class(3).unwrap();
        assert_eq!(train.class_histogram(), vec![7; 4]);
        assert_eq!(test.class_histogram(), vec![3; 4]);
        let r = test.restrict_classes(&[0, 2]);
        assert_eq!(r.class_histogram(), vec![3, 0, 3, 0]);
        assert_eq!(ds.take_per_class(2).class_histogram(), vec![2; 4]);
        assert!(ds.split_per_class(11).is_err());
    }
}
