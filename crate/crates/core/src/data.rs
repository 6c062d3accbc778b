//! Labeled datasets, non-IID partitioning and allocation skew.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Zipf};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::rng_from_seed;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Upper end of the support of the Zipf draws used by [`zipf_allocate`].
/// Large enough that the heavy tail is effectively untruncated; the
/// truncation that matters happens when a class pool runs out.
pub const ZIPF_SUPPORT: f64 = 1e9;

const CENTER_SEED: u64 = 0x5EED_CE27_E125;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("dataset file not found: {0}")]
    NotFound(PathBuf),
    #[error("{path}: bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },
    #[error("{path}: truncated, expected {expected} bytes but found {actual}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("dataset is malformed: {0}")]
    Malformed(String),
    #[error(
        "class {class} has {available} samples but {nodes} nodes x {min_per_class} per class are required"
    )]
    InfeasibleFloor {
        class: usize,
        available: usize,
        nodes: usize,
        min_per_class: usize,
    },
    #[error("invalid allocation parameter: {0}")]
    BadAllocation(String),
    #[error("gini index needs non-negative counts with a positive total")]
    GiniUndefined,
}

/// Samples with features in `[0, 1]`, stored row-major as `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Vec<f32>,
    feature_dim: usize,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(
        features: Vec<f32>,
        feature_dim: usize,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self, DataError> {
        if feature_dim == 0 {
            return Err(DataError::Malformed("feature dimension is zero".into()));
        }
        if features.len() != feature_dim * labels.len() {
            return Err(DataError::Malformed(format!(
                "{} feature values for {} samples of dimension {}",
                features.len(),
                labels.len(),
                feature_dim
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(DataError::Malformed(format!(
                "label {bad} is not below the class count {num_classes}"
            )));
        }
        Ok(Self {
            features,
            feature_dim,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    /// Indices of each class, in dataset order.
    pub fn class_pools(&self) -> Vec<Vec<usize>> {
        let mut pools = vec![Vec::new(); self.num_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            pools[y].push(i);
        }
        pools
    }

    /// Gather the given rows into a dense `f64` matrix plus labels.
    pub fn gather(&self, indices: &[usize]) -> (Vec<f64>, Vec<usize>) {
        let mut x = Vec::with_capacity(indices.len() * self.feature_dim);
        let mut y = Vec::with_capacity(indices.len());
        for &i in indices {
            x.extend(self.row(i).iter().map(|&v| f64::from(v)));
            y.push(self.labels[i]);
        }
        (x, y)
    }

    /// Keep the first `k` samples of every class, preserving dataset order.
    pub fn first_per_class(&self, k: usize) -> Self {
        let mut seen = vec![0usize; self.num_classes];
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| {
                let c = &mut seen[self.labels[i]];
                *c += 1;
                *c <= k
            })
            .collect();
        self.subset(&keep)
    }

    /// New dataset made of the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.feature_dim);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Self {
            features,
            feature_dim: self.feature_dim,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            DataError::NotFound(path.to_path_buf())
        } else {
            DataError::Io {
                path: path.to_path_buf(),
                source: e,
            }
        }
    })
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32, DataError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DataError::Truncated {
            path: path.to_path_buf(),
            expected: at + 4,
            actual: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<(), DataError> {
    let found = be_u32(bytes, 0, path)?;
    if found != expected {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

fn check_len(bytes: &[u8], expected: usize, path: &Path) -> Result<(), DataError> {
    if bytes.len() < expected {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            expected,
            actual: bytes.len(),
        });
    }
    Ok(())
}

/// Load an IDX image/label file pair (the MNIST distribution format).
///
/// Pixels are divided by 255; the class count is one past the largest label.
pub fn load_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<LabeledDataset, DataError> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let images = read_file(ip)?;
    let labels = read_file(lp)?;

    check_magic(&images, IDX_IMAGES_MAGIC, ip)?;
    check_magic(&labels, IDX_LABELS_MAGIC, lp)?;
    let n_images = be_u32(&images, 4, ip)? as usize;
    let rows = be_u32(&images, 8, ip)? as usize;
    let cols = be_u32(&images, 12, ip)? as usize;
    let n_labels = be_u32(&labels, 4, lp)? as usize;
    if n_images != n_labels {
        return Err(DataError::CountMismatch {
            images: n_images,
            labels: n_labels,
        });
    }
    let dim = rows * cols;
    check_len(&images, 16 + n_images * dim, ip)?;
    check_len(&labels, 8 + n_labels, lp)?;

    let features = images[16..16 + n_images * dim]
        .iter()
        .map(|&b| f32::from(b) / 255.0)
        .collect();
    let labels: Vec<usize> = labels[8..8 + n_labels].iter().map(|&b| b as usize).collect();
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
    LabeledDataset::new(features, dim, labels, num_classes)
}

/// Encode a dataset as an IDX pair. Features are quantized to bytes.
pub fn encode_idx(ds: &LabeledDataset, rows: usize, cols: usize) -> (Vec<u8>, Vec<u8>) {
    assert_eq!(rows * cols, ds.feature_dim, "image shape must match features");
    let mut images = Vec::with_capacity(16 + ds.features.len());
    images.extend(IDX_IMAGES_MAGIC.to_be_bytes());
    images.extend((ds.len() as u32).to_be_bytes());
    images.extend((rows as u32).to_be_bytes());
    images.extend((cols as u32).to_be_bytes());
    images.extend(ds.features.iter().map(|&v| (v * 255.0).round() as u8));
    let mut labels = Vec::with_capacity(8 + ds.len());
    labels.extend(IDX_LABELS_MAGIC.to_be_bytes());
    labels.extend((ds.len() as u32).to_be_bytes());
    labels.extend(ds.labels.iter().map(|&y| y as u8));
    (images, labels)
}

/// Fixed centers shared by every [`synth_blobs`] call with the same shape.
pub fn blob_centers(num_classes: usize, feature_dim: usize) -> Vec<Vec<f64>> {
    let mut rng = rng_from_seed(CENTER_SEED);
    (0..num_classes)
        .map(|_| (0..feature_dim).map(|_| rng.random_range(0.2..0.8)).collect())
        .collect()
}

/// Isotropic Gaussian blobs around fixed per-class centers, clamped to
/// `[0, 1]`. Samples come out class-major (all of class 0 first).
pub fn synth_blobs(
    n_per_class: usize,
    num_classes: usize,
    feature_dim: usize,
    spread: f64,
    seed: u64,
) -> LabeledDataset {
    let centers = blob_centers(num_classes, feature_dim);
    let mut rng = rng_from_seed(seed);
    let mut features = Vec::with_capacity(n_per_class * num_classes * feature_dim);
    let mut labels = Vec::with_capacity(n_per_class * num_classes);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..n_per_class {
            for &mu in center {
                let z: f64 = StandardNormal.sample(&mut rng);
                features.push((mu + spread * z).clamp(0.0, 1.0) as f32);
            }
            labels.push(c);
        }
    }
    LabeledDataset {
        features,
        feature_dim,
        labels,
        num_classes,
    }
}

/// Disjoint per-node index sets into a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Allocation {
    pub alpha: f64,
    pub min_per_class: usize,
    pub seed: u64,
    pub per_node: Vec<Vec<usize>>,
}

impl Allocation {
    pub fn node_count(&self) -> usize {
        self.per_node.len()
    }

    pub fn node_sizes(&self) -> Vec<usize> {
        self.per_node.iter().map(Vec::len).collect()
    }

    /// `counts[node][class]`.
    pub fn class_counts(&self, ds: &LabeledDataset) -> Vec<Vec<usize>> {
        self.per_node
            .iter()
            .map(|idx| {
                let mut row = vec![0; ds.num_classes()];
                for &i in idx {
                    row[ds.labels()[i]] += 1;
                }
                row
            })
            .collect()
    }

    /// Gini index of per-node sample totals.
    pub fn gini(&self) -> f64 {
        let totals: Vec<f64> = self.node_sizes().iter().map(|&s| s as f64).collect();
        gini(&totals).unwrap_or(0.0)
    }

    /// Gini index of each class's spread over nodes.
    pub fn class_gini(&self, ds: &LabeledDataset) -> Vec<f64> {
        let counts = self.class_counts(ds);
        (0..ds.num_classes())
            .map(|c| {
                let col: Vec<f64> = counts.iter().map(|row| row[c] as f64).collect();
                gini(&col).unwrap_or(0.0)
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        crate::json::to_sorted_string(self)
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Non-IID partition of `ds` over `n_nodes` nodes.
///
/// Per class, independently: shuffle the class pool, draw one Zipf(`alpha`)
/// value per node on `[1, ZIPF_SUPPORT]`, turn the values into shares of the
/// pool, floor the products, hand the rounding remainder one sample at a time
/// to the largest shares, and finally top every node up to `min_per_class`
/// by moving samples off the current largest holder. Every sample of every
/// class ends up with exactly one node.
pub fn zipf_allocate(
    ds: &LabeledDataset,
    n_nodes: usize,
    alpha: f64,
    min_per_class: usize,
    seed: u64,
) -> Result<Allocation, DataError> {
    if n_nodes == 0 {
        return Err(DataError::BadAllocation("node count must be positive".into()));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(DataError::BadAllocation(format!(
            "zipf exponent must be positive, got {alpha}"
        )));
    }
    if min_per_class == 0 {
        return Err(DataError::BadAllocation(
            "min_per_class must be at least 1".into(),
        ));
    }
    let pools = ds.class_pools();
    for (class, pool) in pools.iter().enumerate() {
        if pool.len() < n_nodes * min_per_class {
            return Err(DataError::InfeasibleFloor {
                class,
                available: pool.len(),
                nodes: n_nodes,
                min_per_class,
            });
        }
    }

    let zipf = Zipf::new(ZIPF_SUPPORT, alpha)
        .map_err(|e| DataError::BadAllocation(format!("zipf: {e}")))?;
    let mut rng = rng_from_seed(seed);
    let mut per_node = vec![Vec::new(); n_nodes];
    for mut pool in pools {
        pool.shuffle(&mut rng);
        let draws: Vec<f64> = (0..n_nodes).map(|_| zipf.sample(&mut rng)).collect();
        let counts = shares_to_counts(&draws, pool.len(), min_per_class);
        let mut start = 0;
        for (node, &count) in counts.iter().enumerate() {
            per_node[node].extend_from_slice(&pool[start..start + count]);
            start += count;
        }
    }
    for idx in &mut per_node {
        idx.sort_unstable();
    }
    Ok(Allocation {
        alpha,
        min_per_class,
        seed,
        per_node,
    })
}

/// IID partition: shuffle every index and deal them round-robin, so node
/// sizes differ by at most one. Recorded with `alpha = 0`.
pub fn iid_allocate(ds: &LabeledDataset, n_nodes: usize, seed: u64) -> Result<Allocation, DataError> {
    if n_nodes == 0 {
        return Err(DataError::BadAllocation("node count must be positive".into()));
    }
    if ds.len() < n_nodes {
        return Err(DataError::BadAllocation(format!(
            "{} samples cannot cover {n_nodes} nodes",
            ds.len()
        )));
    }
    let mut all: Vec<usize> = (0..ds.len()).collect();
    all.shuffle(&mut rng_from_seed(seed));
    let mut per_node = vec![Vec::new(); n_nodes];
    for (k, i) in all.into_iter().enumerate() {
        per_node[k % n_nodes].push(i);
    }
    for idx in &mut per_node {
        idx.sort_unstable();
    }
    Ok(Allocation {
        alpha: 0.0,
        min_per_class: 0,
        seed,
        per_node,
    })
}

/// Integer counts summing to `pool` from positive weights, with a floor.
fn shares_to_counts(weights: &[f64], pool: usize, floor: usize) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let shares: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let mut counts: Vec<usize> = shares
        .iter()
        .map(|s| ((s * pool as f64).floor() as usize).min(pool))
        .collect();
    let assigned: usize = counts.iter().sum();
    // the floors can overshoot only through rounding error in the shares
    if assigned > pool {
        let mut excess = assigned - pool;
        while excess > 0 {
            let j = argmax(&counts);
            counts[j] -= 1;
            excess -= 1;
        }
    }
    let remainder = pool - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| shares[b].total_cmp(&shares[a]).then(a.cmp(&b)));
    for &k in order.iter().cycle().take(remainder) {
        counts[k] += 1;
    }
    for k in 0..counts.len() {
        while counts[k] < floor {
            let j = argmax(&counts);
            let moved = (floor - counts[k]).min(counts[j] - floor);
            counts[j] -= moved;
            counts[k] += moved;
        }
    }
    counts
}

/// Largest count, lowest index on ties.
fn argmax(counts: &[usize]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

/// Gini index, `Σ_i Σ_j |x_i − x_j| / (2 n² μ)`.
///
/// Evaluated in `O(n log n)` from the sorted values as
/// `Σ_i (2i − n − 1) x_(i) / (n Σ x)` with 1-based ranks.
pub fn gini(counts: &[f64]) -> Result<f64, DataError> {
    if counts.iter().any(|&x| !(x.is_finite() && x >= 0.0)) {
        return Err(DataError::GiniUndefined);
    }
    let total: f64 = counts.iter().sum();
    if counts.is_empty() || total <= 0.0 {
        return Err(DataError::GiniUndefined);
    }
    let mut sorted = counts.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| (2.0 * (i as f64 + 1.0) - n - 1.0) * x)
        .sum();
    Ok((weighted / (n * total)).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn gini_pairwise(x: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let mut s = 0.0;
        for a in x {
            for b in x {
                s += (a - b).abs();
            }
        }
        s / (2.0 * n * n * mean)
    }

    #[test]
    fn gini_examples() {
        assert_eq!(gini(&[5.0, 5.0, 5.0, 5.0]).unwrap(), 0.0);
        assert!((gini(&[0.0, 0.0, 0.0, 12.0]).unwrap() - 0.75).abs() < 1e-15);
        assert!((gini(&[1.0, 2.0, 3.0, 4.0]).unwrap() - 0.25).abs() < 1e-15);
        assert!((gini_pairwise(&[1.0, 2.0, 3.0, 4.0]) - 20.0 / 80.0).abs() < 1e-15);
        assert!(matches!(gini(&[0.0, 0.0]), Err(DataError::GiniUndefined)));
        assert!(gini(&[]).is_err());
        assert!(gini(&[1.0, -1.0, 3.0]).is_err());
    }

    proptest! {
        #[test]
        fn gini_matches_pairwise_and_is_scale_free(
            x in prop::collection::vec(0.0f64..1000.0, 1..40),
            k in 0.01f64..100.0,
        ) {
            prop_assume!(x.iter().sum::<f64>() > 0.0);
            let g = gini(&x).unwrap();
            prop_assert!((g - gini_pairwise(&x)).abs() < 1e-12);
            prop_assert!((0.0..1.0).contains(&g));
            let scaled: Vec<f64> = x.iter().map(|v| v * k).collect();
            prop_assert!((gini(&scaled).unwrap() - g).abs() < 1e-12);
        }
    }

    fn idx_fixture(images: &[u8], labels: &[u8], dir: &Path) -> (PathBuf, PathBuf) {
        let ip = dir.join("img.idx");
        let lp = dir.join("lbl.idx");
        fs::write(&ip, images).unwrap();
        fs::write(&lp, labels).unwrap();
        (ip, lp)
    }

    fn scratch(name: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("dflsim-data-{name}-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn loads_hand_written_idx_pair() {
        #[rustfmt::skip]
        let images = [
            0, 0, 8, 3,  0, 0, 0, 2,  0, 0, 0, 2,  0, 0, 0, 2,
            0, 255, 51, 102,
            255, 0, 0, 0,
        ];
        let labels = [0, 0, 8, 1, 0, 0, 0, 2, 3, 1];
        let dir = scratch("ok");
        let (ip, lp) = idx_fixture(&images, &labels, &dir);
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.feature_dim(), 4);
        assert_eq!(ds.labels(), &[3, 1]);
        assert_eq!(ds.num_classes(), 4);
        assert_eq!(ds.row(0), &[0.0, 1.0, 0.2, 0.4]);
        assert_eq!(ds.row(1), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn idx_errors_are_distinct() {
        let dir = scratch("err");
        let good_images = [0, 0, 8, 3, 0, 0, 0, 3, 0, 0, 0, 1, 0, 0, 0, 1, 7, 8, 9];
        let two_labels = [0, 0, 8, 1, 0, 0, 0, 2, 0, 1];
        let (ip, lp) = idx_fixture(&good_images, &two_labels, &dir);
        assert!(matches!(
            load_idx(&ip, &lp),
            Err(DataError::CountMismatch { images: 3, labels: 2 })
        ));

        let swapped = idx_fixture(&two_labels, &good_images, &dir);
        assert!(matches!(
            load_idx(&swapped.0, &swapped.1),
            Err(DataError::BadMagic { found: 0x801, .. })
        ));

        let short = idx_fixture(&good_images[..17], &[0, 0, 8, 1, 0, 0, 0, 3, 0, 1, 2], &dir);
        assert!(matches!(
            load_idx(&short.0, &short.1),
            Err(DataError::Truncated { expected: 19, actual: 17, .. })
        ));

        assert!(matches!(
            load_idx(dir.join("nope"), &lp),
            Err(DataError::NotFound(_))
        ));
    }

    #[test]
    fn idx_encoding_round_trips_byte_quantized_data() {
        let ds = synth_blobs(3, 2, 4, 0.1, 1);
        let (img, lbl) = encode_idx(&ds, 2, 2);
        let dir = scratch("enc");
        let (ip, lp) = idx_fixture(&img, &lbl, &dir);
        let back = load_idx(&ip, &lp).unwrap();
        assert_eq!(back.labels(), ds.labels());
        for i in 0..ds.len() {
            for (a, b) in back.row(i).iter().zip(ds.row(i)) {
                assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
            }
        }
    }

    /// Perceptron oracle: converges on linearly separable data.
    fn perceptron_separates(ds: &LabeledDataset) -> bool {
        let d = ds.feature_dim();
        let mut w = vec![0.0f64; d + 1];
        for _ in 0..1000 {
            let mut mistakes = 0;
            for i in 0..ds.len() {
                let y = if ds.labels()[i] == 1 { 1.0 } else { -1.0 };
                let x = ds.row(i);
                let act: f64 = w[d] + x.iter().zip(&w).map(|(&a, b)| f64::from(a) * b).sum::<f64>();
                if y * act <= 0.0 {
                    mistakes += 1;
                    for k in 0..d {
                        w[k] += y * f64::from(x[k]);
                    }
                    w[d] += y;
                }
            }
            if mistakes == 0 {
                return true;
            }
        }
        false
    }

    #[test]
    fn blobs_shape_determinism_and_separability() {
        let ds = synth_blobs(10, 2, 2, 0.01, 5);
        assert_eq!(ds.len(), 20);
        assert!(perceptron_separates(&ds));
        assert_eq!(ds, synth_blobs(10, 2, 2, 0.01, 5));
        assert_ne!(ds, synth_blobs(10, 2, 2, 0.01, 6));
        let one = synth_blobs(5, 1, 3, 0.2, 0);
        assert!(one.labels().iter().all(|&y| y == 0));
        for i in 0..one.len() {
            assert!(one.row(i).iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn first_per_class_keeps_stable_prefix() {
        let ds = synth_blobs(5, 3, 2, 0.1, 0);
        let small = ds.first_per_class(2);
        assert_eq!(small.labels(), &[0, 0, 1, 1, 2, 2]);
        assert_eq!(small.row(2), ds.row(5));
    }

    fn check_allocation(ds: &LabeledDataset, a: &Allocation) {
        let mut seen = HashSet::new();
        for idx in &a.per_node {
            for &i in idx {
                assert!(i < ds.len());
                assert!(seen.insert(i), "index {i} allocated twice");
            }
        }
        assert_eq!(seen.len(), ds.len(), "samples lost");
        for row in a.class_counts(ds) {
            assert!(row.iter().all(|&c| c >= a.min_per_class));
        }
    }

    #[test]
    fn single_node_gets_everything() {
        let ds = synth_blobs(7, 3, 2, 0.1, 0);
        let a = zipf_allocate(&ds, 1, 1.26, 1, 9).unwrap();
        assert_eq!(a.per_node, vec![(0..21).collect::<Vec<_>>()]);
        assert_eq!(a.gini(), 0.0);
    }

    #[test]
    fn small_exponent_concentrates_each_class() {
        // alpha near 1 spreads draws log-uniformly, so the largest usually dominates
        let ds = synth_blobs(300, 4, 2, 0.1, 0);
        let (n, floor) = (10, 2);
        let mut top_share = 0.0;
        for seed in 0..20 {
            let a = zipf_allocate(&ds, n, 1.01, floor, seed).unwrap();
            check_allocation(&ds, &a);
            let counts = a.class_counts(&ds);
            for c in 0..4 {
                let max = counts.iter().map(|r| r[c]).max().unwrap();
                top_share += max as f64 / 300.0 / 80.0;
            }
        }
        assert!(top_share >= 0.6, "mean largest share {top_share}");
    }

    #[test]
    fn large_exponent_is_nearly_even() {
        // every draw is 1 when the tail vanishes
        let ds = synth_blobs(100, 2, 2, 0.1, 0);
        let a = zipf_allocate(&ds, 10, 50.0, 1, 3).unwrap();
        for row in a.class_counts(&ds) {
            assert_eq!(row, vec![10, 10]);
        }
    }

    #[test]
    fn infeasible_floor_is_reported() {
        let ds = synth_blobs(4, 2, 2, 0.1, 0);
        assert!(matches!(
            zipf_allocate(&ds, 3, 1.26, 2, 0),
            Err(DataError::InfeasibleFloor { class: 0, available: 4, .. })
        ));
        assert!(zipf_allocate(&ds, 0, 1.26, 1, 0).is_err());
        assert!(zipf_allocate(&ds, 2, 0.0, 1, 0).is_err());
    }

    #[test]
    fn default_exponent_gives_strong_skew() {
        let ds = synth_blobs(1000, 10, 2, 0.1, 0);
        let in_band = (0..4)
            .filter(|&s| {
                let g = zipf_allocate(&ds, 50, 1.26, 1, s).unwrap().gini();
                (0.7..=0.85).contains(&g)
            })
            .count();
        assert!(in_band >= 3, "{in_band}/4 seeds in [0.7, 0.85]");
    }

    #[test]
    fn iid_split_is_even_and_complete() {
        let ds = synth_blobs(7, 3, 2, 0.1, 0);
        let a = iid_allocate(&ds, 4, 1).unwrap();
        let sizes = a.node_sizes();
        assert_eq!(sizes.iter().sum::<usize>(), 21);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        let mut all: Vec<usize> = a.per_node.concat();
        all.sort_unstable();
        assert_eq!(all, (0..21).collect::<Vec<_>>());
        assert!(iid_allocate(&ds, 22, 1).is_err());
    }

    #[test]
    fn allocation_json_round_trips() {
        let ds = synth_blobs(20, 2, 2, 0.1, 0);
        let a = zipf_allocate(&ds, 3, 1.26, 1, 4).unwrap();
        let text = a.to_json();
        assert!(text.starts_with("{\"alpha\":1.26,"));
        assert_eq!(Allocation::from_json(&text).unwrap(), a);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn allocation_invariants(
            alpha in 0.5f64..5.0,
            seed: u64,
            n in 1usize..12,
            floor in 1usize..3,
        ) {
            let ds = synth_blobs(40, 3, 2, 0.1, 1);
            let a = zipf_allocate(&ds, n, alpha, floor, seed).unwrap();
            check_allocation(&ds, &a);
            prop_assert_eq!(&a, &zipf_allocate(&ds, n, alpha, floor, seed).unwrap());
        }
    }
}
