//! Datasets, augmentation and deterministic batch planning.
//!
//! Supported dataset names:
//!
//! | name                    | source                                               | K   |
//! |-------------------------|------------------------------------------------------|-----|
//! | `synthetic-gaussian-10` | generated (coloured Gaussian blobs, 16x16), 5000/1000 | 10  |
//! | `cifar10`               | `<root>/cifar-10-batches-bin/*.bin`                   | 10  |
//! | `cifar10-subset-5k`     | stratified 5000/1000 subset of `cifar10`              | 10  |
//! | `cifar100`              | `<root>/cifar-100-binary/{train,test}.bin`            | 100 |
//!
//! Subset membership for `cifar10-subset-5k` is read from
//! `<root>/cifar10-subset-5k/{train,test}_indices.txt` (one index per line)
//! when present, and otherwise drawn with a fixed seed.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::stream_seed;
use crate::tensor::Tensor;

pub const DATASETS: &[&str] = &["synthetic-gaussian-10", "cifar10", "cifar10-subset-5k", "cifar100"];

const SUBSET_SEED: u64 = 5000;
const SHUFFLE_STREAM: u64 = 0x5348_5546;
const CIFAR_SIDE: usize = 32;
const CIFAR_PIXELS: usize = 3 * CIFAR_SIDE * CIFAR_SIDE;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Per-channel normalization statistics computed on the train split.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// One split of a labeled image set; images are stored normalized, CHW, `f32`.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    pub split: Split,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    images: Vec<f32>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        split: Split,
        (channels, height, width): (usize, usize, usize),
        num_classes: usize,
        images: Vec<f32>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let per = channels * height * width;
        if images.len() != per * labels.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} pixels", per * labels.len()),
                actual: format!("{}", images.len()),
            });
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::invalid(format!("label {bad} out of range for {num_classes} classes")));
        }
        Ok(Self { name: name.into(), split, channels, height, width, num_classes, images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn image(&self, index: usize) -> &[f32] {
        let n = self.image_len();
        &self.images[index * n..(index + 1) * n]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut images = Vec::with_capacity(indices.len() * self.image_len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            images.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        Dataset { images, labels, ..self.clone_meta() }
    }

    fn clone_meta(&self) -> Dataset {
        Dataset {
            name: self.name.clone(),
            split: self.split,
            channels: self.channels,
            height: self.height,
            width: self.width,
            num_classes: self.num_classes,
            images: Vec::new(),
            labels: Vec::new(),
        }
    }

    fn channel_stats(&self) -> ChannelStats {
        let plane = self.height * self.width;
        let mut mean = vec![0.0; self.channels];
        let mut sq = vec![0.0; self.channels];
        for img in self.images.chunks(self.image_len()) {
            for c in 0..self.channels {
                for &v in &img[c * plane..(c + 1) * plane] {
                    mean[c] += v as f64;
                    sq[c] += (v as f64) * (v as f64);
                }
            }
        }
        let count = (self.len() * plane).max(1) as f64;
        let std = mean
            .iter_mut()
            .zip(&sq)
            .map(|(m, s)| {
                *m /= count;
                (s / count - *m * *m).max(1e-12).sqrt()
            })
            .collect();
        ChannelStats { mean, std }
    }

    fn normalize(&mut self, stats: &ChannelStats) {
        let plane = self.height * self.width;
        let n = self.image_len();
        for img in self.images.chunks_mut(n) {
            for c in 0..self.channels {
                let (m, s) = (stats.mean[c], stats.std[c]);
                for v in &mut img[c * plane..(c + 1) * plane] {
                    *v = ((*v as f64 - m) / s) as f32;
                }
            }
        }
    }
}

/// Train and test splits with the normalization applied to both.
#[derive(Clone, Debug)]
pub struct LabeledImageDataset {
    pub name: String,
    pub num_classes: usize,
    pub train: Dataset,
    pub test: Dataset,
    pub stats: ChannelStats,
}

impl LabeledImageDataset {
    /// Normalizes both splits with statistics of the (raw) train split.
    pub fn from_raw(name: &str, mut train: Dataset, mut test: Dataset) -> Self {
        let stats = train.channel_stats();
        train.normalize(&stats);
        test.normalize(&stats);
        Self { name: name.to_string(), num_classes: train.num_classes, train, test, stats }
    }

    /// RandomCrop + RandomHorizontalFlip matching the image size.
    pub fn default_policy(&self) -> AugmentationPolicy {
        let padding = if self.train.height >= 32 { 4 } else { 2 };
        AugmentationPolicy { crop_size: self.train.height, padding, flip_probability: 0.5 }
    }
}

/// Loads a dataset by name. `seed` only affects the synthetic generator.
pub fn load_dataset(name: &str, root: &Path, seed: u64) -> Result<LabeledImageDataset> {
    match name {
        "synthetic-gaussian-10" => Ok(synthetic_gaussian(10, 5000, 1000, 16, seed)),
        "cifar10" => {
            let (train, test) = load_cifar10(root)?;
            Ok(LabeledImageDataset::from_raw(name, train, test))
        }
        "cifar10-subset-5k" => {
            let (train, test) = load_cifar10(root)?;
            let dir = root.join("cifar10-subset-5k");
            let train_idx = subset_indices(&dir.join("train_indices.txt"), train.labels(), 5000)?;
            let test_idx = subset_indices(&dir.join("test_indices.txt"), test.labels(), 1000)?;
            let mut train = train.subset(&train_idx);
            let mut test = test.subset(&test_idx);
            train.name = name.to_string();
            test.name = name.to_string();
            Ok(LabeledImageDataset::from_raw(name, train, test))
        }
        "cifar100" => {
            let dir = root.join("cifar-100-binary");
            let hint =
                "expected cifar-100-binary/train.bin and cifar-100-binary/test.bin (the CIFAR-100 binary release)";
            let train = read_cifar_file(&dir.join("train.bin"), name, root, hint, 2, 1, 100, Split::Train)?;
            let test = read_cifar_file(&dir.join("test.bin"), name, root, hint, 2, 1, 100, Split::Test)?;
            Ok(LabeledImageDataset::from_raw(name, train, test))
        }
        _ => Err(Error::UnknownName {
            kind: "dataset",
            name: name.to_string(),
            available: DATASETS.iter().map(|s| s.to_string()).collect(),
        }),
    }
}

fn subset_indices(path: &Path, labels: &[usize], total: usize) -> Result<Vec<usize>> {
    if path.exists() {
        let indices = read_index_file(path)?;
        if let Some(bad) = indices.iter().find(|&&i| i >= labels.len()) {
            return Err(Error::invalid(format!("{}: index {bad} out of range", path.display())));
        }
        Ok(indices)
    } else {
        stratified_subset(labels, total, SUBSET_SEED)
    }
}

fn load_cifar10(root: &Path) -> Result<(Dataset, Dataset)> {
    let dir = root.join("cifar-10-batches-bin");
    let hint = "expected cifar-10-batches-bin/data_batch_{1..5}.bin and test_batch.bin (the CIFAR-10 binary release); set SKD_DATA_ROOT to the directory containing it";
    let mut train: Option<Dataset> = None;
    for i in 1..=5 {
        let part =
            read_cifar_file(&dir.join(format!("data_batch_{i}.bin")), "cifar10", root, hint, 1, 0, 10, Split::Train)?;
        match &mut train {
            None => train = Some(part),
            Some(t) => {
                t.images.extend_from_slice(&part.images);
                t.labels.extend_from_slice(&part.labels);
            }
        }
    }
    let test = read_cifar_file(&dir.join("test_batch.bin"), "cifar10", root, hint, 1, 0, 10, Split::Test)?;
    Ok((train.expect("five batches"), test))
}

/// Reads a CIFAR binary file: per record `label_bytes` label bytes then 3072 CHW pixel bytes.
#[allow(clippy::too_many_arguments)]
fn read_cifar_file(
    path: &Path,
    name: &str,
    root: &Path,
    hint: &str,
    label_bytes: usize,
    label_offset: usize,
    num_classes: usize,
    split: Split,
) -> Result<Dataset> {
    if !path.exists() {
        return Err(Error::MissingDataset { name: name.to_string(), root: root.to_path_buf(), hint: hint.to_string() });
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_cifar_records(&bytes, name, label_bytes, label_offset, num_classes, split)
        .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}

pub(crate) fn parse_cifar_records(
    bytes: &[u8],
    name: &str,
    label_bytes: usize,
    label_offset: usize,
    num_classes: usize,
    split: Split,
) -> Result<Dataset> {
    let record = label_bytes + CIFAR_PIXELS;
    if !bytes.len().is_multiple_of(record) {
        return Err(Error::invalid(format!(
            "file length {} is not a multiple of the {record}-byte record size",
            bytes.len()
        )));
    }
    let n = bytes.len() / record;
    let mut images = Vec::with_capacity(n * CIFAR_PIXELS);
    let mut labels = Vec::with_capacity(n);
    for rec in bytes.chunks(record) {
        labels.push(rec[label_offset] as usize);
        images.extend(rec[label_bytes..].iter().map(|&b| b as f32 / 255.0));
    }
    Dataset::new(name, split, (3, CIFAR_SIDE, CIFAR_SIDE), num_classes, images, labels)
}

/// Coloured Gaussian blobs: class `c` has a fixed colour direction; blob position,
/// width and amplitude vary per sample, plus i.i.d. pixel noise.
pub fn synthetic_gaussian(
    num_classes: usize,
    n_train: usize,
    n_test: usize,
    side: usize,
    seed: u64,
) -> LabeledImageDataset {
    const PALETTE: [[f32; 3]; 12] = [
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [1.0, 1.0, 0.0],
        [1.0, 0.0, 1.0],
        [0.0, 1.0, 1.0],
        [1.0, -1.0, 0.0],
        [-1.0, 0.0, 1.0],
        [0.0, 1.0, -1.0],
        [1.0, 1.0, 1.0],
        [-1.0, 1.0, 0.0],
        [0.0, -1.0, 1.0],
    ];
    assert!(num_classes <= PALETTE.len(), "synthetic palette supports up to 12 classes");
    let name = format!("synthetic-gaussian-{num_classes}");
    let make = |split: Split, n: usize| {
        let stream = match split {
            Split::Train => 1,
            Split::Test => 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, 0x5359_4e54, stream));
        let noise = Normal::new(0.0f32, 0.3).expect("valid sigma");
        let plane = side * side;
        let mut images = Vec::with_capacity(n * 3 * plane);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % num_classes;
            let amp: f32 = rng.random_range(0.8..1.2);
            let sigma: f32 = rng.random_range(1.5..3.0);
            let lo = 3.0f32.min(side as f32 / 2.0);
            let cx: f32 = rng.random_range(lo..=side as f32 - lo);
            let cy: f32 = rng.random_range(lo..=side as f32 - lo);
            for color in PALETTE[class] {
                for y in 0..side {
                    for x in 0..side {
                        let r2 = (x as f32 - cx).powi(2) + (y as f32 - cy).powi(2);
                        let blob = amp * (-r2 / (2.0 * sigma * sigma)).exp();
                        images.push(blob * color + noise.sample(&mut rng));
                    }
                }
            }
            labels.push(class);
        }
        Dataset::new(name.clone(), split, (3, side, side), num_classes, images, labels)
            .expect("consistent synthetic data")
    };
    let train = make(Split::Train, n_train);
    let test = make(Split::Test, n_test);
    LabeledImageDataset::from_raw(&name, train, test)
}

/// Indices of a class-stratified subset of `total` samples, sorted ascending.
///
/// Each class receives its proportional share (largest-remainder rounding),
/// so per-class counts are within one sample of exact proportionality.
pub fn stratified_subset(labels: &[usize], total: usize, seed: u64) -> Result<Vec<usize>> {
    if total > labels.len() {
        return Err(Error::invalid(format!("subset of {total} requested from {} samples", labels.len())));
    }
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let n = labels.len() as f64;
    let exact: Vec<f64> = by_class.iter().map(|c| c.len() as f64 * total as f64 / n).collect();
    let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut remaining = total - quota.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..num_classes).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &c in &order {
        if remaining == 0 {
            break;
        }
        if quota[c] < by_class[c].len() {
            quota[c] += 1;
            remaining -= 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(total);
    for (members, &q) in by_class.iter_mut().zip(&quota) {
        members.shuffle(&mut rng);
        chosen.extend_from_slice(&members[..q]);
    }
    chosen.sort_unstable();
    Ok(chosen)
}

pub fn read_index_file(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            l.trim().parse().map_err(|_| Error::invalid(format!("{}:{}: not an index: `{l}`", path.display(), n + 1)))
        })
        .collect()
}

pub fn write_index_file(path: &Path, indices: &[usize]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for i in indices {
        writeln!(f, "{i}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// RandomCrop (with zero padding) followed by RandomHorizontalFlip.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentationPolicy {
    pub crop_size: usize,
    pub padding: usize,
    pub flip_probability: f64,
}

impl AugmentationPolicy {
    pub fn identity(side: usize) -> Self {
        Self { crop_size: side, padding: 0, flip_probability: 0.0 }
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::invalid(format!("flip probability {} not in [0, 1]", self.flip_probability)));
        }
        if self.crop_size == 0 || self.crop_size > height.min(width) + 2 * self.padding {
            return Err(Error::invalid(format!(
                "crop {} does not fit a {height}x{width} image padded by {}",
                self.crop_size, self.padding
            )));
        }
        Ok(())
    }
}

/// Augments one CHW image. Always draws the crop offsets and the flip decision
/// from `rng`, so consumption per image is fixed.
pub fn augment<R: Rng>(
    image: &[f32],
    (channels, height, width): (usize, usize, usize),
    policy: &AugmentationPolicy,
    rng: &mut R,
) -> Vec<f32> {
    let crop = policy.crop_size;
    let pad = policy.padding;
    let max_y = height + 2 * pad - crop;
    let max_x = width + 2 * pad - crop;
    let oy = rng.random_range(0..=max_y);
    let ox = rng.random_range(0..=max_x);
    let flip = rng.random::<f64>() < policy.flip_probability;
    let mut out = vec![0.0f32; channels * crop * crop];
    for c in 0..channels {
        let src = &image[c * height * width..(c + 1) * height * width];
        let dst = &mut out[c * crop * crop..(c + 1) * crop * crop];
        for y in 0..crop {
            let sy = (oy + y) as isize - pad as isize;
            if sy < 0 || sy >= height as isize {
                continue;
            }
            for x in 0..crop {
                let sx = (ox + x) as isize - pad as isize;
                if sx < 0 || sx >= width as isize {
                    continue;
                }
                let tx = if flip { crop - 1 - x } else { x };
                dst[y * crop + tx] = src[sy as usize * width + sx as usize];
            }
        }
    }
    out
}

/// Mini-batch sampling plan; order is a function of `(shuffle_seed, epoch)` only.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub shuffle_seed: u64,
    pub drop_last: bool,
}

pub fn build_batches(dataset_len: usize, plan: &BatchPlan, epoch: usize) -> Result<Vec<Vec<usize>>> {
    if plan.batch_size == 0 || plan.batch_size > dataset_len {
        return Err(Error::invalid(format!("batch size {} invalid for {dataset_len} samples", plan.batch_size)));
    }
    let mut order: Vec<usize> = (0..dataset_len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(plan.shuffle_seed, SHUFFLE_STREAM, epoch as u64));
    order.shuffle(&mut rng);
    Ok(order
        .chunks(plan.batch_size)
        .filter(|c| !plan.drop_last || c.len() == plan.batch_size)
        .map(<[usize]>::to_vec)
        .collect())
}

/// Stacks (optionally augmented) images into an NCHW tensor.
pub fn assemble_batch<R: Rng>(
    dataset: &Dataset,
    indices: &[usize],
    policy: Option<&AugmentationPolicy>,
    rng: &mut R,
) -> (Tensor, Vec<usize>) {
    let dims = (dataset.channels, dataset.height, dataset.width);
    let side = policy.map_or(dataset.height, |p| p.crop_size);
    let side_w = policy.map_or(dataset.width, |p| p.crop_size);
    let mut data = Vec::with_capacity(indices.len() * dataset.channels * side * side_w);
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        match policy {
            Some(p) => data.extend(augment(dataset.image(i), dims, p, rng).into_iter().map(f64::from)),
            None => data.extend(dataset.image(i).iter().map(|&v| f64::from(v))),
        }
        labels.push(dataset.labels()[i]);
    }
    let tensor = Tensor::new(vec![indices.len(), dataset.channels, side, side_w], data).expect("batch shape");
    (tensor, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn identity_policy_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let policy = AugmentationPolicy { crop_size: 3, padding: 0, flip_probability: 0.0 };
        let img3: Vec<f32> = (0..2 * 3 * 3).map(|v| v as f32).collect();
        assert_eq!(augment(&img3, (2, 3, 3), &policy, &mut rng), img3);
        assert!(policy.validate(3, 3).is_ok());
        assert!(AugmentationPolicy { flip_probability: 1.5, ..policy }.validate(3, 3).is_err());
    }

    #[test]
    fn flip_reverses_columns() {
        let img: Vec<f32> = (0..9).map(|v| v as f32).collect();
        let policy = AugmentationPolicy { crop_size: 3, padding: 0, flip_probability: 1.0 };
        let out = augment(&img, (1, 3, 3), &policy, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(out, vec![2.0, 1.0, 0.0, 5.0, 4.0, 3.0, 8.0, 7.0, 6.0]);
    }

    #[test]
    fn augmentation_is_reproducible() {
        let img: Vec<f32> = (0..3 * 8 * 8).map(|v| (v as f32).sin()).collect();
        let policy = AugmentationPolicy { crop_size: 8, padding: 2, flip_probability: 0.5 };
        let a = augment(&img, (3, 8, 8), &policy, &mut ChaCha8Rng::seed_from_u64(4));
        let b = augment(&img, (3, 8, 8), &policy, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(a, b);
        assert_eq!(a.len(), 3 * 8 * 8);
    }

    #[test]
    fn batches_are_deterministic_and_partition_indices() {
        let plan = BatchPlan { batch_size: 7, shuffle_seed: 3, drop_last: false };
        let a = build_batches(50, &plan, 2).unwrap();
        assert_eq!(a, build_batches(50, &plan, 2).unwrap());
        assert_ne!(a, build_batches(50, &plan, 3).unwrap());
        let all: HashSet<usize> = a.iter().flatten().copied().collect();
        assert_eq!(all.len(), 50);
        assert_eq!(a.last().unwrap().len(), 1);
        let dropped = build_batches(50, &BatchPlan { drop_last: true, ..plan }, 2).unwrap();
        assert!(dropped.iter().all(|b| b.len() == 7));
        assert!(build_batches(5, &plan, 0).is_err());
    }

    #[test]
    fn cifar_sized_batching_arithmetic() {
        let plan = BatchPlan { batch_size: 128, shuffle_seed: 0, drop_last: false };
        let batches = build_batches(50_000, &plan, 0).unwrap();
        assert_eq!(batches.len(), 391);
        assert_eq!(batches.last().unwrap().len(), 80);
    }

    #[test]
    fn stratified_subset_keeps_proportions() {
        // unbalanced labels: class c has 10 * (c + 1) samples
        let labels: Vec<usize> = (0..5).flat_map(|c| std::iter::repeat_n(c, 10 * (c + 1))).collect();
        let idx = stratified_subset(&labels, 37, 1).unwrap();
        assert_eq!(idx.len(), 37);
        let mut counts = [0usize; 5];
        for &i in &idx {
            counts[labels[i]] += 1;
        }
        for (c, &count) in counts.iter().enumerate() {
            let exact = 10.0 * (c + 1) as f64 * 37.0 / 150.0;
            assert!((count as f64 - exact).abs() <= 1.0, "class {c}: {count} vs {exact}");
        }
        assert!(stratified_subset(&labels, 151, 1).is_err());
    }

    #[test]
    fn index_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("idx.txt");
        write_index_file(&path, &[3, 1, 4]).unwrap();
        assert_eq!(read_index_file(&path).unwrap(), vec![3, 1, 4]);
    }

    #[test]
    fn synthetic_dataset_shape() {
        let ds = load_dataset("synthetic-gaussian-10", Path::new("/nonexistent"), 0).unwrap();
        assert_eq!(ds.train.len(), 5000);
        assert_eq!(ds.test.len(), 1000);
        assert_eq!(ds.num_classes, 10);
        assert_eq!(ds.train.class_counts(), vec![500; 10]);
        // normalized train split has ~zero mean per channel
        for m in &ds.train.channel_stats().mean {
            assert!(m.abs() < 1e-4);
        }
    }

    #[test]
    fn missing_cifar_is_actionable() {
        let err = load_dataset("cifar10-subset-5k", Path::new("/nonexistent"), 0).unwrap_err();
        assert!(matches!(err, Error::MissingDataset { .. }));
        assert!(err.to_string().contains("cifar-10-batches-bin"));
        assert!(matches!(load_dataset("imagenet", Path::new("."), 0), Err(Error::UnknownName { .. })));
    }

    #[test]
    fn parses_cifar100_records() {
        let mut bytes = Vec::new();
        for fine in [7u8, 99] {
            bytes.push(1); // coarse label
            bytes.push(fine);
            bytes.extend(std::iter::repeat_n(255u8, CIFAR_PIXELS));
        }
        let ds = parse_cifar_records(&bytes, "cifar100", 2, 1, 100, Split::Train).unwrap();
        assert_eq!(ds.labels(), &[7, 99]);
        assert_eq!(ds.image(1)[0], 1.0);
        assert!(parse_cifar_records(&bytes[1..], "cifar100", 2, 1, 100, Split::Train).is_err());
    }
}
