//! Dataset ingestion (IDX files and synthetic Gaussians), Dirichlet
//! label-skew partitioning into client shards, and per-shard class
//! statistics.

use std::path::Path;

use rand::RngExt;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::{Batch, InputShape};
use crate::seed;

/// An immutable pool of labelled samples with inputs scaled to `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Dataset {
    inputs: Vec<f64>,
    shape: InputShape,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(
        inputs: Vec<f64>,
        shape: InputShape,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Dataset> {
        if labels.is_empty() {
            return Err(Error::InvalidArgument("dataset must be non-empty".into()));
        }
        if inputs.len() != labels.len() * shape.size() {
            return Err(Error::ShapeMismatch(format!(
                "{} input values for {} samples of {:?}",
                inputs.len(),
                labels.len(),
                shape
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        if inputs.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::InvalidArgument(
                "dataset inputs must be finite and scaled to [0, 1]".into(),
            ));
        }
        Ok(Dataset {
            inputs,
            shape,
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

    pub fn shape(&self) -> InputShape {
        self.shape
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn input(&self, i: usize) -> &[f64] {
        let size = self.shape.size();
        &self.inputs[i * size..(i + 1) * size]
    }

    /// Reinterprets flat features as a `(channels, height, width)` image.
    pub fn as_image(mut self, channels: usize, height: usize, width: usize) -> Result<Dataset> {
        if channels * height * width != self.shape.size() {
            return Err(Error::ShapeMismatch(format!(
                "cannot view {} features as {channels}x{height}x{width}",
                self.shape.size()
            )));
        }
        self.shape = InputShape::Image {
            channels,
            height,
            width,
        };
        Ok(self)
    }

    /// Raises the class count (labels must already fit); used to unify the
    /// inferred counts of separately loaded train and test files.
    pub fn with_num_classes(mut self, num_classes: usize) -> Result<Dataset> {
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        self.num_classes = num_classes;
        Ok(self)
    }

    /// A new dataset holding copies of the samples at `indices`.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let size = self.shape.size();
        let mut inputs = Vec::with_capacity(indices.len() * size);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidArgument(format!(
                    "subset index {i} out of range for {} samples",
                    self.len()
                )));
            }
            inputs.extend_from_slice(self.input(i));
            labels.push(self.labels[i]);
        }
        Dataset::new(inputs, self.shape, labels, self.num_classes)
    }

    /// Gathers the samples at `indices` into a batch.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let size = self.shape.size();
        let mut inputs = Vec::with_capacity(indices.len() * size);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            inputs.extend_from_slice(self.input(i));
            labels.push(self.labels[i]);
        }
        Batch::new(inputs, self.shape, labels)
    }

    /// Histogram of the full dataset's labels.
    pub fn label_histogram(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

/// One client's slice of a partition: sample indices into the parent dataset.
#[derive(Debug, Clone)]
pub struct Shard {
    pub owner: usize,
    pub indices: Vec<usize>,
}

impl Shard {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Exact per-class sample counts of one shard.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassCounts {
    counts: Vec<usize>,
    total: usize,
}

impl ClassCounts {
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn total(&self) -> usize {
        self.total
    }
}

/// Per-class fusion weights `alpha[c] = counts[c] / total`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaWeights {
    alpha: Vec<f64>,
}

impl AlphaWeights {
    /// Wraps raw per-class weights for diagnostics; entries must lie in
    /// `[0, 1]`. Count-derived weights additionally sum to 1.
    pub fn from_values(alpha: Vec<f64>) -> Result<AlphaWeights> {
        if alpha.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::InvalidArgument(
                "alpha entries must lie in [0, 1]".into(),
            ));
        }
        Ok(AlphaWeights { alpha })
    }

    pub fn values(&self) -> &[f64] {
        &self.alpha
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }
}

/// Exact label histogram of a shard.
pub fn class_counts(shard: &Shard, dataset: &Dataset) -> ClassCounts {
    let mut counts = vec![0usize; dataset.num_classes()];
    for &i in &shard.indices {
        counts[dataset.label(i)] += 1;
    }
    ClassCounts {
        total: shard.indices.len(),
        counts,
    }
}

/// Fusion weights `n_c / N` from a shard's class counts.
pub fn alpha_weights(counts: &ClassCounts) -> Result<AlphaWeights> {
    if counts.total == 0 {
        return Err(Error::InvalidArgument(
            "cannot derive fusion weights for an empty shard".into(),
        ));
    }
    let n = counts.total as f64;
    Ok(AlphaWeights {
        alpha: counts.counts.iter().map(|&c| c as f64 / n).collect(),
    })
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_be_u32(bytes: &[u8], offset: usize, what: &str, path: &Path) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::Idx(format!(
            "{}: truncated while reading {what} (need {end} bytes, file has {})",
            path.display(),
            bytes.len()
        )));
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Loads an IDX image/label file pair (big-endian, magic `0x00000803` /
/// `0x00000801`) into a dataset with pixels scaled to `[0, 1]` and the class
/// count inferred as `max label + 1`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let image_bytes = std::fs::read(images_path)?;
    let label_bytes = std::fs::read(labels_path)?;

    let magic = read_be_u32(&image_bytes, 0, "magic", images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Idx(format!(
            "{}: bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}",
            images_path.display()
        )));
    }
    let n = read_be_u32(&image_bytes, 4, "image count", images_path)? as usize;
    let rows = read_be_u32(&image_bytes, 8, "row count", images_path)? as usize;
    let cols = read_be_u32(&image_bytes, 12, "column count", images_path)? as usize;
    let expected = 16 + n * rows * cols;
    if image_bytes.len() != expected {
        return Err(Error::Idx(format!(
            "{}: expected {expected} bytes for {n} images of {rows}x{cols}, found {}",
            images_path.display(),
            image_bytes.len()
        )));
    }

    let magic = read_be_u32(&label_bytes, 0, "magic", labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Idx(format!(
            "{}: bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}",
            labels_path.display()
        )));
    }
    let n_labels = read_be_u32(&label_bytes, 4, "label count", labels_path)? as usize;
    let expected = 8 + n_labels;
    if label_bytes.len() != expected {
        return Err(Error::Idx(format!(
            "{}: expected {expected} bytes for {n_labels} labels, found {}",
            labels_path.display(),
            label_bytes.len()
        )));
    }
    if n != n_labels {
        return Err(Error::Idx(format!(
            "{} has {n} images but {} has {n_labels} labels",
            images_path.display(),
            labels_path.display()
        )));
    }

    let inputs: Vec<f64> = image_bytes[16..].iter().map(|&b| b as f64 / 255.0).collect();
    let labels: Vec<usize> = label_bytes[8..].iter().map(|&b| b as usize).collect();
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
    Dataset::new(
        inputs,
        InputShape::Image {
            channels: 1,
            height: rows,
            width: cols,
        },
        labels,
        num_classes,
    )
}

/// Generates `C * per_class` samples: class `c` is an isotropic unit-variance
/// Gaussian centered at `separation * unit_direction(c)`, where the unit
/// directions are drawn from the seeded stream. The whole tensor is then
/// min-max scaled to `[0, 1]`. Deterministic under `seed`.
pub fn generate_synthetic(
    num_classes: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes < 2 {
        return Err(Error::InvalidArgument("need at least 2 classes".into()));
    }
    if per_class == 0 || dim == 0 {
        return Err(Error::InvalidArgument(
            "per_class and dim must be positive".into(),
        ));
    }
    if !separation.is_finite() || separation < 0.0 {
        return Err(Error::InvalidArgument(
            "separation must be finite and non-negative".into(),
        ));
    }
    let mut rng = seed::stream(seed, "synthetic", 0);
    let mut gauss = move || -> f64 { StandardNormal.sample(&mut rng) };

    let mut directions = Vec::with_capacity(num_classes);
    for _ in 0..num_classes {
        let mut v: Vec<f64> = (0..dim).map(|_| gauss()).collect();
        smooth_direction(&mut v);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        directions.push(v);
    }

    let n = num_classes * per_class;
    let mut inputs = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (c, dir) in directions.iter().enumerate() {
        for _ in 0..per_class {
            inputs.extend(dir.iter().map(|&d| separation * d + gauss()));
            labels.push(c);
        }
    }

    // Single affine map to [0, 1]; preserves the class geometry exactly.
    let min = inputs.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = inputs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max > min {
        let scale = 1.0 / (max - min);
        inputs.iter_mut().for_each(|x| *x = (*x - min) * scale);
    } else {
        inputs.iter_mut().for_each(|x| *x = 0.5);
    }

    Dataset::new(inputs, InputShape::Flat { features: dim }, labels, num_classes)
}

/// Splits a dataset over `num_clients` shards with label skew: for each class
/// the per-client proportions are one symmetric `Dirichlet(beta)` draw,
/// realized by normalized `Gamma(beta, 1)` samples and largest-remainder
/// rounding (ties to the lower client id). Clients that end up empty take one
/// sample from the currently largest shard until every client is non-empty.
pub fn dirichlet_partition(
    dataset: &Dataset,
    num_clients: usize,
    beta: f64,
    seed: u64,
) -> Result<Vec<Shard>> {
    if num_clients < 2 {
        return Err(Error::InvalidArgument(
            "partition needs at least 2 clients".into(),
        ));
    }
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::InvalidArgument("beta must be positive".into()));
    }
    if dataset.len() < num_clients {
        return Err(Error::InvalidArgument(format!(
            "dataset of {} samples cannot cover {num_clients} clients",
            dataset.len()
        )));
    }

    let mut rng = seed::stream(seed, "partition", 0);
    let gamma = Gamma::new(beta, 1.0)
        .map_err(|e| Error::InvalidArgument(format!("bad beta for Dirichlet draw: {e}")))?;

    let mut shards: Vec<Shard> = (0..num_clients)
        .map(|owner| Shard {
            owner,
            indices: Vec::new(),
        })
        .collect();

    for class in 0..dataset.num_classes() {
        let mut members: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.label(i) == class)
            .collect();
        if members.is_empty() {
            continue;
        }
        shuffle(&mut members, &mut rng);

        let draws: Vec<f64> = (0..num_clients).map(|_| gamma.sample(&mut rng)).collect();
        let sum: f64 = draws.iter().sum();
        let proportions: Vec<f64> = if sum > 0.0 {
            draws.iter().map(|d| d / sum).collect()
        } else {
            vec![1.0 / num_clients as f64; num_clients]
        };

        let allocations = largest_remainder(&proportions, members.len());
        let mut cursor = 0;
        for (shard, take) in shards.iter_mut().zip(allocations) {
            shard.indices.extend(&members[cursor..cursor + take]);
            cursor += take;
        }
    }

    repair_empty_shards(&mut shards);
    Ok(shards)
}

/// Low-pass filters a class-mean direction over the nearest-square reshape
/// of its length, so class means form smooth blobs rather than white noise
/// when the features are later viewed as an image. Tiny dimensions are left
/// nearly unchanged.
fn smooth_direction(v: &mut [f64]) {
    let dim = v.len();
    let mut h = (dim as f64).sqrt().floor() as usize;
    while h > 1 && !dim.is_multiple_of(h) {
        h -= 1;
    }
    let w = dim / h.max(1);
    let radius = (h.min(w) / 8).max(1);
    if h < 2 || w < 2 {
        return;
    }
    // Separable box blur, three passes per axis.
    let mut buf = vec![0.0; dim];
    for _ in 0..3 {
        for row in 0..h {
            for col in 0..w {
                let lo = col.saturating_sub(radius);
                let hi = (col + radius).min(w - 1);
                let sum: f64 = (lo..=hi).map(|c| v[row * w + c]).sum();
                buf[row * w + col] = sum / (hi - lo + 1) as f64;
            }
        }
        for col in 0..w {
            for row in 0..h {
                let lo = row.saturating_sub(radius);
                let hi = (row + radius).min(h - 1);
                let sum: f64 = (lo..=hi).map(|r| buf[r * w + col]).sum();
                v[row * w + col] = sum / (hi - lo + 1) as f64;
            }
        }
    }
}

/// Fisher-Yates driven by the experiment stream.
pub fn shuffle<R: RngExt>(items: &mut [usize], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// Integer allocations summing exactly to `total`, proportional to
/// `proportions`; leftovers go to the largest fractional remainders, ties
/// broken toward the lower index.
fn largest_remainder(proportions: &[f64], total: usize) -> Vec<usize> {
    let mut base: Vec<usize> = Vec::with_capacity(proportions.len());
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(proportions.len());
    let mut assigned = 0usize;
    for (idx, &p) in proportions.iter().enumerate() {
        let target = p * total as f64;
        let floor = target.floor() as usize;
        base.push(floor);
        assigned += floor;
        remainders.push((idx, target - floor as f64));
    }
    let mut leftover = total - assigned.min(total);
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for (idx, _) in remainders {
        if leftover == 0 {
            break;
        }
        base[idx] += 1;
        leftover -= 1;
    }
    base
}

fn repair_empty_shards(shards: &mut [Shard]) {
    loop {
        let Some(empty) = shards.iter().position(Shard::is_empty) else {
            return;
        };
        let donor = shards
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| a.len().cmp(&b.len()).then(ib.cmp(ia)))
            .map(|(i, _)| i)
            .expect("at least one shard");
        let moved = shards[donor].indices.pop().expect("donor is non-empty");
        shards[empty].indices.push(moved);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{
        forward, init_model, sgd_step, softmax_cross_entropy, ArchDescriptor, LayerSpec,
        OptState,
    };

    fn tiny_dataset(labels: Vec<usize>, num_classes: usize) -> Dataset {
        let inputs = vec![0.0; labels.len()];
        Dataset::new(inputs, InputShape::Flat { features: 1 }, labels, num_classes).unwrap()
    }

    /// Trains this module's own single dense layer on the dataset and
    /// returns the train accuracy; the statistical oracle for the
    /// synthetic generator.
    fn linear_probe_accuracy(ds: &Dataset, epochs: usize) -> f64 {
        let dim = ds.shape().size();
        let arch = ArchDescriptor::new(
            vec![LayerSpec::dense(dim, ds.num_classes())],
            ds.shape(),
            ds.num_classes(),
        )
        .unwrap();
        let mut model = init_model(&arch, 0);
        let mut opt = OptState::new(0.5, 0.9, 0.0, arch.param_count());
        let all: Vec<usize> = (0..ds.len()).collect();
        let batch = ds.batch(&all).unwrap();
        for _ in 0..epochs {
            let fwd = forward(&model, &batch).unwrap();
            let (_, dlogits) = softmax_cross_entropy(&fwd.logits, batch.labels()).unwrap();
            let grad = crate::nn::backward(&model, &fwd.tape, &dlogits).unwrap();
            sgd_step(&mut model, &grad, &mut opt).unwrap();
        }
        let fwd = forward(&model, &batch).unwrap();
        let mut correct = 0usize;
        for (r, &label) in batch.labels().iter().enumerate() {
            let row = fwd.logits.row(r);
            let pred = row
                .iter()
                .enumerate()
                .fold((0usize, f64::NEG_INFINITY), |best, (i, &v)| {
                    if v > best.1 {
                        (i, v)
                    } else {
                        best
                    }
                })
                .0;
            if pred == label {
                correct += 1;
            }
        }
        correct as f64 / ds.len() as f64
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = generate_synthetic(3, 10, 5, 2.0, 9).unwrap();
        let b = generate_synthetic(3, 10, 5, 2.0, 9).unwrap();
        assert_eq!(a.inputs, b.inputs);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn synthetic_separated_classes_are_linearly_learnable() {
        let ds = generate_synthetic(2, 50, 2, 10.0, 1).unwrap();
        let acc = linear_probe_accuracy(&ds, 300);
        assert!(acc >= 0.99, "train accuracy {acc}");
    }

    #[test]
    fn synthetic_zero_separation_is_chance_level() {
        let ds = generate_synthetic(2, 500, 2, 0.0, 1).unwrap();
        let acc = linear_probe_accuracy(&ds, 300);
        assert!((acc - 0.5).abs() <= 0.10, "train accuracy {acc}");
    }

    #[test]
    fn synthetic_inputs_live_in_unit_interval() {
        let ds = generate_synthetic(4, 20, 8, 3.0, 5).unwrap();
        assert!(ds.inputs.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn class_counts_exact_histogram() {
        let ds = tiny_dataset(vec![0, 0, 1], 3);
        let shard = Shard {
            owner: 0,
            indices: vec![0, 1, 2],
        };
        let counts = class_counts(&shard, &ds);
        assert_eq!(counts.counts(), &[2, 1, 0]);
        assert_eq!(counts.total(), 3);
    }

    #[test]
    fn full_dataset_counts_match_histogram() {
        let ds = tiny_dataset(vec![2, 0, 2, 1, 2], 3);
        let shard = Shard {
            owner: 0,
            indices: (0..ds.len()).collect(),
        };
        assert_eq!(class_counts(&shard, &ds).counts(), &ds.label_histogram()[..]);
    }

    #[test]
    fn alpha_formula_and_degenerate_cases() {
        let ds = tiny_dataset(
            std::iter::repeat_n(0, 90)
                .chain(std::iter::repeat_n(1, 10))
                .collect(),
            3,
        );
        let shard = Shard {
            owner: 0,
            indices: (0..100).collect(),
        };
        let alpha = alpha_weights(&class_counts(&shard, &ds)).unwrap();
        assert_eq!(alpha.values(), &[0.9, 0.1, 0.0]);

        let single = alpha_weights(&ClassCounts {
            counts: vec![1, 0, 0],
            total: 1,
        })
        .unwrap();
        assert_eq!(single.values(), &[1.0, 0.0, 0.0]);

        let uniform = alpha_weights(&ClassCounts {
            counts: vec![5, 5, 5, 5],
            total: 20,
        })
        .unwrap();
        assert!(uniform.values().iter().all(|&a| a == 0.25));

        assert!(alpha_weights(&ClassCounts {
            counts: vec![0, 0],
            total: 0,
        })
        .is_err());
    }

    #[test]
    fn partition_is_disjoint_and_covering() {
        let labels: Vec<usize> = (0..200).map(|i| i % 4).collect();
        let ds = tiny_dataset(labels, 4);
        let shards = dirichlet_partition(&ds, 7, 0.3, 11).unwrap();
        let mut seen = vec![false; ds.len()];
        for shard in &shards {
            assert!(!shard.is_empty());
            for &i in &shard.indices {
                assert!(!seen[i], "index {i} assigned twice");
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn high_beta_concentrates_to_global_proportions() {
        let labels: Vec<usize> = (0..1200).map(|i| i % 3).collect();
        let ds = tiny_dataset(labels, 3);
        let shards = dirichlet_partition(&ds, 4, 1000.0, 3).unwrap();
        for shard in &shards {
            let counts = class_counts(shard, &ds);
            let alpha = alpha_weights(&counts).unwrap();
            for &a in alpha.values() {
                assert!((a - 1.0 / 3.0).abs() < 0.05, "proportion {a}");
            }
        }
    }

    /// Mean over clients of the count of classes holding under 1% of that
    /// client's data; higher under stronger skew.
    fn mean_starved_classes(ds: &Dataset, shards: &[Shard]) -> f64 {
        let mut total = 0.0;
        for shard in shards {
            let alpha = alpha_weights(&class_counts(shard, ds)).unwrap();
            total += alpha.values().iter().filter(|&&a| a < 0.01).count() as f64;
        }
        total / shards.len() as f64
    }

    #[test]
    fn low_beta_starves_more_classes_than_high_beta() {
        let labels: Vec<usize> = (0..2000).map(|i| i % 5).collect();
        let ds = tiny_dataset(labels, 5);
        let (mut low, mut high) = (0.0, 0.0);
        for seed in 0..20 {
            low += mean_starved_classes(&ds, &dirichlet_partition(&ds, 20, 0.1, seed).unwrap());
            high += mean_starved_classes(&ds, &dirichlet_partition(&ds, 20, 1000.0, seed).unwrap());
        }
        assert!(
            low > high,
            "starved classes at beta 0.1 ({low}) vs beta 1000 ({high})"
        );
    }

    #[test]
    fn partition_rejects_undersized_dataset() {
        let ds = tiny_dataset(vec![0, 1, 0], 2);
        assert!(dirichlet_partition(&ds, 4, 0.5, 0).is_err());
    }

    #[test]
    fn idx_round_trip_with_hand_built_fixture() {
        // 2 images of 2x3 pixels; byte values chosen so the scaled pixels
        // are exact: 0, 51, 102, 153, 204, 255 are all multiples of 51.
        let dir = std::env::temp_dir().join(format!("fedbalance-idx-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let images = dir.join("imgs.idx3-ubyte");
        let labels = dir.join("lbls.idx1-ubyte");

        let mut img_bytes = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3];
        img_bytes.extend_from_slice(&[0, 51, 102, 153, 204, 255]);
        img_bytes.extend_from_slice(&[255, 204, 153, 102, 51, 0]);
        std::fs::write(&images, &img_bytes).unwrap();
        std::fs::write(&labels, [0, 0, 8, 1, 0, 0, 0, 2, 1, 0]).unwrap();

        let ds = load_idx(&images, &labels).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.num_classes(), 2);
        assert_eq!(ds.labels(), &[1, 0]);
        let expected: Vec<f64> = [0, 51, 102, 153, 204, 255]
            .iter()
            .map(|&b| b as f64 / 255.0)
            .collect();
        assert_eq!(ds.input(0), &expected[..]);

        // Truncated image payload names expected vs actual byte counts.
        std::fs::write(&images, &img_bytes[..20]).unwrap();
        let err = load_idx(&images, &labels).unwrap_err().to_string();
        assert!(err.contains("expected 28 bytes"), "{err}");
        assert!(err.contains("found 20"), "{err}");

        std::fs::remove_dir_all(&dir).unwrap();
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn partition_always_disjoint_and_covering(
                clients in 2usize..12,
                beta in 0.05f64..20.0,
                seed in 0u64..10_000,
            ) {
                let labels: Vec<usize> = (0..150).map(|i| i % 5).collect();
                let ds = tiny_dataset(labels, 5);
                let shards = dirichlet_partition(&ds, clients, beta, seed).unwrap();
                let mut seen = vec![false; ds.len()];
                for shard in &shards {
                    prop_assert!(!shard.is_empty());
                    for &i in &shard.indices {
                        prop_assert!(!seen[i]);
                        seen[i] = true;
                    }
                }
                prop_assert!(seen.iter().all(|&s| s));
            }

            #[test]
            fn alpha_entries_sum_to_one(counts in proptest::collection::vec(0usize..50, 2..8)) {
                prop_assume!(counts.iter().sum::<usize>() > 0);
                let total = counts.iter().sum();
                let alpha = alpha_weights(&ClassCounts { counts, total }).unwrap();
                let sum: f64 = alpha.values().iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-12);
                prop_assert!(alpha.values().iter().all(|a| (0.0..=1.0).contains(a)));
            }
        }
    }

    #[test]
    fn idx_rejects_count_mismatch() {
        let dir = std::env::temp_dir().join(format!("fedbalance-idxcount-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let images = dir.join("imgs");
        let labels = dir.join("lbls");
        // 2 one-pixel images but 3 labels.
        std::fs::write(
            &images,
            [0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 1, 7, 9],
        )
        .unwrap();
        std::fs::write(&labels, [0, 0, 8, 1, 0, 0, 0, 3, 0, 1, 0]).unwrap();
        let err = load_idx(&images, &labels).unwrap_err().to_string();
        assert!(err.contains("2 images") && err.contains("3 labels"), "{err}");
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn idx_rejects_bad_magic() {
        let dir = std::env::temp_dir().join(format!("fedbalance-idxmagic-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let images = dir.join("imgs");
        let labels = dir.join("lbls");
        std::fs::write(&images, [0, 0, 9, 9, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 1]).unwrap();
        std::fs::write(&labels, [0, 0, 8, 1, 0, 0, 0, 0]).unwrap();
        let err = load_idx(&images, &labels).unwrap_err().to_string();
        assert!(err.contains("bad magic"), "{err}");
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
