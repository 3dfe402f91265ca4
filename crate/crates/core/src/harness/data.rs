//! Synthetic Gaussian-cluster classification tasks.
//!
//! Every task shares the input space and class count but draws its own
//! cluster centers, so models fine-tuned on different tasks genuinely
//! disagree. Generation is a pure function of the task seed: the three
//! splits come from separate, fixed RNG streams, so asking for the test
//! split never perturbs the train split.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::checkpoint::TensorLayout;
use crate::error::{Error, Result};
use crate::io::{decode_container, encode_container, ByteReader};

/// Default input dimensionality of the synthetic benchmark.
pub const DEFAULT_INPUT_DIM: usize = 64;
/// Default class count per task.
pub const DEFAULT_CLASS_COUNT: usize = 4;
/// Distance of every cluster center from the origin.
pub const DEFAULT_CENTER_RADIUS: f64 = 3.0;
/// Per-coordinate noise around each center.
pub const DEFAULT_NOISE_SIGMA: f64 = 0.6;
/// Default split sizes: train / calibration / test.
pub const DEFAULT_SPLIT_SIZES: (usize, usize, usize) = (256, 128, 256);

/// The three disjoint sample sets of a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Calibration,
    Test,
}

impl Split {
    // Stream 0 draws the cluster centers; splits start at 1.
    fn stream(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Calibration => 2,
            Split::Test => 3,
        }
    }
}

/// Recipe for one synthetic classification task.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTaskSpec {
    pub task_id: usize,
    pub input_dim: usize,
    pub class_count: usize,
    /// `class_count` rows of `input_dim` coordinates.
    pub cluster_centers: Vec<Vec<f64>>,
    pub noise_sigma: f64,
    pub train_samples: usize,
    pub calibration_samples: usize,
    pub test_samples: usize,
    pub seed: u64,
}

/// A realized split: row-major inputs and one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    input_dim: usize,
    class_count: usize,
    inputs: Vec<f32>,
    labels: Vec<u32>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn input(&self, i: usize) -> &[f32] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    /// Appends another dataset's rows; shapes must already agree.
    pub(crate) fn append(&mut self, other: &Dataset) {
        debug_assert_eq!(self.input_dim, other.input_dim);
        debug_assert_eq!(self.class_count, other.class_count);
        self.inputs.extend_from_slice(&other.inputs);
        self.labels.extend_from_slice(&other.labels);
    }

    /// The first `ceil(fraction * len)` samples, for calibration-volume
    /// ablations. `fraction` must lie in (0, 1].
    pub fn head_fraction(&self, fraction: f64) -> Result<Dataset> {
        if !fraction.is_finite() || fraction <= 0.0 || fraction > 1.0 {
            return Err(Error::InvalidArgument(format!(
                "calibration volume fraction must lie in (0, 1], got {fraction}"
            )));
        }
        let keep = ((fraction * self.len() as f64).ceil() as usize).clamp(1, self.len());
        Ok(Dataset {
            input_dim: self.input_dim,
            class_count: self.class_count,
            inputs: self.inputs[..keep * self.input_dim].to_vec(),
            labels: self.labels[..keep].to_vec(),
        })
    }
}

impl SyntheticTaskSpec {
    /// Materializes one split. Labels cycle through the classes, so every
    /// split is balanced up to remainder.
    pub fn generate(&self, split: Split) -> Dataset {
        let count = match split {
            Split::Train => self.train_samples,
            Split::Calibration => self.calibration_samples,
            Split::Test => self.test_samples,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(split.stream());
        let mut inputs = Vec::with_capacity(count * self.input_dim);
        let mut labels = Vec::with_capacity(count);
        for i in 0..count {
            let class = i % self.class_count;
            let center = &self.cluster_centers[class];
            for &c in center {
                let noise: f64 = rng.sample(StandardNormal);
                inputs.push((c + self.noise_sigma * noise) as f32);
            }
            labels.push(class as u32);
        }
        Dataset {
            input_dim: self.input_dim,
            class_count: self.class_count,
            inputs,
            labels,
        }
    }
}

/// Writes a dataset to disk, reusing the tensor container format: inputs as
/// an `[n, input_dim]` tensor, labels and the class count as f32 tensors
/// (class labels are small integers, exactly representable).
pub fn save_dataset<P: AsRef<Path>>(path: P, data: &Dataset) -> Result<()> {
    let layout = dataset_layout(data.len(), data.input_dim)?;
    let mut values = Vec::with_capacity(layout.total_len());
    values.extend_from_slice(&data.inputs);
    values.extend(data.labels.iter().map(|&l| l as f32));
    values.push(data.class_count as f32);
    let mut out = Vec::new();
    encode_container(&mut out, &layout, &values)?;
    Ok(fs::write(path, out)?)
}

/// Reads a dataset written by [`save_dataset`].
pub fn load_dataset<P: AsRef<Path>>(path: P) -> Result<Dataset> {
    let bytes = fs::read(path)?;
    let mut r = ByteReader::new(&bytes);
    let (layout, values) = decode_container(&mut r)?;
    if r.remaining() != 0 {
        return Err(Error::Parse(format!(
            "{} trailing bytes after dataset payload",
            r.remaining()
        )));
    }
    let specs = layout.specs();
    if specs.len() != 3
        || specs[0].name != "inputs"
        || specs[1].name != "labels"
        || specs[2].name != "class_count"
        || specs[0].shape.len() != 2
        || specs[0].shape[0] != specs[1].shape[0]
    {
        return Err(Error::Parse("container does not hold a dataset".into()));
    }
    let (n, input_dim) = (specs[0].shape[0], specs[0].shape[1]);
    let inputs = values[..n * input_dim].to_vec();
    let class_count = values[layout.total_len() - 1];
    if class_count < 1.0 || class_count.fract() != 0.0 {
        return Err(Error::Parse(format!("bad class count {class_count}")));
    }
    let class_count = class_count as usize;
    let mut labels = Vec::with_capacity(n);
    for &raw in &values[n * input_dim..n * input_dim + n] {
        if raw.fract() != 0.0 || raw < 0.0 || raw >= class_count as f32 {
            return Err(Error::Parse(format!("label {raw} out of range")));
        }
        labels.push(raw as u32);
    }
    Ok(Dataset {
        input_dim,
        class_count,
        inputs,
        labels,
    })
}

fn dataset_layout(n: usize, input_dim: usize) -> Result<Arc<TensorLayout>> {
    TensorLayout::new(vec![
        ("inputs".to_string(), vec![n, input_dim]),
        ("labels".to_string(), vec![n]),
        ("class_count".to_string(), vec![1]),
    ])
}

/// Builds `n_tasks` task recipes off one base seed.
///
/// Each task's centers are drawn on its own RNG stream and scaled onto a
/// sphere of radius [`DEFAULT_CENTER_RADIUS`], giving distinct but equally
/// hard cluster layouts.
pub fn make_tasks(n_tasks: usize, base_seed: u64) -> Result<Vec<SyntheticTaskSpec>> {
    if n_tasks == 0 {
        return Err(Error::InvalidArgument("need at least one task".into()));
    }
    let (train, calibration, test) = DEFAULT_SPLIT_SIZES;
    let mut tasks = Vec::with_capacity(n_tasks);
    for task_id in 0..n_tasks {
        let seed = base_seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(task_id as u64 + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0);
        let centers = (0..DEFAULT_CLASS_COUNT)
            .map(|_| {
                let raw: Vec<f64> = (0..DEFAULT_INPUT_DIM)
                    .map(|_| rng.sample(StandardNormal))
                    .collect();
                let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                raw.iter()
                    .map(|v| v * DEFAULT_CENTER_RADIUS / norm)
                    .collect()
            })
            .collect();
        tasks.push(SyntheticTaskSpec {
            task_id,
            input_dim: DEFAULT_INPUT_DIM,
            class_count: DEFAULT_CLASS_COUNT,
            cluster_centers: centers,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            train_samples: train,
            calibration_samples: calibration,
            test_samples: test,
            seed,
        });
    }
    Ok(tasks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_regenerates_identical_datasets() {
        let tasks_a = make_tasks(3, 7).unwrap();
        let tasks_b = make_tasks(3, 7).unwrap();
        assert_eq!(tasks_a, tasks_b);
        for (a, b) in tasks_a.iter().zip(&tasks_b) {
            for split in [Split::Train, Split::Calibration, Split::Test] {
                assert_eq!(a.generate(split), b.generate(split));
            }
        }
    }

    #[test]
    fn different_tasks_and_seeds_differ() {
        let tasks = make_tasks(2, 7).unwrap();
        assert_ne!(tasks[0].cluster_centers, tasks[1].cluster_centers);
        let other = make_tasks(2, 8).unwrap();
        assert_ne!(tasks[0].cluster_centers, other[0].cluster_centers);
    }

    #[test]
    fn splits_are_disjoint_and_sized() {
        let task = &make_tasks(1, 3).unwrap()[0];
        let train = task.generate(Split::Train);
        let cal = task.generate(Split::Calibration);
        let test = task.generate(Split::Test);
        assert_eq!(train.len(), DEFAULT_SPLIT_SIZES.0);
        assert_eq!(cal.len(), DEFAULT_SPLIT_SIZES.1);
        assert_eq!(test.len(), DEFAULT_SPLIT_SIZES.2);
        // Continuous noise makes shared rows vanishingly unlikely; any overlap
        // would mean the split streams collided.
        for i in 0..cal.len() {
            for j in 0..train.len() {
                assert_ne!(cal.input(i), train.input(j));
            }
        }
    }

    #[test]
    fn labels_are_balanced() {
        let task = &make_tasks(1, 5).unwrap()[0];
        let data = task.generate(Split::Train);
        let mut counts = vec![0usize; task.class_count];
        for i in 0..data.len() {
            counts[data.label(i)] += 1;
        }
        let max = counts.iter().max().unwrap();
        let min = counts.iter().min().unwrap();
        assert!(max - min <= 1, "unbalanced labels: {counts:?}");
    }

    #[test]
    fn centers_sit_on_the_configured_sphere() {
        let task = &make_tasks(1, 9).unwrap()[0];
        for center in &task.cluster_centers {
            let norm = center.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - DEFAULT_CENTER_RADIUS).abs() < 1e-9);
        }
    }

    #[test]
    fn dataset_round_trips_through_the_container_format() {
        let task = &make_tasks(1, 13).unwrap()[0];
        let data = task.generate(Split::Calibration);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("calibration.npsc");
        save_dataset(&path, &data).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded, data);
    }

    #[test]
    fn loading_rejects_foreign_containers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.npsc");
        let layout = TensorLayout::new(vec![("weights", vec![4])]).unwrap();
        let ckpt = crate::checkpoint::Checkpoint::new(layout, vec![0.0; 4]).unwrap();
        crate::io::save_checkpoint(&path, &ckpt).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Parse(_))));
    }

    #[test]
    fn head_fraction_trims_deterministically() {
        let task = &make_tasks(1, 11).unwrap()[0];
        let cal = task.generate(Split::Calibration);
        let half = cal.head_fraction(0.5).unwrap();
        assert_eq!(half.len(), cal.len().div_ceil(2));
        assert_eq!(half.input(0), cal.input(0));
        let full = cal.head_fraction(1.0).unwrap();
        assert_eq!(full, cal);
        assert!(cal.head_fraction(0.0).is_err());
        assert!(cal.head_fraction(1.5).is_err());
    }
}
