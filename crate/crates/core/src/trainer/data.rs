use crate::error::{Error, Result};
use crate::numerics::{Matrix, SeededRng};

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

/// Labelled feature vectors for one device (or the whole population).
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    samples: Vec<Sample>,
    num_classes: usize,
    dim: usize,
}

/// A minibatch in column layout: `x` is `dim x s`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub x: Matrix,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl SyntheticDataset {
    pub fn new(samples: Vec<Sample>, num_classes: usize, dim: usize) -> Result<Self> {
        for s in &samples {
            if s.label >= num_classes {
                return Err(Error::LabelOutOfRange {
                    label: s.label,
                    classes: num_classes,
                });
            }
            if s.features.len() != dim {
                return Err(Error::shape("sample", (dim, 1), (s.features.len(), 1)));
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { op: "sample" });
            }
        }
        Ok(SyntheticDataset {
            samples,
            num_classes,
            dim,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        if indices.is_empty() {
            return Err(Error::EmptyInput("batch"));
        }
        let columns: Vec<&[f64]> = indices.iter().map(|&i| self.samples[i].features.as_slice()).collect();
        Ok(Batch {
            x: Matrix::from_columns(&columns)?,
            labels: indices.iter().map(|&i| self.samples[i].label).collect(),
        })
    }

    pub fn full_batch(&self) -> Result<Batch> {
        let all: Vec<usize> = (0..self.len()).collect();
        self.batch(&all)
    }

    pub fn concat(parts: &[SyntheticDataset]) -> Result<Self> {
        let first = parts.first().ok_or(Error::EmptyInput("datasets"))?;
        let samples = parts.iter().flat_map(|p| p.samples.iter().cloned()).collect();
        SyntheticDataset::new(samples, first.num_classes, first.dim)
    }
}

/// Shape of the class-conditional Gaussian task.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaskShape {
    pub dim: usize,
    pub classes: usize,
    /// Per-coordinate std of the class means.
    pub mean_std: f64,
    /// Per-coordinate std of the within-class noise.
    pub noise_std: f64,
    /// Minimum gap `|x - mu_other|^2 - |x - mu_own|^2` kept after rejection.
    pub margin: f64,
}

impl TaskShape {
    pub fn new(dim: usize, classes: usize) -> Self {
        TaskShape {
            dim,
            classes,
            mean_std: 1.0,
            noise_std: 1.0,
            margin: 1.0,
        }
    }
}

/// Fixed class means plus the sampling recipe. Samples are kept only when
/// the nearest-mean rule classifies them with `margin` to spare, so every
/// draw is linearly separable (nearest-mean boundaries are hyperplanes).
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTask {
    shape: TaskShape,
    means: Vec<Vec<f64>>,
}

impl SyntheticTask {
    pub fn new(rng: &mut SeededRng, shape: TaskShape) -> Self {
        assert!(shape.dim > 0 && shape.classes > 0, "task dims must be positive");
        let mut means: Vec<Vec<f64>> = (0..shape.classes)
            .map(|_| (0..shape.dim).map(|_| shape.mean_std * rng.standard_normal()).collect())
            .collect();
        // The class mean itself must clear the margin, so spread the means
        // apart when a draw lands two of them too close.
        let min_gap = min_pairwise_sq_dist(&means);
        let needed = 4.0 * shape.margin;
        if shape.classes > 1 && min_gap < needed && min_gap > 0.0 {
            let factor = (needed / min_gap).sqrt();
            for m in means.iter_mut() {
                m.iter_mut().for_each(|v| *v *= factor);
            }
        }
        SyntheticTask { shape, means }
    }

    pub fn shape(&self) -> TaskShape {
        self.shape
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    fn clears_margin(&self, x: &[f64], label: usize) -> bool {
        let own = sq_dist(x, &self.means[label]);
        self.means
            .iter()
            .enumerate()
            .filter(|(c, _)| *c != label)
            .all(|(_, m)| sq_dist(x, m) - own >= self.shape.margin)
    }

    pub fn sample(&self, rng: &mut SeededRng, n: usize) -> SyntheticDataset {
        const MAX_TRIES: usize = 1000;
        let samples = (0..n)
            .map(|_| {
                let label = rng.index(self.shape.classes);
                let mean = &self.means[label];
                let mut features = mean.clone();
                for _ in 0..MAX_TRIES {
                    let x: Vec<f64> = mean
                        .iter()
                        .map(|m| m + self.shape.noise_std * rng.standard_normal())
                        .collect();
                    if self.clears_margin(&x, label) {
                        features = x;
                        break;
                    }
                }
                Sample { features, label }
            })
            .collect();
        SyntheticDataset::new(samples, self.shape.classes, self.shape.dim).expect("task samples are well formed")
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn min_pairwise_sq_dist(points: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            best = best.min(sq_dist(&points[i], &points[j]));
        }
    }
    best
}

/// Gaussian-cluster classification data with default task shape.
pub fn make_synthetic(rng: &mut SeededRng, n_samples: usize, dim: usize, num_classes: usize) -> SyntheticDataset {
    SyntheticTask::new(rng, TaskShape::new(dim, num_classes)).sample(rng, n_samples)
}

/// Non-i.i.d. split: for each class, device shares are drawn from
/// `Dir(alpha, ..., alpha)` and that class's samples are dealt out in
/// proportion. Empty shards are topped up by moving one sample from the
/// largest shard.
pub fn dirichlet_partition(
    rng: &mut SeededRng,
    dataset: &SyntheticDataset,
    n_devices: usize,
    alpha: f64,
) -> Result<Vec<SyntheticDataset>> {
    if n_devices == 0 {
        return Err(Error::EmptyInput("devices"));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::config("alpha", "must be positive"));
    }
    if dataset.len() < n_devices {
        return Err(Error::DatasetTooSmall {
            samples: dataset.len(),
            devices: n_devices,
        });
    }
    if n_devices == 1 {
        return Ok(vec![dataset.clone()]);
    }

    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); n_devices];
    for class in 0..dataset.num_classes() {
        let mut members: Vec<usize> = dataset
            .samples()
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label == class)
            .map(|(i, _)| i)
            .collect();
        rng.shuffle(&mut members);
        let draws: Vec<f64> = (0..n_devices).map(|_| rng.gamma(alpha)).collect();
        let total: f64 = draws.iter().sum();
        let n = members.len();
        let mut start = 0;
        let mut cumulative = 0.0;
        for (device, draw) in draws.iter().enumerate() {
            cumulative += draw / total;
            let end = if device + 1 == n_devices {
                n
            } else {
                ((cumulative * n as f64).round() as usize).clamp(start, n)
            };
            shards[device].extend_from_slice(&members[start..end]);
            start = end;
        }
    }

    while let Some(empty) = shards.iter().position(Vec::is_empty) {
        let largest = (0..n_devices)
            .max_by_key(|&d| (shards[d].len(), std::cmp::Reverse(d)))
            .expect("nonempty device list");
        let moved = shards[largest].pop().expect("largest shard has samples");
        shards[empty].push(moved);
    }

    shards
        .into_iter()
        .map(|mut idx| {
            idx.sort_unstable();
            let samples = idx.iter().map(|&i| dataset.samples()[i].clone()).collect();
            SyntheticDataset::new(samples, dataset.num_classes(), dataset.dim())
        })
        .collect()
}
