//! Seeded synthetic temporal classification tasks and their CSV format.
//!
//! File layout:
//!
//! ```text
//! # dataset K,T,N0,B
//! x[0,0,0],...,x[0,0,N0-1],label_0      <- sample 0, t = 0
//! x[1,0,0],...,x[1,0,N0-1]              <- sample 0, t = 1
//! ...
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::numerics::{Rng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PatternKind {
    /// Class `k` raises the mean current of its own feature group.
    RateCoded,
    /// Class `k` places pulses at class-specific time offsets.
    PhaseCoded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub classes: usize,
    pub time_steps: usize,
    pub features: usize,
    pub samples_per_class: usize,
    pub noise_std: f64,
    pub pattern: PatternKind,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            classes: 2,
            time_steps: 8,
            features: 16,
            samples_per_class: 128,
            noise_std: 0.3,
            pattern: PatternKind::RateCoded,
            seed: 42,
        }
    }
}

/// Current of a driven feature (rate code) or of a pulse (phase code).
const DRIVE: f64 = 1.0;

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.time_steps < 2 || self.features < 2 {
            return Err(Error::invalid("dataset needs K >= 2, T >= 2 and N0 >= 2"));
        }
        if self.features < self.classes && self.pattern == PatternKind::RateCoded {
            return Err(Error::invalid("rate coding needs at least one feature per class"));
        }
        if self.samples_per_class < 2 {
            return Err(Error::invalid("need at least 2 samples per class for a split"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::invalid("noise_std must be finite and non-negative"));
        }
        Ok(())
    }

    /// Train samples per class under the 80/20 split.
    pub fn train_per_class(&self) -> usize {
        (self.samples_per_class * 4 / 5).clamp(1, self.samples_per_class - 1)
    }

    /// Noise-free current of feature `j` at step `t` for class `k`.
    pub fn clean_value(&self, class: usize, t: usize, j: usize) -> f64 {
        match self.pattern {
            PatternKind::RateCoded => {
                if j * self.classes / self.features == class {
                    DRIVE
                } else {
                    0.0
                }
            }
            PatternKind::PhaseCoded => {
                if (t + j) % self.classes == class {
                    DRIVE
                } else {
                    0.0
                }
            }
        }
    }
}

/// Inputs `x[T, B, N0]` with one label per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    pub x: Tensor,
    pub y: Vec<usize>,
    pub classes: usize,
}

impl LabeledBatch {
    pub fn new(x: Tensor, y: Vec<usize>, classes: usize) -> Result<Self> {
        let (_, b, _) = x.dims3()?;
        if y.len() != b {
            return Err(Error::ShapeMismatch {
                left: x.shape().to_vec(),
                right: vec![y.len()],
            });
        }
        if let Some(&label) = y.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        if !x.is_finite() {
            return Err(Error::invalid("dataset inputs must be finite"));
        }
        Ok(Self { x, y, classes })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Sub-batch with the given sample indices, in that order.
    pub fn select(&self, indices: &[usize]) -> LabeledBatch {
        let (t_len, b, n) = self.x.dims3().expect("validated at construction");
        let src = self.x.data();
        let nb = indices.len();
        let x = Tensor::from_fn(&[t_len, nb, n], |k| {
            let t = k / (nb * n);
            let s = (k / n) % nb;
            src[(t * b + indices[s]) * n + k % n]
        });
        LabeledBatch {
            x,
            y: indices.iter().map(|&i| self.y[i]).collect(),
            classes: self.classes,
        }
    }

    /// Splits into the first `n` samples and the rest.
    pub fn split_at(&self, n: usize) -> (LabeledBatch, LabeledBatch) {
        let head: Vec<usize> = (0..n.min(self.len())).collect();
        let tail: Vec<usize> = (n.min(self.len())..self.len()).collect();
        (self.select(&head), self.select(&tail))
    }

    /// Concatenates two batches along the sample axis.
    pub fn concat(&self, other: &LabeledBatch) -> Result<LabeledBatch> {
        let (t1, b1, n1) = self.x.dims3()?;
        let (t2, b2, n2) = other.x.dims3()?;
        if t1 != t2 || n1 != n2 || self.classes != other.classes {
            return Err(Error::ShapeMismatch {
                left: self.x.shape().to_vec(),
                right: other.x.shape().to_vec(),
            });
        }
        let mut data = Vec::with_capacity(self.x.len() + other.x.len());
        for t in 0..t1 {
            data.extend_from_slice(self.x.time_row(t));
            data.extend_from_slice(other.x.time_row(t));
        }
        let mut y = self.y.clone();
        y.extend_from_slice(&other.y);
        LabeledBatch::new(Tensor::new(&[t1, b1 + b2, n1], data)?, y, self.classes)
    }

    /// Time-averaged input of sample `s`.
    pub fn time_mean(&self, s: usize) -> Vec<f64> {
        let (t_len, b, n) = self.x.dims3().expect("validated at construction");
        let mut acc = vec![0.0; n];
        for t in 0..t_len {
            let row = &self.x.time_row(t)[s * n..(s + 1) * n];
            for (a, &v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        debug_assert!(s < b);
        acc.iter_mut().for_each(|a| *a /= t_len as f64);
        acc
    }
}

/// Generates the train and test splits. A pure function of `spec`.
pub fn generate(spec: &DatasetSpec) -> Result<(LabeledBatch, LabeledBatch)> {
    spec.validate()?;
    let root = Rng::new(spec.seed);
    let (t_len, n) = (spec.time_steps, spec.features);
    let per_class = spec.train_per_class();

    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in 0..spec.classes {
        for s in 0..spec.samples_per_class {
            let mut noise = root.fork(class as u64).fork(s as u64).stream();
            let mut sample = Vec::with_capacity(t_len * n);
            for t in 0..t_len {
                for j in 0..n {
                    let eps = if spec.noise_std > 0.0 {
                        spec.noise_std * noise.normal()
                    } else {
                        0.0
                    };
                    sample.push(spec.clean_value(class, t, j) + eps);
                }
            }
            let target = if s < per_class { &mut train } else { &mut test };
            target.push((sample, class));
        }
    }
    let mut order = root.fork(u64::MAX).stream();
    order.shuffle(&mut train);
    order.shuffle(&mut test);
    Ok((
        assemble(&train, t_len, n, spec.classes)?,
        assemble(&test, t_len, n, spec.classes)?,
    ))
}

fn assemble(samples: &[(Vec<f64>, usize)], t_len: usize, n: usize, classes: usize) -> Result<LabeledBatch> {
    let b = samples.len();
    let x = Tensor::from_fn(&[t_len, b, n], |k| {
        let t = k / (b * n);
        let s = (k / n) % b;
        samples[s].0[t * n + k % n]
    });
    LabeledBatch::new(x, samples.iter().map(|s| s.1).collect(), classes)
}

pub fn to_csv(batch: &LabeledBatch) -> String {
    let (t_len, b, n) = batch.x.dims3().expect("validated at construction");
    let mut out = String::new();
    let _ = writeln!(out, "# dataset {},{},{},{}", batch.classes, t_len, n, b);
    for s in 0..b {
        for t in 0..t_len {
            let row = &batch.x.time_row(t)[s * n..(s + 1) * n];
            let cells: Vec<String> = row
                .iter()
                .map(|&v| crate::numerics::csv::fmt_f64(v))
                .collect();
            out.push_str(&cells.join(","));
            if t == 0 {
                let _ = write!(out, ",{}", batch.y[s]);
            }
            out.push('\n');
        }
    }
    out
}

pub fn from_csv(text: &str, path: &Path) -> Result<LabeledBatch> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let dims = header
        .strip_prefix("# dataset ")
        .ok_or_else(|| err(1, "missing `# dataset K,T,N0,B` header".into()))?;
    let dims = dims
        .split(',')
        .map(|d| d.trim().parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| err(1, format!("bad header: {e}")))?;
    let [classes, t_len, n, b] = dims[..] else {
        return Err(err(1, format!("header needs 4 fields, found {}", dims.len())));
    };

    let mut x = vec![0.0; t_len * b * n];
    let mut y = Vec::with_capacity(b);
    let mut rows = 0usize;
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        if rows >= t_len * b {
            return Err(err(lineno, "more rows than the header declares".into()));
        }
        let (s, t) = (rows / t_len, rows % t_len);
        let cells: Vec<&str> = line.split(',').collect();
        let want = if t == 0 { n + 1 } else { n };
        if cells.len() != want {
            return Err(err(
                lineno,
                format!("expected {want} fields, found {}", cells.len()),
            ));
        }
        for (j, cell) in cells[..n].iter().enumerate() {
            x[(t * b + s) * n + j] = cell
                .trim()
                .parse::<f64>()
                .map_err(|e| err(lineno, format!("field {}: {e}", j + 1)))?;
        }
        if t == 0 {
            let label = cells[n]
                .trim()
                .parse::<usize>()
                .map_err(|e| err(lineno, format!("label: {e}")))?;
            if label >= classes {
                return Err(err(lineno, format!("label {label} >= K = {classes}")));
            }
            y.push(label);
        }
        rows += 1;
    }
    if rows != t_len * b {
        return Err(err(
            text.lines().count(),
            format!("expected {} rows, found {rows}", t_len * b),
        ));
    }
    LabeledBatch::new(Tensor::new(&[t_len, b, n], x)?, y, classes)
}

pub fn save(batch: &LabeledBatch, path: &Path) -> Result<()> {
    write_atomic(path, to_csv(batch).as_bytes())
}

pub fn load(path: &Path) -> Result<LabeledBatch> {
    let text = std::fs::read_to_string(path)?;
    from_csv(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    }

    /// Nearest class centroid of time-averaged inputs, fitted on `train`.
    fn nearest_centroid_accuracy(train: &LabeledBatch, test: &LabeledBatch) -> f64 {
        let n = train.x.shape()[2];
        let mut centroids = vec![vec![0.0; n]; train.classes];
        let mut counts = vec![0usize; train.classes];
        for s in 0..train.len() {
            let m = train.time_mean(s);
            let c = train.y[s];
            counts[c] += 1;
            for (a, v) in centroids[c].iter_mut().zip(m) {
                *a += v;
            }
        }
        for (c, cnt) in centroids.iter_mut().zip(&counts) {
            c.iter_mut().for_each(|v| *v /= *cnt as f64);
        }
        let correct = (0..test.len())
            .filter(|&s| {
                let m = test.time_mean(s);
                let pred = (0..train.classes)
                    .min_by(|&a, &b| {
                        sq_dist(&m, &centroids[a])
                            .partial_cmp(&sq_dist(&m, &centroids[b]))
                            .unwrap()
                    })
                    .unwrap();
                pred == test.y[s]
            })
            .count();
        correct as f64 / test.len() as f64
    }

    #[test]
    fn reference_split_sizes() {
        let (train, test) = generate(&DatasetSpec::default()).unwrap();
        assert_eq!(train.len(), 204);
        assert_eq!(test.len(), 52);
        assert_eq!(train.x.shape(), &[8, 204, 16]);
        assert_eq!(train.y.iter().filter(|&&y| y == 0).count(), 102);
    }

    #[test]
    fn zero_noise_means_recoverable() {
        let spec = DatasetSpec {
            noise_std: 0.0,
            classes: 3,
            features: 7,
            ..DatasetSpec::default()
        };
        let (train, _) = generate(&spec).unwrap();
        for s in 0..train.len() {
            let m = train.time_mean(s);
            for (j, v) in m.iter().enumerate() {
                assert_eq!(*v, spec.clean_value(train.y[s], 0, j));
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = DatasetSpec::default();
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = DatasetSpec { seed: 43, ..spec };
        assert_ne!(generate(&other).unwrap().0.x, generate(&DatasetSpec::default()).unwrap().0.x);
    }

    #[test]
    fn nearest_centroid_separates_reference_task() {
        let (train, test) = generate(&DatasetSpec::default()).unwrap();
        assert_eq!(nearest_centroid_accuracy(&train, &test), 1.0);
        let clean = DatasetSpec {
            noise_std: 0.0,
            ..DatasetSpec::default()
        };
        let (train, test) = generate(&clean).unwrap();
        assert_eq!(nearest_centroid_accuracy(&train, &test), 1.0);
    }

    #[test]
    fn phase_code_has_equal_time_means() {
        let spec = DatasetSpec {
            noise_std: 0.0,
            pattern: PatternKind::PhaseCoded,
            ..DatasetSpec::default()
        };
        let (train, _) = generate(&spec).unwrap();
        let a = train.y.iter().position(|&y| y == 0).unwrap();
        let b = train.y.iter().position(|&y| y == 1).unwrap();
        assert_eq!(train.time_mean(a), train.time_mean(b));
        assert_ne!(train.select(&[a]).x, train.select(&[b]).x);
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let (train, _) = generate(&DatasetSpec {
            samples_per_class: 5,
            ..DatasetSpec::default()
        })
        .unwrap();
        let text = to_csv(&train);
        assert!(text.starts_with("# dataset 2,8,16,8\n"));
        let p = Path::new("d.csv");
        assert_eq!(from_csv(&text, p).unwrap(), train);

        assert!(matches!(from_csv("", p), Err(Error::Parse { line: 1, .. })));
        let mut lines: Vec<&str> = text.lines().collect();
        let short = lines[3].rsplit_once(',').unwrap().0.to_string();
        lines[3] = &short;
        let broken = lines.join("\n");
        assert!(matches!(from_csv(&broken, p), Err(Error::Parse { line: 4, .. })));
        let truncated: String = text.lines().take(10).collect::<Vec<_>>().join("\n");
        assert!(matches!(from_csv(&truncated, p), Err(Error::Parse { .. })));
    }

    #[test]
    fn select_and_concat() {
        let (train, test) = generate(&DatasetSpec {
            samples_per_class: 5,
            ..DatasetSpec::default()
        })
        .unwrap();
        let both = train.concat(&test).unwrap();
        assert_eq!(both.len(), 10);
        let (a, b) = both.split_at(train.len());
        assert_eq!(a, train);
        assert_eq!(b, test);
        let one = train.select(&[2]);
        assert_eq!(one.time_mean(0), train.time_mean(2));
    }

    #[test]
    fn invalid_specs() {
        let bad = DatasetSpec {
            classes: 1,
            ..DatasetSpec::default()
        };
        assert!(generate(&bad).is_err());
        let bad = DatasetSpec {
            noise_std: -1.0,
            ..DatasetSpec::default()
        };
        assert!(generate(&bad).is_err());
    }
}
