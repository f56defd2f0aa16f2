//! Classification datasets: synthetic generators, a CSV loader and the
//! label-skewed device partition.
//!
//! CSV format: a header row naming the columns, with the last column named
//! `label`; then one sample per line, feature values followed by a
//! non-negative integer class label.
//!
//! ```text
//! x0,x1,label
//! 0.25,-1.5,0
//! 1.75,0.5,1
//! ```

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    num_classes: usize,
    /// Row-major, one row of `dim` features per sample.
    features: Vec<f64>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(dim: usize, num_classes: usize, features: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if dim == 0 || num_classes == 0 {
            return Err(Error::InvalidDimensions("dataset needs dim >= 1 and >= 1 class".into()));
        }
        if features.len() != dim * labels.len() {
            return Err(Error::DimensionMismatch {
                what: "feature storage",
                expected: dim * labels.len(),
                actual: features.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidParameter(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset features"));
        }
        Ok(Self {
            dim,
            num_classes,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut features = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            features.extend_from_slice(self.features(i));
        }
        Self {
            dim: self.dim,
            num_classes: self.num_classes,
            features,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a Dataset>) -> Result<Self> {
        let mut it = parts.into_iter();
        let first = it
            .next()
            .ok_or_else(|| Error::InvalidParameter("nothing to concatenate".into()))?;
        let mut out = first.clone();
        for p in it {
            if p.dim != out.dim {
                return Err(Error::DimensionMismatch {
                    what: "feature dimension",
                    expected: out.dim,
                    actual: p.dim,
                });
            }
            out.num_classes = out.num_classes.max(p.num_classes);
            out.features.extend_from_slice(&p.features);
            out.labels.extend_from_slice(&p.labels);
        }
        Ok(out)
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    /// Random split into (train, test) with `test_len` test samples.
    pub fn split(&self, test_len: usize, seed: u64) -> Result<(Self, Self)> {
        if test_len >= self.len() {
            return Err(Error::InsufficientSamples {
                needed: test_len + 1,
                available: self.len(),
            });
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut seed::rng(seed));
        let (test, train) = idx.split_at(test_len);
        Ok((self.subset(train), self.subset(test)))
    }

    pub fn parse_csv(text: &str, source_name: &str) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            source_name: source_name.to_string(),
            line,
            message,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let (hline, header) = lines.next().ok_or_else(|| err(1, "missing header row".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.len() < 2 || cols[cols.len() - 1] != "label" {
            return Err(err(hline, "header must list feature names then \"label\"".into()));
        }
        let dim = cols.len() - 1;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (lineno, line) in lines {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != dim + 1 {
                return Err(err(lineno, format!("expected {} fields, found {}", dim + 1, fields.len())));
            }
            for f in &fields[..dim] {
                let v: f64 = f
                    .parse()
                    .map_err(|_| err(lineno, format!("cannot parse feature {f:?}")))?;
                if !v.is_finite() {
                    return Err(err(lineno, format!("non-finite feature {f:?}")));
                }
                features.push(v);
            }
            let label: usize = fields[dim]
                .parse()
                .map_err(|_| err(lineno, format!("label {:?} is not a non-negative integer", fields[dim])))?;
            labels.push(label);
        }
        if labels.is_empty() {
            return Err(err(hline, "no samples".into()));
        }
        let num_classes = labels.iter().max().map_or(1, |m| m + 1);
        Self::new(dim, num_classes, features, labels)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_csv(&text, &path.display().to_string())
    }

    pub fn to_csv(&self) -> String {
        let mut s: String = (0..self.dim).map(|d| format!("x{d},")).collect();
        s.push_str("label\n");
        for i in 0..self.len() {
            for v in self.features(i) {
                s.push_str(&format!("{v:?},"));
            }
            s.push_str(&format!("{}\n", self.labels[i]));
        }
        s
    }
}

/// Isotropic Gaussian clusters, one per class, with centers spread on a
/// circle of radius `separation` in the first two coordinates.
pub fn gaussian_blobs(
    samples_per_class: usize,
    num_classes: usize,
    dim: usize,
    separation: f64,
    noise: f64,
    seed: u64,
) -> Result<Dataset> {
    if dim < 2 {
        return Err(Error::InvalidDimensions("blobs need dim >= 2".into()));
    }
    let normal = Normal::new(0.0, noise).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut rng = seed::rng(seed);
    let mut features = Vec::with_capacity(samples_per_class * num_classes * dim);
    let mut labels = Vec::with_capacity(samples_per_class * num_classes);
    for c in 0..num_classes {
        let angle = std::f64::consts::TAU * c as f64 / num_classes as f64;
        for _ in 0..samples_per_class {
            for d in 0..dim {
                let center = match d {
                    0 => separation * angle.cos(),
                    1 => separation * angle.sin(),
                    _ => 0.0,
                };
                features.push(center + normal.sample(&mut rng));
            }
            labels.push(c);
        }
    }
    Dataset::new(dim, num_classes, features, labels)
}

/// Two interleaved spirals in the plane (2 classes).
pub fn two_spirals(samples_per_class: usize, turns: f64, noise: f64, seed: u64) -> Result<Dataset> {
    let normal = Normal::new(0.0, noise).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut rng = seed::rng(seed);
    let mut features = Vec::with_capacity(samples_per_class * 4);
    let mut labels = Vec::with_capacity(samples_per_class * 2);
    for c in 0..2 {
        for _ in 0..samples_per_class {
            let t: f64 = rng.random::<f64>().sqrt() * turns * std::f64::consts::TAU;
            let radius = t / (turns * std::f64::consts::TAU);
            let phase = if c == 0 { 0.0 } else { std::f64::consts::PI };
            features.push(radius * (t + phase).cos() + normal.sample(&mut rng));
            features.push(radius * (t + phase).sin() + normal.sample(&mut rng));
            labels.push(c);
        }
    }
    Dataset::new(2, 2, features, labels)
}

#[derive(Debug, Clone)]
pub struct DeviceState {
    pub id: usize,
    pub data: Dataset,
}

/// Label-skewed split: every device receives a uniformly random slice plus
/// one contiguous shard of the label-sorted remainder.
///
/// Each device gets `D = len / K` samples (any remainder is unused), of which
/// `round(D · shard_fraction)` come from its shard.
pub fn partition_noniid(
    dataset: &Dataset,
    num_devices: usize,
    shard_fraction: f64,
    seed: u64,
) -> Result<Vec<DeviceState>> {
    if num_devices == 0 {
        return Err(Error::InvalidParameter("need at least one device".into()));
    }
    if !(0.0..=1.0).contains(&shard_fraction) {
        return Err(Error::InvalidParameter(format!(
            "shard fraction must be in [0, 1], got {shard_fraction}"
        )));
    }
    let per_device = dataset.len() / num_devices;
    if per_device == 0 {
        return Err(Error::InsufficientSamples {
            needed: num_devices,
            available: dataset.len(),
        });
    }
    let shard_len = (per_device as f64 * shard_fraction).round() as usize;
    let random_len = per_device - shard_len;

    let mut rng = seed::rng(seed);
    let mut idx: Vec<usize> = (0..dataset.len()).collect();
    idx.shuffle(&mut rng);
    let (random_part, rest) = idx.split_at(random_len * num_devices);
    let mut sorted: Vec<usize> = rest[..shard_len * num_devices].to_vec();
    sorted.sort_by_key(|&i| (dataset.label(i), i));
    let mut shard_order: Vec<usize> = (0..num_devices).collect();
    shard_order.shuffle(&mut rng);

    Ok((0..num_devices)
        .map(|k| {
            let mut mine: Vec<usize> = random_part[k * random_len..(k + 1) * random_len].to_vec();
            let s = shard_order[k];
            mine.extend_from_slice(&sorted[s * shard_len..(s + 1) * shard_len]);
            DeviceState {
                id: k,
                data: dataset.subset(&mine),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labelled(n: usize, classes: usize) -> Dataset {
        let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        let features = (0..n).map(|i| i as f64).collect();
        Dataset::new(1, classes, features, labels).unwrap()
    }

    #[test]
    fn pure_shards_are_single_class() {
        let d = labelled(40, 2);
        let devs = partition_noniid(&d, 2, 1.0, 3).unwrap();
        for dev in &devs {
            assert_eq!(dev.data.len(), 20);
            let h = dev.data.class_histogram();
            assert!(h.contains(&20), "{h:?}");
        }
    }

    #[test]
    fn zero_shard_fraction_is_uniform_partition() {
        let d = labelled(100, 4);
        let devs = partition_noniid(&d, 5, 0.0, 3).unwrap();
        let mut seen: Vec<f64> = devs
            .iter()
            .flat_map(|dev| (0..dev.data.len()).map(move |i| dev.data.features(i)[0]))
            .collect();
        seen.sort_by(f64::total_cmp);
        assert_eq!(seen, (0..100).map(|i| i as f64).collect::<Vec<_>>());
    }

    #[test]
    fn scaled_proportions_are_skewed() {
        let d = labelled(1000, 10);
        let devs = partition_noniid(&d, 10, 0.4, 11).unwrap();
        let mut skewed = 0;
        for dev in &devs {
            assert_eq!(dev.data.len(), 100);
            let max = *dev.data.class_histogram().iter().max().unwrap();
            if max as f64 / 100.0 > 2.0 * 0.1 {
                skewed += 1;
            }
        }
        assert!(skewed >= 8, "only {skewed} skewed devices");
    }

    #[test]
    fn insufficient_samples() {
        let d = labelled(3, 2);
        assert!(matches!(
            partition_noniid(&d, 5, 0.5, 0),
            Err(Error::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let d = gaussian_blobs(5, 3, 2, 2.0, 0.5, 1).unwrap();
        let back = Dataset::parse_csv(&d.to_csv(), "mem").unwrap();
        assert_eq!(back, d);
        assert!(matches!(
            Dataset::parse_csv("a,b\n1,0\n", "f.csv"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            Dataset::parse_csv("x0,label\n1,0\n2\n", "f.csv"),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(matches!(
            Dataset::parse_csv("x0,label\n1,-1\n", "f.csv"),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn generators_shapes() {
        let s = two_spirals(50, 1.5, 0.05, 2).unwrap();
        assert_eq!(s.len(), 100);
        assert_eq!(s.class_histogram(), vec![50, 50]);
        let (train, test) = s.split(20, 1).unwrap();
        assert_eq!((train.len(), test.len()), (80, 20));
    }
}
