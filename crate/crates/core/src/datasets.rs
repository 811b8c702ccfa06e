//! In-memory labelled datasets and the synthetic Gaussian-blob generator.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Features (`examples × dims`), labels and a split tag per example.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub splits: Vec<Split>,
}

/// Features and labels of one split.
#[derive(Debug, Clone, PartialEq)]
pub struct Subset {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl Subset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize, splits: Vec<Split>) -> Result<Self> {
        if features.rows() != labels.len() || labels.len() != splits.len() {
            return Err(Error::InvalidArgument(format!(
                "{} feature rows, {} labels, {} split tags",
                features.rows(),
                labels.len(),
                splits.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} outside 0..{num_classes}"
            )));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
            splits,
        })
    }

    /// Builds a dataset and assigns a 70/15/15 split from a seeded
    /// permutation.
    pub fn with_random_split(features: Matrix, labels: Vec<usize>, num_classes: usize, split_seed: u64) -> Result<Self> {
        let splits = random_split(labels.len(), split_seed);
        Self::new(features, labels, num_classes, splits)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.features.cols()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn subset(&self, split: Split) -> Subset {
        let idx = self.indices(split);
        Subset {
            features: self.features.select_rows(&idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Shifts and scales every feature to zero mean and unit variance using
    /// statistics of the train split. Constant features are only centred.
    pub fn standardize(&mut self) -> Result<()> {
        let train = self.indices(Split::Train);
        if train.is_empty() {
            return Err(Error::Empty("train split"));
        }
        let dims = self.dims();
        let n = train.len() as f64;
        let mut mean = Vec::with_capacity(dims);
        let mut inv_std = Vec::with_capacity(dims);
        for d in 0..dims {
            let m = train.iter().fold(0.0, |a, &i| a + self.features.get(i, d)) / n;
            let var = train.iter().fold(0.0, |a, &i| {
                let c = self.features.get(i, d) - m;
                a + c * c
            }) / n;
            mean.push(m);
            inv_std.push(if var > 0.0 { 1.0 / libm::sqrt(var) } else { 1.0 });
        }
        for r in 0..self.len() {
            for (d, v) in self.features.row_mut(r).iter_mut().enumerate() {
                *v = (*v - mean[d]) * inv_std[d];
            }
        }
        Ok(())
    }
}

/// 70/15/15 assignment over a seeded permutation of `0..n`.
pub fn random_split(n: usize, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    Rng::stream(seed, SPLIT_STREAM).shuffle(&mut order);
    let n_train = n * 70 / 100;
    let n_val = n * 15 / 100;
    let mut splits = alloc::vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    splits
}

const CENTER_STREAM: u64 = 0xb10b_0001;
const POINT_STREAM: u64 = 0xb10b_0002;
const SPLIT_STREAM: u64 = 0xb10b_0003;

/// Isotropic Gaussian clusters.
///
/// Class centres are `N(0, I)` draws; each example is its centre plus
/// `spread · N(0, I)` noise. Examples are grouped by class, split 70/15/15
/// and standardized with train statistics.
pub fn gen_blobs(seed: u64, num_classes: usize, dims: usize, per_class: usize, spread: f64) -> Result<Dataset> {
    if num_classes == 0 || dims == 0 || per_class == 0 {
        return Err(Error::InvalidArgument("gen_blobs counts must be >= 1".into()));
    }
    if !(spread > 0.0) || !spread.is_finite() {
        return Err(Error::InvalidArgument(format!("spread must be positive, got {spread}")));
    }
    let mut centre_rng = Rng::stream(seed, CENTER_STREAM);
    let centres: Vec<f64> = (0..num_classes * dims).map(|_| centre_rng.standard_normal()).collect();
    let mut point_rng = Rng::stream(seed, POINT_STREAM);
    let n = num_classes * per_class;
    let mut data = Vec::with_capacity(n * dims);
    let mut labels = Vec::with_capacity(n);
    for class in 0..num_classes {
        let centre = &centres[class * dims..(class + 1) * dims];
        for _ in 0..per_class {
            for &c in centre {
                data.push(c + spread * point_rng.standard_normal());
            }
            labels.push(class);
        }
    }
    let features = Matrix::from_vec(n, dims, data)?;
    let mut ds = Dataset::with_random_split(features, labels, num_classes, seed)?;
    ds.standardize()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_deterministic() {
        let a = gen_blobs(5, 3, 4, 20, 0.5).unwrap();
        let b = gen_blobs(5, 3, 4, 20, 0.5).unwrap();
        assert_eq!(a, b);
        let c = gen_blobs(6, 3, 4, 20, 0.5).unwrap();
        assert_ne!(a.features, c.features);
    }

    #[test]
    fn split_proportions() {
        let ds = gen_blobs(1, 4, 2, 100, 1.0).unwrap();
        assert_eq!(ds.indices(Split::Train).len(), 280);
        assert_eq!(ds.indices(Split::Val).len(), 60);
        assert_eq!(ds.indices(Split::Test).len(), 60);
    }

    #[test]
    fn standardized_train_statistics() {
        let ds = gen_blobs(2, 3, 5, 200, 1.0).unwrap();
        let train = ds.subset(Split::Train);
        for d in 0..5 {
            let col: Vec<f64> = (0..train.len()).map(|r| train.features.get(r, d)).collect();
            let m = crate::stats::mean(&col);
            let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / col.len() as f64;
            assert!(m.abs() < 1e-12);
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_arguments() {
        assert!(gen_blobs(0, 0, 2, 2, 1.0).is_err());
        assert!(gen_blobs(0, 2, 2, 2, 0.0).is_err());
        let f = Matrix::zeros(2, 1);
        assert!(Dataset::new(f, alloc::vec![0, 3], 2, alloc::vec![Split::Train; 2]).is_err());
    }
}
