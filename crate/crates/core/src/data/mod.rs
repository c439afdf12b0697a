//! Synthetic multi-domain benchmarks, leave-one-domain-out splits, mixed
//! mini-batches and the on-disk dataset format.

mod batch;
mod generate;
mod io;

pub use batch::{sample_mixed_batch, MixedBatch, MixedBatchSampler};
pub use generate::{gen_rotated_moons, gen_shifted_blobs, moons_domain_id, GeneratorParams};
pub use io::{load_dataset, save_dataset, DatasetManifest, FileEntry};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::diffmath::Tensor;
use crate::error::{Result, WadgError};

/// Labeled feature rows drawn from one domain.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainDataset {
    pub domain_id: String,
    pub features: Tensor,
    pub labels: Vec<usize>,
}

impl DomainDataset {
    pub fn new(domain_id: impl Into<String>, features: Tensor, labels: Vec<usize>) -> Result<Self> {
        let domain_id = domain_id.into();
        if features.rank() != 2 || features.rows() != labels.len() {
            return Err(WadgError::Dataset {
                domain: domain_id,
                detail: format!(
                    "features {:?} do not match {} labels",
                    features.shape(),
                    labels.len()
                ),
            });
        }
        Ok(Self {
            domain_id,
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

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn class_counts(&self, num_classes: usize) -> Vec<usize> {
        let mut counts = vec![0; num_classes];
        for &y in &self.labels {
            if y < num_classes {
                counts[y] += 1;
            }
        }
        counts
    }

    /// Subset of rows, in the given order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            domain_id: self.domain_id.clone(),
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Random `(train, validation)` partition with `round(fraction · N)`
    /// validation rows (at least one when `fraction > 0` and `N ≥ 2`).
    pub fn split_validation<R: Rng>(&self, fraction: f64, rng: &mut R) -> (Self, Self) {
        let n = self.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        let mut n_val = (fraction * n as f64).round() as usize;
        if fraction > 0.0 && n >= 2 {
            n_val = n_val.clamp(1, n - 1);
        }
        let (val, train) = idx.split_at(n_val);
        let mut train = train.to_vec();
        let mut val = val.to_vec();
        train.sort_unstable();
        val.sort_unstable();
        (self.subset(&train), self.subset(&val))
    }
}

/// Removes `target_domain_id` from `datasets`, keeping source order.
pub fn split_leave_one_out(
    datasets: &[DomainDataset],
    target_domain_id: &str,
) -> Result<(Vec<DomainDataset>, DomainDataset)> {
    let pos = datasets
        .iter()
        .position(|d| d.domain_id == target_domain_id)
        .ok_or_else(|| WadgError::UnknownDomain(target_domain_id.to_string()))?;
    let mut sources = datasets.to_vec();
    let target = sources.remove(pos);
    Ok((sources, target))
}
