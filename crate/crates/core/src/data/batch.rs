use rand::seq::SliceRandom;
use rand::Rng;

use super::DomainDataset;
use crate::diffmath::Tensor;
use crate::error::{Result, WadgError};

/// Concatenation of equal-size per-domain draws.
#[derive(Clone, Debug, PartialEq)]
pub struct MixedBatch {
    pub features: Tensor,
    pub labels: Vec<usize>,
    /// Index of the source domain each row came from.
    pub domain_ids: Vec<usize>,
}

impl MixedBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Epoch-wise sampler drawing `per_domain` rows from every source without
/// replacement. The epoch ends when the smallest source runs out; leftover
/// rows of that epoch are dropped.
#[derive(Clone, Debug)]
pub struct MixedBatchSampler {
    per_domain: usize,
    orders: Vec<Vec<usize>>,
    cursor: usize,
    batches_per_epoch: usize,
}

impl MixedBatchSampler {
    pub fn new(sources: &[DomainDataset], per_domain: usize) -> Result<Self> {
        if per_domain == 0 {
            return Err(WadgError::Config(
                "per-domain batch size must be positive".into(),
            ));
        }
        if sources.is_empty() {
            return Err(WadgError::Config("no source domains".into()));
        }
        if let Some(small) = sources.iter().find(|s| s.len() < per_domain) {
            return Err(WadgError::Dataset {
                domain: small.domain_id.clone(),
                detail: format!(
                    "{} rows, fewer than the batch size {per_domain}",
                    small.len()
                ),
            });
        }
        let batches_per_epoch = sources
            .iter()
            .map(|s| s.len() / per_domain)
            .min()
            .unwrap_or(0);
        Ok(Self {
            per_domain,
            orders: sources.iter().map(|s| (0..s.len()).collect()).collect(),
            cursor: batches_per_epoch,
            batches_per_epoch,
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.batches_per_epoch
    }

    /// Reshuffles every source for a new epoch.
    pub fn start_epoch<R: Rng>(&mut self, rng: &mut R) {
        for order in &mut self.orders {
            order.sort_unstable();
            order.shuffle(rng);
        }
        self.cursor = 0;
    }

    /// Next batch of the current epoch, or `None` at the end of the epoch.
    pub fn next_batch(&mut self, sources: &[DomainDataset]) -> Option<MixedBatch> {
        if self.cursor >= self.batches_per_epoch {
            return None;
        }
        let (b, t) = (self.per_domain, self.cursor);
        self.cursor += 1;
        let cols = sources[0].num_features();
        let mut data = Vec::with_capacity(b * sources.len() * cols);
        let mut labels = Vec::with_capacity(b * sources.len());
        let mut domain_ids = Vec::with_capacity(b * sources.len());
        for (d, (src, order)) in sources.iter().zip(&self.orders).enumerate() {
            for &r in &order[t * b..(t + 1) * b] {
                data.extend_from_slice(src.features.row(r));
                labels.push(src.labels[r]);
                domain_ids.push(d);
            }
        }
        let rows = labels.len();
        Some(MixedBatch {
            features: Tensor::matrix(rows, cols, data).expect("consistent widths"),
            labels,
            domain_ids,
        })
    }
}

/// One mixed batch of `per_domain` random rows from each source.
pub fn sample_mixed_batch<R: Rng>(
    sources: &[DomainDataset],
    per_domain: usize,
    rng: &mut R,
) -> Result<MixedBatch> {
    let mut sampler = MixedBatchSampler::new(sources, per_domain)?;
    sampler.start_epoch(rng);
    Ok(sampler.next_batch(sources).expect("at least one batch"))
}
