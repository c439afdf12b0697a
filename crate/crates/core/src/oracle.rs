//! Ground-truth references used by tests and diagnostics.
//!
//! Nothing here shares code with [`crate::losses`]: the Wasserstein distances
//! are computed in the primal (optimal assignment, or sorting in 1-D) and the
//! multi-similarity pipeline is a literal O(N²) re-evaluation of mining,
//! weights and loss straight from their definitions.

use crate::diffmath::Tensor;
use crate::error::{Result, WadgError};
use crate::losses::{MiningRule, MsHyperParams};

/// Empirical distribution with uniform weights over the rows of `points`.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub points: Tensor,
}

impl PointCloud {
    pub fn new(points: Tensor) -> Result<Self> {
        if points.rank() != 2 || points.rows() == 0 || !points.is_finite() {
            return Err(WadgError::Invalid(format!(
                "point cloud needs a nonempty finite [N×d] array, got {:?}",
                points.shape()
            )));
        }
        Ok(Self { points })
    }

    /// One-dimensional cloud.
    pub fn from_1d(xs: &[f64]) -> Result<Self> {
        Self::new(Tensor::matrix(xs.len(), 1, xs.to_vec())?)
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn cost_matrix(a: &PointCloud, b: &PointCloud) -> Result<Vec<Vec<f64>>> {
    if a.len() != b.len() || a.points.cols() != b.points.cols() {
        return Err(WadgError::ShapeMismatch {
            op: "exact_w1",
            left: a.points.shape().to_vec(),
            right: b.points.shape().to_vec(),
        });
    }
    Ok((0..a.len())
        .map(|i| {
            (0..b.len())
                .map(|j| Tensor::row_distance(a.points.row(i), b.points.row(j)))
                .collect()
        })
        .collect())
}

/// Minimum-cost perfect matching on a square cost matrix (shortest
/// augmenting paths with row/column potentials, O(n³)). Returns the column
/// assigned to every row.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    // 1-based arrays; index 0 is the virtual source column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if owner[j] > 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Exact W1 between equal-size clouds under Euclidean ground cost.
pub fn exact_w1_assignment(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    let cost = cost_matrix(a, b)?;
    let assignment = hungarian(&cost);
    let total: f64 = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i][j])
        .sum();
    Ok(total / a.len() as f64)
}

/// Exact W1 by enumerating all permutations; only for `N ≤ 8`.
pub fn exact_w1_exhaustive(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    let cost = cost_matrix(a, b)?;
    let n = cost.len();
    if n > 8 {
        return Err(WadgError::Invalid(format!(
            "exhaustive search limited to 8 points, got {n}"
        )));
    }
    fn search(cost: &[Vec<f64>], row: usize, used: &mut [bool], acc: f64, best: &mut f64) {
        if row == cost.len() {
            *best = best.min(acc);
            return;
        }
        for j in 0..cost.len() {
            if !used[j] {
                used[j] = true;
                search(cost, row + 1, used, acc + cost[row][j], best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    search(&cost, 0, &mut vec![false; n], 0.0, &mut best);
    Ok(best / n as f64)
}

/// Exact W1 between equal-size 1-D samples via the monotone coupling.
pub fn exact_w1_sorted_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(WadgError::ShapeMismatch {
            op: "exact_w1_sorted_1d",
            left: vec![a.len()],
            right: vec![b.len()],
        });
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

/// One row of the reference weight table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairWeight {
    pub anchor: usize,
    pub other: usize,
    pub positive: bool,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceMs {
    pub similarity: Vec<Vec<f64>>,
    pub positives: Vec<Vec<usize>>,
    pub negatives: Vec<Vec<usize>>,
    pub loss: f64,
    pub weights: Vec<PairWeight>,
}

/// Literal mining over a full similarity matrix.
pub fn reference_mining(
    s: &[Vec<f64>],
    labels: &[usize],
    params: &MsHyperParams,
) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let n = labels.len();
    let mut positives = vec![Vec::new(); n];
    let mut negatives = vec![Vec::new(); n];
    for i in 0..n {
        let same: Vec<usize> = (0..n)
            .filter(|&k| k != i && labels[k] == labels[i])
            .collect();
        let diff: Vec<usize> = (0..n).filter(|&k| labels[k] != labels[i]).collect();
        if same.is_empty() || diff.is_empty() {
            continue;
        }
        let hardest_positive = same.iter().map(|&k| s[i][k]).fold(f64::INFINITY, f64::min);
        let negative_floor = diff.iter().map(|&k| s[i][k]).fold(f64::INFINITY, f64::min);
        let negative_ceiling = diff
            .iter()
            .map(|&k| s[i][k])
            .fold(f64::NEG_INFINITY, f64::max);
        let positive_bound = match params.mining {
            MiningRule::MaxNegative => negative_ceiling,
            MiningRule::MinNegative => negative_floor,
        };
        for &j in &diff {
            if s[i][j] >= hardest_positive - params.epsilon {
                negatives[i].push(j);
            }
        }
        for &j in &same {
            if s[i][j] <= positive_bound + params.epsilon {
                positives[i].push(j);
            }
        }
    }
    (positives, negatives)
}

/// Mining, pair weights and loss recomputed directly from embeddings.
pub fn reference_ms_pipeline(
    embeddings: &Tensor,
    labels: &[usize],
    params: &MsHyperParams,
) -> ReferenceMs {
    let n = labels.len();
    let d = embeddings.cols();
    let mut s = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..d {
                acc += embeddings.get2(i, k) * embeddings.get2(j, k);
            }
            s[i][j] = acc;
        }
    }
    reference_ms_from_similarity(s, labels, params)
}

/// Same as [`reference_ms_pipeline`] on a given similarity matrix.
pub fn reference_ms_from_similarity(
    s: Vec<Vec<f64>>,
    labels: &[usize],
    params: &MsHyperParams,
) -> ReferenceMs {
    let (positives, negatives) = reference_mining(&s, labels, params);
    let (lam, a, b) = (params.lambda_center, params.alpha, params.beta);
    let mut weights = Vec::new();
    let mut total = 0.0;
    let mut anchors = 0usize;
    for i in 0..labels.len() {
        let (p, q) = (&positives[i], &negatives[i]);
        if p.is_empty() && q.is_empty() {
            continue;
        }
        anchors += 1;
        let pos_sum: f64 = p.iter().map(|&k| (-a * (s[i][k] - lam)).exp()).sum();
        let neg_sum: f64 = q.iter().map(|&k| (b * (s[i][k] - lam)).exp()).sum();
        total += (1.0 + pos_sum).ln() / a + (1.0 + neg_sum).ln() / b;
        for &j in q {
            let w = 1.0 / ((b * (lam - s[i][j])).exp() + neg_sum);
            weights.push(PairWeight {
                anchor: i,
                other: j,
                positive: false,
                weight: w,
            });
        }
        for &j in p {
            let denom: f64 = (-a * (lam - s[i][j])).exp()
                + p.iter()
                    .map(|&k| (-a * (s[i][k] - s[i][j])).exp())
                    .sum::<f64>();
            weights.push(PairWeight {
                anchor: i,
                other: j,
                positive: true,
                weight: 1.0 / denom,
            });
        }
    }
    let loss = if anchors == 0 {
        0.0
    } else {
        total / anchors as f64
    };
    ReferenceMs {
        similarity: s,
        positives,
        negatives,
        loss,
        weights,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(xs: &[f64]) -> PointCloud {
        PointCloud::from_1d(xs).unwrap()
    }

    #[test]
    fn assignment_examples() {
        assert_eq!(
            exact_w1_assignment(&cloud(&[1., 5.]), &cloud(&[5., 1.])).unwrap(),
            0.0
        );
        assert!(
            (exact_w1_assignment(&cloud(&[0., 0.]), &cloud(&[1., 1.])).unwrap() - 1.0).abs()
                < 1e-15
        );
        assert!(
            (exact_w1_assignment(&cloud(&[0., 2.]), &cloud(&[1., 3.])).unwrap() - 1.0).abs()
                < 1e-15
        );
        assert!(exact_w1_assignment(&cloud(&[0.]), &cloud(&[1., 3.])).is_err());
    }

    #[test]
    fn sorted_examples() {
        assert_eq!(
            exact_w1_sorted_1d(&[3., 1., 2.], &[1., 2., 3.]).unwrap(),
            0.0
        );
        assert_eq!(exact_w1_sorted_1d(&[0., 2.], &[3., 1.]).unwrap(), 1.0);
        assert!(exact_w1_sorted_1d(&[0.], &[1., 2.]).is_err());
    }

    #[test]
    fn hungarian_matches_exhaustive_in_2d() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for n in 1..=7 {
            let a = Tensor::matrix(n, 2, (0..2 * n).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .unwrap();
            let b = Tensor::matrix(n, 2, (0..2 * n).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .unwrap();
            let (a, b) = (PointCloud::new(a).unwrap(), PointCloud::new(b).unwrap());
            let h = exact_w1_assignment(&a, &b).unwrap();
            let e = exact_w1_exhaustive(&a, &b).unwrap();
            assert!((h - e).abs() < 1e-12, "n={n}: {h} vs {e}");
        }
    }

    #[test]
    fn reference_loss_of_empty_mining_is_zero() {
        let e = Tensor::from_rows(&[vec![1., 0.], vec![0., 1.]]).unwrap();
        let r = reference_ms_pipeline(&e, &[0, 0], &MsHyperParams::default());
        assert_eq!(r.loss, 0.0);
        assert!(r.weights.is_empty());
    }
}
