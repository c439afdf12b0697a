//! Pair similarities, margin-based pair mining, pair weights and the
//! multi-similarity clustering loss.
//!
//! For anchor `i` with positive set `P_i` and negative set `N_i` the loss is
//!
//! ```text
//! (1/α)·ln[1 + Σ_{k∈P_i} exp(−α(S_ik − λ))] + (1/β)·ln[1 + Σ_{k∈N_i} exp(β(S_ik − λ))]
//! ```
//!
//! averaged over anchors that own at least one mined pair. Its partial
//! derivative with respect to `S_ij` is `+w⁻_ij` for a negative pair and
//! `−w⁺_ij` for a positive pair, which is where the pair weights come from.

use serde::{Deserialize, Serialize};

use crate::diffmath::{log_sum_exp_slice, Tape, Tensor, Var};
use crate::error::{Result, WadgError};

/// Tolerance on row norms accepted by [`similarity_matrix`].
const UNIT_NORM_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MsHyperParams {
    /// Similarity threshold λ.
    pub lambda_center: f64,
    /// Mining margin ε.
    pub epsilon: f64,
    /// Positive temperature α.
    pub alpha: f64,
    /// Negative temperature β.
    pub beta: f64,
    #[serde(default)]
    pub mining: MiningRule,
}

impl Default for MsHyperParams {
    fn default() -> Self {
        Self {
            lambda_center: 0.5,
            epsilon: 1e-5,
            alpha: 2.0,
            beta: 40.0,
            mining: MiningRule::MaxNegative,
        }
    }
}

impl MsHyperParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha > 0.0
            && self.beta > 0.0
            && self.epsilon >= 0.0
            && (-1.0..=1.0).contains(&self.lambda_center);
        if ok {
            Ok(())
        } else {
            Err(WadgError::Config(format!(
                "multi-similarity parameters out of range: {self:?}"
            )))
        }
    }
}

/// Threshold used in the positive-pair mining condition.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MiningRule {
    /// Keep positive `j` when `S_ij ≤ max over negatives + ε`.
    #[default]
    MaxNegative,
    /// Keep positive `j` when `S_ij ≤ min over negatives + ε`.
    MinNegative,
}

/// Inner-product similarities between normalized embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    pub s: Tensor,
    pub labels: Vec<usize>,
    pub domain_ids: Vec<usize>,
}

impl SimilarityMatrix {
    /// Wraps a precomputed `[N×N]` matrix without norm checks.
    pub fn from_parts(s: Tensor, labels: Vec<usize>, domain_ids: Vec<usize>) -> Result<Self> {
        let n = labels.len();
        if s.shape() != [n, n] || domain_ids.len() != n {
            return Err(WadgError::ShapeMismatch {
                op: "similarity_matrix",
                left: s.shape().to_vec(),
                right: vec![n, domain_ids.len()],
            });
        }
        Ok(Self {
            s,
            labels,
            domain_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.s.get2(i, j)
    }
}

/// `S = E·Eᵀ` for row-normalized embeddings `E`.
pub fn similarity_matrix(
    embeddings: &Tensor,
    labels: &[usize],
    domain_ids: &[usize],
) -> Result<SimilarityMatrix> {
    for i in 0..embeddings.rows() {
        let norm = embeddings.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(WadgError::Invalid(format!(
                "embedding row {i} has norm {norm}, expected 1"
            )));
        }
    }
    let s = embeddings.matmul(&embeddings.transpose())?;
    SimilarityMatrix::from_parts(s, labels.to_vec(), domain_ids.to_vec())
}

/// Per-anchor mined positive and negative index sets.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MinedPairs {
    pub positives: Vec<Vec<usize>>,
    pub negatives: Vec<Vec<usize>>,
}

impl MinedPairs {
    /// Anchors owning at least one mined pair.
    pub fn active_anchors(&self) -> usize {
        self.positives
            .iter()
            .zip(&self.negatives)
            .filter(|(p, n)| !p.is_empty() || !n.is_empty())
            .count()
    }

    pub fn num_pairs(&self) -> usize {
        self.positives.iter().map(Vec::len).sum::<usize>()
            + self.negatives.iter().map(Vec::len).sum::<usize>()
    }

    fn mask(sets: &[Vec<usize>]) -> Tensor {
        let n = sets.len();
        let mut m = Tensor::zeros(&[n, n]);
        for (i, set) in sets.iter().enumerate() {
            for &j in set {
                m.data_mut()[i * n + j] = 1.0;
            }
        }
        m
    }
}

/// Margin-based pair selection around each anchor's hardest pairs.
///
/// A negative `j` is kept when `S_ij ≥ min_{positives k} S_ik − ε`, a positive
/// when `S_ij ≤ max_{negatives k} S_ik + ε` (or the min, per
/// [`MiningRule::MinNegative`]). The anchor itself is never a candidate.
/// Anchors without both a positive and a negative candidate get empty sets.
pub fn mine_pairs(s: &SimilarityMatrix, params: &MsHyperParams) -> MinedPairs {
    let n = s.len();
    let mut mined = MinedPairs {
        positives: vec![Vec::new(); n],
        negatives: vec![Vec::new(); n],
    };
    for i in 0..n {
        let row = s.s.row(i);
        let yi = s.labels[i];
        let mut min_pos = f64::INFINITY;
        let mut min_neg = f64::INFINITY;
        let mut max_neg = f64::NEG_INFINITY;
        let mut has_pos = false;
        let mut has_neg = false;
        for (k, &sik) in row.iter().enumerate() {
            if k == i {
                continue;
            }
            if s.labels[k] == yi {
                has_pos = true;
                min_pos = min_pos.min(sik);
            } else {
                has_neg = true;
                min_neg = min_neg.min(sik);
                max_neg = max_neg.max(sik);
            }
        }
        if !(has_pos && has_neg) {
            continue;
        }
        let neg_threshold = min_pos - params.epsilon;
        let pos_threshold = match params.mining {
            MiningRule::MaxNegative => max_neg,
            MiningRule::MinNegative => min_neg,
        } + params.epsilon;
        for (j, &sij) in row.iter().enumerate() {
            if j == i {
                continue;
            }
            if s.labels[j] == yi {
                if sij <= pos_threshold {
                    mined.positives[i].push(j);
                }
            } else if sij >= neg_threshold {
                mined.negatives[i].push(j);
            }
        }
    }
    mined
}

fn negative_logits(s: &SimilarityMatrix, i: usize, set: &[usize], p: &MsHyperParams) -> Vec<f64> {
    set.iter()
        .map(|&k| p.beta * (s.get(i, k) - p.lambda_center))
        .collect()
}

fn positive_logits(s: &SimilarityMatrix, i: usize, set: &[usize], p: &MsHyperParams) -> Vec<f64> {
    set.iter()
        .map(|&k| -p.alpha * (s.get(i, k) - p.lambda_center))
        .collect()
}

/// `exp(β(S_ij−λ)) / (1 + Σ_{k∈N_i} exp(β(S_ik−λ)))`.
pub fn negative_pair_weight(
    s: &SimilarityMatrix,
    i: usize,
    j: usize,
    negatives: &[usize],
    params: &MsHyperParams,
) -> Result<f64> {
    if !negatives.contains(&j) {
        return Err(WadgError::Invalid(format!(
            "{j} is not a mined negative of {i}"
        )));
    }
    let logits = negative_logits(s, i, negatives, params);
    let lse = log_sum_exp_slice(logits.iter().copied(), true);
    Ok((params.beta * (s.get(i, j) - params.lambda_center) - lse).exp())
}

/// `1 / (exp(−α(λ−S_ij)) + Σ_{k∈P_i} exp(−α(S_ik−S_ij)))`, with `k = j`
/// included in the sum.
pub fn positive_pair_weight(
    s: &SimilarityMatrix,
    i: usize,
    j: usize,
    positives: &[usize],
    params: &MsHyperParams,
) -> Result<f64> {
    if !positives.contains(&j) {
        return Err(WadgError::Invalid(format!(
            "{j} is not a mined positive of {i}"
        )));
    }
    // Dividing numerator and denominator by exp(−α(S_ij−λ)) turns the weight
    // into a softmax entry over {0} ∪ {−α(S_ik−λ)}.
    let logits = positive_logits(s, i, positives, params);
    let lse = log_sum_exp_slice(logits.iter().copied(), true);
    Ok((-params.alpha * (s.get(i, j) - params.lambda_center) - lse).exp())
}

/// Value of the multi-similarity loss plus a flag for the degenerate case.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MsLoss {
    pub value: f64,
    /// Anchors contributing to the average.
    pub active_anchors: usize,
    /// Set when no anchor had a mined pair; the loss is then defined as 0.
    pub no_valid_anchors: bool,
}

pub fn multi_similarity_loss(
    s: &SimilarityMatrix,
    mined: &MinedPairs,
    params: &MsHyperParams,
) -> MsLoss {
    let m = mined.active_anchors();
    if m == 0 {
        return MsLoss {
            value: 0.0,
            active_anchors: 0,
            no_valid_anchors: true,
        };
    }
    let mut total = 0.0;
    for i in 0..s.len() {
        let pos = positive_logits(s, i, &mined.positives[i], params);
        let neg = negative_logits(s, i, &mined.negatives[i], params);
        total += log_sum_exp_slice(pos.into_iter(), true) / params.alpha;
        total += log_sum_exp_slice(neg.into_iter(), true) / params.beta;
    }
    MsLoss {
        value: total / m as f64,
        active_anchors: m,
        no_valid_anchors: false,
    }
}

/// Traced multi-similarity loss on normalized `embeddings [N×d]`. Mining is
/// done on the current values and then held fixed; returns `None` when no
/// anchor has a mined pair.
pub fn trace_multi_similarity(
    tape: &mut Tape,
    embeddings: Var,
    labels: &[usize],
    params: &MsHyperParams,
) -> Result<Option<(Var, MinedPairs)>> {
    let et = tape.transpose(embeddings)?;
    let s = tape.matmul(embeddings, et)?;
    let sm = SimilarityMatrix::from_parts(
        tape.value(s).clone(),
        labels.to_vec(),
        vec![0; labels.len()],
    )?;
    let mined = mine_pairs(&sm, params);
    let m = mined.active_anchors();
    if m == 0 {
        return Ok(None);
    }
    let centered = tape.add_scalar(s, -params.lambda_center)?;
    let pos_logits = tape.scale(centered, -params.alpha)?;
    let neg_logits = tape.scale(centered, params.beta)?;
    let pos = tape.log1p_sum_exp_masked(pos_logits, MinedPairs::mask(&mined.positives))?;
    let neg = tape.log1p_sum_exp_masked(neg_logits, MinedPairs::mask(&mined.negatives))?;
    let pos = tape.sum(pos)?;
    let neg = tape.sum(neg)?;
    let pos = tape.scale(pos, 1.0 / params.alpha)?;
    let neg = tape.scale(neg, 1.0 / params.beta)?;
    let total = tape.add(pos, neg)?;
    let loss = tape.scale(total, 1.0 / m as f64)?;
    Ok(Some((loss, mined)))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Anchor 0 (class 0) with explicit similarities to four others.
    fn single_anchor(pos: &[f64], neg: &[f64]) -> SimilarityMatrix {
        let n = 1 + pos.len() + neg.len();
        let mut s = Tensor::zeros(&[n, n]);
        let sims: Vec<f64> = pos.iter().chain(neg).copied().collect();
        for i in 0..n {
            s.data_mut()[i * n + i] = 1.0;
        }
        for (k, &v) in sims.iter().enumerate() {
            s.data_mut()[k + 1] = v;
            s.data_mut()[(k + 1) * n] = v;
        }
        let mut labels = vec![0; 1 + pos.len()];
        labels.extend(std::iter::repeat_n(1, neg.len()));
        SimilarityMatrix::from_parts(s, labels, vec![0; n]).unwrap()
    }

    fn params(eps: f64) -> MsHyperParams {
        MsHyperParams {
            epsilon: eps,
            ..MsHyperParams::default()
        }
    }

    #[test]
    fn similarity_examples() {
        let e =
            Tensor::from_rows(&[vec![1., 0.], vec![0., 1.], vec![0.6, 0.8], vec![1., 0.]]).unwrap();
        let s = similarity_matrix(&e, &[0, 1, 0, 1], &[0; 4]).unwrap();
        assert_eq!(s.get(0, 1), 0.0);
        assert!((s.get(0, 2) - 0.6).abs() < 1e-15);
        assert_eq!(s.get(0, 3), 1.0);
        let bad = Tensor::from_rows(&[vec![2., 0.]]).unwrap();
        assert!(similarity_matrix(&bad, &[0], &[0]).is_err());
    }

    #[test]
    fn mining_worked_example() {
        let s = single_anchor(&[0.9, 0.5], &[0.7, 0.2]);
        let mined = mine_pairs(&s, &params(0.1));
        // negative threshold 0.5 − 0.1, positive threshold 0.7 + 0.1
        assert_eq!(mined.negatives[0], vec![3]);
        assert_eq!(mined.positives[0], vec![2]);
    }

    #[test]
    fn huge_margin_selects_everything() {
        let s = single_anchor(&[0.9, 0.5], &[0.7, 0.2]);
        let mined = mine_pairs(&s, &params(2.0));
        assert_eq!(mined.positives[0], vec![1, 2]);
        assert_eq!(mined.negatives[0], vec![3, 4]);
    }

    #[test]
    fn single_class_has_no_negatives() {
        let e = Tensor::from_rows(&[vec![1., 0.], vec![0.6, 0.8], vec![0., 1.]]).unwrap();
        let s = similarity_matrix(&e, &[2, 2, 2], &[0; 3]).unwrap();
        let mined = mine_pairs(&s, &params(0.5));
        assert!(mined.negatives.iter().all(Vec::is_empty));
        let loss = multi_similarity_loss(&s, &mined, &params(0.5));
        assert_eq!(loss.value, 0.0);
        assert!(loss.no_valid_anchors);
    }

    #[test]
    fn literal_min_rule_uses_hardest_negative_floor() {
        let s = single_anchor(&[0.9, 0.5], &[0.7, 0.2]);
        let p = MsHyperParams {
            epsilon: 0.1,
            mining: MiningRule::MinNegative,
            ..MsHyperParams::default()
        };
        // positive threshold 0.2 + 0.1 admits neither 0.9 nor 0.5
        assert!(mine_pairs(&s, &p).positives[0].is_empty());
    }

    #[test]
    fn negative_weight_examples() {
        let s = single_anchor(&[0.9], &[0.6]);
        let p = params(0.0);
        let w = negative_pair_weight(&s, 0, 2, &[2], &p).unwrap();
        assert!((w - 0.982014).abs() < 1e-6);
        let far = single_anchor(&[0.9], &[-1.0]);
        let w = negative_pair_weight(&far, 0, 2, &[2], &p).unwrap();
        assert!((w - (-60f64).exp()).abs() < 1e-30);
        let twin = single_anchor(&[0.9], &[0.55, 0.55]);
        let a = negative_pair_weight(&twin, 0, 2, &[2, 3], &p).unwrap();
        let b = negative_pair_weight(&twin, 0, 3, &[2, 3], &p).unwrap();
        assert_eq!(a, b);
        assert!(negative_pair_weight(&twin, 0, 1, &[2, 3], &p).is_err());
    }

    #[test]
    fn positive_weight_examples() {
        let p = params(0.0);
        let s = single_anchor(&[0.4], &[0.1]);
        let w = positive_pair_weight(&s, 0, 1, &[1], &p).unwrap();
        assert!((w - 0.549834).abs() < 1e-6);
        let s = single_anchor(&[0.5], &[0.1]);
        let w = positive_pair_weight(&s, 0, 1, &[1], &p).unwrap();
        assert!((w - 0.5).abs() < 1e-15);
        // harder positive gets more weight
        let s = single_anchor(&[0.2, 0.4], &[0.1]);
        let hard = positive_pair_weight(&s, 0, 1, &[1, 2], &p).unwrap();
        let easy = positive_pair_weight(&s, 0, 2, &[1, 2], &p).unwrap();
        assert!(hard > easy);
    }

    #[test]
    fn single_anchor_loss_value() {
        let s = single_anchor(&[0.4], &[0.6]);
        let mut mined = MinedPairs {
            positives: vec![Vec::new(); 3],
            negatives: vec![Vec::new(); 3],
        };
        mined.positives[0] = vec![1];
        mined.negatives[0] = vec![2];
        let loss = multi_similarity_loss(&s, &mined, &params(0.0));
        let expected = 0.5 * (1.0 + 0.2f64.exp()).ln() + 0.025 * (1.0 + 4f64.exp()).ln();
        assert!((loss.value - expected).abs() < 1e-12);
        assert!((loss.value - 0.4995232).abs() < 1e-6);
        assert_eq!(loss.active_anchors, 1);
    }

    #[test]
    fn traced_loss_matches_value_loss() {
        let e = Tensor::from_rows(&[
            vec![1., 0., 0.],
            vec![0.6, 0.8, 0.],
            vec![0., 0.6, 0.8],
            vec![0.48, 0.6, 0.64],
            vec![0., 0., 1.],
        ])
        .unwrap();
        let labels = [0, 0, 1, 1, 0];
        let p = params(0.3);
        let mut tape = Tape::new();
        let ev = tape.leaf(e.clone());
        let (loss, mined) = trace_multi_similarity(&mut tape, ev, &labels, &p)
            .unwrap()
            .unwrap();
        let s = similarity_matrix(&e, &labels, &[0; 5]).unwrap();
        assert_eq!(mined, mine_pairs(&s, &p));
        let v = multi_similarity_loss(&s, &mined, &p).value;
        assert!((tape.value(loss).data()[0] - v).abs() < 1e-12);
    }
}
