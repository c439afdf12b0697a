//! Loss terms of the objective and the adversarial warm-up schedule.
//!
//! Each term comes in two forms: a plain function on values (the reference
//! contract, used for reporting and in tests) and a `trace_*` builder that
//! records the same computation on a [`Tape`](crate::diffmath::Tape) so that
//! parameter gradients can be taken.

mod adversarial;
mod classification;
mod objective;
mod schedule;
mod similarity;

pub use adversarial::{
    adversarial_loss, gradient_penalty, pairwise_w1_estimate, trace_adversarial,
    trace_gradient_penalty, GP_EPS,
};
pub use classification::{classification_loss, trace_classification_loss};
pub(crate) use objective::domain_groups;
pub use objective::{
    critic_objective, min_objective, total_objective, CriticObjective, LossBreakdown, MinObjective,
    ObjectiveConfig, TotalObjective,
};
pub use schedule::lambda_d_schedule;
pub use similarity::{
    mine_pairs, multi_similarity_loss, negative_pair_weight, positive_pair_weight,
    similarity_matrix, trace_multi_similarity, MinedPairs, MiningRule, MsHyperParams, MsLoss,
    SimilarityMatrix,
};
