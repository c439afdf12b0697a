//! The combined objective: a descent scalar for the extractor and classifier
//! and an ascent scalar for the critics.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adversarial::{trace_adversarial, trace_gradient_penalty};
use super::classification::trace_classification_loss;
use super::similarity::{trace_multi_similarity, MsHyperParams};
use crate::data::MixedBatch;
use crate::diffmath::{Tape, Tensor, Var};
use crate::error::Result;
use crate::model::{domain_pairs, BundleVars, MlpVars, ModelBundle};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    /// Coefficient of the adversarial term in the descent scalar.
    pub lambda_d: f64,
    /// Coefficient of the metric-learning term in the descent scalar.
    pub lambda_s: f64,
    pub gp_coefficient: f64,
    pub ms: MsHyperParams,
    /// Evaluate the adversarial term at all.
    pub adversarial: bool,
    /// Evaluate the metric-learning term at all.
    pub metric: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            lambda_d: 1.0,
            lambda_s: 1e-4,
            gp_coefficient: 10.0,
            ms: MsHyperParams::default(),
            adversarial: true,
            metric: true,
        }
    }
}

/// Per-term values; `None` marks a term that was not evaluated.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_c: f64,
    pub l_d: Option<f64>,
    pub l_ms: Option<f64>,
    pub gp: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct MinObjective {
    pub loss: Var,
    pub breakdown: LossBreakdown,
}

#[derive(Clone, Debug)]
pub struct CriticObjective {
    /// `L_D − gp_coefficient · Σ penalties`, to be ascended.
    pub loss: Var,
    pub l_d: f64,
    pub gp: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TotalObjective {
    pub min_scalar: f64,
    pub critic_scalar: Option<f64>,
    pub breakdown: LossBreakdown,
}

/// Row indices of each domain present in `domain_ids`, or `None` unless every
/// one of the `num_domains` sources has at least one row.
pub(crate) fn domain_groups(domain_ids: &[usize], num_domains: usize) -> Option<Vec<Vec<usize>>> {
    let mut groups = vec![Vec::new(); num_domains];
    for (r, &d) in domain_ids.iter().enumerate() {
        groups.get_mut(d)?.push(r);
    }
    (num_domains >= 2 && groups.iter().all(|g| !g.is_empty())).then_some(groups)
}

/// Descent scalar `L_C + λ_d·L_D + λ_s·L_MS` with the critics held fixed.
///
/// Terms with a zero coefficient are still reported but never enter the
/// graph of the returned scalar.
pub fn min_objective(
    tape: &mut Tape,
    bundle: &ModelBundle,
    vars: &BundleVars,
    batch: &MixedBatch,
    cfg: &ObjectiveConfig,
) -> Result<MinObjective> {
    let x = tape.leaf(batch.features.clone());
    let z = bundle.extractor.forward(tape, &vars.extractor, x)?.output;
    let lt = bundle.trace_logits(tape, &vars.classifier, z)?;
    let l_c = trace_classification_loss(tape, lt.logits, &batch.labels)?;
    let mut breakdown = LossBreakdown {
        l_c: tape.value(l_c).data()[0],
        ..LossBreakdown::default()
    };
    let mut loss = l_c;

    if cfg.adversarial {
        match domain_groups(&batch.domain_ids, bundle.arch.num_domains) {
            Some(groups) => {
                let zs = groups
                    .iter()
                    .map(|g| tape.select_rows(z, g))
                    .collect::<Result<Vec<_>>>()?;
                let l_d = trace_adversarial(tape, bundle, &vars.critics, &zs)?;
                breakdown.l_d = Some(tape.value(l_d).data()[0]);
                if cfg.lambda_d != 0.0 {
                    let w = tape.scale(l_d, cfg.lambda_d)?;
                    loss = tape.add(loss, w)?;
                }
            }
            None => breakdown
                .warnings
                .push("batch does not cover every source domain; adversarial term skipped".into()),
        }
    }

    if cfg.metric {
        match trace_multi_similarity(tape, lt.embeddings, &batch.labels, &cfg.ms)? {
            Some((l_ms, _)) => {
                breakdown.l_ms = Some(tape.value(l_ms).data()[0]);
                if cfg.lambda_s != 0.0 {
                    let w = tape.scale(l_ms, cfg.lambda_s)?;
                    loss = tape.add(loss, w)?;
                }
            }
            None => {
                breakdown.l_ms = Some(0.0);
                breakdown
                    .warnings
                    .push("no anchor has a mined pair; metric loss is 0".into());
            }
        }
    }

    Ok(MinObjective { loss, breakdown })
}

/// Ascent scalar for the critics on fixed per-domain features.
pub fn critic_objective<R: Rng>(
    tape: &mut Tape,
    bundle: &ModelBundle,
    critic_vars: &[MlpVars],
    features: &[Tensor],
    gp_coefficient: f64,
    rng: &mut R,
) -> Result<CriticObjective> {
    let groups: Vec<Var> = features.iter().map(|f| tape.leaf(f.clone())).collect();
    let l_d = trace_adversarial(tape, bundle, critic_vars, &groups)?;
    let l_d_value = tape.value(l_d).data()[0];
    if gp_coefficient == 0.0 {
        return Ok(CriticObjective {
            loss: l_d,
            l_d: l_d_value,
            gp: None,
        });
    }
    let mut penalty: Option<Var> = None;
    for (k, (i, j)) in domain_pairs(features.len()).into_iter().enumerate() {
        let c = bundle.critic_index(Some(k))?;
        let gp = trace_gradient_penalty(
            tape,
            &bundle.critics[c],
            &critic_vars[c],
            &features[i],
            &features[j],
            rng,
        )?;
        penalty = Some(match penalty {
            Some(p) => tape.add(p, gp)?,
            None => gp,
        });
    }
    let penalty = penalty.expect("at least one pair");
    let gp_value = tape.value(penalty).data()[0];
    let scaled = tape.scale(penalty, gp_coefficient)?;
    let loss = tape.sub(l_d, scaled)?;
    Ok(CriticObjective {
        loss,
        l_d: l_d_value,
        gp: Some(gp_value),
    })
}

/// Both scalars of the min–max objective on one batch, for reporting.
pub fn total_objective<R: Rng>(
    bundle: &ModelBundle,
    batch: &MixedBatch,
    cfg: &ObjectiveConfig,
    rng: &mut R,
) -> Result<TotalObjective> {
    let mut tape = Tape::untraced();
    let vars = bundle.register(&mut tape);
    let min = min_objective(&mut tape, bundle, &vars, batch, cfg)?;
    let mut breakdown = min.breakdown;
    let mut critic_scalar = None;
    if cfg.adversarial {
        if let Some(groups) = domain_groups(&batch.domain_ids, bundle.arch.num_domains) {
            let z = bundle.forward_features(&batch.features)?;
            let feats: Vec<Tensor> = groups.iter().map(|g| z.select_rows(g)).collect();
            let c = critic_objective(
                &mut tape,
                bundle,
                &vars.critics,
                &feats,
                cfg.gp_coefficient,
                rng,
            )?;
            breakdown.gp = c.gp;
            critic_scalar = Some(tape.value(c.loss).data()[0]);
        }
    }
    Ok(TotalObjective {
        min_scalar: tape.value(min.loss).data()[0],
        critic_scalar,
        breakdown,
    })
}
