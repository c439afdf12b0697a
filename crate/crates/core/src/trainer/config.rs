use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::adam::AdamParams;
use crate::error::{Result, WadgError};
use crate::losses::{lambda_d_schedule, MsHyperParams, ObjectiveConfig};
use crate::model::{Architecture, CriticMode, MlpSpec};

/// Which terms of the objective are trained.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "kebab-case")]
pub enum AblationMode {
    /// Classification loss only.
    DeepAll,
    /// No adversarial alignment.
    #[serde(rename = "no-ld")]
    NoLD,
    /// No metric-learning term.
    #[serde(rename = "no-lms")]
    NoLMS,
    #[default]
    WadgAll,
}

impl AblationMode {
    pub const ALL: [AblationMode; 4] = [
        AblationMode::DeepAll,
        AblationMode::NoLD,
        AblationMode::NoLMS,
        AblationMode::WadgAll,
    ];

    pub fn uses_adversarial(self) -> bool {
        matches!(self, AblationMode::NoLMS | AblationMode::WadgAll)
    }

    pub fn uses_metric(self) -> bool {
        matches!(self, AblationMode::NoLD | AblationMode::WadgAll)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AblationMode::DeepAll => "deep-all",
            AblationMode::NoLD => "no-ld",
            AblationMode::NoLMS => "no-lms",
            AblationMode::WadgAll => "wadg-all",
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationMode {
    type Err = WadgError;

    fn from_str(s: &str) -> Result<Self> {
        AblationMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                WadgError::Config(format!(
                    "unknown mode `{s}` (expected deep-all, no-ld, no-lms or wadg-all)"
                ))
            })
    }
}

/// Everything that determines a training run besides the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    /// Rows drawn from every source domain per mini-batch.
    pub per_domain_batch: usize,
    pub lambda_s: f64,
    /// Steepness δ of the λ_d warm-up.
    pub delta: f64,
    pub critic_steps: usize,
    pub gp_coefficient: f64,
    pub ms: MsHyperParams,
    pub mode: AblationMode,
    pub seed: u64,
    /// Epochs without source-validation improvement before stopping.
    pub patience: usize,
    /// Fraction of every source domain held out for early stopping.
    pub val_fraction: f64,
    pub critic_mode: CriticMode,
    /// Extractor widths after the input layer; the last is the feature size.
    pub extractor_widths: Vec<usize>,
    pub classifier_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    /// 1-based classifier hidden layer used as the embedding.
    pub embed_layer: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamParams::default();
        Self {
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_eps: adam.eps,
            epochs: 100,
            per_domain_batch: 20,
            lambda_s: 1e-4,
            delta: 10.0,
            critic_steps: 5,
            gp_coefficient: 10.0,
            ms: MsHyperParams::default(),
            mode: AblationMode::WadgAll,
            seed: 0,
            patience: 20,
            val_fraction: 0.1,
            critic_mode: CriticMode::PerPair,
            extractor_widths: vec![64, 64, 32],
            classifier_hidden: vec![32, 32],
            critic_hidden: vec![64, 64],
            embed_layer: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(WadgError::Config(m));
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!(
                "Adam betas must lie in [0, 1), got ({}, {})",
                self.beta1, self.beta2
            ));
        }
        if !(self.adam_eps > 0.0) {
            return bad("Adam epsilon must be positive".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.critic_steps == 0 {
            return bad("critic_steps must be at least 1".into());
        }
        if self.per_domain_batch == 0 {
            return bad("per_domain_batch must be positive".into());
        }
        if !(self.lambda_s >= 0.0) || !(self.gp_coefficient >= 0.0) || !(self.delta >= 0.0) {
            return bad("lambda_s, gp_coefficient and delta must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!(
                "val_fraction must lie in [0, 1), got {}",
                self.val_fraction
            ));
        }
        if self.extractor_widths.is_empty() {
            return bad("extractor_widths must name at least the feature size".into());
        }
        if self.embed_layer == 0 || self.embed_layer > self.classifier_hidden.len() {
            return bad(format!(
                "embed_layer {} outside 1..={}",
                self.embed_layer,
                self.classifier_hidden.len()
            ));
        }
        self.ms.validate()
    }

    pub fn adam(&self) -> AdamParams {
        AdamParams {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn architecture(
        &self,
        input_width: usize,
        num_classes: usize,
        num_domains: usize,
    ) -> Result<Architecture> {
        let feat = *self.extractor_widths.last().ok_or_else(|| {
            WadgError::Config("extractor_widths must name at least the feature size".into())
        })?;
        let chain = |first: usize, mid: &[usize], last: usize| {
            let mut w = vec![first];
            w.extend_from_slice(mid);
            w.push(last);
            MlpSpec::new(w)
        };
        let mut ext = vec![input_width];
        ext.extend_from_slice(&self.extractor_widths);
        let arch = Architecture {
            extractor: MlpSpec::new(ext)?,
            classifier: chain(feat, &self.classifier_hidden, num_classes)?,
            critic: chain(feat, &self.critic_hidden, 1)?,
            embed_layer: self.embed_layer,
            critic_mode: self.critic_mode,
            num_domains,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// Objective settings at training progress `p`; ablated terms are
    /// neither evaluated nor trained.
    pub fn objective(&self, p: f64) -> ObjectiveConfig {
        let adv = self.mode.uses_adversarial();
        let metric = self.mode.uses_metric();
        ObjectiveConfig {
            lambda_d: if adv {
                lambda_d_schedule(p, self.delta)
            } else {
                0.0
            },
            lambda_s: if metric { self.lambda_s } else { 0.0 },
            gp_coefficient: self.gp_coefficient,
            ms: self.ms,
            adversarial: adv,
            metric,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_round_trip_through_strings() {
        for m in AblationMode::ALL {
            assert_eq!(m.as_str().parse::<AblationMode>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.as_str()));
        }
        assert!("wadg".parse::<AblationMode>().is_err());
    }

    #[test]
    fn ablation_coefficients() {
        let mut c = TrainConfig::default();
        for (mode, ld, ls) in [
            (AblationMode::DeepAll, false, false),
            (AblationMode::NoLD, false, true),
            (AblationMode::NoLMS, true, false),
            (AblationMode::WadgAll, true, true),
        ] {
            c.mode = mode;
            let o = c.objective(0.5);
            assert_eq!(o.lambda_d != 0.0, ld, "{mode}");
            assert_eq!(o.lambda_s != 0.0, ls, "{mode}");
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        for c in [
            TrainConfig {
                learning_rate: 0.0,
                ..ok.clone()
            },
            TrainConfig {
                epochs: 0,
                ..ok.clone()
            },
            TrainConfig {
                critic_steps: 0,
                ..ok.clone()
            },
            TrainConfig {
                embed_layer: 3,
                ..ok.clone()
            },
        ] {
            assert!(c.validate().is_err());
        }
    }

    #[test]
    fn partial_json_uses_defaults() {
        let c: TrainConfig = serde_json::from_str(r#"{"epochs": 3, "mode": "no-ld"}"#).unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.mode, AblationMode::NoLD);
        assert_eq!(c.critic_steps, 5);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epoch": 3}"#).is_err());
    }

    #[test]
    fn architecture_follows_widths() {
        let a = TrainConfig::default().architecture(2, 3, 3).unwrap();
        assert_eq!(a.extractor.layer_widths, [2, 64, 64, 32]);
        assert_eq!(a.classifier.layer_widths, [32, 32, 32, 3]);
        assert_eq!(a.critic.layer_widths, [32, 64, 64, 1]);
    }
}
