//! Feature extractor, classifier and critic networks.

mod checkpoint;
mod mlp;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT};
pub use mlp::{Activation, Linear, Mlp, MlpSpec, MlpTrace, MlpVars};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffmath::{Tape, Tensor, Var};
use crate::error::{Result, WadgError};
use crate::seed::{self, Stream};

/// Row-norm floor used when normalizing embeddings.
pub const NORM_EPS: f64 = 1e-20;

/// How critics are assigned to source-domain pairs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriticMode {
    /// One scalar critic per unordered pair of source domains.
    #[default]
    PerPair,
    /// A single critic shared by every pair.
    Shared,
}

/// Unordered domain pairs `(i, j)`, `i < j`, in lexicographic order.
pub fn domain_pairs(num_domains: usize) -> Vec<(usize, usize)> {
    (0..num_domains)
        .flat_map(|i| (i + 1..num_domains).map(move |j| (i, j)))
        .collect()
}

/// Architecture of a [`ModelBundle`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub extractor: MlpSpec,
    pub classifier: MlpSpec,
    pub critic: MlpSpec,
    /// 1-based index of the classifier hidden layer used as embedding.
    pub embed_layer: usize,
    pub critic_mode: CriticMode,
    /// Number of source domains the critics are laid out for.
    pub num_domains: usize,
}

impl Architecture {
    /// Small defaults: extractor `n→64→64→32`, classifier `32→32→32→K`
    /// embedding at hidden layer 2, critic `32→64→64→1`.
    pub fn desk_default(input_width: usize, num_classes: usize, num_domains: usize) -> Self {
        Self {
            extractor: MlpSpec::new(vec![input_width, 64, 64, 32]).expect("valid"),
            classifier: MlpSpec::new(vec![32, 32, 32, num_classes]).expect("valid"),
            critic: MlpSpec::new(vec![32, 64, 64, 1]).expect("valid"),
            embed_layer: 2,
            critic_mode: CriticMode::PerPair,
            num_domains,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.extractor.validate()?;
        self.classifier.validate()?;
        self.critic.validate()?;
        let d = self.extractor.output_width();
        if self.classifier.input_width() != d || self.critic.input_width() != d {
            return Err(WadgError::Config(format!(
                "classifier/critic input widths ({}, {}) must equal feature width {d}",
                self.classifier.input_width(),
                self.critic.input_width()
            )));
        }
        if self.critic.output_width() != 1 {
            return Err(WadgError::Config("critic must have a scalar output".into()));
        }
        if self.embed_layer == 0 || self.embed_layer > self.classifier.num_hidden() {
            return Err(WadgError::Config(format!(
                "embed_layer {} is not a hidden layer of a classifier with {} hidden layers",
                self.embed_layer,
                self.classifier.num_hidden()
            )));
        }
        Ok(())
    }

    pub fn num_critics(&self) -> usize {
        match self.critic_mode {
            CriticMode::PerPair => domain_pairs(self.num_domains).len().max(1),
            CriticMode::Shared => 1,
        }
    }

    pub fn embedding_width(&self) -> usize {
        self.classifier.layer_widths[self.embed_layer]
    }
}

/// Parameters of all three networks.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub arch: Architecture,
    pub extractor: Mlp,
    pub classifier: Mlp,
    pub critics: Vec<Mlp>,
}

/// Tape handles for every parameter of a [`ModelBundle`].
#[derive(Clone, Debug)]
pub struct BundleVars {
    pub extractor: MlpVars,
    pub classifier: MlpVars,
    pub critics: Vec<MlpVars>,
}

/// Traced classifier outputs.
#[derive(Clone, Debug)]
pub struct LogitsTrace {
    pub logits: Var,
    /// L2-normalized embedding rows.
    pub embeddings: Var,
}

impl ModelBundle {
    /// Initializes every network from one seed via the per-component streams.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let extractor = Mlp::init(
            arch.extractor.clone(),
            &mut seed::rng(seed, Stream::Extractor),
        )?;
        let classifier = Mlp::init(
            arch.classifier.clone(),
            &mut seed::rng(seed, Stream::Classifier),
        )?;
        let critics = (0..arch.num_critics())
            .map(|k| {
                Mlp::init(
                    arch.critic.clone(),
                    &mut seed::rng_indexed(seed, Stream::Critic, k as u64),
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            arch,
            extractor,
            classifier,
            critics,
        })
    }

    pub fn init_with<R: Rng>(arch: Architecture, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let extractor = Mlp::init(arch.extractor.clone(), rng)?;
        let classifier = Mlp::init(arch.classifier.clone(), rng)?;
        let critics = (0..arch.num_critics())
            .map(|_| Mlp::init(arch.critic.clone(), rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            arch,
            extractor,
            classifier,
            critics,
        })
    }

    pub fn register(&self, tape: &mut Tape) -> BundleVars {
        BundleVars {
            extractor: self.extractor.register(tape),
            classifier: self.classifier.register(tape),
            critics: self.critics.iter().map(|c| c.register(tape)).collect(),
        }
    }

    /// Index into `critics` for domain pair `pair_id` (an index into
    /// [`domain_pairs`]).
    pub fn critic_index(&self, pair_id: Option<usize>) -> Result<usize> {
        match self.arch.critic_mode {
            CriticMode::Shared => Ok(0),
            CriticMode::PerPair => {
                let id = pair_id.ok_or_else(|| {
                    WadgError::Invalid("per-pair critic mode requires a pair id".into())
                })?;
                if id >= self.critics.len() {
                    return Err(WadgError::Invalid(format!(
                        "pair id {id} out of range for {} critics",
                        self.critics.len()
                    )));
                }
                Ok(id)
            }
        }
    }

    pub fn critic(&self, pair_id: Option<usize>) -> Result<&Mlp> {
        Ok(&self.critics[self.critic_index(pair_id)?])
    }

    /// `Z = F(X)`.
    pub fn forward_features(&self, x: &Tensor) -> Result<Tensor> {
        self.extractor.apply(x)
    }

    /// Logits and normalized embeddings for features `z`.
    pub fn forward_logits(&self, z: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::untraced();
        let vars = self.classifier.register(&mut tape);
        let zv = tape.leaf(z.clone());
        let tr = self.trace_logits(&mut tape, &vars, zv)?;
        Ok((
            tape.value(tr.logits).clone(),
            tape.value(tr.embeddings).clone(),
        ))
    }

    /// Critic scores `[B×1]` for features `z`.
    pub fn forward_critic(&self, z: &Tensor, pair_id: Option<usize>) -> Result<Tensor> {
        self.critic(pair_id)?.apply(z)
    }

    /// Traced classifier pass on features `z`.
    pub fn trace_logits(&self, tape: &mut Tape, vars: &MlpVars, z: Var) -> Result<LogitsTrace> {
        let tr = self.classifier.forward(tape, vars, z)?;
        let hidden = tr.hidden[self.arch.embed_layer - 1];
        let embeddings = normalize_rows(tape, hidden)?;
        Ok(LogitsTrace {
            logits: tr.output,
            embeddings,
        })
    }

    /// Argmax class prediction per input row.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let z = self.forward_features(x)?;
        let logits = self.classifier.apply(&z)?;
        Ok((0..logits.rows()).map(|i| argmax(logits.row(i))).collect())
    }

    /// Embeddings for raw inputs.
    pub fn embed(&self, x: &Tensor) -> Result<Tensor> {
        let z = self.forward_features(x)?;
        Ok(self.forward_logits(&z)?.1)
    }
}

/// Row-wise L2 normalization on the tape.
pub fn normalize_rows(tape: &mut Tape, h: Var) -> Result<Var> {
    let sq = tape.mul(h, h)?;
    let ss = tape.sum_rows(sq)?;
    let ss = tape.add_scalar(ss, NORM_EPS)?;
    let norm = tape.sqrt(ss)?;
    tape.div_col(h, norm)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
