//! Alternating min–max training: critic ascent steps followed by one joint
//! descent step on the extractor and classifier, per mini-batch.

mod ablation;
mod adam;
mod config;
mod metrics;

pub use ablation::{
    aggregate, run_ablation_suite, write_grid_csv, AblationPlan, GridCell, RunResult, GRID_HEADER,
};
pub use adam::{Adam, AdamParams};
pub use config::{AblationMode, TrainConfig};
pub use metrics::{read_metrics_jsonl, write_metrics_jsonl, MetricsRecord};

use std::path::Path;
use std::time::Instant;

use rand::Rng;

use crate::data::{DomainDataset, MixedBatch, MixedBatchSampler};
use crate::diffmath::{Tape, Tensor};
use crate::error::{Result, WadgError};
use crate::losses::{critic_objective, domain_groups, min_objective, LossBreakdown};
use crate::model::ModelBundle;
use crate::seed::{self, Stream};

/// Optimizer state for one run: one Adam over extractor + classifier, one
/// over all critics.
#[derive(Clone, Debug)]
pub struct Optimizers {
    pub joint: Adam,
    pub critic: Adam,
}

impl Optimizers {
    pub fn new(bundle: &ModelBundle, params: AdamParams) -> Self {
        Self {
            joint: Adam::new(params, &joint_params(bundle)),
            critic: Adam::new(params, &critic_params(bundle)),
        }
    }
}

fn joint_params(bundle: &ModelBundle) -> Vec<&Tensor> {
    let mut p = bundle.extractor.params();
    p.extend(bundle.classifier.params());
    p
}

fn critic_params(bundle: &ModelBundle) -> Vec<&Tensor> {
    bundle.critics.iter().flat_map(|c| c.params()).collect()
}

/// Result of one critic ascent step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriticReport {
    pub l_d: f64,
    pub gp: Option<f64>,
}

/// One Adam ascent step of every critic on `L_D − gp·penalty`, with the
/// features of `batch` computed by the current (frozen) extractor.
///
/// Returns `None`, leaving the critics untouched, when the batch does not
/// cover every source domain.
pub fn critic_step<R: Rng>(
    bundle: &mut ModelBundle,
    opt: &mut Adam,
    batch: &MixedBatch,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Option<CriticReport>> {
    let Some(groups) = domain_groups(&batch.domain_ids, bundle.arch.num_domains) else {
        log::warn!("critic step skipped: batch does not cover every source domain");
        return Ok(None);
    };
    let z = bundle.forward_features(&batch.features)?;
    let feats: Vec<Tensor> = groups.iter().map(|g| z.select_rows(g)).collect();
    critic_step_on_features(bundle, opt, &feats, cfg, rng).map(Some)
}

/// Critic ascent step on given per-domain feature sets.
pub fn critic_step_on_features<R: Rng>(
    bundle: &mut ModelBundle,
    opt: &mut Adam,
    features: &[Tensor],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<CriticReport> {
    let mut tape = Tape::new();
    let vars: Vec<_> = bundle
        .critics
        .iter()
        .map(|c| c.register(&mut tape))
        .collect();
    let obj = critic_objective(&mut tape, bundle, &vars, features, cfg.gp_coefficient, rng)?;
    let grads = tape.backward(obj.loss)?;
    let g: Vec<Tensor> = vars
        .iter()
        .flat_map(|v| v.all())
        .map(|v| grads.get_or_zeros(v, &tape))
        .collect();
    let params = bundle
        .critics
        .iter_mut()
        .flat_map(|c| c.params_mut())
        .collect();
    opt.step(params, &g, true)?;
    Ok(CriticReport {
        l_d: obj.l_d,
        gp: obj.gp,
    })
}

/// One Adam descent step of extractor and classifier on
/// `L_C + λ_d(p)·L_D + λ_s·L_MS` with the critics frozen.
pub fn joint_step(
    bundle: &mut ModelBundle,
    opt: &mut Adam,
    batch: &MixedBatch,
    progress: f64,
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(WadgError::Invalid("empty batch".into()));
    }
    let obj_cfg = cfg.objective(progress);
    let mut tape = Tape::new();
    let vars = bundle.register(&mut tape);
    let obj = min_objective(&mut tape, bundle, &vars, batch, &obj_cfg)?;
    let grads = tape.backward(obj.loss)?;
    let g: Vec<Tensor> = vars
        .extractor
        .all()
        .into_iter()
        .chain(vars.classifier.all())
        .map(|v| grads.get_or_zeros(v, &tape))
        .collect();
    let mut params = bundle.extractor.params_mut();
    params.extend(bundle.classifier.params_mut());
    opt.step(params, &g, false)?;
    for w in &obj.breakdown.warnings {
        log::debug!("{w}");
    }
    Ok(obj.breakdown)
}

/// Fraction of rows whose argmax prediction equals the label.
pub fn evaluate_accuracy(bundle: &ModelBundle, dataset: &DomainDataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(WadgError::Dataset {
            domain: dataset.domain_id.clone(),
            detail: "cannot evaluate on an empty dataset".into(),
        });
    }
    let pred = bundle.predict(&dataset.features)?;
    let hits = pred
        .iter()
        .zip(&dataset.labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok(hits as f64 / dataset.len() as f64)
}

/// Pooled accuracy over several datasets.
fn pooled_accuracy(bundle: &ModelBundle, sets: &[DomainDataset]) -> Result<f64> {
    let (mut hits, mut total) = (0.0, 0usize);
    for s in sets.iter().filter(|s| !s.is_empty()) {
        hits += evaluate_accuracy(bundle, s)? * s.len() as f64;
        total += s.len();
    }
    if total == 0 {
        return Err(WadgError::Config("no validation rows".into()));
    }
    Ok(hits / total as f64)
}

/// Output of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters after the last epoch run.
    pub final_bundle: ModelBundle,
    /// Parameters at the epoch with the best source-validation accuracy.
    pub best_bundle: ModelBundle,
    pub best_epoch: usize,
    pub records: Vec<MetricsRecord>,
    pub stopped_early: bool,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Number of classes implied by the labels (at least 2).
pub fn infer_num_classes(sets: &[DomainDataset]) -> usize {
    sets.iter()
        .flat_map(|s| s.labels.iter().copied())
        .max()
        .map_or(2, |m| (m + 1).max(2))
}

/// Trains a fresh bundle on `sources`.
///
/// Each source loses `val_fraction` of its rows to a validation set that
/// drives early stopping. `target` is only evaluated for the metrics stream
/// and never influences training or stopping.
pub fn train(
    sources: &[DomainDataset],
    target: Option<&DomainDataset>,
    num_classes: usize,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let min_sources = if cfg.mode.uses_adversarial() { 2 } else { 1 };
    if sources.len() < min_sources {
        return Err(WadgError::Config(format!(
            "{} mode needs at least {min_sources} source domains, got {}",
            cfg.mode,
            sources.len()
        )));
    }
    let width = sources[0].num_features();
    if let Some(bad) = sources
        .iter()
        .chain(target)
        .find(|s| s.num_features() != width)
    {
        return Err(WadgError::Dataset {
            domain: bad.domain_id.clone(),
            detail: format!("{} features, expected {width}", bad.num_features()),
        });
    }

    let (train_sets, val_sets): (Vec<_>, Vec<_>) = sources
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let mut rng = seed::rng_indexed(cfg.seed, Stream::Split, k as u64);
            s.split_validation(cfg.val_fraction, &mut rng)
        })
        .unzip();
    let val_sets = if cfg.val_fraction > 0.0 {
        val_sets
    } else {
        train_sets.clone()
    };

    let arch = cfg.architecture(width, num_classes, sources.len())?;
    let mut bundle = ModelBundle::init(arch, cfg.seed)?;
    let mut opt = Optimizers::new(&bundle, cfg.adam());
    let mut sampler = MixedBatchSampler::new(&train_sets, cfg.per_domain_batch)?;
    let mut batch_rng = seed::rng(cfg.seed, Stream::Batches);
    let mut interp_rng = seed::rng(cfg.seed, Stream::Interpolation);

    let start = Instant::now();
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best = (f64::NEG_INFINITY, 0usize, bundle.clone());
    let mut stopped_early = false;
    for epoch in 0..cfg.epochs {
        let progress = epoch as f64 / cfg.epochs as f64;
        let (mut l_c, mut l_d, mut l_ms, mut gp) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        sampler.start_epoch(&mut batch_rng);
        while let Some(batch) = sampler.next_batch(&train_sets) {
            if cfg.mode.uses_adversarial() {
                for _ in 0..cfg.critic_steps {
                    if let Some(r) =
                        critic_step(&mut bundle, &mut opt.critic, &batch, cfg, &mut interp_rng)?
                    {
                        gp.extend(r.gp);
                    }
                }
            }
            let b = joint_step(&mut bundle, &mut opt.joint, &batch, progress, cfg)?;
            l_c.push(b.l_c);
            l_d.extend(b.l_d);
            l_ms.extend(b.l_ms);
        }
        let source_val_acc = pooled_accuracy(&bundle, &val_sets)?;
        let target_acc = target.map(|t| evaluate_accuracy(&bundle, t)).transpose()?;
        let rec = MetricsRecord {
            epoch,
            l_c: mean(&l_c).unwrap_or(f64::NAN),
            l_d: mean(&l_d),
            l_ms: mean(&l_ms),
            gp: mean(&gp),
            source_val_acc,
            target_acc,
            lambda_d: cfg.objective(progress).lambda_d,
            wall_clock_s: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: l_c {:.4} val {:.3} target {:?}",
            rec.l_c,
            rec.source_val_acc,
            rec.target_acc
        );
        if !rec.l_c.is_finite() {
            return Err(WadgError::Domain {
                op: "train",
                detail: format!("classification loss diverged at epoch {epoch}"),
            });
        }
        records.push(rec);
        if source_val_acc > best.0 {
            best = (source_val_acc, epoch, bundle.clone());
        }
        if epoch - best.1 >= cfg.patience && epoch + 1 < cfg.epochs {
            stopped_early = true;
            break;
        }
    }
    Ok(TrainOutcome {
        final_bundle: bundle,
        best_bundle: best.2,
        best_epoch: best.1,
        records,
        stopped_early,
    })
}

/// Writes `domain_id,label,e0,…` for every row of every dataset.
pub fn dump_embeddings(
    bundle: &ModelBundle,
    datasets: &[DomainDataset],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let width = bundle.arch.embedding_width();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["domain_id".to_string(), "label".to_string()];
    header.extend((0..width).map(|k| format!("e{k}")));
    w.write_record(&header)?;
    for d in datasets {
        if d.num_features() != bundle.arch.extractor.input_width() {
            return Err(WadgError::ShapeMismatch {
                op: "dump_embeddings",
                left: vec![bundle.arch.extractor.input_width()],
                right: vec![d.num_features()],
            });
        }
        let e = bundle.embed(&d.features)?;
        for r in 0..d.len() {
            let mut rec = vec![d.domain_id.clone(), d.labels[r].to_string()];
            rec.extend(e.row(r).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| WadgError::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests;
