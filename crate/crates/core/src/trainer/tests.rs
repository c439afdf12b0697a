use super::*;
use crate::data::{gen_rotated_moons, sample_mixed_batch};
use crate::losses::{classification_loss, lambda_d_schedule, total_objective};
use crate::model::Mlp;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn moons() -> Vec<DomainDataset> {
    gen_rotated_moons(&[0.0, 15.0, 30.0, 45.0], 120, 0.1, 11).unwrap()
}

fn small_config(mode: AblationMode) -> TrainConfig {
    TrainConfig {
        epochs: 4,
        per_domain_batch: 16,
        extractor_widths: vec![16, 8],
        classifier_hidden: vec![8, 8],
        critic_hidden: vec![16],
        critic_steps: 2,
        learning_rate: 1e-3,
        mode,
        seed: 3,
        ..TrainConfig::default()
    }
}

fn setup(mode: AblationMode) -> (ModelBundle, Optimizers, MixedBatch, TrainConfig) {
    let cfg = small_config(mode);
    let data = moons();
    let arch = cfg.architecture(2, 2, 3).unwrap();
    let bundle = ModelBundle::init(arch, 5).unwrap();
    let opt = Optimizers::new(&bundle, cfg.adam());
    let batch = sample_mixed_batch(&data[..3], 8, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    (bundle, opt, batch, cfg)
}

fn bits(m: &Mlp) -> Vec<u64> {
    m.params()
        .iter()
        .flat_map(|t| t.data().iter().map(|v| v.to_bits()))
        .collect()
}

fn critic_bits(b: &ModelBundle) -> Vec<Vec<u64>> {
    b.critics.iter().map(bits).collect()
}

#[test]
fn critic_step_only_moves_critics() {
    let (mut b, mut opt, batch, cfg) = setup(AblationMode::WadgAll);
    let before = b.clone();
    let r = critic_step(
        &mut b,
        &mut opt.critic,
        &batch,
        &cfg,
        &mut ChaCha8Rng::seed_from_u64(2),
    )
    .unwrap()
    .unwrap();
    assert!(r.gp.is_some());
    assert_eq!(bits(&b.extractor), bits(&before.extractor));
    assert_eq!(bits(&b.classifier), bits(&before.classifier));
    assert_ne!(critic_bits(&b), critic_bits(&before));
}

#[test]
fn joint_step_never_moves_critics() {
    let (mut b, mut opt, batch, cfg) = setup(AblationMode::WadgAll);
    let before = b.clone();
    joint_step(&mut b, &mut opt.joint, &batch, 0.7, &cfg).unwrap();
    assert_eq!(critic_bits(&b), critic_bits(&before));
    assert_ne!(bits(&b.extractor), bits(&before.extractor));
}

#[test]
fn critic_step_on_single_domain_batch_is_a_no_op() {
    let (mut b, mut opt, mut batch, cfg) = setup(AblationMode::WadgAll);
    batch.domain_ids.iter_mut().for_each(|d| *d = 0);
    let before = b.clone();
    let r = critic_step(
        &mut b,
        &mut opt.critic,
        &batch,
        &cfg,
        &mut ChaCha8Rng::seed_from_u64(2),
    );
    assert!(r.unwrap().is_none());
    assert_eq!(b, before);
    assert_eq!(opt.critic.steps(), 0);
}

#[test]
fn zero_learning_rate_critic_step_is_bit_exact() {
    let (mut b, _, batch, mut cfg) = setup(AblationMode::WadgAll);
    cfg.learning_rate = 0.0;
    let mut opt = Optimizers::new(&b, cfg.adam());
    let before = b.clone();
    critic_step(
        &mut b,
        &mut opt.critic,
        &batch,
        &cfg,
        &mut ChaCha8Rng::seed_from_u64(2),
    )
    .unwrap();
    assert_eq!(critic_bits(&b), critic_bits(&before));
}

/// A DeepAll step equals a step on the classification loss alone, and a
/// WadgAll step at p = 0 with λ_s = 0 equals it too.
#[test]
fn deep_all_step_is_a_pure_classification_step() {
    let (b0, _, batch, cfg) = setup(AblationMode::DeepAll);

    let reference = {
        let mut b = b0.clone();
        let mut opt = Optimizers::new(&b, cfg.adam());
        let mut tape = Tape::new();
        let vars = b.register(&mut tape);
        let x = tape.leaf(batch.features.clone());
        let z = b
            .extractor
            .forward(&mut tape, &vars.extractor, x)
            .unwrap()
            .output;
        let lt = b.trace_logits(&mut tape, &vars.classifier, z).unwrap();
        let loss =
            crate::losses::trace_classification_loss(&mut tape, lt.logits, &batch.labels).unwrap();
        let grads = tape.backward(loss).unwrap();
        let g: Vec<Tensor> = vars
            .extractor
            .all()
            .into_iter()
            .chain(vars.classifier.all())
            .map(|v| grads.get_or_zeros(v, &tape))
            .collect();
        let mut params = b.extractor.params_mut();
        params.extend(b.classifier.params_mut());
        opt.joint.step(params, &g, false).unwrap();
        b
    };

    let mut b = b0.clone();
    let mut opt = Optimizers::new(&b, cfg.adam());
    let rep = joint_step(&mut b, &mut opt.joint, &batch, 0.5, &cfg).unwrap();
    assert_eq!(rep.l_d, None);
    assert_eq!(rep.l_ms, None);
    assert_eq!(bits(&b.extractor), bits(&reference.extractor));
    assert_eq!(bits(&b.classifier), bits(&reference.classifier));

    let wadg = TrainConfig {
        mode: AblationMode::WadgAll,
        lambda_s: 0.0,
        ..cfg
    };
    let mut b = b0.clone();
    let mut opt = Optimizers::new(&b, wadg.adam());
    let rep = joint_step(&mut b, &mut opt.joint, &batch, 0.0, &wadg).unwrap();
    assert!(rep.l_d.is_some());
    assert_eq!(bits(&b.extractor), bits(&reference.extractor));
    assert_eq!(bits(&b.classifier), bits(&reference.classifier));
}

#[test]
fn small_joint_step_decreases_the_objective() {
    let (mut b, _, batch, mut cfg) = setup(AblationMode::WadgAll);
    cfg.learning_rate = 1e-4;
    cfg.lambda_s = 0.1;
    let mut opt = Optimizers::new(&b, cfg.adam());
    let obj_cfg = cfg.objective(0.5);
    let eval = |b: &ModelBundle| {
        total_objective(b, &batch, &obj_cfg, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap()
            .min_scalar
    };
    let before = eval(&b);
    joint_step(&mut b, &mut opt.joint, &batch, 0.5, &cfg).unwrap();
    assert!(eval(&b) < before);
}

#[test]
fn training_is_deterministic() {
    let data = moons();
    let cfg = small_config(AblationMode::WadgAll);
    let a = train(&data[..3], Some(&data[3]), 2, &cfg).unwrap();
    let b = train(&data[..3], Some(&data[3]), 2, &cfg).unwrap();
    let strip = |r: &[MetricsRecord]| {
        r.iter()
            .map(MetricsRecord::without_timing)
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&a.records), strip(&b.records));
    assert_eq!(a.final_bundle, b.final_bundle);
    let c = train(
        &data[..3],
        Some(&data[3]),
        2,
        &TrainConfig { seed: 4, ..cfg },
    )
    .unwrap();
    assert_ne!(strip(&a.records), strip(&c.records));
}

#[test]
fn lambda_trace_follows_the_schedule() {
    let data = moons();
    let cfg = small_config(AblationMode::NoLMS);
    let out = train(&data[..3], None, 2, &cfg).unwrap();
    assert_eq!(out.records[0].lambda_d, 0.0);
    for w in out.records.windows(2) {
        assert!(w[1].lambda_d > w[0].lambda_d);
    }
    for r in &out.records {
        let want = lambda_d_schedule(r.epoch as f64 / cfg.epochs as f64, cfg.delta);
        assert!((r.lambda_d - want).abs() < 1e-12);
        assert!(r.l_d.is_some() && r.gp.is_some() && r.l_ms.is_none());
        assert!(r.target_acc.is_none());
    }
}

#[test]
fn no_ld_never_touches_critics() {
    let data = moons();
    let cfg = small_config(AblationMode::NoLD);
    let out = train(&data[..3], None, 2, &cfg).unwrap();
    let init = ModelBundle::init(out.final_bundle.arch.clone(), cfg.seed).unwrap();
    assert_eq!(critic_bits(&out.final_bundle), critic_bits(&init));
    assert!(out
        .records
        .iter()
        .all(|r| r.l_d.is_none() && r.gp.is_none() && r.l_ms.is_some()));
}

#[test]
fn early_stopping_respects_patience() {
    let data = moons();
    let cfg = TrainConfig {
        epochs: 60,
        patience: 2,
        ..small_config(AblationMode::DeepAll)
    };
    let out = train(&data[..3], None, 2, &cfg).unwrap();
    let last = out.records.last().unwrap().epoch;
    assert!(last <= out.best_epoch + cfg.patience);
    if out.stopped_early {
        assert_eq!(last, out.best_epoch + cfg.patience);
    }
}

#[test]
fn too_few_sources_is_a_config_error() {
    let data = moons();
    let err = train(&data[..1], None, 2, &small_config(AblationMode::WadgAll)).unwrap_err();
    assert!(err.is_usage());
    assert!(train(&data[..1], None, 2, &small_config(AblationMode::DeepAll)).is_ok());
}

#[test]
fn zero_classifier_scores_chance_on_balanced_data() {
    let data = moons();
    let cfg = small_config(AblationMode::DeepAll);
    let arch = cfg.architecture(2, 2, 3).unwrap();
    let mut b = ModelBundle::init(arch.clone(), 0).unwrap();
    b.classifier = Mlp::zeros(arch.classifier).unwrap();
    // all-zero logits → argmax picks class 0 for every row
    assert_eq!(evaluate_accuracy(&b, &data[0]).unwrap(), 0.5);
    let mut flipped = data[0].clone();
    flipped.labels.iter_mut().for_each(|y| *y += 2);
    assert_eq!(evaluate_accuracy(&b, &flipped).unwrap(), 0.0);
}

#[test]
fn trained_model_fits_its_sources() {
    let data = moons();
    let cfg = TrainConfig {
        epochs: 60,
        learning_rate: 5e-3,
        ..small_config(AblationMode::DeepAll)
    };
    let out = train(&data[..3], None, 2, &cfg).unwrap();
    let acc = evaluate_accuracy(&out.best_bundle, &data[0]).unwrap();
    assert!(acc > 0.9, "{acc}");
    let l0 = classification_loss(
        &out.best_bundle
            .classifier
            .apply(&out.best_bundle.forward_features(&data[0].features).unwrap())
            .unwrap(),
        &data[0].labels,
    )
    .unwrap();
    assert!(l0 < 0.4, "{l0}");
}

#[test]
fn embeddings_csv_has_unit_rows() {
    let data = moons();
    let cfg = small_config(AblationMode::DeepAll);
    let b = ModelBundle::init(cfg.architecture(2, 2, 3).unwrap(), 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("emb.csv");
    dump_embeddings(&b, &data, &p).unwrap();
    let mut r = csv::Reader::from_path(&p).unwrap();
    let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(
        header,
        [
            "domain_id",
            "label",
            "e0",
            "e1",
            "e2",
            "e3",
            "e4",
            "e5",
            "e6",
            "e7"
        ]
    );
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec.unwrap();
        let e: Vec<f64> = rec.iter().skip(2).map(|v| v.parse().unwrap()).collect();
        let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        // an all-dead ReLU layer gives a zero row; otherwise unit norm
        assert!((norm - 1.0).abs() < 1e-6 || norm == 0.0, "{norm}");
        rows += 1;
    }
    assert_eq!(rows, data.iter().map(DomainDataset::len).sum::<usize>());
    let first = std::fs::read(&p).unwrap();
    dump_embeddings(&b, &data, &p).unwrap();
    assert_eq!(std::fs::read(&p).unwrap(), first);
}
