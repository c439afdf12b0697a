use std::path::Path;

use anyhow::Context;
use wadg_core::data::{load_dataset, save_dataset, split_leave_one_out, GeneratorParams};
use wadg_core::model::{load_checkpoint, save_checkpoint};
use wadg_core::trainer::{
    self, evaluate_accuracy, run_ablation_suite, write_metrics_jsonl, AblationMode, AblationPlan,
};
use wadg_core::WadgError;

use super::{AblateArgs, Benchmark, DumpArgs, GenerateArgs, TrainArgs};

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn parse_shifts(s: &str) -> Result<Vec<Vec<f64>>, WadgError> {
    s.split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            p.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| WadgError::Config(format!("bad shift component `{v}`")))
                })
                .collect()
        })
        .collect()
}

pub fn generate(a: GenerateArgs) -> anyhow::Result<()> {
    let generator = match a.benchmark {
        Benchmark::RotatedMoons => GeneratorParams::RotatedMoons {
            angles: a.angles,
            samples_per_domain: a.n,
            noise_sd: a.noise,
        },
        Benchmark::ShiftedBlobs => GeneratorParams::ShiftedBlobs {
            domain_shifts: parse_shifts(a.shifts.as_deref().unwrap_or_default())?,
            num_classes: a.classes,
            samples_per_domain: a.n,
            blob_sd: a.blob_sd,
        },
    };
    let datasets = generator.generate(a.seed)?;
    let manifest = save_dataset(&a.out, &generator, a.seed, &datasets)?;
    println!("{}", manifest.display());
    Ok(())
}

pub fn train(a: TrainArgs) -> anyhow::Result<()> {
    let cfg = a.overrides.resolve(a.mode)?;
    let (manifest, datasets) = load_dataset(&a.manifest)?;
    let (sources, target) = split_leave_one_out(&datasets, &a.target)?;
    create_dir(&a.out)?;
    let snapshot = a.out.join("config.json");
    std::fs::write(&snapshot, serde_json::to_string_pretty(&cfg)? + "\n")
        .with_context(|| format!("writing {}", snapshot.display()))?;

    let out = trainer::train(&sources, Some(&target), manifest.k, &cfg)?;
    write_metrics_jsonl(a.out.join("metrics.jsonl"), &out.records)?;
    save_checkpoint(&out.final_bundle, a.out.join("checkpoint.json"))?;
    save_checkpoint(&out.best_bundle, a.out.join("checkpoint-best.json"))?;

    let final_acc = evaluate_accuracy(&out.final_bundle, &target)?;
    let best_acc = evaluate_accuracy(&out.best_bundle, &target)?;
    println!(
        "{} {}: target accuracy {final_acc:.4} (best checkpoint, epoch {}: {best_acc:.4}), {} epochs",
        a.target,
        cfg.mode,
        out.best_epoch,
        out.records.len()
    );
    Ok(())
}

pub fn ablate(a: AblateArgs) -> anyhow::Result<()> {
    let cfg = a.overrides.resolve(None)?;
    let (manifest, datasets) = load_dataset(&a.manifest)?;
    if a.seeds == 0 {
        return Err(WadgError::Config("--seeds must be at least 1".into()).into());
    }
    let plan = AblationPlan {
        targets: a.targets,
        modes: if a.modes.is_empty() {
            AblationMode::ALL.to_vec()
        } else {
            a.modes
        },
        seeds: (0..a.seeds as u64).map(|k| cfg.seed + k).collect(),
    };
    let (grid, runs) = run_ablation_suite(&datasets, manifest.k, &cfg, &plan, Some(&a.out))?;
    println!(
        "{} runs, grid in {}",
        runs.len(),
        a.out.join("grid.csv").display()
    );
    for c in &grid {
        println!(
            "{:<10} {:<9} {:.4} ± {:.4} (n={})",
            c.target,
            c.mode.as_str(),
            c.mean_acc,
            c.sd_acc,
            c.n_seeds
        );
    }
    Ok(())
}

pub fn dump_embeddings(a: DumpArgs) -> anyhow::Result<()> {
    let bundle = load_checkpoint(&a.checkpoint)?;
    let (_, datasets) = load_dataset(&a.manifest)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    trainer::dump_embeddings(&bundle, &datasets, &a.out)?;
    println!("{}", a.out.display());
    Ok(())
}
