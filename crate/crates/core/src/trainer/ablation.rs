//! Leave-one-domain-out ablation grid: every (target, mode, seed) cell is an
//! independent training run.
//!
//! With an output directory, each finished run is appended to `runs.jsonl`
//! as soon as it completes, and a rerun over the same directory skips the
//! runs already recorded there. `grid.csv` aggregates the runs per
//! (target, mode).

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::append_jsonl;
use super::{evaluate_accuracy, train, AblationMode, TrainConfig};
use crate::data::{split_leave_one_out, DomainDataset};
use crate::error::{Result, WadgError};

pub const GRID_HEADER: [&str; 5] = ["target", "mode", "mean_acc", "sd_acc", "n_seeds"];

const RUNS_FILE: &str = "runs.jsonl";
const GRID_FILE: &str = "grid.csv";
const CONFIG_FILE: &str = "config.json";

/// Which cells to run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationPlan {
    /// Held-out domains; all domains when empty.
    pub targets: Vec<String>,
    pub modes: Vec<AblationMode>,
    /// Per-run seeds, each replacing the config's seed.
    pub seeds: Vec<u64>,
}

impl AblationPlan {
    /// All targets and modes with seeds `base, base + 1, …`.
    pub fn full(n_seeds: usize, base_seed: u64) -> Self {
        Self {
            targets: Vec::new(),
            modes: AblationMode::ALL.to_vec(),
            seeds: (0..n_seeds as u64).map(|k| base_seed + k).collect(),
        }
    }
}

/// Outcome of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub target: String,
    pub mode: AblationMode,
    pub seed: u64,
    /// Target accuracy after the last epoch run; this is what the grid
    /// aggregates.
    pub target_acc: f64,
    /// Target accuracy of the checkpoint with the best source-validation
    /// accuracy.
    pub best_target_acc: f64,
    pub best_source_val_acc: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

/// Mean ± sample standard deviation of target accuracy over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub target: String,
    pub mode: AblationMode,
    pub mean_acc: f64,
    pub sd_acc: f64,
    pub n_seeds: usize,
}

fn run_one(
    datasets: &[DomainDataset],
    num_classes: usize,
    cfg: &TrainConfig,
    target: &str,
    mode: AblationMode,
    seed: u64,
) -> Result<RunResult> {
    let (sources, tgt) = split_leave_one_out(datasets, target)?;
    let cfg = TrainConfig {
        mode,
        seed,
        ..cfg.clone()
    };
    let out = train(&sources, None, num_classes, &cfg)?;
    let run = RunResult {
        target: target.to_string(),
        mode,
        seed,
        target_acc: evaluate_accuracy(&out.final_bundle, &tgt)?,
        best_target_acc: evaluate_accuracy(&out.best_bundle, &tgt)?,
        best_source_val_acc: out.records[out.best_epoch].source_val_acc,
        best_epoch: out.best_epoch,
        epochs_run: out.records.len(),
    };
    log::info!(
        "{target} {mode} seed {seed}: target acc {:.4} (best checkpoint {:.4})",
        run.target_acc,
        run.best_target_acc
    );
    Ok(run)
}

/// Aggregates runs per (target, mode), ordered as in `targets` × `modes`.
pub fn aggregate(runs: &[RunResult], targets: &[String], modes: &[AblationMode]) -> Vec<GridCell> {
    let mut cells = Vec::new();
    for t in targets {
        for &m in modes {
            let accs: Vec<f64> = runs
                .iter()
                .filter(|r| &r.target == t && r.mode == m)
                .map(|r| r.target_acc)
                .collect();
            if accs.is_empty() {
                continue;
            }
            let n = accs.len() as f64;
            let mean = accs.iter().sum::<f64>() / n;
            let sd = if accs.len() > 1 {
                (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            cells.push(GridCell {
                target: t.clone(),
                mode: m,
                mean_acc: mean,
                sd_acc: sd,
                n_seeds: accs.len(),
            });
        }
    }
    cells
}

pub fn write_grid_csv(path: &Path, cells: &[GridCell]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(GRID_HEADER)?;
    for c in cells {
        w.write_record([
            c.target.clone(),
            c.mode.to_string(),
            c.mean_acc.to_string(),
            c.sd_acc.to_string(),
            c.n_seeds.to_string(),
        ])?;
    }
    w.flush().map_err(|e| WadgError::io(path, e))
}

/// Previously recorded runs; a torn final line from an interrupted write is
/// dropped.
fn load_runs(path: &Path) -> Result<Vec<RunResult>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path).map_err(|e| WadgError::io(path, e))?;
    let mut runs = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        match serde_json::from_str(line) {
            Ok(r) => runs.push(r),
            Err(e) => log::warn!("{}: ignoring unreadable line: {e}", path.display()),
        }
    }
    Ok(runs)
}

/// Runs every pending cell of `plan` in parallel and returns the grid and
/// all runs (recorded and new).
pub fn run_ablation_suite(
    datasets: &[DomainDataset],
    num_classes: usize,
    cfg: &TrainConfig,
    plan: &AblationPlan,
    out_dir: Option<&Path>,
) -> Result<(Vec<GridCell>, Vec<RunResult>)> {
    cfg.validate()?;
    if plan.seeds.is_empty() || plan.modes.is_empty() {
        return Err(WadgError::Config(
            "ablation needs at least one seed and one mode".into(),
        ));
    }
    if datasets.len() < 3 {
        return Err(WadgError::Config(format!(
            "ablation needs at least 3 domains, got {}",
            datasets.len()
        )));
    }
    let targets: Vec<String> = if plan.targets.is_empty() {
        datasets.iter().map(|d| d.domain_id.clone()).collect()
    } else {
        plan.targets.clone()
    };
    for t in &targets {
        if !datasets.iter().any(|d| &d.domain_id == t) {
            return Err(WadgError::UnknownDomain(t.clone()));
        }
    }

    let mut done = Vec::new();
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| WadgError::io(dir, e))?;
        let cfg_path = dir.join(CONFIG_FILE);
        let snapshot = serde_json::to_string_pretty(cfg)? + "\n";
        if cfg_path.exists() {
            let old =
                std::fs::read_to_string(&cfg_path).map_err(|e| WadgError::io(&cfg_path, e))?;
            let old: TrainConfig = serde_json::from_str(&old)?;
            if &old != cfg {
                return Err(WadgError::Config(format!(
                    "{} holds runs of a different configuration",
                    dir.display()
                )));
            }
        } else {
            std::fs::write(&cfg_path, snapshot).map_err(|e| WadgError::io(&cfg_path, e))?;
        }
        let runs_path = dir.join(RUNS_FILE);
        done = load_runs(&runs_path)?;
        if runs_path.exists() {
            // rewrite so that appends never follow a torn line
            let mut text = String::new();
            for r in &done {
                text.push_str(&serde_json::to_string(r)?);
                text.push('\n');
            }
            std::fs::write(&runs_path, text).map_err(|e| WadgError::io(&runs_path, e))?;
        }
    }

    let finished: BTreeSet<(String, AblationMode, u64)> = done
        .iter()
        .map(|r| (r.target.clone(), r.mode, r.seed))
        .collect();
    let pending: Vec<(String, AblationMode, u64)> = targets
        .iter()
        .flat_map(|t| {
            plan.modes
                .iter()
                .flat_map(move |&m| plan.seeds.iter().map(move |&s| (t.clone(), m, s)))
        })
        .filter(|job| !finished.contains(job))
        .collect();
    log::info!("{} runs recorded, {} pending", done.len(), pending.len());

    let sink = Mutex::new(done);
    let runs_path = out_dir.map(|d| d.join(RUNS_FILE));
    let outcome: Result<()> = pending.par_iter().try_for_each(|(t, m, s)| {
        let run = run_one(datasets, num_classes, cfg, t, *m, *s)?;
        let mut sink = sink.lock().expect("poisoned");
        if let Some(p) = &runs_path {
            append_jsonl(p, &run)?;
        }
        sink.push(run);
        Ok(())
    });

    let mut runs = sink.into_inner().expect("poisoned");
    let key = |r: &RunResult| (targets.iter().position(|t| t == &r.target), r.mode, r.seed);
    runs.sort_by_key(key);
    let grid = aggregate(&runs, &targets, &plan.modes);
    if let Some(dir) = out_dir {
        write_grid_csv(&dir.join(GRID_FILE), &grid)?;
    }
    outcome?;
    Ok((grid, runs))
}
