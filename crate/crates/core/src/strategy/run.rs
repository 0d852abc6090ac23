use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::plan::{Corpora, ExperimentPlan, ResolvedPlan};
use super::train::{evaluate, fine_tune, pretrain, verify_isolation, Corpus, Trace, TrainedModel};
use crate::combination::{combine, CombinationSpec, Registry};
use crate::data::{InputLayout, Role, Windows};
use crate::error::{Error, Result};
use crate::evaluation::{attach_baselines, EvaluationReport, MetricSet};
use crate::models::{checkpoint, Forecaster};

pub const RUNS_DIR: &str = "runs";

/// Contents of `metrics.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub plan_hash: String,
    pub label: String,
    pub seed: u64,
    pub metrics: MetricSet,
    pub best_val_loss: f64,
    pub epochs_run: usize,
    pub trained: bool,
    pub trace_rows: usize,
    pub plan: ExperimentPlan,
}

#[derive(Clone, Debug)]
pub struct SeedOutcome {
    pub record: MetricsRecord,
    /// True when finished artifacts were found and nothing was recomputed.
    pub skipped: bool,
}

/// Trained model, training trace and test metrics of one seed, without artifacts.
#[derive(Clone, Debug)]
pub struct SeedResult {
    pub model: TrainedModel,
    pub trace: Trace,
    pub metrics: MetricSet,
}

pub fn seed_dir(out_root: &Path, hash: &str, seed: u64) -> PathBuf {
    out_root.join(RUNS_DIR).join(hash).join(seed.to_string())
}

/// Pretrains on the plan's corpus, fine-tunes when the strategy asks for it,
/// checks isolation and scores the target's test split.
pub fn execute_seed(resolved: &ResolvedPlan, registry: &Registry, seed: u64) -> Result<SeedResult> {
    let plan = &resolved.plan;
    let cfg = plan.model_config();
    let tc = &plan.train;
    let corpus_ds = combine(&resolved.pretrain, registry)?;
    let target_ds = combine(&resolved.target, registry)?;
    let layout = InputLayout::new(corpus_ds.schema().union(&target_ds.schema()));

    let bases = |spec: &CombinationSpec| -> Result<Vec<String>> {
        let mut out = Vec::new();
        for m in &spec.members {
            let n = registry.get(&m.dataset)?.blocks.len();
            out.extend(std::iter::repeat(m.dataset.clone()).take(n));
        }
        Ok(out)
    };
    let windows = |ds, role, stride| Windows::new(ds, layout, cfg.lookback, cfg.horizon, role, stride);

    let corpus = Corpus::new(
        windows(&corpus_ds, Role::Train, tc.window_stride)?,
        windows(&corpus_ds, Role::Validation, tc.eval_stride)?,
        bases(&resolved.pretrain)?,
    )?;
    let mut trace = Trace::default();
    let model = Forecaster::new(&cfg, layout.width(), seed)?;
    let mut trained = pretrain(model, &corpus, tc, seed, &mut trace)?;
    if plan.strategy.fine_tunes() {
        let target = Corpus::new(
            windows(&target_ds, Role::Train, tc.window_stride)?,
            windows(&target_ds, Role::Validation, tc.eval_stride)?,
            bases(&resolved.target)?,
        )?;
        trained = fine_tune(trained, &target, tc, seed, &mut trace)?;
    }

    let violations = verify_isolation(plan.strategy, &resolved.target_base, plan.is_baseline(), &trace);
    if let Some(v) = violations.first() {
        return Err(Error::Contract(format!(
            "{}: {} ({} row(s), first {} {:?} {} during {})",
            plan.label(),
            v.reason,
            violations.len(),
            v.row.dataset,
            v.row.role,
            v.row.timestamp,
            v.row.phase
        )));
    }
    let test = windows(&target_ds, Role::Test, 1)?;
    let metrics = evaluate(&trained.model, &test, tc.batch_size)?;
    Ok(SeedResult {
        model: trained,
        trace,
        metrics,
    })
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_record(path: &Path) -> Result<MetricsRecord> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Runs one seed of a plan and writes its artifacts. Finished seeds are not rerun.
pub fn run_seed(resolved: &ResolvedPlan, registry: &Registry, seed: u64, out_root: &Path) -> Result<SeedOutcome> {
    let dir = seed_dir(out_root, &resolved.hash, seed);
    let metrics_path = dir.join("metrics.json");
    if metrics_path.exists() && dir.join("checkpoint.bin").exists() {
        return Ok(SeedOutcome {
            record: read_record(&metrics_path)?,
            skipped: true,
        });
    }
    let result = execute_seed(resolved, registry, seed)?;
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_atomic(&dir.join("checkpoint.bin"), &checkpoint::encode(&result.model.model)?)?;

    let mut log = csv::Writer::from_writer(Vec::new());
    for row in &result.model.log {
        log.serialize(row).map_err(|e| Error::Format(e.to_string()))?;
    }
    let log = log.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    write_atomic(&dir.join("train_log.csv"), &log)?;

    let record = MetricsRecord {
        plan_hash: resolved.hash.clone(),
        label: resolved.plan.label(),
        seed,
        metrics: result.metrics,
        best_val_loss: result.model.best_val_loss,
        epochs_run: result.model.epochs_run,
        trained: result.model.trained,
        trace_rows: result.trace.len(),
        plan: resolved.plan.clone(),
    };
    let json = serde_json::to_string_pretty(&record).map_err(|e| Error::Format(e.to_string()))?;
    write_atomic(&metrics_path, json.as_bytes())?;
    Ok(SeedOutcome { record, skipped: false })
}

/// Every seed of a plan, then the seed mean.
pub fn run_strategy(
    plan: &ExperimentPlan,
    registry: &Registry,
    combinations: &[CombinationSpec],
    out_root: &Path,
) -> Result<EvaluationReport> {
    let resolved = plan.resolve(&Corpora::new(registry, combinations))?;
    let mut per_seed = Vec::new();
    for &seed in &plan.seeds {
        let out = run_seed(&resolved, registry, seed, out_root)?;
        per_seed.push((seed, out.record.metrics));
    }
    EvaluationReport::new(plan.report_key(), per_seed, plan.seeds.clone())
}

/// Reports for every plan with at least one finished seed under `out_root`,
/// linked to their baselines.
pub fn collect_reports(out_root: &Path) -> Result<Vec<EvaluationReport>> {
    let runs = out_root.join(RUNS_DIR);
    let mut by_plan: BTreeMap<String, Vec<MetricsRecord>> = BTreeMap::new();
    if runs.is_dir() {
        for plan_dir in fs::read_dir(&runs).map_err(|e| Error::io(&runs, e))? {
            let plan_dir = plan_dir.map_err(|e| Error::io(&runs, e))?.path();
            if !plan_dir.is_dir() {
                continue;
            }
            for seed_dir in fs::read_dir(&plan_dir).map_err(|e| Error::io(&plan_dir, e))? {
                let path = seed_dir.map_err(|e| Error::io(&plan_dir, e))?.path().join("metrics.json");
                if path.is_file() {
                    let r = read_record(&path)?;
                    by_plan.entry(r.plan_hash.clone()).or_default().push(r);
                }
            }
        }
    }
    let mut reports = Vec::new();
    for records in by_plan.into_values() {
        let plan = &records[0].plan;
        let per_seed = records.iter().map(|r| (r.seed, r.metrics)).collect();
        reports.push(EvaluationReport::new(plan.report_key(), per_seed, plan.seeds.clone())?);
    }
    reports.sort_by(|a, b| a.key.cmp(&b.key));
    attach_baselines(&mut reports)?;
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{clean_pipeline, synthetic_dataset, CleaningRules, SyntheticParams};
    use crate::models::{Arch, ModelConfig};
    use crate::strategy::{StrategyId, TrainConfig};

    fn registry() -> Registry {
        ["A", "B"]
            .iter()
            .enumerate()
            .map(|(i, id)| {
                let p = SyntheticParams {
                    n_buildings: 2,
                    hours: 500,
                    ..Default::default()
                };
                clean_pipeline(synthetic_dataset(id, &p, i as u64 + 1).unwrap(), &CleaningRules::default()).unwrap()
            })
            .collect()
    }

    fn plan(strategy: StrategyId, sources: &[&str], target: &str) -> ExperimentPlan {
        let mut p = ExperimentPlan::new(strategy, sources, target, 8);
        p.model = ModelConfig {
            lookback: 24,
            horizon: 8,
            ..ModelConfig::toy(Arch::Vanilla)
        };
        p.seeds = vec![1, 2];
        p.train = TrainConfig {
            pretrain_lr: 3e-3,
            finetune_lr: 1e-3,
            max_epochs: 2,
            max_steps_per_epoch: Some(3),
            batch_size: 16,
            window_stride: 6,
            eval_stride: 6,
            ..Default::default()
        };
        p
    }

    #[test]
    fn artifacts_are_written_and_reused() {
        let reg = registry();
        let corpora = Corpora::new(&reg, &[]);
        let dir = tempfile::tempdir().unwrap();
        let p = plan(StrategyId::S1, &["B"], "A");
        let report = run_strategy(&p, &reg, &[], dir.path()).unwrap();
        assert_eq!(report.per_seed.len(), 2);
        let mean = (report.per_seed[0].1.mae + report.per_seed[1].1.mae) / 2.0;
        assert_eq!(report.mean.mae, mean);
        let seed_path = seed_dir(dir.path(), &p.hash(), 1);
        for f in ["checkpoint.bin", "train_log.csv", "metrics.json"] {
            assert!(seed_path.join(f).is_file(), "{f}");
        }
        let before = fs::read(seed_path.join("metrics.json")).unwrap();
        let resolved = p.resolve(&corpora).unwrap();
        assert!(run_seed(&resolved, &reg, 1, dir.path()).unwrap().skipped);
        assert_eq!(fs::read(seed_path.join("metrics.json")).unwrap(), before);
        let collected = collect_reports(dir.path()).unwrap();
        assert_eq!(collected, vec![report]);
    }

    #[test]
    fn rerun_is_bitwise_identical() {
        let reg = registry();
        let p = plan(StrategyId::S7, &["B"], "A");
        let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        run_strategy(&p, &reg, &[], d1.path()).unwrap();
        run_strategy(&p, &reg, &[], d2.path()).unwrap();
        for seed in [1, 2] {
            let a = fs::read(seed_dir(d1.path(), &p.hash(), seed).join("metrics.json")).unwrap();
            let b = fs::read(seed_dir(d2.path(), &p.hash(), seed).join("metrics.json")).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn s7_is_s5_followed_by_fine_tuning() {
        let reg = registry();
        let corpora = Corpora::new(&reg, &[]);
        let s5 = plan(StrategyId::S5, &["B"], "A").resolve(&corpora).unwrap();
        let s7 = plan(StrategyId::S7, &["B"], "A").resolve(&corpora).unwrap();
        let r5 = execute_seed(&s5, &reg, 1).unwrap();
        let r7 = execute_seed(&s7, &reg, 1).unwrap();

        let tc = &s7.plan.train;
        let cfg = s7.plan.model_config();
        let target = combine(&s7.target, &reg).unwrap();
        let layout = InputLayout::new(target.schema());
        let w = |role, stride| Windows::new(&target, layout, cfg.lookback, cfg.horizon, role, stride).unwrap();
        let corpus = Corpus::new(w(Role::Train, tc.window_stride), w(Role::Validation, tc.eval_stride), vec!["A".into()]).unwrap();
        let ft = fine_tune(r5.model, &corpus, tc, 1, &mut Trace::default()).unwrap();
        assert_eq!(ft.model.params(), r7.model.model.params());
        assert_eq!(evaluate(&ft.model, &w(Role::Test, 1), tc.batch_size).unwrap(), r7.metrics);
    }

    #[test]
    fn leaking_plan_fails_before_training() {
        let reg = registry();
        let dir = tempfile::tempdir().unwrap();
        let p = plan(StrategyId::S2, &["A", "B"], "A");
        assert!(matches!(run_strategy(&p, &reg, &[], dir.path()), Err(Error::Plan(_))));
        assert!(!dir.path().join(RUNS_DIR).exists());
    }
}
