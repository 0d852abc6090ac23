//! Execution of many plans with a manifest recording their status.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combination::Registry;
use crate::error::{Error, Result};
use crate::strategy::{run_seed, ResolvedPlan, SeedOutcome};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pending,
    Done,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub hash: String,
    pub label: String,
    pub seeds: Vec<u64>,
    pub status: Status,
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub plans: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn path(out_root: &Path) -> PathBuf {
        out_root.join(MANIFEST_FILE)
    }

    pub fn load(out_root: &Path) -> Result<Self> {
        let path = Self::path(out_root);
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, out_root: &Path) -> Result<()> {
        fs::create_dir_all(out_root).map_err(|e| Error::io(out_root, e))?;
        let path = Self::path(out_root);
        let tmp = path.with_extension("tmp");
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(&tmp, json).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    pub fn status(&self, hash: &str) -> Option<Status> {
        self.plans.iter().find(|p| p.hash == hash).map(|p| p.status)
    }

    fn upsert(&mut self, entry: ManifestEntry) {
        match self.plans.iter_mut().find(|p| p.hash == entry.hash) {
            Some(p) => *p = entry,
            None => self.plans.push(entry),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CampaignOptions {
    /// Case-insensitive substring of the plan label; `None` selects every plan.
    pub filter: Option<String>,
    /// Upper bound on concurrent (plan, seed) runs.
    pub parallel: usize,
}

impl Default for CampaignOptions {
    fn default() -> Self {
        Self {
            filter: None,
            parallel: 1,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct CampaignSummary {
    pub selected: usize,
    /// Seeds trained in this invocation.
    pub trained: usize,
    /// Seeds whose artifacts already existed.
    pub reused: usize,
    /// `(plan label, seed, error)`.
    pub failures: Vec<(String, u64, String)>,
}

pub fn matches_filter(plan: &ResolvedPlan, filter: Option<&str>) -> bool {
    filter.map_or(true, |f| plan.plan.label().to_lowercase().contains(&f.to_lowercase()))
}

/// Runs every selected (plan, seed) pair. Plans marked done in the manifest
/// are skipped, and finished seeds are never retrained.
pub fn run_campaign(
    plans: &[ResolvedPlan],
    registry: &Registry,
    out_root: &Path,
    opts: &CampaignOptions,
) -> Result<CampaignSummary> {
    if opts.parallel == 0 {
        return Err(Error::Config("parallel must be at least 1".into()));
    }
    let mut manifest = Manifest::load(out_root)?;
    let selected: Vec<&ResolvedPlan> = plans.iter().filter(|p| matches_filter(p, opts.filter.as_deref())).collect();
    let mut summary = CampaignSummary {
        selected: selected.len(),
        ..Default::default()
    };
    let mut jobs = Vec::new();
    for p in &selected {
        if manifest.status(&p.hash) == Some(Status::Done) {
            summary.reused += p.plan.seeds.len();
            continue;
        }
        manifest.upsert(ManifestEntry {
            hash: p.hash.clone(),
            label: p.plan.label(),
            seeds: p.plan.seeds.clone(),
            status: Status::Pending,
            error: None,
        });
        jobs.extend(p.plan.seeds.iter().map(|&s| (*p, s)));
    }
    manifest.save(out_root)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.parallel)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let outcomes: Vec<Result<SeedOutcome>> =
        pool.install(|| jobs.par_iter().map(|(p, s)| run_seed(p, registry, *s, out_root)).collect());

    let mut errors: BTreeMap<&str, String> = BTreeMap::new();
    for ((p, seed), out) in jobs.iter().zip(outcomes) {
        match out {
            Ok(o) if o.skipped => summary.reused += 1,
            Ok(_) => summary.trained += 1,
            Err(e) => {
                let msg = e.to_string();
                errors.entry(&p.hash).or_insert_with(|| format!("seed {seed}: {msg}"));
                summary.failures.push((p.plan.label(), *seed, msg));
            }
        }
    }
    for p in &selected {
        if let Some(entry) = manifest.plans.iter_mut().find(|e| e.hash == p.hash && e.status == Status::Pending) {
            match errors.get(p.hash.as_str()) {
                Some(msg) => {
                    entry.status = Status::Failed;
                    entry.error = Some(msg.clone());
                }
                None => entry.status = Status::Done,
            }
        }
    }
    manifest.save(out_root)?;
    Ok(summary)
}
