use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::train::TrainConfig;
use super::StrategyId;
use crate::combination::{truncated_variant, Category, CombinationSpec, Member, Registry};
use crate::error::{Error, Result};
use crate::evaluation::ReportKey;
use crate::models::ModelConfig;

pub const DEFAULT_SEEDS: [u64; 3] = [1, 50, 100];

fn default_seeds() -> Vec<u64> {
    DEFAULT_SEEDS.to_vec()
}

/// One row of the study: a strategy applied to a source/target pairing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub strategy: StrategyId,
    /// Dataset ids, named truncated variants or declared combinations.
    pub sources: Vec<String>,
    pub target: String,
    pub horizon: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

impl ExperimentPlan {
    pub fn new(strategy: StrategyId, sources: &[&str], target: &str, horizon: usize) -> Self {
        Self {
            strategy,
            sources: sources.iter().map(|s| s.to_string()).collect(),
            target: target.to_string(),
            horizon,
            seeds: default_seeds(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }

    /// S1 with the target as its only source.
    pub fn is_baseline(&self) -> bool {
        self.strategy == StrategyId::S1 && self.sources.len() == 1 && self.sources[0] == self.target
    }

    /// Model configuration with the plan's horizon applied.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            horizon: self.horizon,
            ..self.model.clone()
        }
    }

    /// Stable identifier: the first 16 hex digits of SHA-256 over the plan's JSON.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("plan serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }

    /// Training corpus as shown in reports, e.g. `Bear+Fox`.
    pub fn corpus_label(&self) -> String {
        let mut parts = self.sources.clone();
        if self.strategy.target_in_pretraining() && !parts.contains(&self.target) {
            parts.push(self.target.clone());
        }
        parts.join("+")
    }

    pub fn label(&self) -> String {
        format!(
            "{} {} -> {} {}h {}",
            self.strategy,
            self.corpus_label(),
            self.target,
            self.horizon,
            self.model.arch.name()
        )
    }

    pub fn report_key(&self) -> ReportKey {
        ReportKey {
            arch: self.model.arch.name().to_string(),
            horizon: self.horizon,
            target: self.target.clone(),
            strategy: self.strategy.to_string(),
            corpus: self.corpus_label(),
        }
    }

    /// Checks every plan invariant and expands corpus references into members.
    pub fn resolve(&self, corpora: &Corpora) -> Result<ResolvedPlan> {
        let fail = |m: String| Err(Error::Plan(format!("{}: {m}", self.label())));
        if self.sources.is_empty() {
            return fail("no sources".into());
        }
        if self.seeds.is_empty() {
            return fail("no seeds".into());
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return fail("duplicate seeds".into());
        }
        self.model_config()
            .validate()
            .map_err(|e| Error::Plan(format!("{}: {e}", self.label())))?;
        self.train
            .validate(self.strategy)
            .map_err(|e| Error::Plan(format!("{}: {e}", self.label())))?;

        let target_members = corpora.members(&self.target)?;
        let [target] = target_members.as_slice() else {
            return fail(format!("target '{}' must be a single dataset", self.target));
        };
        let baseline = self.is_baseline();
        let mut sources = Vec::new();
        for s in &self.sources {
            sources.extend(corpora.members(s)?);
        }
        let mut tags: Vec<&str> = sources.iter().map(Member::tag).collect();
        tags.sort_unstable();
        if tags.windows(2).any(|w| w[0] == w[1]) {
            return fail("a dataset appears in more than one source".into());
        }

        if !baseline && !self.strategy.target_in_pretraining() {
            if let Some(m) = sources.iter().find(|m| m.dataset == target.dataset) {
                return fail(format!(
                    "{} may not train on target data, but source '{}' derives from '{}'",
                    self.strategy,
                    m.tag(),
                    target.dataset
                ));
            }
        }
        let others = sources.iter().filter(|m| m.tag() != target.tag()).count();
        if !baseline {
            if self.strategy.single_source() && others != 1 {
                return fail(format!("{} needs exactly one source besides the target, got {others}", self.strategy));
            }
            if !self.strategy.single_source() && others < 2 {
                return fail(format!("{} needs at least two sources besides the target, got {others}", self.strategy));
            }
        }

        let mut pretrain = sources.clone();
        if self.strategy.target_in_pretraining() && !pretrain.iter().any(|m| m.tag() == target.tag()) {
            pretrain.push(target.clone());
        }
        Ok(ResolvedPlan {
            hash: self.hash(),
            plan: self.clone(),
            pretrain: CombinationSpec::new(&self.corpus_label(), Category::UnmodifiedCombined, pretrain),
            target: CombinationSpec::new(&self.target, Category::Uniform, vec![target.clone()]),
            target_base: target.dataset.clone(),
        })
    }
}

/// A validated plan with its corpora expanded.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedPlan {
    pub plan: ExperimentPlan,
    pub hash: String,
    pub pretrain: CombinationSpec,
    pub target: CombinationSpec,
    /// Registry id the target derives from.
    pub target_base: String,
}

/// Everything a plan may refer to by name.
#[derive(Clone, Debug)]
pub struct Corpora<'a> {
    ids: BTreeSet<String>,
    pub combinations: &'a [CombinationSpec],
}

impl<'a> Corpora<'a> {
    pub fn new(registry: &Registry, combinations: &'a [CombinationSpec]) -> Self {
        Self::from_ids(registry.ids().map(str::to_string), combinations)
    }

    /// Name resolution against declared ids only, before any dataset is loaded.
    pub fn from_ids(ids: impl IntoIterator<Item = String>, combinations: &'a [CombinationSpec]) -> Self {
        Self {
            ids: ids.into_iter().collect(),
            combinations,
        }
    }

    /// Members behind a name: a declared combination, a registry dataset, or a
    /// named truncated variant of a registry dataset.
    pub fn members(&self, name: &str) -> Result<Vec<Member>> {
        if let Some(c) = self.combinations.iter().find(|c| c.name == name) {
            return Ok(c.members.clone());
        }
        if self.ids.contains(name) {
            return Ok(vec![Member::plain(name)]);
        }
        if let Some((base, truncate)) = truncated_variant(name) {
            if self.ids.contains(base) {
                return Ok(vec![Member {
                    dataset: base.to_string(),
                    alias: Some(name.to_string()),
                    truncate,
                }]);
            }
        }
        Err(Error::Plan(format!("unknown dataset or combination '{name}'")))
    }
}
