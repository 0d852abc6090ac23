//! TOML campaign description: datasets, combinations and experiment plans.
//!
//! ```toml
//! output_root = "out"
//!
//! [defaults]
//! horizons = [24, 96]
//! seeds = [1, 50, 100]
//! archs = ["Vanilla"]
//! model = { d_model = 32, lookback = 168 }
//! train = { max_epochs = 50 }
//!
//! [cleaning]
//! missing_threshold = 0.1
//! max_zeros = 3000
//!
//! [[datasets]]
//! id = "Bear"
//! path = "data/Bear.csv"
//!
//! [[datasets]]
//! id = "Toy"
//! seed = 7
//! synthetic = { n_buildings = 3, hours = 2000 }
//!
//! [[combinations]]
//! name = "BearFox"
//! members = ["Bear", "Foxtruncated1"]
//!
//! [[plans]]
//! strategy = "S6"
//! sources = ["BearFox"]
//! target = "Bear"
//! horizons = [24]
//! train = { pretrain_lr = 5e-4 }
//! ```
//!
//! Relative paths resolve against the directory holding the config file.
//! Plan-level `model` and `train` tables override the defaults key by key.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::combination::{Category, CombinationSpec, Member, Registry};
use crate::data::{clean_pipeline, load_dataset, synthetic_dataset, CleaningRules, SyntheticParams};
use crate::error::{Error, Result};
use crate::models::{Arch, ModelConfig};
use crate::strategy::{Corpora, ExperimentPlan, ResolvedPlan, StrategyId, TrainConfig, DEFAULT_SEEDS};

fn default_output_root() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    #[serde(default = "default_output_root")]
    pub output_root: PathBuf,
    #[serde(default)]
    pub defaults: Defaults,
    #[serde(default)]
    pub cleaning: CleaningRules,
    #[serde(default)]
    pub datasets: Vec<DatasetDecl>,
    #[serde(default)]
    pub combinations: Vec<CombinationDecl>,
    #[serde(default)]
    pub plans: Vec<PlanDecl>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct Defaults {
    pub horizons: Vec<usize>,
    pub seeds: Vec<u64>,
    pub archs: Vec<Arch>,
    pub model: toml::Table,
    pub train: toml::Table,
}

impl Default for Defaults {
    fn default() -> Self {
        Self {
            horizons: vec![24, 96],
            seeds: DEFAULT_SEEDS.to_vec(),
            archs: vec![Arch::Vanilla],
            model: toml::Table::new(),
            train: toml::Table::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetDecl {
    pub id: String,
    /// Raw or cleaned CSV; a cleaned file is recognised by its sidecar.
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticParams>,
    /// Seed of the synthetic generator.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub climate_zone: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(untagged)]
pub enum MemberDecl {
    /// A dataset id or a named truncated variant.
    Name(String),
    Full(Member),
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CombinationDecl {
    pub name: String,
    pub members: Vec<MemberDecl>,
    #[serde(default)]
    pub category: Option<Category>,
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct PlanDecl {
    pub strategy: StrategyId,
    pub sources: Vec<String>,
    pub target: String,
    #[serde(default)]
    pub horizons: Option<Vec<usize>>,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub archs: Option<Vec<Arch>>,
    #[serde(default)]
    pub model: toml::Table,
    #[serde(default)]
    pub train: toml::Table,
}

fn at(path: &str, e: impl std::fmt::Display) -> Error {
    Error::Config(format!("{path}: {e}"))
}

fn merged<T: DeserializeOwned>(base: &toml::Table, over: &toml::Table) -> std::result::Result<T, toml::de::Error> {
    let mut t = base.clone();
    for (k, v) in over {
        t.insert(k.clone(), v.clone());
    }
    toml::Value::Table(t).try_into()
}

impl CampaignConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: CampaignConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn resolve_path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_root(&self) -> PathBuf {
        self.resolve_path(&self.output_root)
    }

    pub fn combination_specs(&self) -> Result<Vec<CombinationSpec>> {
        let ids = self.datasets.iter().map(|d| d.id.clone());
        let corpora = Corpora::from_ids(ids, &[]);
        let mut out = Vec::new();
        for (i, c) in self.combinations.iter().enumerate() {
            let mut members = Vec::new();
            for (j, m) in c.members.iter().enumerate() {
                let path = format!("combinations[{i}].members[{j}]");
                match m {
                    MemberDecl::Name(name) => members.extend(corpora.members(name).map_err(|e| at(&path, e))?),
                    MemberDecl::Full(m) => {
                        corpora.members(&m.dataset).map_err(|e| at(&path, e))?;
                        members.push(m.clone());
                    }
                }
            }
            let spec = CombinationSpec::new(&c.name, c.category.unwrap_or(Category::UnmodifiedCombined), members);
            spec.validate().map_err(|e| at(&format!("combinations[{i}]"), e))?;
            out.push(spec);
        }
        Ok(out)
    }

    /// Every plan after expansion over horizons and architectures.
    pub fn expand_plans(&self) -> Result<Vec<ExperimentPlan>> {
        Ok(self.expand()?.into_iter().map(|(_, p)| p).collect())
    }

    /// Expanded plans tagged with the index of their declaration.
    fn expand(&self) -> Result<Vec<(usize, ExperimentPlan)>> {
        let d = &self.defaults;
        let mut out = Vec::new();
        for (i, p) in self.plans.iter().enumerate() {
            let path = format!("plans[{i}]");
            for reserved in ["arch", "horizon"] {
                if p.model.contains_key(reserved) || d.model.contains_key(reserved) {
                    return Err(at(&path, format!("set {reserved} through the {reserved}s list, not model.{reserved}")));
                }
            }
            let model: ModelConfig = merged(&d.model, &p.model).map_err(|e| at(&format!("{path}.model"), e))?;
            let train: TrainConfig = merged(&d.train, &p.train).map_err(|e| at(&format!("{path}.train"), e))?;
            let horizons = p.horizons.as_ref().unwrap_or(&d.horizons);
            let archs = p.archs.as_ref().unwrap_or(&d.archs);
            if horizons.is_empty() || archs.is_empty() {
                return Err(at(&path, "horizons and archs must be nonempty"));
            }
            for &arch in archs {
                for &horizon in horizons {
                    out.push((i, ExperimentPlan {
                        strategy: p.strategy,
                        sources: p.sources.clone(),
                        target: p.target.clone(),
                        horizon,
                        seeds: p.seeds.clone().unwrap_or_else(|| d.seeds.clone()),
                        model: ModelConfig {
                            arch,
                            horizon,
                            ..model.clone()
                        },
                        train: train.clone(),
                    }));
                }
            }
        }
        Ok(out)
    }

    /// Checks the whole config without loading any data.
    pub fn validate(&self) -> Result<(Vec<CombinationSpec>, Vec<ResolvedPlan>)> {
        self.cleaning.layout.validate().map_err(|e| at("cleaning.layout", e))?;
        let mut ids = BTreeSet::new();
        for (i, d) in self.datasets.iter().enumerate() {
            let path = format!("datasets[{i}]");
            if d.id.is_empty() || d.id.contains('/') {
                return Err(at(&path, format!("invalid id '{}'", d.id)));
            }
            if !ids.insert(d.id.clone()) {
                return Err(at(&path, format!("duplicate id '{}'", d.id)));
            }
            match (&d.path, &d.synthetic) {
                (Some(p), None) => {
                    let p = self.resolve_path(p);
                    if !p.is_file() {
                        return Err(at(&format!("{path}.path"), format!("no such file {}", p.display())));
                    }
                }
                (None, Some(_)) => {}
                _ => return Err(at(&path, "give exactly one of path or synthetic")),
            }
        }
        let combos = self.combination_specs()?;
        for (i, c) in combos.iter().enumerate() {
            if ids.contains(&c.name) || combos[..i].iter().any(|o| o.name == c.name) {
                return Err(at(&format!("combinations[{i}]"), format!("name '{}' is already taken", c.name)));
            }
        }
        let corpora = Corpora::from_ids(ids, &combos);
        let mut resolved = Vec::new();
        for (i, plan) in self.expand()? {
            let path = format!("plans[{i}]");
            for (j, s) in plan.sources.iter().enumerate() {
                corpora.members(s).map_err(|e| at(&format!("{path}.sources[{j}]"), e))?;
            }
            corpora.members(&plan.target).map_err(|e| at(&format!("{path}.target"), e))?;
            resolved.push(plan.resolve(&corpora).map_err(|e| at(&path, e))?);
        }
        let mut hashes = BTreeSet::new();
        for r in &resolved {
            if !hashes.insert(r.hash.clone()) {
                return Err(Error::Config(format!("plan '{}' is declared twice", r.plan.label())));
            }
        }
        Ok((combos, resolved))
    }

    /// Cleans or generates every declared dataset.
    pub fn load_registry(&self) -> Result<Registry> {
        let loaded = self
            .datasets
            .par_iter()
            .map(|d| {
                let mut ds = match (&d.path, &d.synthetic) {
                    (Some(p), _) => load_dataset(&self.resolve_path(p), &self.cleaning)?,
                    (None, Some(params)) => clean_pipeline(synthetic_dataset(&d.id, params, d.seed)?, &self.cleaning)?,
                    (None, None) => return Err(Error::Config(format!("dataset '{}' has no source", d.id))),
                };
                ds = crate::combination::rename(ds, &d.id);
                if let Some(zone) = &d.climate_zone {
                    for b in &mut ds.blocks {
                        b.metadata.climate_zone = Some(zone.clone());
                    }
                }
                Ok(ds)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(loaded.into_iter().collect())
    }
}
