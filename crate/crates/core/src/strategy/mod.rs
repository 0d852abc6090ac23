//! The eight data-centric transfer-learning strategies.
//!
//! | id | pretraining corpus        | fine-tune on target |
//! |----|---------------------------|---------------------|
//! | S1 | one source                | no                  |
//! | S2 | several sources           | no                  |
//! | S3 | one source                | yes                 |
//! | S4 | several sources           | yes                 |
//! | S5 | one source + target       | no                  |
//! | S6 | several sources + target  | no                  |
//! | S7 | one source + target       | yes                 |
//! | S8 | several sources + target  | yes                 |
//!
//! Every strategy is tested on the target's test split. S1 with the target as
//! its own source is the baseline.

mod plan;
mod run;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use plan::{Corpora, ExperimentPlan, ResolvedPlan, DEFAULT_SEEDS};
pub use run::{collect_reports, execute_seed, run_seed, run_strategy, seed_dir, MetricsRecord, SeedOutcome, SeedResult, RUNS_DIR};
pub use train::{
    evaluate, fine_tune, pretrain, verify_isolation, Corpus, LogRow, Phase, Trace, TraceRow, TrainConfig,
    TrainedModel, Violation,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StrategyId {
    S1,
    S2,
    S3,
    S4,
    S5,
    S6,
    S7,
    S8,
}

impl StrategyId {
    pub const ALL: [StrategyId; 8] = [
        StrategyId::S1,
        StrategyId::S2,
        StrategyId::S3,
        StrategyId::S4,
        StrategyId::S5,
        StrategyId::S6,
        StrategyId::S7,
        StrategyId::S8,
    ];

    fn index(self) -> usize {
        self as usize + 1
    }

    /// S1 and S2 never see target data.
    pub fn is_zero_shot(self) -> bool {
        matches!(self, StrategyId::S1 | StrategyId::S2)
    }

    /// Odd strategies use exactly one source.
    pub fn single_source(self) -> bool {
        self.index() % 2 == 1
    }

    pub fn fine_tunes(self) -> bool {
        matches!(self, StrategyId::S3 | StrategyId::S4 | StrategyId::S7 | StrategyId::S8)
    }

    /// S5..S8 pretrain on sources plus the target's training split.
    pub fn target_in_pretraining(self) -> bool {
        self.index() >= 5
    }

    /// S3 and S4 are supported compositions that the original study did not run.
    pub fn in_original_study(self) -> bool {
        !matches!(self, StrategyId::S3 | StrategyId::S4)
    }
}

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "S{}", self.index())
    }
}

impl FromStr for StrategyId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyId::ALL
            .into_iter()
            .find(|id| id.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown strategy '{s}' (expected S1..S8)")))
    }
}

impl Serialize for StrategyId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StrategyId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}
