//! Hourly panel ingestion, the three cleaning rules, chronological splits,
//! standardization and window generation.
//!
//! A raw panel is a CSV whose first column holds hourly ISO-8601 timestamps.
//! Columns named after one of the reserved weather variables are covariates;
//! every other column is a building load series.

mod clean;
mod persist;
mod raw;
mod split;
mod synthetic;
mod window;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use clean::{clean_pipeline, standardize, CleanDataset, CleaningRules, Series, SourceBlock};
pub use persist::{load_clean, load_dataset, save_clean, sidecar_path};
pub use raw::{
    drop_sparse_buildings, drop_zero_columns, interpolate_linear, interpolate_series, load_csv, parse_csv, RawDataset,
    RawSeries,
};
pub use split::{Role, Segment, SplitLayout};
pub use synthetic::{synthetic_dataset, SyntheticParams};
pub use window::{InputLayout, WindowRef, Windows};

/// Weather covariates of the BDGP2 panels, in canonical channel order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Feature {
    AirTemperature,
    DewTemperature,
    SeaLvlPressure,
    WindDirection,
    WindSpeed,
    CloudCoverage,
}

impl Feature {
    pub const ALL: [Feature; 6] = [
        Feature::AirTemperature,
        Feature::DewTemperature,
        Feature::SeaLvlPressure,
        Feature::WindDirection,
        Feature::WindSpeed,
        Feature::CloudCoverage,
    ];

    /// Reserved CSV column name.
    pub fn column(self) -> &'static str {
        match self {
            Feature::AirTemperature => "airTemperature",
            Feature::DewTemperature => "dewTemperature",
            Feature::SeaLvlPressure => "seaLvlPressure",
            Feature::WindDirection => "windDirection",
            Feature::WindSpeed => "windSpeed",
            Feature::CloudCoverage => "cloudCoverage",
        }
    }

    pub fn abbrev(self) -> &'static str {
        match self {
            Feature::AirTemperature => "AT",
            Feature::DewTemperature => "DT",
            Feature::SeaLvlPressure => "SLP",
            Feature::WindDirection => "WD",
            Feature::WindSpeed => "WS",
            Feature::CloudCoverage => "CC",
        }
    }

    pub fn from_column(name: &str) -> Option<Feature> {
        Feature::ALL.into_iter().find(|f| f.column() == name)
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.abbrev())
    }
}

impl FromStr for Feature {
    type Err = Error;

    /// Accepts the abbreviation (`AT`) or the column name (`airTemperature`).
    fn from_str(s: &str) -> Result<Self> {
        Feature::ALL
            .into_iter()
            .find(|f| f.abbrev().eq_ignore_ascii_case(s) || f.column() == s)
            .ok_or_else(|| Error::Config(format!("unknown weather feature '{s}'")))
    }
}

impl Serialize for Feature {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.abbrev())
    }
}

impl<'de> Deserialize<'de> for Feature {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Presence flags for the six weather features.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct FeatureSchema {
    present: [bool; 6],
}

impl FeatureSchema {
    pub fn new(features: impl IntoIterator<Item = Feature>) -> Self {
        let mut s = Self::default();
        for f in features {
            s.present[f as usize] = true;
        }
        s
    }

    pub fn contains(&self, f: Feature) -> bool {
        self.present[f as usize]
    }

    pub fn width(&self) -> usize {
        self.present.iter().filter(|&&p| p).count()
    }

    /// Present features in canonical order.
    pub fn features(&self) -> Vec<Feature> {
        Feature::ALL.into_iter().filter(|&f| self.contains(f)).collect()
    }

    pub fn union(&self, other: &FeatureSchema) -> FeatureSchema {
        let mut s = *self;
        for (a, b) in s.present.iter_mut().zip(other.present) {
            *a |= b;
        }
        s
    }
}

impl Serialize for FeatureSchema {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.features().serialize(s)
    }
}

impl<'de> Deserialize<'de> for FeatureSchema {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(FeatureSchema::new(Vec::<Feature>::deserialize(d)?))
    }
}

/// Descriptive tags carried alongside a dataset.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Metadata {
    pub site: String,
    pub climate_zone: Option<String>,
}

/// One column removed by a cleaning rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Removal {
    pub column: String,
    pub rule: RemovalRule,
    /// Missing fraction or zero count that triggered the rule.
    pub value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovalRule {
    MissingFraction,
    ZeroCount,
}

impl fmt::Display for Removal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.rule {
            RemovalRule::MissingFraction => {
                write!(f, "removed '{}': {:.2}% missing", self.column, self.value * 100.0)
            }
            RemovalRule::ZeroCount => write!(f, "removed '{}': {} zero values", self.column, self.value),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_width_counts_flags() {
        let s = FeatureSchema::new([Feature::AirTemperature, Feature::DewTemperature]);
        assert_eq!(s.width(), 2);
        assert_eq!(s.features(), vec![Feature::AirTemperature, Feature::DewTemperature]);
        let u = s.union(&FeatureSchema::new([Feature::CloudCoverage]));
        assert_eq!(u.width(), 3);
        assert!(u.contains(Feature::CloudCoverage));
        assert_eq!(FeatureSchema::default().width(), 0);
    }

    #[test]
    fn feature_names_round_trip() {
        for f in Feature::ALL {
            assert_eq!(Feature::from_column(f.column()), Some(f));
            assert_eq!(f.abbrev().parse::<Feature>().unwrap(), f);
        }
        assert!("XX".parse::<Feature>().is_err());
        let json = serde_json::to_string(&FeatureSchema::new([Feature::WindSpeed, Feature::AirTemperature])).unwrap();
        assert_eq!(json, r#"["AT","WS"]"#);
    }
}
