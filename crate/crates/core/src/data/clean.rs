use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::raw::{drop_sparse_buildings, drop_zero_columns, interpolate_linear, RawDataset, RawSeries};
use super::split::{Role, Segment, SplitLayout};
use super::{Feature, FeatureSchema, Metadata, Removal};
use crate::error::{Error, Result};

/// A gap-free standardized column with its train-split statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    #[serde(skip)]
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl Series {
    /// Back to the original scale.
    pub fn invert(&self, standardized: f64) -> f64 {
        standardized * self.std + self.mean
    }

    pub fn raw_values(&self) -> Vec<f64> {
        self.values.iter().map(|&v| self.invert(v)).collect()
    }
}

/// The columns contributed by one member dataset, with their own split.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceBlock {
    /// Provenance tag: id of the member dataset.
    pub source: String,
    pub metadata: Metadata,
    pub buildings: Vec<Series>,
    pub weather: Vec<Series>,
    pub layout: SplitLayout,
    pub segments: Vec<Segment>,
    /// Rows replaced by zero padding; never part of any window.
    pub pad_mask: Vec<bool>,
}

impl SourceBlock {
    pub fn schema(&self) -> FeatureSchema {
        FeatureSchema::new(self.weather.iter().filter_map(|s| Feature::from_column(&s.name)))
    }

    pub fn weather_series(&self, f: Feature) -> Option<&Series> {
        self.weather.iter().find(|s| s.name == f.column())
    }

    pub fn segments_with(&self, role: Role) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(move |s| s.role == role)
    }
}

/// Standardized, gap-free panel. A single cleaned dataset has one block;
/// combinations hold one block per member on a shared timeline.
#[derive(Clone, Debug, PartialEq)]
pub struct CleanDataset {
    pub id: String,
    pub timestamps: Vec<NaiveDateTime>,
    pub blocks: Vec<SourceBlock>,
    pub removals: Vec<Removal>,
}

impl CleanDataset {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn n_buildings(&self) -> usize {
        self.blocks.iter().map(|b| b.buildings.len()).sum()
    }

    /// Union of member schemas.
    pub fn schema(&self) -> FeatureSchema {
        self.blocks
            .iter()
            .fold(FeatureSchema::default(), |acc, b| acc.union(&b.schema()))
    }

    /// `(provenance, building)` for every building, in block order.
    pub fn building_ids(&self) -> Vec<(String, String)> {
        self.blocks
            .iter()
            .flat_map(|b| b.buildings.iter().map(|s| (b.source.clone(), s.name.clone())))
            .collect()
    }

    pub fn block(&self, source: &str) -> Option<&SourceBlock> {
        self.blocks.iter().find(|b| b.source == source)
    }

    /// Raw-scale panel of a single-block dataset (padding rows written as zero).
    pub fn to_raw(&self) -> Result<RawDataset> {
        let [block] = self.blocks.as_slice() else {
            return Err(Error::Contract(format!(
                "dataset '{}' has {} blocks; only single-block datasets convert to a raw panel",
                self.id,
                self.blocks.len()
            )));
        };
        let raw = |s: &Series| {
            let values = s
                .raw_values()
                .into_iter()
                .zip(&block.pad_mask)
                .map(|(v, &pad)| Some(if pad { 0.0 } else { v }))
                .collect();
            RawSeries::new(s.name.clone(), values)
        };
        Ok(RawDataset {
            id: self.id.clone(),
            timestamps: self.timestamps.clone(),
            buildings: block.buildings.iter().map(raw).collect(),
            weather: block.weather.iter().map(raw).collect(),
            metadata: block.metadata.clone(),
            removals: self.removals.clone(),
        })
    }
}

/// Thresholds of the cleaning rules plus the split layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleaningRules {
    /// Buildings with at least this missing fraction are removed.
    pub missing_threshold: f64,
    /// Columns with more than this many zeros are removed.
    pub max_zeros: usize,
    pub layout: SplitLayout,
}

impl Default for CleaningRules {
    fn default() -> Self {
        Self {
            missing_threshold: 0.10,
            max_zeros: 3000,
            layout: SplitLayout::default(),
        }
    }
}

impl CleaningRules {
    /// Applies the three cleaning rules in order, without standardizing.
    pub fn clean_raw(&self, raw: RawDataset) -> Result<RawDataset> {
        let ds = drop_sparse_buildings(raw, self.missing_threshold)?;
        let ds = interpolate_linear(ds)?;
        let ds = drop_zero_columns(ds, self.max_zeros);
        if ds.buildings.is_empty() {
            return Err(Error::Data(format!("dataset '{}' has no buildings left after cleaning", ds.id)));
        }
        Ok(ds)
    }
}

/// Missing-value filter, interpolation, zero-column filter, then standardization.
pub fn clean_pipeline(raw: RawDataset, rules: &CleaningRules) -> Result<CleanDataset> {
    let ds = rules.clean_raw(raw)?;
    standardize(ds, &rules.layout)
}

fn fit(name: &str, values: &[Option<f64>], train: &[Segment]) -> Result<Series> {
    let values = values
        .iter()
        .enumerate()
        .map(|(i, v)| v.ok_or_else(|| Error::Data(format!("column '{name}' has a gap at row {i}; interpolate first"))))
        .collect::<Result<Vec<f64>>>()?;
    let rows = || train.iter().flat_map(|s| values[s.start..s.end].iter().copied());
    let n = train.iter().map(Segment::len).sum::<usize>() as f64;
    let mean = rows().sum::<f64>() / n;
    let std = (rows().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if !(std > 1e-12 * mean.abs().max(1.0)) {
        return Err(Error::Data(format!(
            "column '{name}' is constant over the training split (std = {std}); cannot standardize"
        )));
    }
    Ok(Series {
        name: name.to_string(),
        values: values.iter().map(|v| (v - mean) / std).collect(),
        mean,
        std,
    })
}

/// Standardizes every column with population statistics of its train rows.
pub fn standardize(raw: RawDataset, layout: &SplitLayout) -> Result<CleanDataset> {
    let segments = layout.boundaries(raw.len())?;
    let train: Vec<Segment> = segments.iter().copied().filter(|s| s.role == Role::Train).collect();
    let fit_all = |cols: &[RawSeries]| -> Result<Vec<Series>> {
        cols.iter().map(|s| fit(&s.name, &s.values, &train)).collect()
    };
    let block = SourceBlock {
        source: raw.id.clone(),
        metadata: raw.metadata.clone(),
        buildings: fit_all(&raw.buildings)?,
        weather: fit_all(&raw.weather)?,
        layout: layout.clone(),
        pad_mask: vec![false; raw.len()],
        segments,
    };
    Ok(CleanDataset {
        id: raw.id,
        timestamps: raw.timestamps,
        blocks: vec![block],
        removals: raw.removals,
    })
}
