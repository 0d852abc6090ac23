use std::f64::consts::TAU;

use chrono::{Datelike, Timelike};

use super::clean::CleanDataset;
use super::split::Role;
use super::{Feature, FeatureSchema};
use crate::error::{Error, Result};
use crate::models::ForecastBatch;
use crate::tensor::Tensor;

/// Channel layout of model inputs: load, one channel per schema feature, one
/// presence mask per schema feature, then sin/cos of hour-of-day and day-of-week.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InputLayout {
    pub schema: FeatureSchema,
}

impl InputLayout {
    pub const CALENDAR_CHANNELS: usize = 4;

    pub fn new(schema: FeatureSchema) -> Self {
        Self { schema }
    }

    pub fn width(&self) -> usize {
        1 + 2 * self.schema.width() + Self::CALENDAR_CHANNELS
    }
}

/// One window: inputs at rows `start..start + L`, targets at `start + L..start + L + H`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct WindowRef {
    pub block: usize,
    pub building: usize,
    pub start: usize,
    pub role: Role,
}

/// All windows of one role in a dataset, materialized into batches on demand.
#[derive(Clone, Debug)]
pub struct Windows<'a> {
    pub dataset: &'a CleanDataset,
    pub layout: InputLayout,
    pub lookback: usize,
    pub horizon: usize,
    pub refs: Vec<WindowRef>,
    calendar: Vec<[f64; 4]>,
}

impl<'a> Windows<'a> {
    /// Every `stride`-th window lying entirely inside a `role` segment and
    /// touching no padded row. Each segment of `role` must hold at least one window.
    pub fn new(
        dataset: &'a CleanDataset,
        layout: InputLayout,
        lookback: usize,
        horizon: usize,
        role: Role,
        stride: usize,
    ) -> Result<Self> {
        if stride == 0 || lookback == 0 || horizon == 0 {
            return Err(Error::Config("lookback, horizon and window stride must be positive".into()));
        }
        let span = lookback + horizon;
        let mut refs = Vec::new();
        for (bi, block) in dataset.blocks.iter().enumerate() {
            for seg in block.segments_with(role) {
                if seg.len() < span {
                    return Err(Error::Config(format!(
                        "{role:?} segment of '{}' has {} rows, fewer than lookback + horizon = {span}",
                        block.source,
                        seg.len()
                    )));
                }
                let starts: Vec<usize> = (seg.start..=seg.end - span)
                    .step_by(stride)
                    .filter(|&s| !block.pad_mask[s..s + span].iter().any(|&p| p))
                    .collect();
                for building in 0..block.buildings.len() {
                    refs.extend(starts.iter().map(|&start| WindowRef {
                        block: bi,
                        building,
                        start,
                        role,
                    }));
                }
            }
        }
        let calendar = dataset
            .timestamps
            .iter()
            .map(|ts| {
                let h = TAU * ts.hour() as f64 / 24.0;
                let d = TAU * ts.weekday().num_days_from_monday() as f64 / 7.0;
                [h.sin(), h.cos(), d.sin(), d.cos()]
            })
            .collect();
        Ok(Self {
            dataset,
            layout,
            lookback,
            horizon,
            refs,
            calendar,
        })
    }

    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    /// Identifier `source/building` of a window's series.
    pub fn series_id(&self, w: &WindowRef) -> String {
        let b = &self.dataset.blocks[w.block];
        format!("{}/{}", b.source, b.buildings[w.building].name)
    }

    /// Materializes the windows at positions `idx` of [`Windows::refs`].
    pub fn batch(&self, idx: &[usize]) -> Result<ForecastBatch> {
        if idx.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let (l, h, width) = (self.lookback, self.horizon, self.layout.width());
        let features = self.layout.schema.features();
        let mut x = Vec::with_capacity(idx.len() * l * width);
        let mut y = Vec::with_capacity(idx.len() * h);
        let mut ids = Vec::with_capacity(idx.len());
        for &i in idx {
            let w = self.refs.get(i).ok_or_else(|| Error::Contract(format!("window index {i} out of range")))?;
            let block = &self.dataset.blocks[w.block];
            let load = &block.buildings[w.building].values;
            let weather: Vec<Option<&[f64]>> = features
                .iter()
                .map(|&f: &Feature| block.weather_series(f).map(|s| s.values.as_slice()))
                .collect();
            for t in w.start..w.start + l {
                x.push(load[t]);
                x.extend(weather.iter().map(|c| c.map_or(0.0, |v| v[t])));
                x.extend(weather.iter().map(|c| if c.is_some() { 1.0 } else { 0.0 }));
                x.extend_from_slice(&self.calendar[t]);
            }
            y.extend_from_slice(&load[w.start + l..w.start + l + h]);
            ids.push(self.series_id(w));
        }
        Ok(ForecastBatch {
            x_past: Tensor::new(&[idx.len(), l, width], x)?,
            y_future: Tensor::new(&[idx.len(), h], y)?,
            series_id: ids,
        })
    }
}

#[cfg(test)]
mod tests {
    use chrono::{Duration, NaiveDateTime};

    use super::*;
    use crate::data::clean::{standardize, SourceBlock};
    use crate::data::raw::{RawDataset, RawSeries};
    use crate::data::split::{Segment, SplitLayout};
    use crate::data::Metadata;

    fn dataset(t: usize, layout: &SplitLayout) -> CleanDataset {
        let start = NaiveDateTime::parse_from_str("2016-01-01 00:00:00", "%Y-%m-%d %H:%M:%S").unwrap();
        let raw = RawDataset {
            id: "w".into(),
            timestamps: (0..t as i64).map(|h| start + Duration::hours(h)).collect(),
            buildings: vec![RawSeries::new("b", (0..t).map(|i| Some(i as f64)).collect())],
            weather: vec![RawSeries::new(
                "airTemperature",
                (0..t).map(|i| Some((i as f64).sin())).collect(),
            )],
            metadata: Metadata::default(),
            removals: vec![],
        };
        standardize(raw, layout).unwrap()
    }

    fn single_segment(t: usize) -> CleanDataset {
        let mut ds = dataset(t.max(10), &SplitLayout::default());
        ds.timestamps.truncate(t);
        let b: &mut SourceBlock = &mut ds.blocks[0];
        for s in b.buildings.iter_mut().chain(b.weather.iter_mut()) {
            s.values.truncate(t);
        }
        b.pad_mask.truncate(t);
        b.segments = vec![Segment {
            role: Role::Train,
            start: 0,
            end: t,
        }];
        ds
    }

    fn layout() -> InputLayout {
        InputLayout::new(FeatureSchema::new([Feature::AirTemperature]))
    }

    #[test]
    fn window_count_formula() {
        let ds = single_segment(30);
        assert_eq!(Windows::new(&ds, layout(), 16, 4, Role::Train, 1).unwrap().len(), 11);
        let ds = single_segment(20);
        assert_eq!(Windows::new(&ds, layout(), 16, 4, Role::Train, 1).unwrap().len(), 1);
        let ds = single_segment(19);
        assert!(matches!(
            Windows::new(&ds, layout(), 16, 4, Role::Train, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn stride_thins_windows() {
        let ds = single_segment(30);
        let w = Windows::new(&ds, layout(), 16, 4, Role::Train, 5).unwrap();
        let starts: Vec<usize> = w.refs.iter().map(|r| r.start).collect();
        assert_eq!(starts, [0, 5, 10]);
    }

    #[test]
    fn padded_rows_are_excluded() {
        let mut ds = single_segment(30);
        ds.blocks[0].pad_mask[25] = true;
        let w = Windows::new(&ds, layout(), 16, 4, Role::Train, 1).unwrap();
        // Windows covering row 25 start at 6..=10.
        assert_eq!(w.len(), 6);
        assert!(w.refs.iter().all(|r| r.start + 20 <= 25));
    }

    #[test]
    fn windows_stay_inside_their_segment() {
        let ds = dataset(400, &SplitLayout::default());
        let segs = ds.blocks[0].segments.clone();
        for role in [Role::Train, Role::Validation, Role::Test] {
            let seg = segs.iter().find(|s| s.role == role).unwrap();
            let w = Windows::new(&ds, layout(), 16, 4, role, 1).unwrap();
            assert_eq!(w.len(), seg.len() - 20 + 1);
            for r in &w.refs {
                assert!(r.start >= seg.start && r.start + 20 <= seg.end);
            }
        }
    }

    #[test]
    fn batch_channels() {
        let ds = dataset(400, &SplitLayout::default());
        let w = Windows::new(&ds, layout(), 16, 4, Role::Train, 1).unwrap();
        let b = w.batch(&[0, 3]).unwrap();
        assert_eq!(b.x_past.shape(), &[2, 16, 7]);
        assert_eq!(b.y_future.shape(), &[2, 4]);
        assert_eq!(b.series_id, ["w/b", "w/b"]);
        let x = b.x_past.data();
        let load = &ds.blocks[0].buildings[0].values;
        assert_eq!(x[0], load[0]);
        assert_eq!(x[2], 1.0, "presence mask");
        // Midnight on a Friday.
        assert_eq!(&x[3..5], &[0.0, 1.0]);
        assert_eq!(b.y_future.data()[0], load[16]);
        let second = 16 * 7;
        assert_eq!(x[second], load[3]);
    }

    #[test]
    fn absent_feature_is_zero_with_mask() {
        let ds = dataset(400, &SplitLayout::default());
        let wide = InputLayout::new(FeatureSchema::new([Feature::AirTemperature, Feature::CloudCoverage]));
        assert_eq!(wide.width(), 9);
        let w = Windows::new(&ds, wide, 16, 4, Role::Train, 1).unwrap();
        let b = w.batch(&[0]).unwrap();
        let row = &b.x_past.data()[..9];
        assert_eq!(row[2], 0.0);
        assert_eq!(&row[3..5], &[1.0, 0.0]);
    }
}
