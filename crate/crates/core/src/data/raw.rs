use std::io::Read;
use std::path::Path;

use chrono::{Duration, NaiveDateTime};

use super::{Feature, FeatureSchema, Metadata, Removal, RemovalRule};
use crate::error::{Error, Result};

const TIMESTAMP_FORMATS: [&str; 4] = [
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%d %H:%M",
    "%Y-%m-%dT%H:%M",
];

/// A named column that may contain gaps.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSeries {
    pub name: String,
    pub values: Vec<Option<f64>>,
}

impl RawSeries {
    pub fn new(name: impl Into<String>, values: Vec<Option<f64>>) -> Self {
        Self {
            name: name.into(),
            values,
        }
    }

    pub fn missing(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }

    pub fn missing_fraction(&self) -> f64 {
        self.missing() as f64 / self.values.len() as f64
    }

    pub fn zeros(&self) -> usize {
        self.values.iter().filter(|v| **v == Some(0.0)).count()
    }
}

/// Parsed hourly panel, before cleaning.
#[derive(Clone, Debug, PartialEq)]
pub struct RawDataset {
    pub id: String,
    pub timestamps: Vec<NaiveDateTime>,
    /// Load series in column order.
    pub buildings: Vec<RawSeries>,
    /// Weather columns in column order; names are reserved feature columns.
    pub weather: Vec<RawSeries>,
    pub metadata: Metadata,
    pub removals: Vec<Removal>,
}

impl RawDataset {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn schema(&self) -> FeatureSchema {
        FeatureSchema::new(self.weather.iter().filter_map(|s| Feature::from_column(&s.name)))
    }

    pub fn missing_cells(&self) -> usize {
        self.buildings.iter().chain(&self.weather).map(RawSeries::missing).sum()
    }

    pub fn building(&self, name: &str) -> Option<&RawSeries> {
        self.buildings.iter().find(|s| s.name == name)
    }
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim().trim_end_matches('Z');
    TIMESTAMP_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

fn parse_cell(s: &str) -> Option<f64> {
    let s = s.trim();
    if s.is_empty() {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Reads a panel from `path`; the dataset id is the file stem.
pub fn load_csv(path: &Path) -> Result<RawDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_csv(file, &id).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Parses a panel from any reader. Blank, `NaN` or unparseable cells become gaps.
pub fn parse_csv<R: Read>(reader: R, id: &str) -> Result<RawDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Format(format!("unreadable header: {e}")))?
        .clone();
    let first = header.get(0).unwrap_or("");
    if !matches!(first.to_ascii_lowercase().as_str(), "timestamp" | "time" | "datetime" | "date") {
        return Err(Error::Format(format!("first column must be 'timestamp', found '{first}'")));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    for (i, n) in names.iter().enumerate() {
        if n.is_empty() || names[..i].contains(n) {
            return Err(Error::Format(format!("column {} has an empty or duplicate name '{n}'", i + 2)));
        }
    }

    let mut timestamps: Vec<NaiveDateTime> = Vec::new();
    let mut columns: Vec<Vec<Option<f64>>> = vec![Vec::new(); names.len()];
    for (row, rec) in rdr.records().enumerate() {
        let line = row + 2;
        let rec = rec.map_err(|e| Error::Format(format!("line {line}: {e}")))?;
        if rec.len() != names.len() + 1 {
            return Err(Error::Format(format!(
                "line {line}: expected {} fields, found {}",
                names.len() + 1,
                rec.len()
            )));
        }
        let ts = parse_timestamp(&rec[0])
            .ok_or_else(|| Error::Format(format!("line {line}: unparseable timestamp '{}'", &rec[0])))?;
        if let Some(&prev) = timestamps.last() {
            if ts == prev {
                return Err(Error::Format(format!("line {line}: duplicate timestamp {ts}")));
            }
            if ts < prev {
                return Err(Error::Format(format!("line {line}: timestamp {ts} is earlier than {prev}")));
            }
            if ts - prev != Duration::hours(1) {
                return Err(Error::Format(format!("line {line}: gap from {prev} to {ts} is not one hour")));
            }
        }
        timestamps.push(ts);
        for (col, cell) in columns.iter_mut().zip(rec.iter().skip(1)) {
            col.push(parse_cell(cell));
        }
    }
    if timestamps.is_empty() {
        return Err(Error::Format("no data rows".into()));
    }

    let mut buildings = Vec::new();
    let mut weather = Vec::new();
    for (name, values) in names.into_iter().zip(columns) {
        if Feature::from_column(&name).is_some() {
            weather.push(RawSeries::new(name, values));
        } else {
            buildings.push(RawSeries::new(name, values));
        }
    }
    Ok(RawDataset {
        id: id.to_string(),
        timestamps,
        buildings,
        weather,
        metadata: Metadata {
            site: id.to_string(),
            climate_zone: None,
        },
        removals: Vec::new(),
    })
}

/// Removes buildings whose missing fraction is at least `threshold`.
pub fn drop_sparse_buildings(mut ds: RawDataset, threshold: f64) -> Result<RawDataset> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Config(format!("missing-value threshold {threshold} is outside (0, 1]")));
    }
    let mut kept = Vec::with_capacity(ds.buildings.len());
    for s in ds.buildings {
        let frac = s.missing_fraction();
        if frac >= threshold {
            ds.removals.push(Removal {
                column: s.name,
                rule: RemovalRule::MissingFraction,
                value: frac,
            });
        } else {
            kept.push(s);
        }
    }
    ds.buildings = kept;
    Ok(ds)
}

/// Fills gaps: interior runs linearly between their neighbours, leading and
/// trailing runs with the nearest observation.
pub fn interpolate_series(values: &[Option<f64>]) -> Option<Vec<f64>> {
    let observed: Vec<usize> = (0..values.len()).filter(|&i| values[i].is_some()).collect();
    if observed.len() < 2 {
        return None;
    }
    let v = |i: usize| values[i].unwrap();
    let (first, last) = (observed[0], observed[observed.len() - 1]);
    let mut out = vec![0.0; values.len()];
    out[..first].fill(v(first));
    out[last..].fill(v(last));
    for pair in observed.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let (ya, yb) = (v(a), v(b));
        out[a] = ya;
        for i in a + 1..b {
            out[i] = ya + (yb - ya) * (i - a) as f64 / (b - a) as f64;
        }
    }
    Some(out)
}

/// Applies [`interpolate_series`] to every column.
pub fn interpolate_linear(mut ds: RawDataset) -> Result<RawDataset> {
    for s in ds.buildings.iter_mut().chain(ds.weather.iter_mut()) {
        if s.missing() == 0 {
            continue;
        }
        let filled = interpolate_series(&s.values).ok_or_else(|| {
            Error::Data(format!(
                "column '{}' has fewer than 2 observed values and cannot be interpolated",
                s.name
            ))
        })?;
        s.values = filled.into_iter().map(Some).collect();
    }
    Ok(ds)
}

/// Removes every column (building or weather) with more than `max_zeros` zero values.
pub fn drop_zero_columns(mut ds: RawDataset, max_zeros: usize) -> RawDataset {
    let mut removals = Vec::new();
    let mut filter = |cols: Vec<RawSeries>| -> Vec<RawSeries> {
        cols.into_iter()
            .filter(|s| {
                let z = s.zeros();
                if z > max_zeros {
                    removals.push(Removal {
                        column: s.name.clone(),
                        rule: RemovalRule::ZeroCount,
                        value: z as f64,
                    });
                    false
                } else {
                    true
                }
            })
            .collect()
    };
    ds.buildings = filter(std::mem::take(&mut ds.buildings));
    ds.weather = filter(std::mem::take(&mut ds.weather));
    ds.removals.extend(removals);
    ds
}
