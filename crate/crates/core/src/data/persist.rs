//! Cleaned datasets on disk: a raw-scale CSV plus a JSON sidecar holding the
//! schema, standardization parameters, split boundaries, padding and removal log.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::clean::{clean_pipeline, CleanDataset, CleaningRules, Series, SourceBlock};
use super::raw::{load_csv, RawSeries};
use super::split::{Segment, SplitLayout};
use super::{FeatureSchema, Metadata, Removal};
use crate::error::{Error, Result};

const SIDECAR_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Sidecar {
    version: u32,
    id: String,
    rows: usize,
    schema: FeatureSchema,
    removals: Vec<Removal>,
    blocks: Vec<BlockMeta>,
}

#[derive(Serialize, Deserialize)]
struct BlockMeta {
    source: String,
    metadata: Metadata,
    layout: SplitLayout,
    segments: Vec<Segment>,
    /// Padded row ranges `[start, end)`.
    padding: Vec<(usize, usize)>,
    buildings: Vec<Series>,
    weather: Vec<Series>,
}

/// JSON sidecar that accompanies a cleaned CSV.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

fn column_name(multi: bool, source: &str, name: &str) -> String {
    if multi {
        format!("{source}/{name}")
    } else {
        name.to_string()
    }
}

fn pad_ranges(mask: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < mask.len() {
        if mask[i] {
            let s = i;
            while i < mask.len() && mask[i] {
                i += 1;
            }
            out.push((s, i));
        } else {
            i += 1;
        }
    }
    out
}

/// Writes `<dir>/<id>.csv` and its sidecar; returns the CSV path.
pub fn save_clean(ds: &CleanDataset, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join(format!("{}.csv", ds.id));
    let multi = ds.blocks.len() > 1;

    let mut header = vec!["timestamp".to_string()];
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for b in &ds.blocks {
        for s in b.buildings.iter().chain(&b.weather) {
            header.push(column_name(multi, &b.source, &s.name));
            let raw = s
                .raw_values()
                .into_iter()
                .zip(&b.pad_mask)
                .map(|(v, &pad)| if pad { 0.0 } else { v })
                .collect();
            columns.push(raw);
        }
    }
    let write_err = |e: csv::Error| Error::Format(format!("{}: {e}", csv_path.display()));
    let mut w = csv::Writer::from_path(&csv_path).map_err(write_err)?;
    w.write_record(&header).map_err(write_err)?;
    for (t, ts) in ds.timestamps.iter().enumerate() {
        let mut row = vec![ts.format("%Y-%m-%d %H:%M:%S").to_string()];
        row.extend(columns.iter().map(|c| c[t].to_string()));
        w.write_record(&row).map_err(write_err)?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;

    let sidecar = Sidecar {
        version: SIDECAR_VERSION,
        id: ds.id.clone(),
        rows: ds.len(),
        schema: ds.schema(),
        removals: ds.removals.clone(),
        blocks: ds
            .blocks
            .iter()
            .map(|b| BlockMeta {
                source: b.source.clone(),
                metadata: b.metadata.clone(),
                layout: b.layout.clone(),
                segments: b.segments.clone(),
                padding: pad_ranges(&b.pad_mask),
                buildings: b.buildings.clone(),
                weather: b.weather.clone(),
            })
            .collect(),
    };
    let json_path = sidecar_path(&csv_path);
    let text = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;
    Ok(csv_path)
}

/// Reads a dataset written by [`save_clean`].
pub fn load_clean(csv_path: &Path) -> Result<CleanDataset> {
    let json_path = sidecar_path(csv_path);
    let text = std::fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let sidecar: Sidecar =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", json_path.display())))?;
    if sidecar.version != SIDECAR_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported sidecar version {}",
            json_path.display(),
            sidecar.version
        )));
    }
    let raw = load_csv(csv_path)?;
    if raw.len() != sidecar.rows {
        return Err(Error::Format(format!(
            "{}: {} rows, sidecar expects {}",
            csv_path.display(),
            raw.len(),
            sidecar.rows
        )));
    }
    let all: Vec<RawSeries> = raw.buildings.into_iter().chain(raw.weather).collect();
    let multi = sidecar.blocks.len() > 1;
    let mut blocks = Vec::with_capacity(sidecar.blocks.len());
    for meta in sidecar.blocks {
        let mut pad_mask = vec![false; sidecar.rows];
        for &(s, e) in &meta.padding {
            if s > e || e > sidecar.rows {
                return Err(Error::Format(format!("padding range {s}..{e} out of bounds")));
            }
            pad_mask[s..e].fill(true);
        }
        let restore = |series: Vec<Series>| -> Result<Vec<Series>> {
            series
                .into_iter()
                .map(|mut s| {
                    let col = column_name(multi, &meta.source, &s.name);
                    let found = all
                        .iter()
                        .find(|c| c.name == col)
                        .ok_or_else(|| Error::Format(format!("{}: missing column '{col}'", csv_path.display())))?;
                    s.values = found
                        .values
                        .iter()
                        .zip(&pad_mask)
                        .enumerate()
                        .map(|(t, (v, &pad))| match (v, pad) {
                            (_, true) => Ok(0.0),
                            (Some(v), false) => Ok((v - s.mean) / s.std),
                            (None, false) => Err(Error::Format(format!("column '{col}' has a gap at row {t}"))),
                        })
                        .collect::<Result<_>>()?;
                    Ok(s)
                })
                .collect()
        };
        blocks.push(SourceBlock {
            buildings: restore(meta.buildings)?,
            weather: restore(meta.weather)?,
            source: meta.source,
            metadata: meta.metadata,
            layout: meta.layout,
            segments: meta.segments,
            pad_mask,
        });
    }
    Ok(CleanDataset {
        id: sidecar.id,
        timestamps: raw.timestamps,
        blocks,
        removals: sidecar.removals,
    })
}

/// Loads a cleaned dataset if a sidecar sits next to `path`, otherwise runs
/// the cleaning pipeline on the raw panel.
pub fn load_dataset(path: &Path, rules: &CleaningRules) -> Result<CleanDataset> {
    if sidecar_path(path).is_file() {
        load_clean(path)
    } else {
        clean_pipeline(load_csv(path)?, rules)
    }
}
