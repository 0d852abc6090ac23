//! Truncated and combined corpora built from cleaned member datasets.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::data::{CleanDataset, Feature, Role, Segment, SourceBlock, SplitLayout};
use crate::error::{Error, Result};

/// One modification applied to a member before combination.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TruncationDirective {
    /// Drop the named weather columns.
    Feature { drop: Vec<Feature> },
    /// Keep the first `keep` buildings in column order.
    Building { keep: usize },
    /// Re-lay the timeline; `ZeroPad` segments are zeroed and excluded from windows.
    Temporal { layout: SplitLayout },
}

/// Applies `d`, returning a new dataset with the same id.
pub fn truncate(ds: &CleanDataset, d: &TruncationDirective) -> Result<CleanDataset> {
    let mut out = ds.clone();
    match d {
        TruncationDirective::Feature { drop } => {
            let schema = ds.schema();
            for f in drop {
                if !schema.contains(*f) {
                    return Err(Error::Config(format!("dataset '{}' has no weather feature {f}", ds.id)));
                }
            }
            for b in &mut out.blocks {
                b.weather
                    .retain(|s| Feature::from_column(&s.name).is_none_or(|f| !drop.contains(&f)));
            }
        }
        TruncationDirective::Building { keep } => {
            let n = ds.n_buildings();
            if *keep == 0 || *keep > n {
                return Err(Error::Config(format!(
                    "cannot keep {keep} buildings of dataset '{}' which has {n}",
                    ds.id
                )));
            }
            let mut left = *keep;
            for b in &mut out.blocks {
                let k = left.min(b.buildings.len());
                b.buildings.truncate(k);
                left -= k;
            }
            out.blocks.retain(|b| !b.buildings.is_empty());
        }
        TruncationDirective::Temporal { layout } => {
            let segments = layout.boundaries(ds.len())?;
            for b in &mut out.blocks {
                relayout(b, layout, &segments)?;
            }
        }
    }
    Ok(out)
}

/// Re-fits each column's statistics on the new training rows, then zeroes padding.
fn relayout(b: &mut SourceBlock, layout: &SplitLayout, segments: &[Segment]) -> Result<()> {
    let mut pad = vec![false; b.pad_mask.len()];
    for s in segments.iter().filter(|s| s.role == Role::ZeroPad) {
        pad[s.start..s.end].fill(true);
    }
    let train: Vec<usize> = segments
        .iter()
        .filter(|s| s.role == Role::Train)
        .flat_map(|s| s.start..s.end)
        .filter(|&t| !b.pad_mask[t])
        .collect();
    if train.is_empty() {
        return Err(Error::Config(format!("'{}' has no unpadded training rows under the new layout", b.source)));
    }
    for s in b.buildings.iter_mut().chain(b.weather.iter_mut()) {
        let raw = s.raw_values();
        let n = train.len() as f64;
        let mean = train.iter().map(|&t| raw[t]).sum::<f64>() / n;
        let std = (train.iter().map(|&t| (raw[t] - mean).powi(2)).sum::<f64>() / n).sqrt();
        if !(std > 1e-12 * mean.abs().max(1.0)) {
            return Err(Error::Data(format!(
                "column '{}' of '{}' is constant over the truncated training rows",
                s.name, b.source
            )));
        }
        s.values = raw
            .iter()
            .enumerate()
            .map(|(t, v)| if pad[t] || b.pad_mask[t] { 0.0 } else { (v - mean) / std })
            .collect();
        s.mean = mean;
        s.std = std;
    }
    for (m, p) in b.pad_mask.iter_mut().zip(pad) {
        *m |= p;
    }
    b.layout = layout.clone();
    b.segments = segments.to_vec();
    Ok(())
}

/// Renames a dataset; a single-block dataset also gets the new provenance tag.
pub fn rename(mut ds: CleanDataset, id: &str) -> CleanDataset {
    if ds.blocks.len() == 1 {
        ds.blocks[0].source = id.to_string();
    }
    ds.id = id.to_string();
    ds
}

/// Colour-coded grouping of combinations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    UnmodifiedCombined,
    Uniform,
    ClimateVariant,
    BuildingCountVariant,
    WeatherFeatureVariant,
    TemporalRangeVariant,
    FullEnsemble,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Member {
    pub dataset: String,
    /// Provenance tag in the combined corpus; defaults to `dataset`.
    #[serde(default)]
    pub alias: Option<String>,
    #[serde(default)]
    pub truncate: Vec<TruncationDirective>,
}

impl Member {
    pub fn plain(dataset: &str) -> Self {
        Self {
            dataset: dataset.to_string(),
            alias: None,
            truncate: Vec::new(),
        }
    }

    pub fn tag(&self) -> &str {
        self.alias.as_deref().unwrap_or(&self.dataset)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CombinationSpec {
    pub name: String,
    pub members: Vec<Member>,
    pub category: Category,
}

impl CombinationSpec {
    pub fn new(name: &str, category: Category, members: Vec<Member>) -> Self {
        Self {
            name: name.to_string(),
            members,
            category,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.members.is_empty() {
            return Err(Error::Config(format!("combination '{}' has no members", self.name)));
        }
        let mut seen = BTreeSet::new();
        for m in &self.members {
            if !seen.insert(m.tag()) {
                return Err(Error::Config(format!(
                    "combination '{}' lists provenance tag '{}' twice",
                    self.name,
                    m.tag()
                )));
            }
        }
        Ok(())
    }
}

/// Immutable set of cleaned datasets keyed by id.
#[derive(Clone, Debug, Default)]
pub struct Registry {
    datasets: BTreeMap<String, CleanDataset>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, ds: CleanDataset) {
        self.datasets.insert(ds.id.clone(), ds);
    }

    pub fn get(&self, id: &str) -> Result<&CleanDataset> {
        self.datasets
            .get(id)
            .ok_or_else(|| Error::Config(format!("dataset '{id}' is not in the registry")))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.datasets.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.datasets.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.datasets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.datasets.is_empty()
    }
}

impl FromIterator<CleanDataset> for Registry {
    fn from_iter<I: IntoIterator<Item = CleanDataset>>(iter: I) -> Self {
        let mut r = Registry::new();
        for ds in iter {
            r.insert(ds);
        }
        r
    }
}

/// Truncates members, aligns them on their shared time range and stacks their blocks.
pub fn combine(spec: &CombinationSpec, registry: &Registry) -> Result<CleanDataset> {
    spec.validate()?;
    let mut members = Vec::with_capacity(spec.members.len());
    for m in &spec.members {
        let mut ds = registry.get(&m.dataset)?.clone();
        for d in &m.truncate {
            ds = truncate(&ds, d)?;
        }
        members.push(rename(ds, m.tag()));
    }
    stack(&spec.name, members)
}

fn stack(id: &str, members: Vec<CleanDataset>) -> Result<CleanDataset> {
    let start = members.iter().map(|m| m.timestamps[0]).max().unwrap();
    let end = members.iter().map(|m| *m.timestamps.last().unwrap()).min().unwrap();
    if start > end {
        return Err(Error::Data(format!("members of '{id}' share no timestamps")));
    }
    let mut timestamps = Vec::new();
    let mut blocks = Vec::new();
    let mut removals = Vec::new();
    for m in members {
        let lo = m.timestamps.iter().position(|&t| t == start).unwrap();
        let hi = m.timestamps.iter().position(|&t| t == end).unwrap() + 1;
        if timestamps.is_empty() {
            timestamps = m.timestamps[lo..hi].to_vec();
        }
        removals.extend(m.removals.into_iter().map(|mut r| {
            r.column = format!("{}/{}", m.id, r.column);
            r
        }));
        for mut b in m.blocks {
            for s in b.buildings.iter_mut().chain(b.weather.iter_mut()) {
                s.values = s.values[lo..hi].to_vec();
            }
            b.pad_mask = b.pad_mask[lo..hi].to_vec();
            b.segments = b
                .segments
                .iter()
                .filter_map(|s| {
                    let (a, z) = (s.start.max(lo), s.end.min(hi));
                    (a < z).then(|| Segment {
                        role: s.role,
                        start: a - lo,
                        end: z - lo,
                    })
                })
                .collect();
            blocks.push(b);
        }
    }
    Ok(CleanDataset {
        id: id.to_string(),
        timestamps,
        blocks,
        removals,
    })
}

/// Combination of the given registry entries, unmodified.
pub fn build_ensemble(registry: &Registry, ids: &[&str], name: &str) -> Result<CleanDataset> {
    let spec = CombinationSpec::new(name, Category::FullEnsemble, ids.iter().map(|id| Member::plain(id)).collect());
    combine(&spec, registry)
}

/// Combination of all sixteen BDGP2 datasets.
pub fn build_full_ensemble(registry: &Registry) -> Result<CleanDataset> {
    let ids: Vec<&str> = BDGP2.iter().map(|e| e.name).collect();
    let missing: Vec<&str> = ids.iter().copied().filter(|id| !registry.contains(id)).collect();
    if !missing.is_empty() {
        return Err(Error::Config(format!("full ensemble is missing {}", missing.join(", "))));
    }
    build_ensemble(registry, &ids, "FullEnsemble")
}

/// Published characteristics of one BDGP2 site.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub buildings: usize,
    pub climate_zone: &'static str,
    pub features: &'static [Feature],
}

use Feature::{AirTemperature as AT, CloudCoverage as CC, DewTemperature as DT, SeaLvlPressure as SLP,
    WindDirection as WD, WindSpeed as WS};

const FIVE: &[Feature] = &[AT, DT, SLP, WD, WS];
const THREE: &[Feature] = &[AT, DT, SLP];

pub const BDGP2: [CatalogEntry; 16] = [
    CatalogEntry { name: "Bear", buildings: 73, climate_zone: "3C", features: FIVE },
    CatalogEntry { name: "Bobcat", buildings: 7, climate_zone: "5B", features: FIVE },
    CatalogEntry { name: "Bull", buildings: 41, climate_zone: "2A", features: THREE },
    CatalogEntry { name: "Cockatoo", buildings: 1, climate_zone: "6A", features: FIVE },
    CatalogEntry { name: "Crow", buildings: 4, climate_zone: "6A", features: FIVE },
    CatalogEntry { name: "Eagle", buildings: 87, climate_zone: "4A", features: FIVE },
    CatalogEntry { name: "Fox", buildings: 127, climate_zone: "2B", features: FIVE },
    CatalogEntry { name: "Gator", buildings: 29, climate_zone: "2A", features: &[] },
    CatalogEntry { name: "Hog", buildings: 24, climate_zone: "6A", features: FIVE },
    CatalogEntry { name: "Lamb", buildings: 41, climate_zone: "4A", features: &[AT, DT, WD, WS] },
    CatalogEntry { name: "Moose", buildings: 9, climate_zone: "6A", features: FIVE },
    CatalogEntry { name: "Mouse", buildings: 3, climate_zone: "4A", features: FIVE },
    CatalogEntry { name: "Peacock", buildings: 36, climate_zone: "5A", features: THREE },
    CatalogEntry { name: "Rat", buildings: 251, climate_zone: "4A", features: FIVE },
    CatalogEntry { name: "Robin", buildings: 50, climate_zone: "4A", features: FIVE },
    CatalogEntry { name: "Wolf", buildings: 36, climate_zone: "5A", features: &[AT, DT, SLP, WD, WS, CC] },
];

pub fn catalog_entry(name: &str) -> Option<&'static CatalogEntry> {
    BDGP2.iter().find(|e| e.name == name)
}

/// Base dataset and directives behind each named truncated variant.
pub fn truncated_variant(name: &str) -> Option<(&'static str, Vec<TruncationDirective>)> {
    use TruncationDirective as T;
    let feature = |drop: &[Feature]| T::Feature { drop: drop.to_vec() };
    let keep = |keep| T::Building { keep };
    Some(match name {
        "Wolftruncated1" => ("Wolf", vec![feature(&[WD, WS, CC])]),
        "Eagletruncated1" => ("Eagle", vec![keep(50)]),
        "Foxtruncated1" => ("Fox", vec![keep(73)]),
        "Moosetruncated1" => ("Moose", vec![keep(7)]),
        "Robintruncated1" => ("Robin", vec![feature(&[SLP])]),
        "Bulltruncated1" => ("Bull", vec![feature(&[AT, DT, SLP])]),
        "Hogtruncated1" => ("Hog", vec![keep(9), T::Temporal { layout: SplitLayout::pad_after_train() }]),
        "Hogtruncated2" => ("Hog", vec![keep(9)]),
        "Moosetruncated2" => ("Moose", vec![T::Temporal { layout: SplitLayout::pad_before_train() }]),
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{clean_pipeline, synthetic_dataset, CleaningRules, FeatureSchema, InputLayout, SyntheticParams, Windows};

    fn toy(id: &str, buildings: usize, features: &[Feature], hours: usize, seed: u64) -> CleanDataset {
        let p = SyntheticParams {
            n_buildings: buildings,
            hours,
            features: features.to_vec(),
            ..Default::default()
        };
        clean_pipeline(synthetic_dataset(id, &p, seed).unwrap(), &CleaningRules::default()).unwrap()
    }

    fn registry() -> Registry {
        [
            toy("A", 2, &[AT, DT, SLP], 400, 1),
            toy("B", 3, &[], 400, 2),
            toy("C", 4, &[AT, DT, SLP, WD, WS, CC], 400, 3),
        ]
        .into_iter()
        .collect()
    }

    #[test]
    fn catalog_totals() {
        assert_eq!(BDGP2.iter().map(|e| e.buildings).sum::<usize>(), 819);
        let with_cc: Vec<_> = BDGP2.iter().filter(|e| e.features.contains(&CC)).map(|e| e.name).collect();
        assert_eq!(with_cc, ["Wolf"]);
        let union = BDGP2
            .iter()
            .fold(FeatureSchema::default(), |s, e| s.union(&FeatureSchema::new(e.features.iter().copied())));
        assert_eq!(union.width(), 6);
        let count = |f| BDGP2.iter().filter(|e| e.features.contains(&f)).count();
        assert_eq!([count(AT), count(SLP), count(WD), count(CC)], [15, 14, 13, 1]);
        assert_eq!(catalog_entry("Bear").unwrap().buildings + catalog_entry("Fox").unwrap().buildings, 200);
    }

    #[test]
    fn feature_truncation() {
        let c = registry().get("C").unwrap().clone();
        let t = truncate(&c, &TruncationDirective::Feature { drop: vec![WD, WS, CC] }).unwrap();
        assert_eq!(t.schema().features(), vec![AT, DT, SLP]);
        assert!(matches!(
            truncate(&t, &TruncationDirective::Feature { drop: vec![CC] }),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn building_truncation_keeps_prefix() {
        let c = registry().get("C").unwrap().clone();
        let t = truncate(&c, &TruncationDirective::Building { keep: 2 }).unwrap();
        let names: Vec<_> = t.building_ids().into_iter().map(|p| p.1).collect();
        assert_eq!(names, ["C_b0", "C_b1"]);
        assert!(truncate(&c, &TruncationDirective::Building { keep: 5 }).is_err());
        assert!(truncate(&c, &TruncationDirective::Building { keep: 0 }).is_err());
    }

    #[test]
    fn temporal_truncation_without_padding_only_changes_split() {
        let c = registry().get("C").unwrap().clone();
        let t = truncate(&c, &TruncationDirective::Temporal { layout: SplitLayout::default() }).unwrap();
        assert_eq!(t.blocks[0].segments, c.blocks[0].segments);
        for (a, b) in t.blocks[0].buildings.iter().zip(&c.blocks[0].buildings) {
            for (x, y) in a.values.iter().zip(&b.values) {
                assert!((x - y).abs() < 1e-9);
            }
        }
        assert!(t.blocks[0].pad_mask.iter().all(|p| !p));
    }

    #[test]
    fn temporal_truncation_pads_and_refits() {
        let c = registry().get("C").unwrap().clone();
        let t = truncate(&c, &TruncationDirective::Temporal { layout: SplitLayout::pad_after_train() }).unwrap();
        let b = &t.blocks[0];
        assert_eq!(b.segments.iter().map(|s| s.len()).collect::<Vec<_>>(), [140, 140, 40, 80]);
        assert!(b.pad_mask[140..280].iter().all(|&p| p));
        assert!(b.buildings[0].values[140..280].iter().all(|&v| v == 0.0));
        let train = &b.buildings[0].values[..140];
        let mean = train.iter().sum::<f64>() / 140.0;
        assert!(mean.abs() < 1e-12);
    }

    #[test]
    fn combine_unions_buildings_and_schema() {
        let reg = registry();
        let spec = CombinationSpec::new("A+B", Category::UnmodifiedCombined, vec![Member::plain("A"), Member::plain("B")]);
        let ab = combine(&spec, &reg).unwrap();
        assert_eq!(ab.n_buildings(), 5);
        assert_eq!(ab.schema().features(), vec![AT, DT, SLP]);
        let tags: Vec<_> = ab.building_ids().into_iter().map(|p| p.0).collect();
        assert_eq!(tags, ["A", "A", "B", "B", "B"]);

        let w = Windows::new(&ab, InputLayout::new(ab.schema()), 16, 4, Role::Train, 50).unwrap();
        let gator_row = w.refs.iter().position(|r| r.block == 1).unwrap();
        let batch = w.batch(&[gator_row]).unwrap();
        assert_eq!(&batch.x_past.data()[1..7], &[0.0; 6], "absent features are zero with mask 0");
    }

    #[test]
    fn single_member_is_identity_plus_tags() {
        let reg = registry();
        let spec = CombinationSpec::new("onlyA", Category::Uniform, vec![Member::plain("A")]);
        let a = combine(&spec, &reg).unwrap();
        assert_eq!(a.blocks, reg.get("A").unwrap().blocks);
    }

    #[test]
    fn ensemble_is_additive() {
        let reg = registry();
        let e = build_ensemble(&reg, &["A", "B", "C"], "toy").unwrap();
        assert_eq!(e.n_buildings(), 9);
        assert!(e.schema().contains(CC));
        assert!(matches!(build_ensemble(&reg, &["A", "Z"], "bad"), Err(Error::Config(_))));
        assert!(matches!(build_full_ensemble(&reg), Err(Error::Config(_))));
    }

    #[test]
    fn timestamps_are_intersected() {
        let mut reg = registry();
        let mut late = toy("D", 1, &[AT], 400, 4);
        let shift = 100;
        late.timestamps = late.timestamps.iter().map(|t| *t + chrono::Duration::hours(shift)).collect();
        reg.insert(late);
        let spec = CombinationSpec::new("A+D", Category::ClimateVariant, vec![Member::plain("A"), Member::plain("D")]);
        let ad = combine(&spec, &reg).unwrap();
        assert_eq!(ad.len(), 300);
        assert_eq!(ad.blocks[0].buildings[0].values[0], reg.get("A").unwrap().blocks[0].buildings[0].values[100]);
        assert_eq!(ad.blocks[0].segments[0], Segment { role: Role::Train, start: 0, end: 180 });
        assert_eq!(ad.blocks[1].segments[0], Segment { role: Role::Train, start: 0, end: 280 });
        assert_eq!(ad.blocks[1].segments.len(), 2, "D's test rows fall outside the shared range");

        let mut far = toy("E", 1, &[AT], 400, 5);
        far.timestamps = far.timestamps.iter().map(|t| *t + chrono::Duration::hours(1000)).collect();
        reg.insert(far);
        let spec = CombinationSpec::new("A+E", Category::ClimateVariant, vec![Member::plain("A"), Member::plain("E")]);
        assert!(matches!(combine(&spec, &reg), Err(Error::Data(_))));
    }

    #[test]
    fn feature_truncation_commutes_with_combine() {
        let reg = registry();
        let d = TruncationDirective::Feature { drop: vec![SLP] };
        let spec = CombinationSpec::new("A+C", Category::WeatherFeatureVariant, vec![Member::plain("A"), Member::plain("C")]);
        let after = truncate(&combine(&spec, &reg).unwrap(), &d).unwrap();
        let per_member = CombinationSpec::new(
            "A+C",
            Category::WeatherFeatureVariant,
            ["A", "C"]
                .iter()
                .map(|id| Member {
                    truncate: vec![d.clone()],
                    ..Member::plain(id)
                })
                .collect(),
        );
        assert_eq!(after, combine(&per_member, &reg).unwrap());
    }

    #[test]
    fn duplicate_tags_rejected() {
        let reg = registry();
        let spec = CombinationSpec::new("AA", Category::Uniform, vec![Member::plain("A"), Member::plain("A")]);
        assert!(combine(&spec, &reg).is_err());
        let spec = CombinationSpec::new("none", Category::Uniform, vec![]);
        assert!(combine(&spec, &reg).is_err());
    }

    #[test]
    fn named_variants() {
        assert_eq!(truncated_variant("Foxtruncated1").unwrap().0, "Fox");
        assert_eq!(truncated_variant("Hogtruncated1").unwrap().1.len(), 2);
        assert!(truncated_variant("Fox").is_none());
    }
}
