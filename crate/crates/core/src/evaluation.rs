//! Metrics, seed aggregation, improvement percentages and table rendering.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_pair(pred: &[f64], actual: &[f64]) -> Result<()> {
    if pred.is_empty() {
        return Err(Error::Contract("metric of an empty series".into()));
    }
    if pred.len() != actual.len() {
        return Err(Error::Contract(format!(
            "prediction length {} differs from actual length {}",
            pred.len(),
            actual.len()
        )));
    }
    Ok(())
}

/// Mean absolute error.
pub fn mae(pred: &[f64], actual: &[f64]) -> Result<f64> {
    check_pair(pred, actual)?;
    Ok(pred.iter().zip(actual).map(|(p, a)| (p - a).abs()).sum::<f64>() / pred.len() as f64)
}

/// Mean squared error.
pub fn mse(pred: &[f64], actual: &[f64]) -> Result<f64> {
    check_pair(pred, actual)?;
    Ok(pred.iter().zip(actual).map(|(p, a)| (p - a).powi(2)).sum::<f64>() / pred.len() as f64)
}

/// `100 * (base - new) / base`; positive means `new` is better.
pub fn improvement_pct(base: f64, new: f64) -> Result<f64> {
    if !(base > 0.0) {
        return Err(Error::Contract(format!("improvement against non-positive base {base}")));
    }
    Ok(100.0 * (base - new) / base)
}

/// Half-away-from-zero rounding to `decimals` places, tolerant of binary
/// representation error at the half point (2.675 rounds to 2.68).
pub fn round_half_away(x: f64, decimals: u32) -> f64 {
    let p = 10f64.powi(decimals as i32);
    let y = x * p;
    let nudged = y + y.signum() * 1e-9 * y.abs().max(1.0);
    nudged.round() / p
}

/// Metric value as printed in tables: three decimals.
pub fn format_metric(x: f64) -> String {
    format!("{:.3}", round_half_away(x, 3))
}

/// Percentage as printed in tables: signed, one decimal, `+0.0%` for zero.
pub fn format_pct(x: f64) -> String {
    let r = round_half_away(x, 1);
    if r == 0.0 {
        "+0.0%".to_string()
    } else {
        format!("{r:+.1}%")
    }
}

/// Error metrics of one evaluation on the standardized scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub mae: f64,
    pub mse: f64,
    pub horizon: usize,
    pub n_predictions: usize,
}

impl MetricSet {
    pub fn from_predictions(pred: &[f64], actual: &[f64], horizon: usize) -> Result<Self> {
        Ok(Self {
            mae: mae(pred, actual)?,
            mse: mse(pred, actual)?,
            horizon,
            n_predictions: pred.len(),
        })
    }

    /// `mae^2 <= mse`, up to rounding.
    pub fn satisfies_jensen(&self) -> bool {
        self.mae * self.mae <= self.mse * (1.0 + 1e-12) + 1e-15
    }

    /// Arithmetic mean of each field (prediction counts are summed).
    pub fn mean(sets: &[MetricSet]) -> Result<MetricSet> {
        let first = sets
            .first()
            .ok_or_else(|| Error::Contract("mean of zero metric sets".into()))?;
        let n = sets.len() as f64;
        Ok(MetricSet {
            mae: sets.iter().map(|s| s.mae).sum::<f64>() / n,
            mse: sets.iter().map(|s| s.mse).sum::<f64>() / n,
            horizon: first.horizon,
            n_predictions: sets.iter().map(|s| s.n_predictions).sum(),
        })
    }
}

/// Identifies one row of the study.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ReportKey {
    pub arch: String,
    pub horizon: usize,
    pub target: String,
    /// `S1`..`S8`.
    pub strategy: String,
    /// Label of the training corpus, e.g. `Bear+Fox`.
    pub corpus: String,
}

impl ReportKey {
    /// Baseline: one-source zero-shot with the target as its own source.
    pub fn is_baseline(&self) -> bool {
        self.strategy == "S1" && self.corpus == self.target
    }

    /// The corpus without the target that S5..S8 append to it.
    pub fn sources(&self) -> &str {
        let with_target = matches!(self.strategy.as_str(), "S5" | "S6" | "S7" | "S8");
        let suffix = format!("+{}", self.target);
        match self.corpus.strip_suffix(suffix.as_str()) {
            Some(rest) if with_target && !rest.is_empty() => rest,
            _ => &self.corpus,
        }
    }

    pub fn baseline_key(&self) -> ReportKey {
        ReportKey {
            strategy: "S1".into(),
            corpus: self.target.clone(),
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub mae_pct: f64,
    pub mse_pct: f64,
}

/// Per-seed metrics of one plan, their mean and the gain over a baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub key: ReportKey,
    pub per_seed: Vec<(u64, MetricSet)>,
    pub mean: MetricSet,
    /// Seeds the plan asked for; fewer results make the mean partial.
    pub expected_seeds: Vec<u64>,
    pub baseline: Option<String>,
    pub improvement: Option<Improvement>,
}

impl EvaluationReport {
    pub fn new(key: ReportKey, mut per_seed: Vec<(u64, MetricSet)>, expected_seeds: Vec<u64>) -> Result<Self> {
        per_seed.sort_by_key(|p| p.0);
        let sets: Vec<MetricSet> = per_seed.iter().map(|p| p.1).collect();
        Ok(Self {
            mean: MetricSet::mean(&sets)?,
            key,
            per_seed,
            expected_seeds,
            baseline: None,
            improvement: None,
        })
    }

    pub fn is_partial(&self) -> bool {
        let got: BTreeSet<u64> = self.per_seed.iter().map(|p| p.0).collect();
        self.expected_seeds.iter().any(|s| !got.contains(s))
    }

    pub fn attach_baseline(&mut self, base: &EvaluationReport) -> Result<()> {
        self.improvement = Some(Improvement {
            mae_pct: improvement_pct(base.mean.mae, self.mean.mae)?,
            mse_pct: improvement_pct(base.mean.mse, self.mean.mse)?,
        });
        self.baseline = Some(format!("{}:{}", base.key.strategy, base.key.corpus));
        Ok(())
    }
}

/// Links every non-baseline report to the baseline of its (arch, horizon, target).
pub fn attach_baselines(reports: &mut [EvaluationReport]) -> Result<()> {
    let bases: BTreeMap<ReportKey, EvaluationReport> = reports
        .iter()
        .filter(|r| r.key.is_baseline())
        .map(|r| (r.key.clone(), r.clone()))
        .collect();
    for r in reports.iter_mut().filter(|r| !r.key.is_baseline()) {
        if let Some(b) = bases.get(&r.key.baseline_key()) {
            r.attach_baseline(b)?;
        }
    }
    Ok(())
}

/// Rendered artifacts: `(file name, contents)` plus warnings raised while rendering.
#[derive(Clone, Debug, Default)]
pub struct Tables {
    pub files: Vec<(String, String)>,
    pub warnings: Vec<String>,
}

const MISSING: &str = "-";

fn align(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                let pad = widths[c] - cell.chars().count();
                if c == 0 {
                    format!("{cell}{}", " ".repeat(pad))
                } else {
                    format!("{}{cell}", " ".repeat(pad))
                }
            })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

fn group_label(arch: &str, horizon: usize) -> String {
    format!("{}_{horizon}h", arch.to_ascii_lowercase())
}

/// Zero-shot matrices and strategy summaries as aligned text, plus one
/// long-format CSV holding every value at full precision.
pub fn render_tables(reports: &[EvaluationReport]) -> Result<Tables> {
    let mut reports = reports.to_vec();
    attach_baselines(&mut reports)?;
    let mut tables = Tables::default();
    for r in reports.iter().filter(|r| r.is_partial()) {
        tables.warnings.push(format!(
            "{} {} -> {} ({}h, {}): mean over {} of {} seeds",
            r.key.strategy,
            r.key.corpus,
            r.key.target,
            r.key.horizon,
            r.key.arch,
            r.per_seed.len(),
            r.expected_seeds.len()
        ));
    }

    let groups: BTreeSet<(String, usize)> = reports.iter().map(|r| (r.key.arch.clone(), r.key.horizon)).collect();
    for (arch, horizon) in &groups {
        let in_group: Vec<&EvaluationReport> = reports
            .iter()
            .filter(|r| &r.key.arch == arch && r.key.horizon == *horizon)
            .collect();
        let label = group_label(arch, *horizon);

        let zero_shot: Vec<&&EvaluationReport> = in_group
            .iter()
            .filter(|r| matches!(r.key.strategy.as_str(), "S1" | "S2"))
            .collect();
        if !zero_shot.is_empty() {
            let rows_keys: BTreeSet<&str> = zero_shot.iter().map(|r| r.key.corpus.as_str()).collect();
            let cols: BTreeSet<&str> = zero_shot.iter().map(|r| r.key.target.as_str()).collect();
            let mut text = format!(
                "Zero-shot MAE, {arch}, {horizon}-hour horizon (rows: trained on, columns: tested on; * = baseline)\n\n"
            );
            let mut rows = vec![std::iter::once("Trained on".to_string())
                .chain(cols.iter().map(|c| c.to_string()))
                .collect::<Vec<_>>()];
            for rk in &rows_keys {
                let mut row = vec![rk.to_string()];
                for c in &cols {
                    match zero_shot.iter().find(|r| r.key.corpus == *rk && r.key.target == *c) {
                        Some(r) => {
                            let mark = if r.key.is_baseline() { "*" } else { "" };
                            row.push(format!("{}{mark}", format_metric(r.mean.mae)));
                        }
                        None => {
                            tables
                                .warnings
                                .push(format!("zero-shot {label}: no result for {rk} -> {c}"));
                            row.push(MISSING.to_string());
                        }
                    }
                }
                rows.push(row);
            }
            text.push_str(&align(&rows));
            tables.files.push((format!("zero_shot_{label}.txt"), text));
        }

        let strategies: BTreeSet<&str> = in_group
            .iter()
            .filter(|r| !r.key.is_baseline())
            .map(|r| r.key.strategy.as_str())
            .collect();
        if strategies.is_empty() {
            continue;
        }
        let lines: BTreeSet<(&str, &str)> = in_group
            .iter()
            .filter(|r| !r.key.is_baseline())
            .map(|r| (r.key.sources(), r.key.target.as_str()))
            .collect();
        let mut text = format!("Strategy summary, {arch}, {horizon}-hour horizon\n\n");
        for metric in ["MAE", "MSE"] {
            let pick = |m: &MetricSet| if metric == "MAE" { m.mae } else { m.mse };
            let mut header = vec!["Sources".to_string(), "Target".to_string(), format!("Base {metric}")];
            for s in &strategies {
                header.push(format!("{s} {metric}"));
                header.push("Imp".to_string());
            }
            let mut rows = vec![header];
            for (corpus, target) in &lines {
                let base = in_group.iter().find(|r| r.key.is_baseline() && r.key.target == *target);
                let mut row = vec![corpus.to_string(), target.to_string()];
                match base {
                    Some(b) => row.push(format_metric(pick(&b.mean))),
                    None => {
                        tables.warnings.push(format!("summary {label}: no baseline for {target}"));
                        row.push(MISSING.to_string());
                    }
                }
                for s in &strategies {
                    let cell = in_group
                        .iter()
                        .find(|r| r.key.strategy == *s && r.key.sources() == *corpus && r.key.target == *target);
                    match cell {
                        Some(r) => {
                            row.push(format_metric(pick(&r.mean)));
                            row.push(match (base, r.improvement) {
                                (Some(_), Some(i)) => format_pct(if metric == "MAE" { i.mae_pct } else { i.mse_pct }),
                                _ => MISSING.to_string(),
                            });
                        }
                        None => {
                            tables
                                .warnings
                                .push(format!("summary {label}: no {s} result for {corpus} -> {target}"));
                            row.push(MISSING.to_string());
                            row.push(MISSING.to_string());
                        }
                    }
                }
                rows.push(row);
            }
            text.push_str(&align(&rows));
            text.push('\n');
        }
        let not_studied: Vec<&str> = strategies.iter().copied().filter(|s| matches!(*s, "S3" | "S4")).collect();
        if !not_studied.is_empty() {
            let _ = writeln!(text, "Note: {} are compositions not evaluated in the original study.", not_studied.join(", "));
        }
        tables.files.push((format!("summary_{label}.txt"), text));
    }

    tables.files.push(("results.csv".to_string(), long_csv(&reports)?));
    tables.warnings.sort();
    tables.warnings.dedup();
    Ok(tables)
}

/// One CSV row per (report, seed or mean, metric).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LongRow {
    pub arch: String,
    pub horizon: usize,
    pub strategy: String,
    pub corpus: String,
    pub target: String,
    /// Seed number, or `mean`.
    pub seed: String,
    pub metric: String,
    pub value: f64,
    pub baseline: bool,
    pub improvement_pct: Option<f64>,
    pub partial: bool,
}

fn long_csv(reports: &[EvaluationReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Format(e.to_string());
    for r in reports {
        let mut emit = |seed: String, m: &MetricSet, imp: Option<Improvement>| -> Result<()> {
            for (metric, value, pct) in [
                ("mae", m.mae, imp.map(|i| i.mae_pct)),
                ("mse", m.mse, imp.map(|i| i.mse_pct)),
            ] {
                w.serialize(LongRow {
                    arch: r.key.arch.clone(),
                    horizon: r.key.horizon,
                    strategy: r.key.strategy.clone(),
                    corpus: r.key.corpus.clone(),
                    target: r.key.target.clone(),
                    seed: seed.clone(),
                    metric: metric.into(),
                    value,
                    baseline: r.key.is_baseline(),
                    improvement_pct: pct,
                    partial: r.is_partial(),
                })
                .map_err(csv_err)?;
            }
            Ok(())
        };
        for (seed, m) in &r.per_seed {
            emit(seed.to_string(), m, None)?;
        }
        emit("mean".into(), &r.mean, r.improvement)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

/// Parses the CSV written by [`render_tables`].
pub fn parse_long_csv(text: &str) -> Result<Vec<LongRow>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn metric_examples() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[0.0, 0.0], &[1.0, -1.0]).unwrap(), 1.0);
        assert_eq!(mse(&[0.0, 0.0], &[1.0, -1.0]).unwrap(), 1.0);
        assert!(matches!(mae(&[], &[]), Err(Error::Contract(_))));
        assert!(matches!(mse(&[1.0], &[1.0, 2.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn improvement_examples() {
        assert_eq!(format_pct(improvement_pct(0.305, 0.291).unwrap()), "+4.6%");
        assert_eq!(format_pct(improvement_pct(0.305, 0.283).unwrap()), "+7.2%");
        assert_eq!(improvement_pct(0.4, 0.4).unwrap(), 0.0);
        assert_eq!(format_pct(improvement_pct(0.270, 0.270).unwrap()), "+0.0%");
        assert_eq!(format_pct(improvement_pct(0.378, 0.377).unwrap() * -1.0), "-0.3%");
        assert!(improvement_pct(0.0, 1.0).is_err());
        assert!(improvement_pct(-1.0, 1.0).is_err());
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(round_half_away(2.675, 2), 2.68);
        assert_eq!(round_half_away(-2.675, 2), -2.68);
        assert_eq!(round_half_away(0.0005, 3), 0.001);
        assert_eq!(round_half_away(-0.05, 1), -0.1);
        assert_eq!(format_metric(0.1234), "0.123");
        assert_eq!(format_pct(-0.04), "+0.0%");
    }

    proptest! {
        #[test]
        fn sign_flips_exactly_when_worse(base in 0.01f64..10.0, new in 0.0f64..10.0) {
            let p = improvement_pct(base, new).unwrap();
            prop_assert_eq!(p < 0.0, new > base);
            prop_assert_eq!(p == 0.0, new == base);
        }

        #[test]
        fn jensen_holds(v in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..50)) {
            let (p, a): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            prop_assert!(MetricSet::from_predictions(&p, &a, 24).unwrap().satisfies_jensen());
        }

        #[test]
        fn seed_mean_is_permutation_invariant(m in proptest::collection::vec((0.0f64..2.0, 0.0f64..2.0), 1..6)) {
            let sets: Vec<MetricSet> = m.iter().map(|&(a, b)| MetricSet { mae: a, mse: b, horizon: 24, n_predictions: 1 }).collect();
            let mut rev = sets.clone();
            rev.reverse();
            let (x, y) = (MetricSet::mean(&sets).unwrap(), MetricSet::mean(&rev).unwrap());
            prop_assert!((x.mae - y.mae).abs() < 1e-15 && (x.mse - y.mse).abs() < 1e-15);
        }
    }

    fn report(strategy: &str, corpus: &str, target: &str, maes: &[f64]) -> EvaluationReport {
        let per_seed = maes
            .iter()
            .enumerate()
            .map(|(i, &m)| {
                (
                    [1, 50, 100][i],
                    MetricSet {
                        mae: m,
                        mse: m * m * 1.5,
                        horizon: 24,
                        n_predictions: 10,
                    },
                )
            })
            .collect();
        EvaluationReport::new(
            ReportKey {
                arch: "Vanilla".into(),
                horizon: 24,
                target: target.into(),
                strategy: strategy.into(),
                corpus: corpus.into(),
            },
            per_seed,
            vec![1, 50, 100],
        )
        .unwrap()
    }

    #[test]
    fn report_mean_and_partial_flag() {
        let r = report("S1", "Bear", "Bear", &[0.3, 0.31, 0.32]);
        assert!((r.mean.mae - 0.31).abs() < 1e-15);
        assert!(!r.is_partial());
        assert!(report("S1", "Bear", "Bear", &[0.3]).is_partial());
    }

    #[test]
    fn one_by_one_matrix_with_baseline_flag() {
        let t = render_tables(&[report("S1", "Bear", "Bear", &[0.305, 0.305, 0.305])]).unwrap();
        let (_, zs) = t.files.iter().find(|f| f.0.starts_with("zero_shot")).unwrap();
        assert!(zs.contains("0.305*"), "{zs}");
        assert_eq!(zs.lines().filter(|l| l.starts_with("Bear")).count(), 1);
        assert!(t.warnings.is_empty());
    }

    #[test]
    fn summary_and_missing_cells() {
        let reports = vec![
            report("S1", "Bear", "Bear", &[0.305, 0.305, 0.305]),
            report("S6", "Bear+Fox", "Bear", &[0.291, 0.291, 0.291]),
            report("S1", "Fox", "Bear", &[0.4, 0.4, 0.4]),
            report("S1", "Fox", "Fox", &[0.3, 0.3]),
        ];
        let t = render_tables(&reports).unwrap();
        let (_, summary) = t.files.iter().find(|f| f.0.starts_with("summary")).unwrap();
        assert!(summary.contains("+4.6%"), "{summary}");
        let (_, zs) = t.files.iter().find(|f| f.0.starts_with("zero_shot")).unwrap();
        assert!(zs.split_whitespace().any(|c| c == MISSING), "Bear -> Fox was never run:\n{zs}");
        assert!(t.warnings.iter().any(|w| w.contains("Bear -> Fox")));
        assert!(t.warnings.iter().any(|w| w.contains("2 of 3 seeds")));
    }

    #[test]
    fn strategies_sharing_sources_share_a_summary_row() {
        let reports = vec![
            report("S1", "Tgt", "Tgt", &[0.5, 0.5, 0.5]),
            report("S1", "Src", "Tgt", &[0.6, 0.6, 0.6]),
            report("S5", "Src+Tgt", "Tgt", &[0.45, 0.45, 0.45]),
            report("S7", "Src+Tgt", "Tgt", &[0.4, 0.4, 0.4]),
        ];
        assert_eq!(reports[2].key.sources(), "Src");
        assert_eq!(reports[1].key.sources(), "Src");
        let t = render_tables(&reports).unwrap();
        let (_, summary) = t.files.iter().find(|f| f.0.starts_with("summary")).unwrap();
        let mae_rows: Vec<&str> = summary.lines().filter(|l| l.starts_with("Src")).collect();
        assert_eq!(mae_rows.len(), 2, "one MAE and one MSE row:\n{summary}");
        assert!(mae_rows[0].split_whitespace().all(|c| c != MISSING), "{summary}");
        assert!(t.warnings.is_empty(), "{:?}", t.warnings);
    }

    #[test]
    fn csv_round_trips_losslessly() {
        let reports = vec![
            report("S1", "Bear", "Bear", &[0.1 + 0.2, 1.0 / 3.0, 0.305]),
            report("S8", "Bear+Fox", "Bear", &[std::f64::consts::PI / 10.0, 0.2, 0.25]),
        ];
        let t = render_tables(&reports).unwrap();
        let (_, csv) = t.files.iter().find(|f| f.0 == "results.csv").unwrap();
        let rows = parse_long_csv(csv).unwrap();
        assert_eq!(rows.len(), 2 * (3 + 1) * 2);
        let first = rows.iter().find(|r| r.seed == "1" && r.metric == "mae").unwrap();
        assert_eq!(first.value, 0.1 + 0.2);
        let mean = rows
            .iter()
            .find(|r| r.seed == "mean" && r.strategy == "S8" && r.metric == "mae")
            .unwrap();
        let mut with_base = reports.clone();
        attach_baselines(&mut with_base).unwrap();
        assert_eq!(mean.value, with_base[1].mean.mae);
        assert_eq!(mean.improvement_pct, Some(with_base[1].improvement.unwrap().mae_pct));
    }
}
