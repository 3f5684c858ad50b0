//! Plain-text tables.

use std::collections::BTreeSet;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{evaluate, AnswerAliases, Metrics, Predictions, RobustnessSubsets, SampleRecord, OVERALL};

/// One strategy scored on the full set and on each robustness subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyScores {
    pub strategy: String,
    pub all: Metrics,
    pub bias: Metrics,
    pub sensitivity: Metrics,
    pub bs: Metrics,
}

pub fn score_strategy(
    strategy: &str,
    preds: &Predictions,
    samples: &[SampleRecord],
    subsets: &RobustnessSubsets,
    aliases: &AnswerAliases,
) -> StrategyScores {
    let bs: BTreeSet<String> = subsets.bs_union();
    StrategyScores {
        strategy: strategy.to_string(),
        all: evaluate(preds, samples, None, aliases),
        bias: evaluate(preds, samples, Some(&subsets.bias), aliases),
        sensitivity: evaluate(preds, samples, Some(&subsets.sensitivity), aliases),
        bs: evaluate(preds, samples, Some(&bs), aliases),
    }
}

const ROW_KEYS: [&str; 3] = ["MCQ", "Others", OVERALL];

fn pad(out: &mut String, cells: &[String], widths: &[usize]) {
    let line: Vec<String> = cells
        .iter()
        .zip(widths)
        .enumerate()
        .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
        .collect();
    writeln!(out, "{}", line.join("  ").trim_end()).unwrap();
}

fn render(header: Vec<String>, rows: Vec<Vec<String>>) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in &rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    pad(&mut out, &header, &widths);
    let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
    writeln!(out, "{}", "-".repeat(total)).unwrap();
    for r in &rows {
        pad(&mut out, r, &widths);
    }
    out
}

/// Subset sizes per question type, then each side's share of the BS union.
pub fn subset_table(subsets: &RobustnessSubsets) -> String {
    let rows = ROW_KEYS
        .iter()
        .map(|k| {
            let c = subsets.counts.get(*k).copied().unwrap_or_default();
            vec![
                k.to_string(),
                c.bias.to_string(),
                c.sensitivity.to_string(),
                c.bs.to_string(),
                c.overlap.to_string(),
                c.total.to_string(),
            ]
        })
        .collect();
    let header = ["Type", "B", "S", "BS", "Overlap", "Total"].map(String::from).to_vec();
    let mut out = format!("model {}  M={} N={}\n", subsets.model_tag, subsets.m, subsets.n);
    out.push_str(&render(header, rows));
    match subsets.overall().proportions() {
        Some((b, s, o)) => writeln!(
            out,
            "share of BS: bias only {:.1}%, sensitivity only {:.1}%, both {:.1}%",
            100.0 * b,
            100.0 * s,
            100.0 * o
        )
        .unwrap(),
        None => writeln!(out, "share of BS: empty").unwrap(),
    }
    if subsets.incomplete > 0 {
        writeln!(out, "warning: {} samples skipped for missing predictions", subsets.incomplete).unwrap();
    }
    out
}

fn cell(m: &Metrics, key: &str) -> (String, Option<f64>) {
    let acc = if key == OVERALL { Some(m.overall) } else { m.by_type.get(key).copied() };
    match acc {
        Some(a) => (format!("{a} ({})", a.total), a.accuracy),
        None => ("empty".to_string(), None),
    }
}

/// Accuracy (%) per subset and question type, one column per strategy.
///
/// With two or more strategies a final column gives last minus first.
pub fn accuracy_table(scores: &[StrategyScores]) -> String {
    let mut header = vec!["Subset".to_string(), "Type".to_string()];
    header.extend(scores.iter().map(|s| s.strategy.clone()));
    let with_delta = scores.len() >= 2;
    if with_delta {
        header.push("delta".to_string());
    }
    let mut rows = Vec::new();
    type Pick = fn(&StrategyScores) -> &Metrics;
    let pick: [(&str, Pick); 4] = [
        ("All", |s| &s.all),
        ("Bias", |s| &s.bias),
        ("Sensitivity", |s| &s.sensitivity),
        ("BS", |s| &s.bs),
    ];
    for (name, get) in pick {
        for key in ROW_KEYS {
            let cells: Vec<(String, Option<f64>)> = scores.iter().map(|s| cell(get(s), key)).collect();
            let mut row = vec![name.to_string(), key.to_string()];
            row.extend(cells.iter().map(|c| c.0.clone()));
            if with_delta {
                let first = cells.first().and_then(|c| c.1);
                let last = cells.last().and_then(|c| c.1);
                row.push(match (first, last) {
                    (Some(a), Some(b)) => format!("{:+.2}", 100.0 * (b - a)),
                    _ => "-".to_string(),
                });
            }
            rows.push(row);
        }
    }
    render(header, rows)
}

/// Full-set accuracy (%) per dataset, one column per strategy.
pub fn dataset_table(scores: &[StrategyScores]) -> String {
    let mut header = vec!["Dataset".to_string()];
    header.extend(scores.iter().map(|s| s.strategy.clone()));
    let datasets: BTreeSet<&String> = scores.iter().flat_map(|s| s.all.by_dataset.keys()).collect();
    let rows = datasets
        .into_iter()
        .map(|d| {
            let mut row = vec![d.clone()];
            row.extend(scores.iter().map(|s| match s.all.by_dataset.get(d) {
                Some(a) => format!("{a} ({})", a.total),
                None => "empty".to_string(),
            }));
            row
        })
        .collect();
    render(header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drbench::SubsetCounts;
    use std::collections::BTreeMap;

    #[test]
    fn subset_table_lists_every_type() {
        let mut counts = BTreeMap::new();
        counts.insert("MCQ".into(), SubsetCounts { bias: 3, sensitivity: 2, bs: 4, overlap: 1, total: 10 });
        counts.insert(OVERALL.into(), SubsetCounts { bias: 3, sensitivity: 2, bs: 4, overlap: 1, total: 10 });
        let s = RobustnessSubsets {
            model_tag: "toy".into(),
            m: 2,
            n: 2,
            bias: BTreeSet::new(),
            sensitivity: BTreeSet::new(),
            counts,
            incomplete: 0,
        };
        let t = subset_table(&s);
        assert!(t.contains("MCQ"));
        assert!(t.contains("Others"));
        assert!(t.contains("bias only 50.0%"));
        assert!(t.contains("both 25.0%"));
    }

    #[test]
    fn accuracy_table_shows_delta_and_empty() {
        let empty = Metrics::default();
        let a = StrategyScores {
            strategy: "baseline".into(),
            all: empty.clone(),
            bias: empty.clone(),
            sensitivity: empty.clone(),
            bs: empty.clone(),
        };
        let t = accuracy_table(&[a.clone(), StrategyScores { strategy: "sci5".into(), ..a }]);
        assert!(t.lines().next().unwrap().ends_with("delta"));
        assert!(t.contains("empty"));
    }
}
