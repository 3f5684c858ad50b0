//! `sci report`: accuracy tables for one or more strategy runs.

use serde::Serialize;

use sci_core::drbench::report::{accuracy_table, dataset_table, score_strategy, subset_table, StrategyScores};
use sci_core::drbench::{Predictions, RobustnessSubsets, SubsetCounts};

use super::build::{compute, subsets_path};
use super::{load_predictions, load_samples, write_if_changed};
use crate::config::RunConfig;
use crate::manifest::StageTracker;
use crate::CliError;

pub const TEXT_FILE: &str = "report.txt";
pub const JSON_FILE: &str = "report.json";

#[derive(Debug, Serialize)]
struct ReportJson<'a> {
    model_tag: &'a str,
    #[serde(rename = "M")]
    m: usize,
    #[serde(rename = "N")]
    n: usize,
    subset_counts: &'a std::collections::BTreeMap<String, SubsetCounts>,
    runs: &'a [StrategyScores],
}

pub struct ReportOutput {
    pub text: String,
    pub json: String,
    pub scores: Vec<StrategyScores>,
    pub subsets: RobustnessSubsets,
}

pub fn run(cfg: &RunConfig, runs: &[String]) -> Result<ReportOutput, CliError> {
    let mut tracker = StageTracker::start(&cfg.out_dir(), &cfg.hash());
    let runs: Vec<String> = if !runs.is_empty() {
        runs.to_vec()
    } else if !cfg.report.runs.is_empty() {
        cfg.report.runs.clone()
    } else {
        vec![cfg.label()]
    };
    let samples = load_samples(cfg)?;
    tracker.input(&cfg.samples_path())?;

    let saved = subsets_path(cfg);
    let subsets = if saved.exists() {
        tracker.input(&saved)?;
        let text = std::fs::read_to_string(&saved).map_err(|e| CliError::io(&saved, e))?;
        RobustnessSubsets::from_json(&text).map_err(|e| CliError::Data(format!("{}: {e}", saved.display())))?
    } else {
        compute(cfg, &runs[0])?
    };

    let mut scores = Vec::with_capacity(runs.len());
    for label in &runs {
        let records = load_predictions(cfg, label)?;
        tracker.input(&cfg.predictions_path(label))?;
        let preds = Predictions::from_records(&records, label);
        if preds.is_empty() {
            return Err(CliError::Data(format!(
                "{} holds no records tagged {label:?}",
                cfg.predictions_path(label).display()
            )));
        }
        scores.push(score_strategy(label, &preds, &samples, &subsets, &cfg.aliases));
    }

    let mut text = subset_table(&subsets);
    text.push('\n');
    text.push_str(&accuracy_table(&scores));
    text.push('\n');
    text.push_str(&dataset_table(&scores));
    let json = serde_json::to_string_pretty(&ReportJson {
        model_tag: &subsets.model_tag,
        m: subsets.m,
        n: subsets.n,
        subset_counts: &subsets.counts,
        runs: &scores,
    })
    .expect("report serializes");

    let dir = cfg.reports_dir();
    let (text_path, json_path) = (dir.join(TEXT_FILE), dir.join(JSON_FILE));
    write_if_changed(&text_path, text.as_bytes())?;
    write_if_changed(&json_path, (json.clone() + "\n").as_bytes())?;
    tracker.output(&text_path)?;
    tracker.output(&json_path)?;
    tracker.finish("report")?;
    Ok(ReportOutput { text, json, scores, subsets })
}
