//! `sci build-drbench`: bias and sensitivity subsets from greedy predictions.

use std::path::PathBuf;

use sci_core::drbench::report::subset_table;
use sci_core::drbench::{build_subsets, Predictions, RobustnessSubsets, BASE_TAG};

use super::{load_predictions, load_samples, write_if_changed};
use crate::config::RunConfig;
use crate::manifest::StageTracker;
use crate::CliError;

pub const SUBSETS_FILE: &str = "drbench_subsets.json";
pub const TABLE_FILE: &str = "drbench_table.txt";

pub struct BuildOutput {
    pub subsets: RobustnessSubsets,
    pub table: String,
    pub subsets_path: PathBuf,
}

pub fn subsets_path(cfg: &RunConfig) -> PathBuf {
    cfg.reports_dir().join(SUBSETS_FILE)
}

/// Subsets from the base records of the configured run.
pub fn compute(cfg: &RunConfig, label: &str) -> Result<RobustnessSubsets, CliError> {
    let samples = load_samples(cfg)?;
    let records = load_predictions(cfg, label)?;
    let preds = Predictions::from_records(&records, BASE_TAG);
    let subsets = build_subsets(&preds, &samples, cfg.drbench.m, cfg.drbench.n, &cfg.drbench.model_tag, &cfg.aliases);
    if subsets.incomplete > 0 {
        log::warn!(
            "{} samples lack base predictions for M={} N={}; decode with matching drbench sizes",
            subsets.incomplete,
            cfg.drbench.m,
            cfg.drbench.n
        );
    }
    Ok(subsets)
}

pub fn run(cfg: &RunConfig) -> Result<BuildOutput, CliError> {
    let mut tracker = StageTracker::start(&cfg.out_dir(), &cfg.hash());
    let label = cfg.label();
    let subsets = compute(cfg, &label)?;
    tracker.input(&cfg.samples_path())?;
    tracker.input(&cfg.predictions_path(&label))?;
    let table = subset_table(&subsets);
    let subsets_path = subsets_path(cfg);
    let table_path = cfg.reports_dir().join(TABLE_FILE);
    write_if_changed(&subsets_path, (subsets.to_json() + "\n").as_bytes())?;
    write_if_changed(&table_path, table.as_bytes())?;
    tracker.output(&subsets_path)?;
    tracker.output(&table_path)?;
    tracker.finish("build-drbench")?;
    Ok(BuildOutput { subsets, table, subsets_path })
}
