#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sci_cli::commands::{build, decode, ingest, report, variants};
use sci_cli::config::{Overrides, Rounds, RunConfig};
use sci_cli::CliError;
use sci_core::drbench::RobustnessSubsets;
use sci_core::StrategyKind;

pub const RUNS: [&str; 4] = ["baseline", "sci3", "sci5", "sci7"];

pub fn toy_data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/toy")
}

/// The shipped toy config with its output redirected to `out`.
pub fn shipped_config(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::load(&toy_data_dir().join("config.json")).expect("shipped config loads");
    cfg.out = Some(out.to_path_buf());
    cfg
}

pub fn with(cfg: &RunConfig, o: Overrides) -> RunConfig {
    let mut c = cfg.clone();
    c.apply(&o);
    c.validate().expect("override keeps the config valid");
    c
}

pub fn strategy(kind: StrategyKind) -> Overrides {
    Overrides { strategy: Some(kind), ..Default::default() }
}

pub fn rounds(r: Rounds) -> Overrides {
    Overrides { rounds: Some(r), ..Default::default() }
}

pub struct PipelineRun {
    pub subsets: RobustnessSubsets,
    pub report: report::ReportOutput,
    /// Prediction JSONL bytes per strategy label.
    pub predictions: BTreeMap<String, Vec<u8>>,
}

/// ingest, variants, decode (baseline and sci3/5/7), build-drbench, report.
pub fn run_pipeline(out: &Path) -> Result<PipelineRun, CliError> {
    let cfg = shipped_config(out);
    ingest::run(&cfg, &[])?;
    variants::run(&with(&cfg, rounds(Rounds::Sci7)))?;
    decode::run(&with(&cfg, strategy(StrategyKind::Baseline)))?;
    for r in [Rounds::Sci3, Rounds::Sci5, Rounds::Sci7] {
        decode::run(&with(&cfg, rounds(r)))?;
    }
    let built = build::run(&with(&cfg, strategy(StrategyKind::Baseline)))?;
    let runs: Vec<String> = RUNS.iter().map(|s| s.to_string()).collect();
    let report = report::run(&cfg, &runs)?;
    let predictions = RUNS
        .iter()
        .map(|l| (l.to_string(), std::fs::read(cfg.predictions_path(l)).expect("predictions written")))
        .collect();
    Ok(PipelineRun { subsets: built.subsets, report, predictions })
}
