//! `sci variants`: counterfactual variant sets for every sample.

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use sci_core::counterfactuals::TemplateRegistry;
use sci_core::counterfactuals::VariantBuilder;
use sci_core::VariantSet;

use super::{load_samples, read_jsonl, to_jsonl, write_if_changed};
use crate::config::RunConfig;
use crate::manifest::StageTracker;
use crate::CliError;

pub const SETS_FILE: &str = "sets.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleVariants {
    pub sample_id: String,
    pub set: VariantSet,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariantsSummary {
    pub sets: usize,
    pub m: usize,
    pub n: usize,
    pub images_generated: usize,
    pub images_reused: usize,
    pub written: bool,
}

impl fmt::Display for VariantsSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} variant sets (M={}, N={}); images generated {}, reused {}{}",
            self.sets,
            self.m,
            self.n,
            self.images_generated,
            self.images_reused,
            if self.written { "" } else { "; sets unchanged" }
        )
    }
}

pub fn templates(cfg: &RunConfig) -> Result<TemplateRegistry, CliError> {
    let mut reg = TemplateRegistry::builtin();
    if let Some(dir) = &cfg.paths.templates {
        reg.load_dir(dir).map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(reg)
}

pub fn sets_path(cfg: &RunConfig) -> PathBuf {
    cfg.variants_dir().join(SETS_FILE)
}

pub fn run(cfg: &RunConfig) -> Result<VariantsSummary, CliError> {
    let out = cfg.out_dir();
    let mut tracker = StageTracker::start(&out, &cfg.hash());
    let samples = load_samples(cfg)?;
    tracker.input(&cfg.samples_path())?;
    let (m, n) = cfg.variant_sizes();
    let dir = cfg.variants_dir();
    let mut builder = VariantBuilder::new(cfg.counterfactuals.clone(), templates(cfg)?)
        .map_err(|e| CliError::Config(e.to_string()))?
        .with_cache_dir(&dir)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let mut sets = Vec::with_capacity(samples.len());
    for s in &samples {
        let set = builder.make_variant_set(s, m, n).map_err(|e| match e {
            sci_core::counterfactuals::CounterfactualError::TooManyVariants { .. } => CliError::Config(e.to_string()),
            other => CliError::Data(format!("sample {}: {other}", s.id)),
        })?;
        sets.push(SampleVariants { sample_id: s.id.clone(), set });
    }
    let stats = builder.finish().map_err(|e| CliError::Data(e.to_string()))?;
    let path = sets_path(cfg);
    let written = write_if_changed(&path, &to_jsonl(&sets))?;
    tracker.output(&path)?;
    let cache_manifest = dir.join(sci_core::counterfactuals::MANIFEST_FILE);
    if cache_manifest.exists() {
        tracker.output(&cache_manifest)?;
    }
    tracker.finish("variants")?;
    Ok(VariantsSummary {
        sets: sets.len(),
        m,
        n,
        images_generated: stats.generated,
        images_reused: stats.reused,
        written,
    })
}

pub fn load_sets(cfg: &RunConfig) -> Result<Vec<SampleVariants>, CliError> {
    let path = sets_path(cfg);
    if !path.exists() {
        return Err(CliError::Data(format!("no variant sets at {}; run `sci variants` first", path.display())));
    }
    read_jsonl(&path)
}
