//! One module per subcommand plus shared I/O helpers.

pub mod build;
pub mod decode;
pub mod ingest;
pub mod report;
pub mod serve;
pub mod variants;

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use sci_core::drbench::{split_validation_test, PredictionRecord, SampleRecord};
use sci_core::engine::toy::ToyLm;
use sci_core::engine::wire::WireBackend;
use sci_core::LogitBackend;

use crate::config::{BackendConfig, Partition, RunConfig};
use crate::manifest::write_atomic;
use crate::CliError;

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| CliError::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(item);
    }
    Ok(out)
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).expect("record serializes");
        out.push(b'\n');
    }
    out
}

/// Writes `bytes` unless the file already holds exactly them. Returns whether it wrote.
pub fn write_if_changed(path: &Path, bytes: &[u8]) -> Result<bool, CliError> {
    if std::fs::read(path).is_ok_and(|old| old == bytes) {
        return Ok(false);
    }
    write_atomic(path, bytes)?;
    Ok(true)
}

pub fn append_jsonl<T: Serialize>(w: &mut impl Write, items: &[T]) -> std::io::Result<()> {
    w.write_all(&to_jsonl(items))
}

/// Samples for the configured split partition, in file order.
pub fn load_samples(cfg: &RunConfig) -> Result<Vec<SampleRecord>, CliError> {
    let path = cfg.samples_path();
    if !path.exists() {
        return Err(CliError::Data(format!("no samples at {}; run `sci ingest` first", path.display())));
    }
    let samples: Vec<SampleRecord> = read_jsonl(&path)?;
    if cfg.split.partition == Partition::All {
        return Ok(samples);
    }
    let (val, test) = split_validation_test(&samples, cfg.split.fraction, cfg.split.seed)
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(match cfg.split.partition {
        Partition::Validation => val,
        _ => test,
    })
}

pub fn load_predictions(cfg: &RunConfig, label: &str) -> Result<Vec<PredictionRecord>, CliError> {
    let path = cfg.predictions_path(label);
    if !path.exists() {
        return Err(CliError::Data(format!(
            "no predictions for {label:?} at {}; run `sci decode` for that strategy first",
            path.display()
        )));
    }
    read_jsonl(&path)
}

pub fn open_backend(cfg: &RunConfig) -> Result<Box<dyn LogitBackend>, CliError> {
    match &cfg.backend {
        BackendConfig::Toy { spec } => Ok(Box::new(ToyLm::new(*spec))),
        BackendConfig::Wire { endpoint: Some(addr), .. } => WireBackend::connect(addr.as_str())
            .map(|b| Box::new(b) as Box<dyn LogitBackend>)
            .map_err(|e| CliError::Backend(format!("cannot reach backend at {addr}: {e}"))),
        BackendConfig::Wire { endpoint: None, launch } => WireBackend::spawn(launch)
            .map(|b| Box::new(b) as Box<dyn LogitBackend>)
            .map_err(|e| CliError::Backend(format!("cannot launch backend {launch:?}: {e}"))),
    }
}
