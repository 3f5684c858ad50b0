//! `sci decode`: prediction records for every sample.
//!
//! Each sample yields greedy baseline records for the original and for each
//! variant the subset builder reads (tagged `base`), followed by one record for
//! the original decoded with the configured strategy. Records are appended to a
//! `.partial` file chunk by chunk, with a checkpoint next to it, so a run that
//! stops early picks up where it left off.

use std::collections::HashMap;
use std::fmt;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sci_core::drbench::{extract_answer, PredictionRecord, SampleRecord, BASE_TAG, ORIGINAL_ID};
use sci_core::{decode_batch, BackendError, DecodeError, DecodeRequest, LogitBackend, SamplerConfig, StrategyConfig, VariantSet};

use super::variants::load_sets;
use super::{append_jsonl, load_samples, open_backend};
use crate::config::RunConfig;
use crate::manifest::{write_atomic, StageTracker};
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeSummary {
    pub label: String,
    pub samples: usize,
    pub records: usize,
    pub resumed_from: usize,
    pub output: PathBuf,
}

impl fmt::Display for DecodeSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "decoded {} samples with {} into {}", self.samples, self.label, self.output.display())?;
        if self.resumed_from > 0 {
            write!(f, " (resumed after {})", self.resumed_from)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Checkpoint {
    config_hash: String,
    samples_done: usize,
    bytes: u64,
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

struct Job {
    variant_id: String,
    tag: String,
    request: DecodeRequest,
}

fn jobs_for(cfg: &RunConfig, label: &str, strategy: &StrategyConfig, set: &VariantSet) -> Vec<Job> {
    let base = |id: &str, image, prompt: &str| Job {
        variant_id: id.to_string(),
        tag: BASE_TAG.to_string(),
        request: DecodeRequest::new(VariantSet::single(image, prompt), StrategyConfig::baseline())
            .with_sampler(SamplerConfig::greedy())
            .with_max_tokens(cfg.max_tokens),
    };
    let mut jobs = vec![base(ORIGINAL_ID, set.original.image.clone(), &set.original.prompt)];
    jobs.extend(set.visual[..cfg.drbench.m].iter().map(|v| base(&v.id, v.image.clone(), &v.prompt)));
    jobs.extend(set.textual[..cfg.drbench.n].iter().map(|v| base(&v.id, v.image.clone(), &v.prompt)));
    let (m, n) = cfg.rounds.sizes();
    jobs.push(Job {
        variant_id: ORIGINAL_ID.to_string(),
        tag: label.to_string(),
        request: DecodeRequest::new(set.truncated(m, n), *strategy)
            .with_sampler(cfg.sampler)
            .with_max_tokens(cfg.max_tokens),
    });
    jobs
}

fn decode_failure(sample: &str, err: DecodeError, checkpoint: &Path) -> CliError {
    match &err {
        DecodeError::Backend { source: BackendError::Transport(_) | BackendError::Remote { .. }, .. } => {
            CliError::Backend(format!(
                "sample {sample}: {err}; progress saved in {}, rerun to resume",
                checkpoint.display()
            ))
        }
        e if e.is_config() => CliError::Config(format!("sample {sample}: {err}")),
        _ => CliError::Data(format!("sample {sample}: {err}")),
    }
}

pub fn run(cfg: &RunConfig) -> Result<DecodeSummary, CliError> {
    let backend = open_backend(cfg)?;
    run_with(cfg, backend.as_ref())
}

pub fn run_with(cfg: &RunConfig, backend: &dyn LogitBackend) -> Result<DecodeSummary, CliError> {
    let out = cfg.out_dir();
    let config_hash = cfg.hash();
    let mut tracker = StageTracker::start(&out, &config_hash);
    let samples = load_samples(cfg)?;
    let sets: HashMap<String, VariantSet> = load_sets(cfg)?.into_iter().map(|s| (s.sample_id, s.set)).collect();
    tracker.input(&cfg.samples_path())?;
    tracker.input(&super::variants::sets_path(cfg))?;

    let label = cfg.label();
    let strategy = cfg.strategy_config();
    let (rm, rn) = cfg.rounds.sizes();
    let (need_m, need_n) = (rm.max(cfg.drbench.m), rn.max(cfg.drbench.n));
    let mut ordered: Vec<(&SampleRecord, &VariantSet)> = Vec::with_capacity(samples.len());
    for s in &samples {
        let set = sets
            .get(&s.id)
            .ok_or_else(|| CliError::Data(format!("no variants for sample {}; rerun `sci variants`", s.id)))?;
        if set.m() < need_m || set.n() < need_n {
            return Err(CliError::Data(format!(
                "sample {} has {} visual and {} textual variants but {need_m} and {need_n} are needed; rerun `sci variants`",
                s.id,
                set.m(),
                set.n()
            )));
        }
        ordered.push((s, set));
    }

    let output = cfg.predictions_path(&label);
    let partial = sibling(&output, ".partial");
    let ckpt_path = sibling(&output, ".checkpoint.json");
    if let Some(dir) = output.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }

    let resume = std::fs::read_to_string(&ckpt_path)
        .ok()
        .and_then(|t| serde_json::from_str::<Checkpoint>(&t).ok())
        .filter(|c| c.config_hash == config_hash && c.samples_done <= ordered.len())
        .filter(|c| std::fs::metadata(&partial).is_ok_and(|m| m.len() >= c.bytes));
    let (start, bytes) = match &resume {
        Some(c) => {
            log::info!("resuming {label} after {} samples", c.samples_done);
            (c.samples_done, c.bytes)
        }
        None => (0, 0),
    };
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .truncate(false)
        .open(&partial)
        .map_err(|e| CliError::io(&partial, e))?;
    file.set_len(bytes).map_err(|e| CliError::io(&partial, e))?;
    let mut file = OpenOptions::new().append(true).open(&partial).map_err(|e| CliError::io(&partial, e))?;

    let mut done = start;
    let mut written = bytes;
    let save = |done: usize, bytes: u64| {
        let c = Checkpoint { config_hash: config_hash.clone(), samples_done: done, bytes };
        write_atomic(&ckpt_path, serde_json::to_string(&c).expect("checkpoint serializes").as_bytes())
    };
    save(done, written)?;

    let chunk = (cfg.parallelism * 4).max(8);
    while done < ordered.len() {
        let end = (done + chunk).min(ordered.len());
        let mut jobs: Vec<(usize, Job)> = Vec::new();
        for (gi, (_, set)) in ordered.iter().enumerate().take(end).skip(done) {
            jobs.extend(jobs_for(cfg, &label, &strategy, set).into_iter().map(|j| (gi, j)));
        }
        // decode_batch mixes the batch position into each seed; cancel it so
        // the effective seed depends on the sample index alone.
        let requests: Vec<DecodeRequest> = jobs
            .iter()
            .enumerate()
            .map(|(li, (gi, j))| {
                let mut r = j.request.clone();
                r.sampler.seed ^= (*gi as u64) ^ (li as u64);
                r
            })
            .collect();
        let mut results = decode_batch(backend, &requests, cfg.parallelism).into_iter();

        let mut buf = Vec::new();
        let mut failure = None;
        let mut finished = done;
        let mut job_iter = jobs.iter().peekable();
        while let Some(&(gi, _)) = job_iter.peek() {
            let sample = ordered[*gi].0;
            let mut records = Vec::new();
            while let Some((_, job)) = job_iter.next_if(|(g, _)| g == gi) {
                match results.next().expect("one result per job") {
                    Ok(r) => records.push(PredictionRecord::new(
                        &sample.id,
                        &job.variant_id,
                        &job.tag,
                        &extract_answer(&r.text, sample, &cfg.aliases),
                        &r.text,
                    )),
                    Err(e) if failure.is_none() => failure = Some((sample.id.clone(), e)),
                    Err(_) => {}
                }
            }
            if failure.is_some() {
                break;
            }
            append_jsonl(&mut buf, &records).expect("writing to memory");
            finished += 1;
        }
        file.write_all(&buf).map_err(|e| CliError::io(&partial, e))?;
        file.flush().map_err(|e| CliError::io(&partial, e))?;
        written += buf.len() as u64;
        done = finished;
        save(done, written)?;
        if let Some((id, e)) = failure {
            return Err(decode_failure(&id, e, &ckpt_path));
        }
    }
    drop(file);
    std::fs::rename(&partial, &output).map_err(|e| CliError::io(&output, e))?;
    let _ = std::fs::remove_file(&ckpt_path);
    tracker.output(&output)?;
    tracker.finish(&format!("decode:{label}"))?;
    let records = ordered.len() * (2 + cfg.drbench.m + cfg.drbench.n);
    Ok(DecodeSummary { label, samples: ordered.len(), records, resumed_from: start, output })
}
