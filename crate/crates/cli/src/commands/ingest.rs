//! `sci ingest`: dataset files to sample records.
//!
//! Accepted inputs:
//!
//! * TSV with a header row holding `id`, `question`, `answer`, `image`, and
//!   either an `options` column (`|`-separated) or one column per option
//!   letter (`A`, `B`, ...). An optional `dataset` column names the source;
//!   otherwise the file stem does.
//! * JSONL with the same keys (`options` as an array), or native sample
//!   records as written by this command.
//!
//! Image values prefixed `toy:` or `b64:` become toy or inline images; any
//! other value is a path, resolved against the source file's directory.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde_json::Value;

use sci_core::drbench::corpus::toy_corpus;
use sci_core::drbench::{build_prompt, AnswerAliases, QuestionType, SampleRecord};
use sci_core::ImageRef;

use super::{to_jsonl, write_if_changed};
use crate::config::RunConfig;
use crate::manifest::{write_atomic, StageTracker};
use crate::CliError;

/// Malformed rows beyond this share of all rows fail the run.
pub const MAX_MALFORMED_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestSummary {
    pub samples: usize,
    pub skipped: Vec<String>,
    pub output: PathBuf,
    pub written: bool,
}

impl fmt::Display for IngestSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ingested {} samples into {}", self.samples, self.output.display())?;
        if !self.skipped.is_empty() {
            write!(f, " ({} malformed rows skipped)", self.skipped.len())?;
        }
        if !self.written {
            write!(f, " (unchanged)")?;
        }
        Ok(())
    }
}

#[derive(Debug, Default)]
struct RawRow {
    id: String,
    question: String,
    options: Vec<String>,
    answer: String,
    image: String,
    dataset: Option<String>,
}

fn parse_image(value: &str, base: &Path) -> ImageRef {
    if let Some(v) = value.strip_prefix("toy:") {
        ImageRef::Toy(v.to_string())
    } else if let Some(v) = value.strip_prefix("b64:") {
        ImageRef::B64(v.to_string())
    } else {
        let p = Path::new(value);
        let p = if p.is_relative() { base.join(p) } else { p.to_path_buf() };
        ImageRef::Path(p.to_string_lossy().into_owned())
    }
}

fn to_sample(raw: RawRow, default_dataset: &str, base: &Path, aliases: &AnswerAliases) -> Result<SampleRecord, String> {
    for (name, v) in [("id", &raw.id), ("question", &raw.question), ("answer", &raw.answer), ("image", &raw.image)] {
        if v.trim().is_empty() {
            return Err(format!("missing {name}"));
        }
    }
    let options: Vec<String> = raw.options.into_iter().map(|o| o.trim().to_string()).filter(|o| !o.is_empty()).collect();
    let question_type = match options.len() {
        0 => QuestionType::Others,
        1 => return Err("a multiple-choice row needs at least two options".into()),
        n if n > 26 => return Err(format!("{n} options is more than the 26 letters available")),
        _ => QuestionType::Mcq,
    };
    let answer = raw.answer.trim().to_string();
    let lower = answer.to_lowercase();
    let yes_no = aliases.yes.iter().chain(&aliases.no).any(|a| a.to_lowercase() == lower);
    let options = (!options.is_empty()).then_some(options);
    Ok(SampleRecord {
        v: 1,
        id: raw.id.trim().to_string(),
        dataset: raw.dataset.filter(|d| !d.trim().is_empty()).unwrap_or_else(|| default_dataset.to_string()),
        question_type,
        image: parse_image(raw.image.trim(), base),
        prompt: build_prompt(&raw.question, question_type, options.as_deref(), yes_no),
        options,
        gt_answer: answer,
    })
}

struct Parsed {
    rows: Vec<(usize, Result<SampleRecord, String>)>,
}

fn parse_tsv(path: &Path, stem: &str, base: &Path, aliases: &AnswerAliases) -> Result<Parsed, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .flexible(true)
        .quoting(false)
        .from_path(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (id, question, answer, image) = (col("id"), col("question"), col("answer"), col("image"));
    if id.is_none() || question.is_none() || answer.is_none() || image.is_none() {
        return Err(CliError::Data(format!(
            "{}: header must name id, question, answer and image columns",
            path.display()
        )));
    }
    let options_col = col("options");
    let letter_cols: Vec<usize> = (b'A'..=b'Z')
        .map_while(|c| headers.iter().position(|h| h == &char::from(c).to_string()))
        .collect();
    let dataset = col("dataset");

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                rows.push((line, Err(e.to_string())));
                continue;
            }
        };
        let get = |c: Option<usize>| c.and_then(|c| record.get(c)).unwrap_or("").to_string();
        let options = match options_col {
            Some(c) => record.get(c).unwrap_or("").split('|').map(str::to_string).collect(),
            None => letter_cols.iter().map(|&c| record.get(c).unwrap_or("").to_string()).collect(),
        };
        let raw = RawRow {
            id: get(id),
            question: get(question),
            options,
            answer: get(answer),
            image: get(image),
            dataset: dataset.map(|c| get(Some(c))),
        };
        rows.push((line, to_sample(raw, stem, base, aliases)));
    }
    Ok(Parsed { rows })
}

fn json_row(v: Value, stem: &str, base: &Path, aliases: &AnswerAliases) -> Result<SampleRecord, String> {
    if v.get("image_ref").is_some() && v.get("prompt").is_some() {
        return serde_json::from_value(v).map_err(|e| e.to_string());
    }
    let text = |key: &str| match v.get(key) {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => String::new(),
    };
    let options = match v.get("options") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(a)) => a
            .iter()
            .map(|o| o.as_str().map(str::to_string).ok_or("options must be strings"))
            .collect::<Result<_, _>>()?,
        Some(_) => return Err("options must be an array".into()),
    };
    let raw = RawRow {
        id: text("id"),
        question: text("question"),
        options,
        answer: text("answer"),
        image: text("image"),
        dataset: v.get("dataset").and_then(Value::as_str).map(str::to_string),
    };
    to_sample(raw, stem, base, aliases)
}

fn parse_jsonl(path: &Path, stem: &str, base: &Path, aliases: &AnswerAliases) -> Result<Parsed, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let rows = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let row = serde_json::from_str::<Value>(l)
                .map_err(|e| e.to_string())
                .and_then(|v| json_row(v, stem, base, aliases));
            (i + 1, row)
        })
        .collect();
    Ok(Parsed { rows })
}

/// Reads every source, rejecting duplicate ids and excess malformed rows.
pub fn ingest_files(files: &[PathBuf], aliases: &AnswerAliases) -> Result<(Vec<SampleRecord>, Vec<String>), CliError> {
    if files.is_empty() {
        return Err(CliError::Usage("no input files given and paths.sources is empty".into()));
    }
    let mut samples = Vec::new();
    let mut skipped = Vec::new();
    let mut total = 0usize;
    let mut seen: HashMap<String, String> = HashMap::new();
    for path in files {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset").to_string();
        let base = path.parent().unwrap_or(Path::new("."));
        let is_tsv = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("tsv"));
        let parsed = if is_tsv {
            parse_tsv(path, &stem, base, aliases)?
        } else {
            parse_jsonl(path, &stem, base, aliases)?
        };
        for (line, row) in parsed.rows {
            total += 1;
            let at = format!("{}:{line}", path.display());
            match row {
                Ok(s) => {
                    if let Some(first) = seen.insert(s.id.clone(), at.clone()) {
                        return Err(CliError::Data(format!("duplicate id {:?} at {first} and {at}", s.id)));
                    }
                    samples.push(s);
                }
                Err(reason) => {
                    log::warn!("{at}: skipped: {reason}");
                    skipped.push(format!("{at}: {reason}"));
                }
            }
        }
    }
    if total > 0 && skipped.len() as f64 > MAX_MALFORMED_FRACTION * total as f64 {
        let shown: Vec<&str> = skipped.iter().take(5).map(String::as_str).collect();
        return Err(CliError::Data(format!(
            "{} of {total} rows are malformed (limit {:.0}%): {}",
            skipped.len(),
            100.0 * MAX_MALFORMED_FRACTION,
            shown.join("; ")
        )));
    }
    Ok((samples, skipped))
}

pub fn run(cfg: &RunConfig, files: &[PathBuf]) -> Result<IngestSummary, CliError> {
    let files = if files.is_empty() { cfg.paths.sources.clone() } else { files.to_vec() };
    let out = cfg.out_dir();
    let mut tracker = StageTracker::start(&out, &cfg.hash());
    let (samples, skipped) = ingest_files(&files, &cfg.aliases)?;
    for f in &files {
        tracker.input(f)?;
    }
    let output = cfg.samples_path();
    let written = write_if_changed(&output, &to_jsonl(&samples))?;
    tracker.output(&output)?;
    tracker.finish("ingest")?;
    Ok(IngestSummary { samples: samples.len(), skipped, output, written })
}

pub fn write_toy_corpus(path: &Path, count: usize, seed: u64) -> Result<(), CliError> {
    write_atomic(path, &to_jsonl(&toy_corpus(count, seed)))
}
