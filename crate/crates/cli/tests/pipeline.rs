mod common;

use std::collections::BTreeSet;
use std::path::Path;

use sci_cli::commands::{build, decode, ingest, report, variants, read_jsonl};
use sci_cli::config::{Overrides, Rounds, RunConfig};
use sci_cli::CliError;
use sci_core::counterfactuals::ImageBuffer;
use sci_core::drbench::corpus::toy_corpus;
use sci_core::drbench::{expected_answer, AnswerAliases, PredictionRecord, SampleRecord};
use sci_core::engine::toy::{ToyLm, ToyLmSpec};
use sci_core::{BackendError, BackendInfo, LogitBackend, StrategyKind};
use sci_core::engine::LogitQuery;

use common::{rounds, shipped_config, strategy, with};

fn small_config(dir: &Path, count: usize) -> RunConfig {
    let corpus = dir.join("corpus.jsonl");
    ingest::write_toy_corpus(&corpus, count, 3).unwrap();
    let mut cfg = RunConfig::from_json(r#"{"backend":{"kind":"toy","spec":{"distractor":0.8}},"max_tokens":4}"#).unwrap();
    cfg.paths.sources = vec![corpus];
    cfg.out = Some(dir.join("out"));
    cfg
}

#[test]
fn decode_writes_strategy_and_base_records() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 8);
    ingest::run(&cfg, &[]).unwrap();
    let v = variants::run(&cfg).unwrap();
    assert_eq!((v.m, v.n), (2, 2));
    let summary = decode::run(&cfg).unwrap();
    assert_eq!(summary.label, "sci5");
    let records: Vec<PredictionRecord> = read_jsonl(&summary.output).unwrap();
    assert_eq!(records.iter().filter(|r| r.strategy == "sci5").count(), 8);
    assert_eq!(records.iter().filter(|r| r.strategy == "base").count(), 8 * 5);
    let ids: BTreeSet<&str> = records.iter().map(|r| r.variant_id.as_str()).collect();
    assert_eq!(ids, ["T1", "T2", "V1", "V2", "orig"].into_iter().collect());
}

#[test]
fn sci5_variants_are_two_and_two() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path(), 4);
    cfg.drbench.m = 0;
    cfg.drbench.n = 0;
    ingest::run(&cfg, &[]).unwrap();
    variants::run(&cfg).unwrap();
    for s in variants::load_sets(&cfg).unwrap() {
        assert_eq!((s.set.m(), s.set.n()), (2, 2));
    }
}

/// Fails every query for one sample's prompt, like a backend that went away.
struct FailOn<'a> {
    inner: ToyLm,
    needle: &'a str,
}

impl LogitBackend for FailOn<'_> {
    fn info(&self) -> &BackendInfo {
        self.inner.info()
    }
    fn tokenize(&self, text: &str) -> Result<Vec<u32>, BackendError> {
        self.inner.tokenize(text)
    }
    fn detokenize(&self, ids: &[u32]) -> Result<String, BackendError> {
        self.inner.detokenize(ids)
    }
    fn next_logits(&self, q: &LogitQuery<'_>) -> Result<Vec<f64>, BackendError> {
        if q.prompt.contains(self.needle) {
            return Err(BackendError::Transport("connection reset".into()));
        }
        self.inner.next_logits(q)
    }
}

#[test]
fn resume_after_failure_keeps_finished_samples() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 8);
    ingest::run(&cfg, &[]).unwrap();
    variants::run(&cfg).unwrap();
    let spec = ToyLmSpec { distractor: 0.8, ..ToyLmSpec::default() };

    let flaky = FailOn { inner: ToyLm::new(spec), needle: "scene-0005" };
    let err = decode::run_with(&cfg, &flaky).unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");
    assert!(err.to_string().contains("resume"), "{err}");
    let output = cfg.predictions_path("sci5");
    assert!(!output.exists());
    let partial = std::path::PathBuf::from(format!("{}.partial", output.display()));
    let before = std::fs::read(&partial).unwrap();
    let early: Vec<PredictionRecord> = read_jsonl(&partial).unwrap();
    let done: BTreeSet<&str> = early.iter().map(|r| r.sample_id.as_str()).collect();
    assert_eq!(done.len(), 5);
    assert!(!done.contains("toy-0005"));

    let summary = decode::run_with(&cfg, &ToyLm::new(spec)).unwrap();
    assert_eq!(summary.resumed_from, 5);
    let after = std::fs::read(&output).unwrap();
    assert!(after.starts_with(&before));

    let fresh_dir = tempfile::tempdir().unwrap();
    let mut fresh = cfg.clone();
    fresh.out = Some(fresh_dir.path().to_path_buf());
    ingest::run(&fresh, &[]).unwrap();
    variants::run(&fresh).unwrap();
    decode::run(&fresh).unwrap();
    assert_eq!(std::fs::read(fresh.predictions_path("sci5")).unwrap(), after);
}

#[test]
fn variant_images_are_cached_by_content() {
    let dir = tempfile::tempdir().unwrap();
    let img_dir = dir.path().join("img");
    std::fs::create_dir_all(&img_dir).unwrap();
    let mut tsv = String::from("id\tquestion\tanswer\timage\n");
    for i in 0..3u8 {
        let img = ImageBuffer::filled(8, 6, [40 * i, 90, 200]).unwrap();
        std::fs::write(img_dir.join(format!("{i}.png")), img.encode_png().unwrap()).unwrap();
        tsv.push_str(&format!("q{i}\tIs it blue?\tyes\timg/{i}.png\n"));
    }
    std::fs::write(dir.path().join("set.tsv"), tsv).unwrap();
    let mut cfg = RunConfig::from_json("{}").unwrap();
    cfg.paths.sources = vec![dir.path().join("set.tsv")];
    cfg.out = Some(dir.path().join("out"));
    ingest::run(&cfg, &[]).unwrap();

    let first = variants::run(&cfg).unwrap();
    assert_eq!(first.images_generated, 3 * 2);
    let second = variants::run(&cfg).unwrap();
    assert_eq!(second.images_generated, 0);
    assert_eq!(second.images_reused, 3 * 2);
    assert!(!second.written);
    let pngs = std::fs::read_dir(cfg.variants_dir())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png"))
        .count();
    assert_eq!(pngs, 6);
}

#[test]
fn zero_rounds_is_a_baseline_passthrough() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path(), 6);
    cfg.rounds = Rounds::Custom { m: 0, n: 0 };
    cfg.drbench.m = 0;
    cfg.drbench.n = 0;
    cfg.strategy.kind = StrategyKind::Baseline;
    cfg.validate().unwrap();
    ingest::run(&cfg, &[]).unwrap();
    let v = variants::run(&cfg).unwrap();
    assert_eq!(v.images_generated, 0);
    assert!(variants::load_sets(&cfg).unwrap().iter().all(|s| s.set.m() == 0 && s.set.n() == 0));
    let out = decode::run(&cfg).unwrap();
    let records: Vec<PredictionRecord> = read_jsonl(&out.output).unwrap();
    assert_eq!(records.len(), 12);
    for pair in records.chunks(2) {
        assert_eq!(pair[0].raw_text, pair[1].raw_text);
        assert_eq!((pair[0].strategy.as_str(), pair[1].strategy.as_str()), ("base", "baseline"));
    }
}

#[test]
fn build_without_predictions_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 4);
    ingest::run(&cfg, &[]).unwrap();
    let err = build::run(&cfg).err().expect("must fail");
    assert_eq!(err.exit_code(), 2);
    let expected = cfg.predictions_path("sci5");
    assert!(err.to_string().contains(&expected.display().to_string()), "{err}");
}

/// Subset membership recomputed straight from the JSONL.
fn brute_force(records: &[PredictionRecord], samples: &[SampleRecord], m: usize, n: usize) -> (BTreeSet<String>, BTreeSet<String>) {
    let answer = |s: &str, v: &str| {
        records
            .iter()
            .find(|r| r.strategy == "base" && r.sample_id == s && r.variant_id == v)
            .map(|r| r.answer.clone())
            .unwrap()
    };
    let aliases = AnswerAliases::default();
    let mut bias = BTreeSet::new();
    let mut sens = BTreeSet::new();
    for s in samples {
        let orig = answer(&s.id, "orig");
        if (1..=m).all(|j| answer(&s.id, &format!("V{j}")) == orig) && orig != expected_answer(s, &aliases) {
            bias.insert(s.id.clone());
        }
        if (1..=n).all(|i| answer(&s.id, &format!("T{i}")) != orig) {
            sens.insert(s.id.clone());
        }
    }
    (bias, sens)
}

#[test]
fn toy_subsets_match_brute_force_and_default_to_two_and_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 60);
    assert_eq!((cfg.drbench.m, cfg.drbench.n), (2, 2));
    ingest::run(&cfg, &[]).unwrap();
    variants::run(&cfg).unwrap();
    decode::run(&cfg).unwrap();
    let built = build::run(&cfg).unwrap();
    assert_eq!((built.subsets.m, built.subsets.n), (2, 2));
    let records: Vec<PredictionRecord> = read_jsonl(&cfg.predictions_path("sci5")).unwrap();
    let samples: Vec<SampleRecord> = read_jsonl(&cfg.samples_path()).unwrap();
    let (bias, sens) = brute_force(&records, &samples, 2, 2);
    assert!(!bias.is_empty());
    assert_eq!(built.subsets.bias, bias);
    assert_eq!(built.subsets.sensitivity, sens);
    let saved = std::fs::read_to_string(build::subsets_path(&cfg)).unwrap();
    assert_eq!(sci_core::drbench::RobustnessSubsets::from_json(&saved).unwrap(), built.subsets);
}

#[test]
fn report_columns_follow_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 40);
    ingest::run(&cfg, &[]).unwrap();
    variants::run(&cfg).unwrap();
    let base = with(&cfg, strategy(StrategyKind::Baseline));
    decode::run(&base).unwrap();
    decode::run(&cfg).unwrap();
    build::run(&base).unwrap();

    let one = report::run(&base, &[]).unwrap();
    assert_eq!(one.scores.len(), 1);
    assert!(!one.text.contains("delta"));
    assert_eq!(one.scores[0].bias.overall.accuracy, Some(0.0));

    let two = report::run(&cfg, &["baseline".into(), "sci5".into()]).unwrap();
    let header = two.text.lines().find(|l| l.starts_with("Subset")).unwrap();
    assert!(header.contains("baseline") && header.contains("sci5") && header.ends_with("delta"));
    let json: serde_json::Value = serde_json::from_str(&two.json).unwrap();
    assert_eq!(json["runs"].as_array().unwrap().len(), 2);
    assert!(cfg.reports_dir().join(report::TEXT_FILE).exists());
}

#[test]
fn shipped_config_pipeline_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let run = common::run_pipeline(dir.path()).unwrap();
    assert_eq!(run.subsets.m, 2);
    let manifest = sci_cli::manifest::Manifest::load(dir.path()).unwrap();
    for stage in ["ingest", "variants", "decode:baseline", "decode:sci5", "build-drbench", "report"] {
        assert!(manifest.stages.contains_key(stage), "missing {stage}");
    }
    let mut owners = std::collections::BTreeMap::new();
    for (stage, rec) in &manifest.stages {
        for path in rec.outputs.keys() {
            assert!(owners.insert(path.clone(), stage.clone()).is_none(), "{path} listed twice");
        }
    }
    assert!(owners.contains_key("samples.jsonl"));
}

#[test]
fn rerunning_ingest_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = shipped_config(dir.path());
    let first = ingest::run(&cfg, &[]).unwrap();
    assert_eq!(first.samples, 200);
    let second = ingest::run(&cfg, &[]).unwrap();
    assert!(!second.written);
    let samples: Vec<SampleRecord> = read_jsonl(&cfg.samples_path()).unwrap();
    assert_eq!(samples, toy_corpus(200, 7));
}

#[test]
fn split_partitions_select_disjoint_samples() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path(), 50);
    ingest::run(&cfg, &[]).unwrap();
    cfg.split.partition = sci_cli::config::Partition::Validation;
    let val = sci_cli::commands::load_samples(&cfg).unwrap();
    cfg.split.partition = sci_cli::config::Partition::Test;
    let test = sci_cli::commands::load_samples(&cfg).unwrap();
    assert_eq!((val.len(), test.len()), (10, 40));
    assert!(val.iter().all(|v| test.iter().all(|t| t.id != v.id)));
}

#[test]
fn overrides_change_labels_and_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), 4);
    let vcd = with(&cfg, Overrides { strategy: Some(StrategyKind::Vcd), alpha: Some(0.5), ..Default::default() });
    assert_eq!(vcd.label(), "vcd");
    assert!(vcd.predictions_path("vcd").ends_with("predictions/vcd.jsonl"));
    let sci3 = with(&cfg, rounds(Rounds::Sci3));
    assert_eq!(sci3.strategy_config().tau1, 1.5);
    assert!(matches!(
        RunConfig::from_json(r#"{"backend":{"kind":"wire"}}"#).unwrap().validate(),
        Err(CliError::Config(_))
    ));
}
