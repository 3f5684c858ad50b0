//! Run configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sci_core::counterfactuals::CounterfactualConfig;
use sci_core::drbench::AnswerAliases;
use sci_core::engine::toy::ToyLmSpec;
use sci_core::strategies::{TauSchedule, TAU2_DEFAULT};
use sci_core::{SamplerConfig, StrategyConfig, StrategyKind};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendConfig {
    Toy {
        #[serde(default)]
        spec: ToyLmSpec,
    },
    /// An external server speaking the logit wire protocol, reached at
    /// `endpoint` (TCP `host:port`) or started from `launch` on stdio.
    Wire {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        endpoint: Option<String>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        launch: Vec<String>,
    },
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Toy { spec: ToyLmSpec::default() }
    }
}

/// How many visual (`m`) and textual (`n`) counterfactuals decoding reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rounds {
    Sci3,
    #[default]
    Sci5,
    Sci7,
    Custom {
        m: usize,
        n: usize,
    },
}

impl Rounds {
    pub fn sizes(self) -> (usize, usize) {
        match self {
            Rounds::Sci3 => (1, 1),
            Rounds::Sci5 => (2, 2),
            Rounds::Sci7 => (3, 3),
            Rounds::Custom { m, n } => (m, n),
        }
    }

    /// τ1 used when the config leaves it unset.
    pub fn default_tau1(self) -> f64 {
        match self {
            Rounds::Sci3 => 1.5,
            Rounds::Sci5 => 2.0,
            Rounds::Sci7 => 2.5,
            Rounds::Custom { m, n } => match m.max(n) {
                0 | 1 => 1.5,
                2 => 2.0,
                _ => 2.5,
            },
        }
    }
}

impl fmt::Display for Rounds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rounds::Sci3 => f.write_str("sci3"),
            Rounds::Sci5 => f.write_str("sci5"),
            Rounds::Sci7 => f.write_str("sci7"),
            Rounds::Custom { m, n } => write!(f, "sci-m{m}n{n}"),
        }
    }
}

impl FromStr for Rounds {
    type Err = String;

    /// Accepts `sci3`, `sci5`, `sci7`, or `M,N` (optionally prefixed `custom:`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sci3" => Ok(Rounds::Sci3),
            "sci5" => Ok(Rounds::Sci5),
            "sci7" => Ok(Rounds::Sci7),
            other => {
                let body = other.strip_prefix("custom:").unwrap_or(other);
                let (m, n) = body
                    .split_once(',')
                    .ok_or_else(|| format!("rounds must be sci3, sci5, sci7 or M,N; got {s:?}"))?;
                let parse = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("bad rounds {s:?}: {e}"));
                Ok(Rounds::Custom { m: parse(m)?, n: parse(n)? })
            }
        }
    }
}

fn default_beta() -> Option<f64> {
    Some(sci_core::strategies::BETA_DRBENCH)
}

/// Strategy settings; `tau1` falls back to the rounds default when absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySection {
    pub kind: StrategyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau2: Option<f64>,
    /// `null` turns the plausibility constraint off.
    #[serde(default = "default_beta")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m3id_schedule: Option<TauSchedule>,
    /// Tag written on strategy records; derived from kind and rounds when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl Default for StrategySection {
    fn default() -> Self {
        Self {
            kind: StrategyKind::Sci,
            alpha: None,
            tau1: None,
            tau2: None,
            beta: default_beta(),
            m3id_schedule: None,
            label: None,
        }
    }
}

impl StrategySection {
    pub fn resolve(&self, rounds: Rounds) -> StrategyConfig {
        let mut cfg = match self.kind {
            StrategyKind::Baseline => StrategyConfig::baseline(),
            StrategyKind::Tie => StrategyConfig::tie(),
            StrategyKind::Vcd => StrategyConfig::vcd(self.alpha.unwrap_or(1.0)),
            StrategyKind::M3id => StrategyConfig::m3id(self.m3id_schedule.unwrap_or_default()),
            StrategyKind::Sci => StrategyConfig::sci(
                self.tau1.unwrap_or(rounds.default_tau1()),
                self.tau2.unwrap_or(TAU2_DEFAULT),
            ),
        };
        if self.kind != StrategyKind::Baseline {
            cfg = cfg.with_beta(self.beta);
        }
        cfg
    }

    pub fn label(&self, rounds: Rounds) -> String {
        match (&self.label, self.kind) {
            (Some(l), _) => l.clone(),
            (None, StrategyKind::Sci) => rounds.to_string(),
            (None, kind) => kind.as_str().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Raw dataset files read by `ingest` when none are given on the command line.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub sources: Vec<PathBuf>,
    pub samples: PathBuf,
    pub variants_cache: PathBuf,
    /// `{label}` is replaced by the strategy label.
    pub predictions: String,
    pub reports: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub templates: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            sources: Vec::new(),
            samples: "samples.jsonl".into(),
            variants_cache: "variants".into(),
            predictions: "predictions/{label}.jsonl".into(),
            reports: "reports".into(),
            templates: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    #[default]
    All,
    Validation,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub fraction: f64,
    pub seed: u64,
    pub partition: Partition,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { fraction: 0.2, seed: 0, partition: Partition::All }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DrbenchConfig {
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub model_tag: String,
}

impl Default for DrbenchConfig {
    fn default() -> Self {
        Self { m: 2, n: 2, model_tag: "model".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[derive(Default)]
pub struct ReportConfig {
    /// Strategy labels to place side by side; empty means the configured one.
    pub runs: Vec<String>,
}


fn default_max_tokens() -> usize {
    8
}

fn default_parallelism() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub strategy: StrategySection,
    #[serde(default)]
    pub rounds: Rounds,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub drbench: DrbenchConfig,
    #[serde(default)]
    pub counterfactuals: CounterfactualConfig,
    #[serde(default)]
    pub aliases: AnswerAliases,
    #[serde(default)]
    pub report: ReportConfig,
    /// Output directory; relative paths above resolve against it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

/// Command-line values that replace config entries.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub rounds: Option<Rounds>,
    pub strategy: Option<StrategyKind>,
    pub seed: Option<u64>,
    pub parallelism: Option<usize>,
    /// `Some(None)` turns the constraint off.
    pub beta: Option<Option<f64>>,
    pub tau1: Option<f64>,
    pub tau2: Option<f64>,
    pub alpha: Option<f64>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))
    }

    /// Reads `path`; a missing `out` defaults to the config file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        cfg.out = Some(match cfg.out.take() {
            Some(out) if out.is_relative() => base.join(out),
            Some(out) => out,
            None => base.to_path_buf(),
        });
        cfg.paths.sources = cfg
            .paths
            .sources
            .iter()
            .map(|s| if s.is_relative() { base.join(s) } else { s.clone() })
            .collect();
        if let Some(t) = cfg.paths.templates.take() {
            cfg.paths.templates = Some(if t.is_relative() { base.join(t) } else { t });
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(r) = o.rounds {
            self.rounds = r;
        }
        if let Some(k) = o.strategy {
            self.strategy.kind = k;
            self.strategy.label = None;
        }
        if let Some(s) = o.seed {
            self.sampler.seed = s;
        }
        if let Some(p) = o.parallelism {
            self.parallelism = p;
        }
        if let Some(b) = o.beta {
            self.strategy.beta = b;
        }
        if let Some(t) = o.tau1 {
            self.strategy.tau1 = Some(t);
        }
        if let Some(t) = o.tau2 {
            self.strategy.tau2 = Some(t);
        }
        if let Some(a) = o.alpha {
            self.strategy.alpha = Some(a);
        }
        if let Some(out) = &o.out {
            self.out = Some(out.clone());
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let strategy = self.strategy_config();
        strategy.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.sampler.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let (m, _) = self.rounds.sizes();
        strategy
            .check_preconditions(m)
            .map_err(|e| CliError::Config(format!("rounds {}: {e}", self.rounds)))?;
        if self.max_tokens == 0 {
            return Err(CliError::Config("max_tokens must be at least 1".into()));
        }
        if self.parallelism == 0 {
            return Err(CliError::Config("parallelism must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.split.fraction) {
            return Err(CliError::Config(format!("split.fraction must lie in [0, 1], got {}", self.split.fraction)));
        }
        if let BackendConfig::Wire { endpoint: None, launch } = &self.backend {
            if launch.is_empty() {
                return Err(CliError::Config("wire backend needs an endpoint or a launch command".into()));
            }
        }
        Ok(())
    }

    pub fn strategy_config(&self) -> StrategyConfig {
        self.strategy.resolve(self.rounds)
    }

    pub fn label(&self) -> String {
        self.strategy.label(self.rounds)
    }

    /// Variants per sample needed by decoding and subset construction together.
    pub fn variant_sizes(&self) -> (usize, usize) {
        let (m, n) = self.rounds.sizes();
        (m.max(self.drbench.m), n.max(self.drbench.n))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_relative() {
            self.out_dir().join(p)
        } else {
            p.to_path_buf()
        }
    }

    pub fn samples_path(&self) -> PathBuf {
        self.resolve(&self.paths.samples)
    }

    pub fn variants_dir(&self) -> PathBuf {
        self.resolve(&self.paths.variants_cache)
    }

    pub fn predictions_path(&self, label: &str) -> PathBuf {
        self.resolve(Path::new(&self.paths.predictions.replace("{label}", label)))
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.resolve(&self.paths.reports)
    }

    /// SHA-256 of the canonical JSON form, without the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}
