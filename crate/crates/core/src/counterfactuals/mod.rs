//! Visual and textual counterfactual inputs.

mod templates;
mod visual;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use templates::{apply_template, PromptTemplate, TemplateRegistry, IDENTITY_ID, PLACEHOLDER};
pub use visual::{
    black_render, diffusion_noise, diffusion_noise_real, ImageBuffer, NoiseSchedule, ScheduleConfig,
    VisualCounterfactual,
};

use crate::drbench::SampleRecord;
use crate::engine::toy::ToyImage;
use crate::engine::{ImageRef, Variant, VariantSet};

#[derive(Debug, thiserror::Error)]
pub enum CounterfactualError {
    #[error("timestep {t} out of range for a {steps}-step schedule")]
    TimestepOutOfRange { t: usize, steps: usize },
    #[error("invalid noise schedule: {0}")]
    InvalidSchedule(String),
    #[error("unknown prompt template {0:?}")]
    UnknownTemplate(String),
    #[error("unknown visual counterfactual {0:?}")]
    UnknownVisual(String),
    #[error("template error: {0}")]
    Template(String),
    #[error("requested {requested} {kind} variants but only {available} are configured")]
    TooManyVariants { kind: &'static str, requested: usize, available: usize },
    #[error("image error: {0}")]
    Image(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CounterfactualError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }
}

pub fn default_visual_order() -> Vec<VisualCounterfactual> {
    vec![VisualCounterfactual::Color0, VisualCounterfactual::Noise(500), VisualCounterfactual::Noise(400)]
}

pub fn default_textual_order() -> Vec<String> {
    vec!["TC-V1".into(), "TC-V2".into(), "TC-V3".into()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CounterfactualConfig {
    pub schedule: ScheduleConfig,
    pub visual_order: Vec<VisualCounterfactual>,
    pub textual_order: Vec<String>,
    pub seed: u64,
}

impl Default for CounterfactualConfig {
    fn default() -> Self {
        Self {
            schedule: ScheduleConfig::default(),
            visual_order: default_visual_order(),
            textual_order: default_textual_order(),
            seed: 0,
        }
    }
}

/// One generated image in the variant cache.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub variant_id: String,
    pub generator: String,
    pub seed: u64,
    pub t: Option<usize>,
    pub sha256: String,
    pub file: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheManifest {
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub generated: usize,
    pub reused: usize,
}

pub const MANIFEST_FILE: &str = "manifest.json";

struct VariantCache {
    dir: PathBuf,
    known: BTreeMap<String, ManifestEntry>,
    entries: BTreeMap<(String, String), ManifestEntry>,
    stats: CacheStats,
}

/// Seed for one (sample, variant) pair, independent of processing order.
pub fn derive_seed(base: u64, sample_id: &str, variant_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(sample_id.as_bytes());
    h.update([0]);
    h.update(variant_id.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Builds [`VariantSet`]s for samples, optionally caching generated images on disk.
pub struct VariantBuilder {
    config: CounterfactualConfig,
    schedule: NoiseSchedule,
    templates: TemplateRegistry,
    cache: Option<VariantCache>,
}

impl VariantBuilder {
    pub fn new(config: CounterfactualConfig, templates: TemplateRegistry) -> Result<Self, CounterfactualError> {
        let schedule = NoiseSchedule::from_config(&config.schedule)?;
        for v in &config.visual_order {
            if let Some(t) = v.timestep() {
                schedule.alpha_bar(t)?;
            }
        }
        for id in &config.textual_order {
            templates.get(id)?;
        }
        Ok(Self { config, schedule, templates, cache: None })
    }

    /// Writes generated images as PNG files under `dir`, reusing files from
    /// earlier runs when their content key matches.
    pub fn with_cache_dir(mut self, dir: impl Into<PathBuf>) -> Result<Self, CounterfactualError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| CounterfactualError::io(&dir, e))?;
        let manifest_path = dir.join(MANIFEST_FILE);
        let known = if manifest_path.exists() {
            let text = std::fs::read_to_string(&manifest_path).map_err(|e| CounterfactualError::io(&manifest_path, e))?;
            let manifest: CacheManifest = serde_json::from_str(&text)
                .map_err(|e| CounterfactualError::Image(format!("corrupt cache manifest: {e}")))?;
            manifest.entries.into_iter().map(|e| (e.file.clone(), e)).collect()
        } else {
            BTreeMap::new()
        };
        self.cache = Some(VariantCache { dir, known, entries: BTreeMap::new(), stats: CacheStats::default() });
        Ok(self)
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn templates(&self) -> &TemplateRegistry {
        &self.templates
    }

    /// The original plus the first `m` visual and first `n` textual generators.
    pub fn make_variant_set(
        &mut self,
        sample: &SampleRecord,
        m: usize,
        n: usize,
    ) -> Result<VariantSet, CounterfactualError> {
        if m > self.config.visual_order.len() {
            return Err(CounterfactualError::TooManyVariants {
                kind: "visual",
                requested: m,
                available: self.config.visual_order.len(),
            });
        }
        if n > self.config.textual_order.len() {
            return Err(CounterfactualError::TooManyVariants {
                kind: "textual",
                requested: n,
                available: self.config.textual_order.len(),
            });
        }
        let mut set = VariantSet::single(sample.image.clone(), sample.prompt.clone());
        for j in 0..m {
            let generator = self.config.visual_order[j];
            let variant_id = format!("V{}", j + 1);
            let image = self.visual_variant(sample, &variant_id, generator)?;
            set.visual.push(Variant { id: variant_id, image, prompt: sample.prompt.clone() });
        }
        for i in 0..n {
            let tpl = self.templates.get(&self.config.textual_order[i])?;
            set.textual.push(Variant {
                id: format!("T{}", i + 1),
                image: sample.image.clone(),
                prompt: tpl.apply(&sample.prompt),
            });
        }
        Ok(set)
    }

    fn visual_variant(
        &mut self,
        sample: &SampleRecord,
        variant_id: &str,
        generator: VisualCounterfactual,
    ) -> Result<ImageRef, CounterfactualError> {
        let source = match &sample.image {
            ImageRef::Toy(value) => {
                let img = ToyImage::parse(value).map_err(|e| CounterfactualError::Image(e.to_string()))?;
                let out = match generator {
                    VisualCounterfactual::Color0 => img.black(),
                    VisualCounterfactual::Noise(t) => {
                        ToyImage { signal: img.signal * self.schedule.signal_coefficient(t)?, ..img }
                    }
                };
                return Ok(out.to_ref());
            }
            ImageRef::Path(p) => std::fs::read(p).map_err(|e| CounterfactualError::io(Path::new(p), e))?,
            ImageRef::B64(b) => base64::engine::general_purpose::STANDARD
                .decode(b)
                .map_err(|e| CounterfactualError::Image(format!("bad base64 image: {e}")))?,
        };

        let seed = derive_seed(self.config.seed, &sample.id, variant_id);
        let generator_id = generator.to_string();
        let key = {
            let mut h = Sha256::new();
            h.update(&source);
            h.update(generator_id.as_bytes());
            h.update(seed.to_le_bytes());
            h.update(serde_json::to_vec(&self.schedule.config()).expect("schedule serializes"));
            hex::encode(h.finalize())
        };
        let render = |schedule: &NoiseSchedule| -> Result<Vec<u8>, CounterfactualError> {
            let img = ImageBuffer::decode(&source)?;
            let out = match generator {
                VisualCounterfactual::Color0 => black_render(&img),
                VisualCounterfactual::Noise(t) => diffusion_noise(&img, t, schedule, seed)?,
            };
            out.encode_png()
        };

        let Some(cache) = self.cache.as_mut() else {
            let png = render(&self.schedule)?;
            return Ok(ImageRef::B64(base64::engine::general_purpose::STANDARD.encode(png)));
        };
        let file = format!("{key}.png");
        let path = cache.dir.join(&file);
        let sha256 = if path.exists() {
            cache.stats.reused += 1;
            match cache.known.get(&file) {
                Some(entry) => entry.sha256.clone(),
                None => sha256_hex(&std::fs::read(&path).map_err(|e| CounterfactualError::io(&path, e))?),
            }
        } else {
            let png = render(&self.schedule)?;
            let tmp = path.with_extension("png.tmp");
            std::fs::write(&tmp, &png).map_err(|e| CounterfactualError::io(&tmp, e))?;
            std::fs::rename(&tmp, &path).map_err(|e| CounterfactualError::io(&path, e))?;
            cache.stats.generated += 1;
            sha256_hex(&png)
        };
        cache.entries.insert(
            (sample.id.clone(), variant_id.to_string()),
            ManifestEntry {
                sample_id: sample.id.clone(),
                variant_id: variant_id.to_string(),
                generator: generator_id,
                seed,
                t: generator.timestep(),
                sha256,
                file,
            },
        );
        Ok(ImageRef::Path(path.to_string_lossy().into_owned()))
    }

    /// Writes the cache manifest (when caching) and reports what was generated.
    pub fn finish(self) -> Result<CacheStats, CounterfactualError> {
        let Some(cache) = self.cache else { return Ok(CacheStats::default()) };
        if cache.entries.is_empty() && cache.known.is_empty() {
            return Ok(cache.stats);
        }
        let manifest = CacheManifest { entries: cache.entries.into_values().collect() };
        let path = cache.dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| CounterfactualError::io(&path, e))?;
        Ok(cache.stats)
    }
}
