//! A deterministic synthetic language model for desk-scale experiments.
//!
//! Next-token logits are the sum of two fields:
//!
//! * a *prompt prior* computed from the prompt text alone. The question line
//!   picks a favored answer and a strength; the full prompt (including any
//!   system prefix) adds a small wording-dependent perturbation.
//! * an *image evidence* term that lifts the token the image shows, scaled by
//!   the image's remaining signal. A black image has signal 0 and contributes
//!   nothing.
//!
//! Toy images are encoded as `ImageRef::Toy("<content>=<token>[;signal=<s>]")`.
//! Once any token has been generated the model strongly prefers end-of-sequence,
//! so answers are one token long.

use serde::{Deserialize, Serialize};

use super::backend::{BackendError, BackendInfo, ImageRef, LogitBackend, LogitQuery};

pub const TOY_VOCAB: [&str; 12] = [
    "<eos>", "A", "B", "C", "D", "Yes", "No", "the", "answer", "is", ".", "<unk>",
];
pub const TOY_EOS: u32 = 0;
const UNK: u32 = 11;
const YES: u32 = 5;
const NO: u32 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyLmSpec {
    pub seed: u64,
    /// Weight of the random per-answer prior offsets.
    pub prior_scale: f64,
    /// Upper bound of the favored answer's extra prior strength.
    pub prior_strength_max: f64,
    /// Weight of the image evidence term.
    pub evidence_scale: f64,
    /// Evidence given to the candidates the image does not show, relative to
    /// the shown token. 0 keeps the evidence unambiguous.
    pub distractor: f64,
    /// Magnitude of the prompt-wording perturbation.
    pub sensitivity: f64,
    pub eos_logit: f64,
    /// Logit of tokens that are not answer candidates.
    pub filler_logit: f64,
}

impl Default for ToyLmSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            prior_scale: 1.0,
            prior_strength_max: 2.5,
            evidence_scale: 1.2,
            distractor: 0.0,
            sensitivity: 0.5,
            eos_logit: 8.0,
            filler_logit: -3.0,
        }
    }
}

/// Parsed toy image descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyImage {
    pub content: String,
    pub shows: String,
    pub signal: f64,
}

impl ToyImage {
    pub fn new(content: impl Into<String>, shows: impl Into<String>) -> Self {
        Self { content: content.into(), shows: shows.into(), signal: 1.0 }
    }

    pub fn parse(value: &str) -> Result<Self, BackendError> {
        let (body, signal) = match value.split_once(";signal=") {
            Some((body, s)) => (
                body,
                s.parse::<f64>()
                    .ok()
                    .filter(|s| s.is_finite() && (0.0..=1.0).contains(s))
                    .ok_or_else(|| BackendError::BadInput(format!("bad toy signal in {value:?}")))?,
            ),
            None => (value, 1.0),
        };
        let (content, shows) = body
            .split_once('=')
            .ok_or_else(|| BackendError::BadInput(format!("toy image {value:?} lacks '=<token>'")))?;
        Ok(Self { content: content.to_string(), shows: shows.to_string(), signal })
    }

    pub fn to_ref(&self) -> ImageRef {
        if self.signal == 1.0 {
            ImageRef::Toy(format!("{}={}", self.content, self.shows))
        } else {
            ImageRef::Toy(format!("{}={};signal={}", self.content, self.shows, self.signal))
        }
    }

    /// All evidence removed.
    pub fn black(&self) -> Self {
        Self { signal: 0.0, ..self.clone() }
    }

    /// Keeps `1 - level` of the remaining signal.
    pub fn noised(&self, level: f64) -> Self {
        Self { signal: self.signal * (1.0 - level.clamp(0.0, 1.0)), ..self.clone() }
    }
}

#[derive(Debug, Clone)]
pub struct ToyLm {
    spec: ToyLmSpec,
    info: BackendInfo,
}

impl ToyLm {
    pub fn new(spec: ToyLmSpec) -> Self {
        Self {
            spec,
            info: BackendInfo {
                vocab_size: TOY_VOCAB.len(),
                eos_id: TOY_EOS,
                deterministic: true,
                name: "toy-lm".to_string(),
            },
        }
    }

    pub fn spec(&self) -> &ToyLmSpec {
        &self.spec
    }

    pub fn token_id(word: &str) -> Option<u32> {
        TOY_VOCAB
            .iter()
            .position(|w| w.eq_ignore_ascii_case(word))
            .map(|i| i as u32)
    }

    /// The prompt-prior field alone.
    pub fn prior(&self, prompt: &str, context_ids: &[u32]) -> Vec<f64> {
        let mut out = vec![0.0; TOY_VOCAB.len()];
        if !context_ids.is_empty() {
            out[TOY_EOS as usize] = self.spec.eos_logit;
            return out;
        }
        out.iter_mut().for_each(|v| *v = self.spec.filler_logit);
        let body = question_line(prompt);
        let cands = candidates(prompt);
        let favored = cands[(self.hash(&[body, "favored"]) % cands.len() as u64) as usize];
        let strength = self.spec.prior_strength_max * self.unit(&[body, "strength"]);
        for &c in &cands {
            let word = TOY_VOCAB[c as usize];
            let mut v = self.spec.prior_scale * self.unit(&[body, word]);
            if c == favored {
                v += strength;
            }
            v += self.spec.sensitivity * (2.0 * self.unit(&[prompt, word, "wording"]) - 1.0);
            out[c as usize] = v;
        }
        out
    }

    /// The image-evidence field alone.
    pub fn evidence(&self, image: &ImageRef, context_ids: &[u32]) -> Result<Vec<f64>, BackendError> {
        let ImageRef::Toy(value) = image else {
            return Err(BackendError::BadInput(format!(
                "toy backend only reads toy images, got {}",
                image.kind()
            )));
        };
        let img = ToyImage::parse(value)?;
        let mut out = vec![0.0; TOY_VOCAB.len()];
        if !context_ids.is_empty() || img.signal == 0.0 {
            return Ok(out);
        }
        let token = Self::token_id(&img.shows)
            .ok_or_else(|| BackendError::BadInput(format!("toy image shows unknown token {:?}", img.shows)))?;
        let scale = img.signal * self.spec.evidence_scale;
        if self.spec.distractor > 0.0 {
            for (i, word) in TOY_VOCAB.iter().enumerate().take(NO as usize + 1).skip(1) {
                out[i] = scale * self.spec.distractor * self.unit(&[&img.content, word, "distractor"]);
            }
        }
        out[token as usize] = scale * (0.5 + self.unit(&[&img.content, "evidence"]));
        Ok(out)
    }

    fn hash(&self, parts: &[&str]) -> u64 {
        // FNV-1a over the seed and parts, finished with splitmix64
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        feed(&self.spec.seed.to_le_bytes());
        for p in parts {
            feed(p.as_bytes());
            feed(&[0xff]);
        }
        splitmix64(h)
    }

    fn unit(&self, parts: &[&str]) -> f64 {
        (self.hash(parts) >> 11) as f64 / (1u64 << 53) as f64
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn question_line(prompt: &str) -> &str {
    prompt
        .lines()
        .map(str::trim)
        .find(|l| l.starts_with("Question:"))
        .unwrap_or(prompt)
}

/// Option letters listed as `X. text` lines, or Yes/No when there are none.
fn candidates(prompt: &str) -> Vec<u32> {
    let letters: Vec<u32> = prompt
        .lines()
        .filter_map(|l| {
            let l = l.trim_start();
            let mut chars = l.chars();
            match (chars.next(), chars.next()) {
                (Some(c @ 'A'..='D'), Some('.')) => ToyLm::token_id(&c.to_string()),
                _ => None,
            }
        })
        .collect();
    if letters.is_empty() {
        vec![YES, NO]
    } else {
        letters
    }
}

impl LogitBackend for ToyLm {
    fn info(&self) -> &BackendInfo {
        &self.info
    }

    fn tokenize(&self, text: &str) -> Result<Vec<u32>, BackendError> {
        Ok(text
            .split_whitespace()
            .flat_map(|w| {
                let (word, dot) = match w.strip_suffix('.') {
                    Some(stem) if !stem.is_empty() => (stem, true),
                    _ => (w, false),
                };
                let mut ids = vec![ToyLm::token_id(word).unwrap_or(UNK)];
                if dot {
                    ids.push(10);
                }
                ids
            })
            .collect())
    }

    fn detokenize(&self, ids: &[u32]) -> Result<String, BackendError> {
        let mut words = Vec::with_capacity(ids.len());
        for &id in ids {
            let word = TOY_VOCAB
                .get(id as usize)
                .ok_or_else(|| BackendError::BadInput(format!("token id {id} out of range")))?;
            if id != TOY_EOS {
                words.push(*word);
            }
        }
        Ok(words.join(" "))
    }

    fn next_logits(&self, query: &LogitQuery<'_>) -> Result<Vec<f64>, BackendError> {
        let evidence = self.evidence(query.image, query.context_ids)?;
        let prior = self.prior(query.prompt, query.context_ids);
        Ok(prior.iter().zip(&evidence).map(|(p, e)| p + e).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PROMPT: &str = "Question: Which shape is in scene 3?\nOptions:\nA. circle\nB. square\nC. star\nD. cross\nAnswer with the option's letter.";

    fn query<'a>(img: &'a ImageRef, prompt: &'a str, ctx: &'a [u32]) -> LogitQuery<'a> {
        LogitQuery { image: img, prompt, context_ids: ctx }
    }

    #[test]
    fn identical_calls_identical_vectors() {
        let lm = ToyLm::new(ToyLmSpec::default());
        let img = ToyImage::new("scene-3", "B").to_ref();
        let a = lm.next_logits(&query(&img, PROMPT, &[])).unwrap();
        let b = lm.next_logits(&query(&img, PROMPT, &[])).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), lm.info().vocab_size);
    }

    #[test]
    fn black_image_has_zero_evidence() {
        let lm = ToyLm::new(ToyLmSpec::default());
        let img = ToyImage::new("scene-3", "B");
        let black = img.black().to_ref();
        assert!(lm.evidence(&black, &[]).unwrap().iter().all(|&e| e == 0.0));
        let logits = lm.next_logits(&query(&black, PROMPT, &[])).unwrap();
        assert_eq!(logits, lm.prior(PROMPT, &[]));
    }

    #[test]
    fn noise_level_scales_evidence_exactly() {
        let lm = ToyLm::new(ToyLmSpec::default());
        let img = ToyImage::new("scene-3", "B");
        let full = lm.evidence(&img.to_ref(), &[]).unwrap();
        let half = lm.evidence(&img.noised(0.5).to_ref(), &[]).unwrap();
        for (f, h) in full.iter().zip(&half) {
            assert_eq!(*h, f * 0.5);
        }
        assert!(full[2] > 0.0);
    }

    #[test]
    fn image_ref_round_trip() {
        let img = ToyImage::new("scene-9", "Yes").noised(1.0 - 0.280_334_162_887_398_1);
        let ImageRef::Toy(value) = img.to_ref() else { unreachable!() };
        assert_eq!(ToyImage::parse(&value).unwrap(), img);
        assert!(ToyImage::parse("no-token").is_err());
        assert!(ToyImage::parse("a=B;signal=2").is_err());
    }

    #[test]
    fn candidates_follow_prompt() {
        let lm = ToyLm::new(ToyLmSpec::default());
        let p = lm.prior(PROMPT, &[]);
        assert!(p[1..=4].iter().all(|&v| v != -3.0));
        assert_eq!(p[5], -3.0);
        let yn = lm.prior("Question: Is there a dog?\nPlease answer yes or no.", &[]);
        assert_eq!(yn[1], -3.0);
        assert_ne!(yn[5], -3.0);
    }

    #[test]
    fn wording_changes_prior_but_not_favorite_structure() {
        let lm = ToyLm::new(ToyLmSpec { sensitivity: 0.0, ..ToyLmSpec::default() });
        let reworded = format!("Look closely at the image.\n{PROMPT}");
        assert_eq!(lm.prior(PROMPT, &[]), lm.prior(&reworded, &[]));
        let lm = ToyLm::new(ToyLmSpec::default());
        assert_ne!(lm.prior(PROMPT, &[]), lm.prior(&reworded, &[]));
    }

    #[test]
    fn generated_context_prefers_eos() {
        let lm = ToyLm::new(ToyLmSpec::default());
        let img = ToyImage::new("scene-3", "B").to_ref();
        let logits = lm.next_logits(&query(&img, PROMPT, &[2])).unwrap();
        assert_eq!(logits[TOY_EOS as usize], 8.0);
        assert!(logits[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_non_toy_images() {
        let lm = ToyLm::new(ToyLmSpec::default());
        let img = ImageRef::Path("x.png".into());
        assert!(matches!(lm.next_logits(&query(&img, PROMPT, &[])), Err(BackendError::BadInput(_))));
    }

    #[test]
    fn tokenizer_round_trip() {
        let lm = ToyLm::new(ToyLmSpec::default());
        let ids = lm.tokenize("the answer is B.").unwrap();
        assert_eq!(ids, vec![7, 8, 9, 2, 10]);
        assert_eq!(lm.detokenize(&[2, TOY_EOS]).unwrap(), "B");
        assert_eq!(lm.tokenize("zebra").unwrap(), vec![UNK]);
    }
}
