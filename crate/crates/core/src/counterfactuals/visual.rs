use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::CounterfactualError;

/// 8-bit RGB image in row-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, CounterfactualError> {
        if width == 0 || height == 0 {
            return Err(CounterfactualError::Image("image dimensions must be positive".into()));
        }
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(CounterfactualError::Image(format!(
                "{width}x{height} RGB image needs {expected} bytes, got {}",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self, CounterfactualError> {
        let pixels = rgb.iter().copied().cycle().take(width as usize * height as usize * 3).collect();
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CounterfactualError> {
        let img = image::load_from_memory(bytes)
            .map_err(|e| CounterfactualError::Image(e.to_string()))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        Self::new(w, h, img.into_raw())
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, CounterfactualError> {
        let img = image::RgbImage::from_raw(self.width, self.height, self.pixels.clone())
            .expect("dimensions validated at construction");
        let mut out = std::io::Cursor::new(Vec::new());
        img.write_to(&mut out, image::ImageFormat::Png)
            .map_err(|e| CounterfactualError::Image(e.to_string()))?;
        Ok(out.into_inner())
    }
}

/// Sets every pixel to (0, 0, 0).
pub fn black_render(img: &ImageBuffer) -> ImageBuffer {
    ImageBuffer { pixels: vec![0; img.pixels.len()], ..img.clone() }
}

/// Linear forward-diffusion schedule with `alphas_cumprod[0] = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    steps: usize,
    beta_start: f64,
    beta_end: f64,
    alphas_cumprod: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { steps: 1000, beta_start: 1e-4, beta_end: 0.02 }
    }
}

impl NoiseSchedule {
    /// `beta_s` goes linearly from `beta_start` (s = 1) to `beta_end` (s = steps).
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self, CounterfactualError> {
        let in_unit = |b: f64| b > 0.0 && b < 1.0;
        if steps == 0 || !in_unit(beta_start) || !in_unit(beta_end) || beta_end < beta_start {
            return Err(CounterfactualError::InvalidSchedule(format!(
                "steps={steps}, beta_start={beta_start}, beta_end={beta_end}"
            )));
        }
        let mut alphas_cumprod = Vec::with_capacity(steps + 1);
        alphas_cumprod.push(1.0);
        let mut acc = 1.0;
        for s in 0..steps {
            let beta = if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * s as f64 / (steps - 1) as f64
            };
            acc *= 1.0 - beta;
            alphas_cumprod.push(acc);
        }
        Ok(Self { steps, beta_start, beta_end, alphas_cumprod })
    }

    pub fn from_config(cfg: &ScheduleConfig) -> Result<Self, CounterfactualError> {
        Self::linear(cfg.steps, cfg.beta_start, cfg.beta_end)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn config(&self) -> ScheduleConfig {
        ScheduleConfig { steps: self.steps, beta_start: self.beta_start, beta_end: self.beta_end }
    }

    pub fn alphas_cumprod(&self) -> &[f64] {
        &self.alphas_cumprod
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64, CounterfactualError> {
        self.alphas_cumprod
            .get(t)
            .copied()
            .ok_or(CounterfactualError::TimestepOutOfRange { t, steps: self.steps })
    }

    /// Weight of the original image at step `t`.
    pub fn signal_coefficient(&self, t: usize) -> Result<f64, CounterfactualError> {
        Ok(self.alpha_bar(t)?.sqrt())
    }
}

fn to_unit(p: u8) -> f64 {
    p as f64 / 127.5 - 1.0
}

fn from_unit(x: f64) -> u8 {
    ((x.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

/// `sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps` in the [-1, 1] pixel domain,
/// before clamping. `eps` is drawn per pixel channel from a seeded generator.
pub fn diffusion_noise_real(
    img: &ImageBuffer,
    t: usize,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<Vec<f64>, CounterfactualError> {
    let abar = schedule.alpha_bar(t)?;
    let (signal, noise) = (abar.sqrt(), (1.0 - abar).sqrt());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(img
        .pixels
        .iter()
        .map(|&p| {
            let eps: f64 = StandardNormal.sample(&mut rng);
            signal * to_unit(p) + noise * eps
        })
        .collect())
}

/// Forward-diffusion noising of an 8-bit image at step `t`.
pub fn diffusion_noise(
    img: &ImageBuffer,
    t: usize,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<ImageBuffer, CounterfactualError> {
    if t == 0 {
        schedule.alpha_bar(0)?;
        return Ok(img.clone());
    }
    let real = diffusion_noise_real(img, t, schedule, seed)?;
    Ok(ImageBuffer { pixels: real.into_iter().map(from_unit).collect(), ..img.clone() })
}

/// A visual counterfactual generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum VisualCounterfactual {
    /// Every pixel black.
    Color0,
    /// Forward-diffusion noise at the given timestep.
    Noise(usize),
}

impl VisualCounterfactual {
    pub fn timestep(self) -> Option<usize> {
        match self {
            Self::Color0 => None,
            Self::Noise(t) => Some(t),
        }
    }
}

impl fmt::Display for VisualCounterfactual {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Color0 => f.write_str("VC-Color0"),
            Self::Noise(t) => write!(f, "VC-Noise{t}"),
        }
    }
}

impl FromStr for VisualCounterfactual {
    type Err = CounterfactualError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let rest = s.strip_prefix("VC-").unwrap_or(s);
        if rest.eq_ignore_ascii_case("Color0") {
            return Ok(Self::Color0);
        }
        rest.strip_prefix("Noise")
            .and_then(|t| t.parse().ok())
            .map(Self::Noise)
            .ok_or_else(|| CounterfactualError::UnknownVisual(s.to_string()))
    }
}

impl TryFrom<String> for VisualCounterfactual {
    type Error = CounterfactualError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<VisualCounterfactual> for String {
    fn from(v: VisualCounterfactual) -> Self {
        v.to_string()
    }
}
