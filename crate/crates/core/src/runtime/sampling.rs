//! Token selection from logits.
//!
//! Temperature sampling draws from a ChaCha20 stream seeded with
//! `rand_chacha::ChaCha20Rng::seed_from_u64(seed)`; each draw is one
//! uniform `f64` in `[0, 1)` inverted through the cumulative softmax.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    #[default]
    Greedy,
    Temperature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    #[serde(default)]
    pub mode: SamplingMode,
    #[serde(default = "default_temperature")]
    pub temperature: f32,
    /// Generation horizon.
    pub max_tokens: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub stop_on_eos: bool,
}

fn default_temperature() -> f32 {
    1.0
}

fn default_true() -> bool {
    true
}

impl SamplingConfig {
    pub fn greedy(max_tokens: usize) -> Self {
        Self {
            mode: SamplingMode::Greedy,
            temperature: 1.0,
            max_tokens,
            seed: 0,
            stop_on_eos: true,
        }
    }

    pub fn temperature(temperature: f32, max_tokens: usize, seed: u64) -> Self {
        Self {
            mode: SamplingMode::Temperature,
            temperature,
            max_tokens,
            seed,
            stop_on_eos: true,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_tokens == 0 {
            return Err(Error::InvalidSampling(
                "max_tokens must be at least 1".into(),
            ));
        }
        if self.mode == SamplingMode::Temperature
            && !(self.temperature > 0.0 && self.temperature.is_finite())
        {
            return Err(Error::InvalidSampling(format!(
                "temperature {} must be positive",
                self.temperature
            )));
        }
        Ok(())
    }
}

pub(crate) struct Sampler {
    mode: SamplingMode,
    temperature: f32,
    rng: ChaCha20Rng,
}

impl Sampler {
    pub fn new(cfg: &SamplingConfig) -> Self {
        Self {
            mode: cfg.mode,
            temperature: cfg.temperature,
            rng: ChaCha20Rng::seed_from_u64(cfg.seed),
        }
    }

    pub fn pick(&mut self, logits: &[f32]) -> u32 {
        match self.mode {
            SamplingMode::Greedy => argmax(logits) as u32,
            SamplingMode::Temperature => {
                let t = self.temperature as f64;
                let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
                let weights: Vec<f64> = logits
                    .iter()
                    .map(|&l| ((l as f64 - max) / t).exp())
                    .collect();
                let total: f64 = weights.iter().sum();
                let mut target = self.rng.random::<f64>() * total;
                for (i, w) in weights.iter().enumerate() {
                    if target < *w {
                        return i as u32;
                    }
                    target -= w;
                }
                // rounding left a sliver past the last bucket
                weights.iter().rposition(|&w| w > 0.0).unwrap_or(0) as u32
            }
        }
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(xs: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
