//! Forward pass, last-token capture and steered autoregressive decoding.
//!
//! "Representation at layer l" (1-based) is the residual stream leaving
//! transformer block l. Steering adds `gamma * u^l` at exactly that site, so
//! the shifted state is what block l+1 (and the key/value cache) consumes.

use std::collections::BTreeMap;

use super::model::{LayerWeights, ModelBundle, ModelConfig};
use super::sampling::{Sampler, SamplingConfig};
use super::tokenizer::EOS;
use crate::error::{Error, Result};

/// Last-token hidden state for each layer `1..=N` (stored 0-based).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRepresentations {
    pub layers: Vec<Vec<f32>>,
}

impl LayerRepresentations {
    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// Hidden state leaving block `l`, 1-based.
    pub fn layer(&self, l: usize) -> &[f32] {
        &self.layers[l - 1]
    }
}

/// Additive steering `z + gamma * u^l` applied at a set of layers.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringSpec {
    gamma: f32,
    /// 1-based layer -> unit direction.
    directions: BTreeMap<usize, Vec<f32>>,
}

const UNIT_NORM_TOL: f64 = 1e-4;

impl SteeringSpec {
    pub fn new(gamma: f32, directions: BTreeMap<usize, Vec<f32>>) -> Result<Self> {
        if !gamma.is_finite() {
            return Err(Error::InvalidSteering(format!(
                "gamma {gamma} is not finite"
            )));
        }
        if directions.is_empty() {
            return Err(Error::InvalidSteering("empty layer set".into()));
        }
        for (&l, u) in &directions {
            let norm = u
                .iter()
                .map(|&x| (x as f64) * (x as f64))
                .sum::<f64>()
                .sqrt();
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::InvalidSteering(format!(
                    "direction at layer {l} has norm {norm}, expected 1"
                )));
            }
        }
        Ok(Self { gamma, directions })
    }

    pub fn gamma(&self) -> f32 {
        self.gamma
    }

    pub fn layer_set(&self) -> impl Iterator<Item = usize> + '_ {
        self.directions.keys().copied()
    }

    pub fn direction(&self, layer: usize) -> Option<&[f32]> {
        self.directions.get(&layer).map(Vec::as_slice)
    }

    pub fn validate_for(&self, cfg: &ModelConfig) -> Result<()> {
        for (&l, u) in &self.directions {
            if l == 0 || l > cfg.n_layers {
                return Err(Error::InvalidSteering(format!(
                    "layer {l} outside 1..={}",
                    cfg.n_layers
                )));
            }
            if u.len() != cfg.d_model {
                return Err(Error::InvalidSteering(format!(
                    "direction at layer {l} has length {}, model d_model is {}",
                    u.len(),
                    cfg.d_model
                )));
            }
        }
        Ok(())
    }
}

/// Population layer norm with affine transform.
pub fn layer_norm(x: &[f32], g: &[f32], b: &[f32], eps: f32) -> Vec<f32> {
    let n = x.len() as f32;
    let mean = x.iter().sum::<f32>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
    let inv = 1.0 / (var + eps).sqrt();
    x.iter()
        .zip(g.iter().zip(b))
        .map(|(v, (g, b))| (v - mean) * inv * g + b)
        .collect()
}

/// Tanh approximation used by GPT-2.
pub fn gelu(x: f32) -> f32 {
    const C: f32 = 0.797_884_6; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

/// In-place numerically stable softmax.
pub fn softmax(xs: &mut [f32]) {
    let max = xs.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

/// Incremental decoding state over one shared model: a per-layer key/value
/// cache and the number of positions processed.
pub struct Session<'m> {
    model: &'m ModelBundle,
    keys: Vec<Vec<f32>>,
    values: Vec<Vec<f32>>,
    len: usize,
}

impl<'m> Session<'m> {
    pub fn new(model: &'m ModelBundle) -> Self {
        let n = model.config.n_layers;
        Self {
            model,
            keys: vec![Vec::new(); n],
            values: vec![Vec::new(); n],
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Process one token at the next position and return the final residual
    /// stream (before `ln_f`). When `capture` is given, the post-steering
    /// block output of every layer is pushed onto it.
    pub fn step(
        &mut self,
        token: u32,
        steering: Option<&SteeringSpec>,
        mut capture: Option<&mut Vec<Vec<f32>>>,
    ) -> Result<Vec<f32>> {
        let cfg = &self.model.config;
        if token as usize >= cfg.vocab_size {
            return Err(Error::UnknownTokenId(token));
        }
        if self.len >= cfg.max_seq_len {
            return Err(Error::SequenceTooLong {
                len: self.len + 1,
                max: cfg.max_seq_len,
            });
        }
        let pos = self.len;
        let mut x: Vec<f32> = self
            .model
            .tok_emb
            .row(token as usize)
            .iter()
            .zip(self.model.pos_emb.row(pos))
            .map(|(a, b)| a + b)
            .collect();

        for (i, layer) in self.model.layers.iter().enumerate() {
            self.block(i, layer, &mut x);
            if let Some(u) = steering.and_then(|s| s.direction(i + 1)) {
                let g = steering.unwrap().gamma;
                for (xv, uv) in x.iter_mut().zip(u) {
                    *xv += g * uv;
                }
            }
            if let Some(c) = capture.as_deref_mut() {
                c.push(x.clone());
            }
        }
        self.len += 1;
        Ok(x)
    }

    fn block(&mut self, idx: usize, w: &LayerWeights, x: &mut [f32]) {
        let cfg = &self.model.config;
        let (d, heads, hd) = (cfg.d_model, cfg.n_heads, cfg.head_dim());

        let a = layer_norm(x, &w.ln1_g, &w.ln1_b, cfg.layer_norm_eps);
        let q = w.wq.left_mul(&a);
        self.keys[idx].extend(w.wk.left_mul(&a));
        self.values[idx].extend(w.wv.left_mul(&a));
        let keys = &self.keys[idx];
        let values = &self.values[idx];
        let n_pos = keys.len() / d;
        let scale = 1.0 / (hd as f32).sqrt();

        let mut attn = vec![0.0f32; d];
        let mut scores = vec![0.0f32; n_pos];
        for h in 0..heads {
            let r = h * hd..(h + 1) * hd;
            let qh = &q[r.clone()];
            for (j, s) in scores.iter_mut().enumerate() {
                let kh = &keys[j * d + r.start..j * d + r.end];
                *s = qh.iter().zip(kh).map(|(a, b)| a * b).sum::<f32>() * scale;
            }
            softmax(&mut scores);
            let out = &mut attn[r.clone()];
            for (j, p) in scores.iter().enumerate() {
                let vh = &values[j * d + r.start..j * d + r.end];
                for (o, v) in out.iter_mut().zip(vh) {
                    *o += p * v;
                }
            }
        }
        for (xv, o) in x.iter_mut().zip(w.wo.left_mul(&attn)) {
            *xv += o;
        }

        let m = layer_norm(x, &w.ln2_g, &w.ln2_b, cfg.layer_norm_eps);
        let mut hidden = w.w1.left_mul(&m);
        for (h, b) in hidden.iter_mut().zip(&w.b1) {
            *h = gelu(*h + b);
        }
        for ((xv, o), b) in x.iter_mut().zip(w.w2.left_mul(&hidden)).zip(&w.b2) {
            *xv += o + b;
        }
    }

    /// Vocabulary logits for a final residual stream.
    pub fn logits(&self, x: &[f32]) -> Vec<f32> {
        let m = self.model;
        let h = layer_norm(x, &m.ln_f_g, &m.ln_f_b, m.config.layer_norm_eps);
        (0..m.config.vocab_size)
            .map(|t| m.unemb_row(t).iter().zip(&h).map(|(a, b)| a * b).sum())
            .collect()
    }
}

fn check_sequence(model: &ModelBundle, tokens: &[u32]) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::EmptyInput);
    }
    if tokens.len() > model.config.max_seq_len {
        return Err(Error::SequenceTooLong {
            len: tokens.len(),
            max: model.config.max_seq_len,
        });
    }
    Ok(())
}

/// Hidden state leaving every block at the final token position.
pub fn forward_capture(model: &ModelBundle, tokens: &[u32]) -> Result<LayerRepresentations> {
    check_sequence(model, tokens)?;
    let mut session = Session::new(model);
    let (last, prefix) = tokens.split_last().unwrap();
    for &t in prefix {
        session.step(t, None, None)?;
    }
    let mut layers = Vec::with_capacity(model.config.n_layers);
    session.step(*last, None, Some(&mut layers))?;
    Ok(LayerRepresentations { layers })
}

/// Per-position block outputs for the whole sequence.
pub fn capture_positions(model: &ModelBundle, tokens: &[u32]) -> Result<Vec<LayerRepresentations>> {
    check_sequence(model, tokens)?;
    let mut session = Session::new(model);
    tokens
        .iter()
        .map(|&t| {
            let mut layers = Vec::with_capacity(model.config.n_layers);
            session.step(t, None, Some(&mut layers))?;
            Ok(LayerRepresentations { layers })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FinishReason {
    Eos,
    MaxTokens,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    /// Generated ids, excluding the prompt and any terminating EOS.
    pub tokens: Vec<u32>,
    pub finish: FinishReason,
    /// Post-steering block outputs for the first `capture_steps` steps.
    pub captured: Vec<LayerRepresentations>,
}

/// Decode `sampling.max_tokens` tokens after `prompt`.
pub fn generate(
    model: &ModelBundle,
    prompt: &[u32],
    sampling: &SamplingConfig,
    steering: Option<&SteeringSpec>,
) -> Result<Vec<u32>> {
    generate_with(model, prompt, sampling, steering, 0).map(|g| g.tokens)
}

/// `generate` with instrumentation.
///
/// All prompt positions except the last are encoded without steering.
/// Generation step `t` processes the token at the current position (the last
/// prompt token for `t = 1`, the previously generated token afterwards) with
/// steering applied, then picks the next token from its logits.
pub fn generate_with(
    model: &ModelBundle,
    prompt: &[u32],
    sampling: &SamplingConfig,
    steering: Option<&SteeringSpec>,
    capture_steps: usize,
) -> Result<Generation> {
    sampling.validate()?;
    if prompt.is_empty() {
        return Err(Error::EmptyInput);
    }
    let max = model.config.max_seq_len;
    if prompt.len() + sampling.max_tokens > max {
        return Err(Error::ContextOverflow {
            prompt: prompt.len(),
            max_tokens: sampling.max_tokens,
            max,
        });
    }
    if let Some(s) = steering {
        s.validate_for(&model.config)?;
    }
    model.count_pass();

    let mut session = Session::new(model);
    let (&last, prefix) = prompt.split_last().unwrap();
    for &t in prefix {
        session.step(t, None, None)?;
    }

    let mut sampler = Sampler::new(sampling);
    let mut tokens = Vec::with_capacity(sampling.max_tokens);
    let mut captured = Vec::new();
    let mut current = last;
    let mut finish = FinishReason::MaxTokens;
    for step in 0..sampling.max_tokens {
        let x = if step < capture_steps {
            let mut layers = Vec::with_capacity(model.config.n_layers);
            let x = session.step(current, steering, Some(&mut layers))?;
            captured.push(LayerRepresentations { layers });
            x
        } else {
            session.step(current, steering, None)?
        };
        let logits = session.logits(&x);
        if let Some((i, &v)) = logits.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NaNLogits {
                step: step + 1,
                token: i,
                value: v,
            });
        }
        let next = sampler.pick(&logits);
        if sampling.stop_on_eos && next == EOS {
            finish = FinishReason::Eos;
            break;
        }
        tokens.push(next);
        current = next;
    }
    Ok(Generation {
        tokens,
        finish,
        captured,
    })
}
