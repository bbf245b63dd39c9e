//! Model configuration, weights, and container (de)serialization.
//!
//! The architecture is a pre-norm GPT-2 style decoder: learned positional
//! embeddings, multi-head causal self-attention without biases, a GELU MLP,
//! a final layer norm and an unembedding that is either its own tensor or
//! tied to `tok_emb`.
//!
//! Matrices that act on hidden states are stored `[in, out]` so a row vector
//! `x` maps to `x · W`. Embedding and unembedding tables are stored one row
//! per token.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tokenizer::{ByteTokenizer, VOCAB_SIZE};
use crate::container::{Container, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub layer_norm_eps: f32,
    #[serde(default)]
    pub tied_embeddings: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        for (name, v) in [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!(
                "n_heads {} does not divide d_model {}",
                self.n_heads, self.d_model
            ));
        }
        if !(self.layer_norm_eps > 0.0 && self.layer_norm_eps.is_finite()) {
            return bad(format!(
                "layer_norm_eps {} must be positive",
                self.layer_norm_eps
            ));
        }
        if self.vocab_size != VOCAB_SIZE {
            return bad(format!(
                "vocab_size {} does not match the byte tokenizer ({VOCAB_SIZE})",
                self.vocab_size
            ));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Every tensor the architecture requires, with its shape.
    pub fn schema(&self) -> Vec<(String, Vec<usize>)> {
        let (d, f, v) = (self.d_model, self.d_ff, self.vocab_size);
        let mut out = vec![
            ("tok_emb".to_string(), vec![v, d]),
            ("pos_emb".to_string(), vec![self.max_seq_len, d]),
        ];
        for i in 0..self.n_layers {
            let p = format!("layers.{i}");
            out.extend([
                (format!("{p}.ln1.g"), vec![d]),
                (format!("{p}.ln1.b"), vec![d]),
                (format!("{p}.attn.wq"), vec![d, d]),
                (format!("{p}.attn.wk"), vec![d, d]),
                (format!("{p}.attn.wv"), vec![d, d]),
                (format!("{p}.attn.wo"), vec![d, d]),
                (format!("{p}.ln2.g"), vec![d]),
                (format!("{p}.ln2.b"), vec![d]),
                (format!("{p}.mlp.w1"), vec![d, f]),
                (format!("{p}.mlp.b1"), vec![f]),
                (format!("{p}.mlp.w2"), vec![f, d]),
                (format!("{p}.mlp.b2"), vec![d]),
            ]);
        }
        out.push(("ln_f.g".to_string(), vec![d]));
        out.push(("ln_f.b".to_string(), vec![d]));
        if !self.tied_embeddings {
            out.push(("unemb".to_string(), vec![v, d]));
        }
        out
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `x · self` for a row vector `x` of length `rows`.
    pub fn left_mul(&self, x: &[f32]) -> Vec<f32> {
        debug_assert_eq!(x.len(), self.rows);
        let mut out = vec![0.0f32; self.cols];
        for (xi, row) in x.iter().zip(self.data.chunks_exact(self.cols)) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += xi * w;
            }
        }
        out
    }

    fn to_tensor(&self) -> Tensor {
        Tensor {
            shape: vec![self.rows, self.cols],
            data: self.data.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub ln1_g: Vec<f32>,
    pub ln1_b: Vec<f32>,
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub ln2_g: Vec<f32>,
    pub ln2_b: Vec<f32>,
    pub w1: Matrix,
    pub b1: Vec<f32>,
    pub w2: Matrix,
    pub b2: Vec<f32>,
}

/// Weights, config and tokenizer of a loaded model.
///
/// A bundle is immutable once built and can be shared across threads. The
/// only interior state is a counter of autoregressive generation passes,
/// kept for instrumentation.
#[derive(Debug)]
pub struct ModelBundle {
    pub config: ModelConfig,
    pub tok_emb: Matrix,
    pub pos_emb: Matrix,
    pub layers: Vec<LayerWeights>,
    pub ln_f_g: Vec<f32>,
    pub ln_f_b: Vec<f32>,
    /// `None` when tied to `tok_emb`.
    pub unemb: Option<Matrix>,
    pub tokenizer: ByteTokenizer,
    hash: String,
    passes: AtomicU64,
}

impl ModelBundle {
    /// Parse and validate a weight container.
    pub fn load(bytes: &[u8]) -> Result<Self> {
        Self::from_container(&Container::from_bytes(bytes)?)
    }

    pub fn load_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::load(&bytes)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let config: ModelConfig = c
            .meta
            .get("config")
            .cloned()
            .ok_or_else(|| Error::MalformedHeader("metadata has no `config` object".into()))
            .and_then(|v| {
                serde_json::from_value(v)
                    .map_err(|e| Error::MalformedHeader(format!("bad `config`: {e}")))
            })?;
        config.validate()?;

        for (name, shape) in config.schema() {
            let t = c.tensor(&name)?;
            if t.shape != shape {
                return Err(Error::ShapeMismatch {
                    name,
                    expected: shape,
                    found: t.shape.clone(),
                });
            }
            if t.data.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteWeight(name));
            }
        }

        let vec = |name: &str| c.tensors[name].data.clone();
        let mat = |name: &str| {
            let t = &c.tensors[name];
            Matrix {
                rows: t.shape[0],
                cols: t.shape[1],
                data: t.data.clone(),
            }
        };
        let layers = (0..config.n_layers)
            .map(|i| {
                let p = |s: &str| format!("layers.{i}.{s}");
                LayerWeights {
                    ln1_g: vec(&p("ln1.g")),
                    ln1_b: vec(&p("ln1.b")),
                    wq: mat(&p("attn.wq")),
                    wk: mat(&p("attn.wk")),
                    wv: mat(&p("attn.wv")),
                    wo: mat(&p("attn.wo")),
                    ln2_g: vec(&p("ln2.g")),
                    ln2_b: vec(&p("ln2.b")),
                    w1: mat(&p("mlp.w1")),
                    b1: vec(&p("mlp.b1")),
                    w2: mat(&p("mlp.w2")),
                    b2: vec(&p("mlp.b2")),
                }
            })
            .collect();
        let mut model = ModelBundle {
            tok_emb: mat("tok_emb"),
            pos_emb: mat("pos_emb"),
            layers,
            ln_f_g: vec("ln_f.g"),
            ln_f_b: vec("ln_f.b"),
            unemb: (!config.tied_embeddings).then(|| mat("unemb")),
            config,
            tokenizer: ByteTokenizer,
            hash: String::new(),
            passes: AtomicU64::new(0),
        };
        model.hash = hex::encode(Sha256::digest(model.to_bytes()?));
        Ok(model)
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        c.meta.insert(
            "config".into(),
            serde_json::to_value(&self.config).expect("config serializes"),
        );
        c.insert("tok_emb", self.tok_emb.to_tensor());
        c.insert("pos_emb", self.pos_emb.to_tensor());
        for (i, l) in self.layers.iter().enumerate() {
            let p = |s: &str| format!("layers.{i}.{s}");
            c.insert(p("ln1.g"), Tensor::vector(l.ln1_g.clone()));
            c.insert(p("ln1.b"), Tensor::vector(l.ln1_b.clone()));
            c.insert(p("attn.wq"), l.wq.to_tensor());
            c.insert(p("attn.wk"), l.wk.to_tensor());
            c.insert(p("attn.wv"), l.wv.to_tensor());
            c.insert(p("attn.wo"), l.wo.to_tensor());
            c.insert(p("ln2.g"), Tensor::vector(l.ln2_g.clone()));
            c.insert(p("ln2.b"), Tensor::vector(l.ln2_b.clone()));
            c.insert(p("mlp.w1"), l.w1.to_tensor());
            c.insert(p("mlp.b1"), Tensor::vector(l.b1.clone()));
            c.insert(p("mlp.w2"), l.w2.to_tensor());
            c.insert(p("mlp.b2"), Tensor::vector(l.b2.clone()));
        }
        c.insert("ln_f.g", Tensor::vector(self.ln_f_g.clone()));
        c.insert("ln_f.b", Tensor::vector(self.ln_f_b.clone()));
        if let Some(u) = &self.unemb {
            c.insert("unemb", u.to_tensor());
        }
        c
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.to_container().to_bytes()
    }

    pub fn save_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    /// SHA-256 of the serialized container, hex encoded.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn n_layers(&self) -> usize {
        self.config.n_layers
    }

    pub fn d_model(&self) -> usize {
        self.config.d_model
    }

    /// Unembedding row of `token`.
    pub fn unemb_row(&self, token: usize) -> &[f32] {
        self.unemb.as_ref().unwrap_or(&self.tok_emb).row(token)
    }

    /// Number of `generate` calls made on this bundle so far.
    pub fn generation_passes(&self) -> u64 {
        self.passes.load(Ordering::Relaxed)
    }

    pub(crate) fn count_pass(&self) {
        self.passes.fetch_add(1, Ordering::Relaxed);
    }
}
