//! Contrastive direction extraction.
//!
//! For every criterion, each feature instruction is encoded twice, once after
//! the positive and once after the negative system prompt. The per-layer
//! difference of the last-token representations is a contrastive vector, and
//! the first principal component of those vectors at a layer is the
//! criterion's direction there.

mod pca;
mod prompts;

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub use pca::{pca_first_component, pca_first_component_with, PcaOptions};
pub use prompts::{
    default_prompt_pairs, validate_criterion_name, ContrastivePromptPair, GENERAL, HARMLESSNESS,
    HELPFULNESS, HONESTY,
};

use crate::container::{Container, Tensor};
use crate::error::{Error, Result};
use crate::runtime::{forward_capture, LayerRepresentations, ModelBundle, SteeringSpec};

/// Where a direction set came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Provenance {
    pub model_hash: String,
    pub n_feat: usize,
    pub prompt_hashes: BTreeMap<String, String>,
}

/// Per-criterion, per-layer unit directions.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionSet {
    n_layers: usize,
    d_model: usize,
    directions: BTreeMap<String, Vec<Vec<f32>>>,
    pub provenance: Provenance,
}

const NORM_TOL: f64 = 1e-5;

impl DirectionSet {
    pub fn new(n_layers: usize, d_model: usize) -> Self {
        Self {
            n_layers,
            d_model,
            directions: BTreeMap::new(),
            provenance: Provenance::default(),
        }
    }

    /// Add a criterion. `layers[l - 1]` is the direction at layer `l`.
    pub fn insert(&mut self, criterion: &str, layers: Vec<Vec<f32>>) -> Result<()> {
        validate_criterion_name(criterion)?;
        if layers.len() != self.n_layers {
            return Err(Error::DimMismatch(format!(
                "criterion `{criterion}` has {} layers, set has {}",
                layers.len(),
                self.n_layers
            )));
        }
        for (i, u) in layers.iter().enumerate() {
            if u.len() != self.d_model {
                return Err(Error::DimMismatch(format!(
                    "direction {criterion}/{} has length {}, expected {}",
                    i + 1,
                    u.len(),
                    self.d_model
                )));
            }
            let norm = u.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > NORM_TOL {
                return Err(Error::DegenerateInput(format!(
                    "direction {criterion}/{} has norm {norm}",
                    i + 1
                )));
            }
        }
        self.directions.insert(criterion.to_string(), layers);
        Ok(())
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub fn criteria(&self) -> impl Iterator<Item = &str> {
        self.directions.keys().map(String::as_str)
    }

    pub fn contains(&self, criterion: &str) -> bool {
        self.directions.contains_key(criterion)
    }

    /// All layers of one criterion, 0-based.
    pub fn get(&self, criterion: &str) -> Option<&[Vec<f32>]> {
        self.directions.get(criterion).map(Vec::as_slice)
    }

    /// Direction of `criterion` at 1-based `layer`.
    pub fn layer(&self, criterion: &str, layer: usize) -> Option<&[f32]> {
        self.get(criterion)
            .and_then(|ls| ls.get(layer.checked_sub(1)?))
            .map(Vec::as_slice)
    }

    /// Steering along `criterion` at layers `lo..=hi`.
    pub fn steering(
        &self,
        criterion: &str,
        lo: usize,
        hi: usize,
        gamma: f32,
    ) -> Result<SteeringSpec> {
        let layers = self
            .get(criterion)
            .ok_or_else(|| Error::MissingDirection(criterion.to_string()))?;
        if lo == 0 || lo > hi || hi > self.n_layers {
            return Err(Error::InvalidProfile(format!(
                "layer range [{lo}, {hi}] not within 1..={}",
                self.n_layers
            )));
        }
        let dirs = (lo..=hi).map(|l| (l, layers[l - 1].clone())).collect();
        SteeringSpec::new(gamma, dirs)
    }

    pub fn check_model(&self, model: &ModelBundle) -> Result<()> {
        if self.n_layers != model.n_layers() || self.d_model != model.d_model() {
            return Err(Error::DimMismatch(format!(
                "direction set is {}x{}, model is {}x{} (layers x d_model)",
                self.n_layers,
                self.d_model,
                model.n_layers(),
                model.d_model()
            )));
        }
        Ok(())
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        c.meta.insert(
            "criteria".into(),
            Value::from(self.criteria().collect::<Vec<_>>()),
        );
        c.meta.insert(
            "model_hash".into(),
            Value::from(self.provenance.model_hash.clone()),
        );
        c.meta
            .insert("n_feat".into(), Value::from(self.provenance.n_feat));
        for (k, h) in &self.provenance.prompt_hashes {
            c.meta
                .insert(format!("prompt_hash.{k}"), Value::from(h.clone()));
        }
        for (name, layers) in &self.directions {
            for (i, u) in layers.iter().enumerate() {
                c.insert(
                    format!("direction.{name}.layer.{}", i + 1),
                    Tensor::vector(u.clone()),
                );
            }
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let bad = |m: &str| Error::MalformedHeader(m.to_string());
        let criteria: Vec<String> = c
            .meta
            .get("criteria")
            .and_then(|v| serde_json::from_value(v.clone()).ok())
            .ok_or_else(|| bad("missing or invalid `criteria`"))?;
        let model_hash = c
            .meta
            .get("model_hash")
            .and_then(Value::as_str)
            .ok_or_else(|| bad("missing `model_hash`"))?
            .to_string();
        let n_feat = c
            .meta
            .get("n_feat")
            .and_then(Value::as_u64)
            .ok_or_else(|| bad("missing `n_feat`"))? as usize;
        let mut prompt_hashes = BTreeMap::new();
        for (k, v) in &c.meta {
            if let Some(name) = k.strip_prefix("prompt_hash.") {
                let h = v
                    .as_str()
                    .ok_or_else(|| bad("prompt hash is not a string"))?;
                prompt_hashes.insert(name.to_string(), h.to_string());
            }
        }

        let mut per_criterion = Vec::new();
        for name in &criteria {
            let mut layers = Vec::new();
            while let Some(t) = c
                .tensors
                .get(&format!("direction.{name}.layer.{}", layers.len() + 1))
            {
                if t.shape.len() != 1 {
                    return Err(bad("direction tensors must be 1-dimensional"));
                }
                layers.push(t.data.clone());
            }
            if layers.is_empty() {
                return Err(Error::MissingTensor(format!("direction.{name}.layer.1")));
            }
            per_criterion.push((name, layers));
        }
        let (n_layers, d_model) = per_criterion
            .first()
            .map(|(_, ls)| (ls.len(), ls[0].len()))
            .unwrap_or((0, 0));
        let expected = per_criterion.len() * n_layers;
        if c.tensors.len() != expected {
            return Err(bad("direction tensors do not match the criteria list"));
        }
        let mut set = DirectionSet::new(n_layers, d_model);
        for (name, layers) in per_criterion {
            set.insert(name, layers)?;
        }
        set.provenance = Provenance {
            model_hash,
            n_feat,
            prompt_hashes,
        };
        Ok(set)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.to_container().to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_container(&Container::from_bytes(bytes)?)
    }

    pub fn save_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

pub fn prompt_hash(pair: &ContrastivePromptPair) -> String {
    let mut h = Sha256::new();
    h.update(pair.positive.as_bytes());
    h.update([0u8]);
    h.update(pair.negative.as_bytes());
    hex::encode(h.finalize())
}

/// Representations of `instruction` after the positive and the negative
/// prompt, in that order.
pub fn contrastive_reps(
    model: &ModelBundle,
    pair: &ContrastivePromptPair,
    instruction: &str,
) -> Result<(LayerRepresentations, LayerRepresentations)> {
    let tok = &model.tokenizer;
    let capture = |prompt: &str| {
        let tokens = tok.with_system_prompt(prompt, instruction);
        if tokens.len() > model.config.max_seq_len {
            return Err(Error::ContextOverflow {
                prompt: tokens.len(),
                max_tokens: 0,
                max: model.config.max_seq_len,
            });
        }
        forward_capture(model, &tokens)
    };
    Ok((capture(&pair.positive)?, capture(&pair.negative)?))
}

/// Per-layer `h_plus - h_minus`.
pub fn contrastive_vector(
    h_plus: &LayerRepresentations,
    h_minus: &LayerRepresentations,
) -> Result<Vec<Vec<f32>>> {
    if h_plus.n_layers() != h_minus.n_layers() {
        return Err(Error::DimMismatch(format!(
            "{} vs {} layers",
            h_plus.n_layers(),
            h_minus.n_layers()
        )));
    }
    h_plus
        .layers
        .iter()
        .zip(&h_minus.layers)
        .enumerate()
        .map(|(l, (p, m))| {
            if p.len() != m.len() {
                return Err(Error::DimMismatch(format!(
                    "layer {}: {} vs {} dims",
                    l + 1,
                    p.len(),
                    m.len()
                )));
            }
            Ok(p.iter().zip(m).map(|(a, b)| a - b).collect())
        })
        .collect()
}

/// Contrastive vectors for every feature instruction, `[instruction][layer]`.
pub fn contrastive_batch(
    model: &ModelBundle,
    pair: &ContrastivePromptPair,
    d_feat: &[String],
) -> Result<Vec<Vec<Vec<f32>>>> {
    d_feat
        .par_iter()
        .map(|instr| {
            let (p, m) = contrastive_reps(model, pair, instr)?;
            contrastive_vector(&p, &m)
        })
        .collect()
}

/// Per-layer first principal components of a contrastive batch.
pub fn directions_from_batch(batch: &[Vec<Vec<f32>>], n_layers: usize) -> Result<Vec<Vec<f32>>> {
    (0..n_layers)
        .map(|l| {
            let at_layer: Vec<Vec<f32>> = batch.iter().map(|v| v[l].clone()).collect();
            pca_first_component(&at_layer).map_err(|e| match e {
                Error::DegenerateInput(m) => {
                    Error::DegenerateInput(format!("layer {}: {m}", l + 1))
                }
                other => other,
            })
        })
        .collect()
}

/// Extract one direction per criterion and layer from `d_feat`.
pub fn extract_directions(
    model: &ModelBundle,
    d_feat: &[String],
    pairs: &[ContrastivePromptPair],
) -> Result<DirectionSet> {
    if d_feat.len() < 2 {
        return Err(Error::EmptyFeatureSet(d_feat.len()));
    }
    if pairs.is_empty() {
        return Err(Error::InvalidCriterion(
            "no contrastive prompt pairs".into(),
        ));
    }
    let mut set = DirectionSet::new(model.n_layers(), model.d_model());
    for pair in pairs {
        pair.validate()?;
        if set.contains(&pair.criterion) {
            return Err(Error::InvalidCriterion(format!(
                "criterion `{}` given twice",
                pair.criterion
            )));
        }
        let batch = contrastive_batch(model, pair, d_feat)?;
        let layers = directions_from_batch(&batch, model.n_layers()).map_err(|e| match e {
            Error::DegenerateInput(m) => {
                Error::DegenerateInput(format!("criterion `{}`, {m}", pair.criterion))
            }
            other => other,
        })?;
        set.insert(&pair.criterion, layers)?;
        set.provenance
            .prompt_hashes
            .insert(pair.criterion.clone(), prompt_hash(pair));
    }
    set.provenance.model_hash = model.hash().to_string();
    set.provenance.n_feat = d_feat.len();
    Ok(set)
}
