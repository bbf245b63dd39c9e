//! Chosen/rejected pair generation by bidirectional steering.
//!
//! Every instruction is decoded exactly twice with identical prompt and
//! sampling settings: once with `+gamma_pos` along its assigned criterion's
//! direction (chosen) and once with `gamma_neg` (rejected). There is no
//! resampling.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::directions::DirectionSet;
use crate::error::{Error, Result};
use crate::instructions::{InstructionRecord, InstructionSet};
use crate::runtime::{generate, ModelBundle, SamplingConfig};

/// `z + gamma * u`.
pub fn steer_hidden(z: &[f32], u: &[f32], gamma: f32) -> Result<Vec<f32>> {
    if z.len() != u.len() {
        return Err(Error::DimMismatch(format!(
            "{} vs {} dims",
            z.len(),
            u.len()
        )));
    }
    Ok(z.iter().zip(u).map(|(a, b)| a + gamma * b).collect())
}

/// Controlled layer interval and the two steering strengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteeringProfile {
    pub layer_lo: usize,
    pub layer_hi: usize,
    pub gamma_pos: f64,
    pub gamma_neg: f64,
}

pub const DEFAULT_GAMMA_POS: f64 = 0.1;
pub const DEFAULT_GAMMA_NEG: f64 = -0.05;
pub const DEFAULT_LAYERS: (usize, usize) = (10, 20);

impl SteeringProfile {
    /// Layers 10..=20 with gammas 0.1 / -0.05; models with fewer than 20
    /// layers get `[round(0.3 N), round(0.65 N)]` instead.
    pub fn default_for(n_layers: usize) -> Self {
        let (layer_lo, layer_hi) = default_layers(n_layers);
        Self {
            layer_lo,
            layer_hi,
            gamma_pos: DEFAULT_GAMMA_POS,
            gamma_neg: DEFAULT_GAMMA_NEG,
        }
    }

    pub fn validate(&self, n_layers: usize) -> Result<()> {
        self.validate_layers(n_layers)?;
        if !(self.gamma_pos > self.gamma_neg) {
            return Err(Error::InvalidProfile(format!(
                "gamma_pos {} must exceed gamma_neg {}",
                self.gamma_pos, self.gamma_neg
            )));
        }
        Ok(())
    }

    pub fn validate_layers(&self, n_layers: usize) -> Result<()> {
        if self.layer_lo == 0 || self.layer_lo > self.layer_hi || self.layer_hi > n_layers {
            return Err(Error::InvalidProfile(format!(
                "layer interval [{}, {}] not within 1..={n_layers}",
                self.layer_lo, self.layer_hi
            )));
        }
        Ok(())
    }
}

pub fn default_layers(n_layers: usize) -> (usize, usize) {
    if n_layers >= DEFAULT_LAYERS.1 {
        return DEFAULT_LAYERS;
    }
    let n = n_layers as f64;
    let lo = ((0.3 * n).round() as usize).clamp(1, n_layers.max(1));
    let hi = ((0.65 * n).round() as usize).clamp(lo, n_layers.max(1));
    (lo, hi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreferencePair {
    pub instruction_id: String,
    pub instruction: String,
    pub criterion: String,
    pub chosen: String,
    pub rejected: String,
    pub profile: SteeringProfile,
    /// Generation passes spent on this pair.
    pub pass_count: usize,
}

/// Line format of the output dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairLine {
    pub id: String,
    pub instruction: String,
    pub chosen: String,
    pub rejected: String,
    pub criterion: String,
    pub gamma_pos: f64,
    pub gamma_neg: f64,
    pub layer_lo: usize,
    pub layer_hi: usize,
}

impl From<&PreferencePair> for PairLine {
    fn from(p: &PreferencePair) -> Self {
        Self {
            id: p.instruction_id.clone(),
            instruction: p.instruction.clone(),
            chosen: p.chosen.clone(),
            rejected: p.rejected.clone(),
            criterion: p.criterion.clone(),
            gamma_pos: p.profile.gamma_pos,
            gamma_neg: p.profile.gamma_neg,
            layer_lo: p.profile.layer_lo,
            layer_hi: p.profile.layer_hi,
        }
    }
}

impl PairLine {
    pub fn to_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

pub fn write_pairs(lines: &[PairLine], mut w: impl Write) -> Result<()> {
    for l in lines {
        serde_json::to_writer(&mut w, l)?;
        w.write_all(b"\n").map_err(Error::SinkWriteError)?;
    }
    Ok(())
}

pub fn read_pairs(r: impl BufRead) -> Result<Vec<PairLine>> {
    r.lines()
        .enumerate()
        .map(|(i, line)| {
            let line = line.map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))?;
            serde_json::from_str(&line).map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))
        })
        .collect()
}

pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<PairLine>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_pairs(std::io::BufReader::new(f))
}

/// Decode one response to `text` with steering along `criterion` at
/// `gamma`.
pub fn steered_response(
    model: &ModelBundle,
    directions: &DirectionSet,
    criterion: &str,
    text: &str,
    layers: (usize, usize),
    gamma: f32,
    sampling: &SamplingConfig,
) -> Result<String> {
    let spec = directions.steering(criterion, layers.0, layers.1, gamma)?;
    let prompt = model.tokenizer.chat_prompt(text);
    let tokens = generate(model, &prompt, sampling, Some(&spec))?;
    model.tokenizer.decode_lossy(&tokens)
}

/// Chosen and rejected responses for one filtered instruction.
pub fn generate_pair(
    model: &ModelBundle,
    record: &InstructionRecord,
    directions: &DirectionSet,
    profile: &SteeringProfile,
    sampling: &SamplingConfig,
) -> Result<PreferencePair> {
    let criterion = &record
        .assigned
        .as_ref()
        .ok_or_else(|| Error::MissingAssignment(record.id.clone()))?
        .criterion;
    if !directions.contains(criterion) {
        return Err(Error::MissingDirection(criterion.clone()));
    }
    directions.check_model(model)?;
    profile.validate_layers(model.n_layers())?;
    let layers = (profile.layer_lo, profile.layer_hi);

    let mut passes = 0;
    let mut pass = |gamma| {
        passes += 1;
        steered_response(
            model,
            directions,
            criterion,
            &record.text,
            layers,
            gamma,
            sampling,
        )
    };
    let chosen = pass(profile.gamma_pos as f32)?;
    let rejected = pass(profile.gamma_neg as f32)?;
    Ok(PreferencePair {
        instruction_id: record.id.clone(),
        instruction: record.text.clone(),
        criterion: criterion.clone(),
        chosen,
        rejected,
        profile: *profile,
        pass_count: passes,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub pairs: usize,
    pub per_criterion: BTreeMap<String, usize>,
    pub total_passes: usize,
    /// Pairs whose chosen and rejected texts are byte-identical.
    pub identical_pairs: usize,
}

/// Generate one pair per record of `filt` and stream them to `sink` in input
/// order.
pub fn build_dataset(
    model: &ModelBundle,
    filt: &InstructionSet,
    directions: &DirectionSet,
    profile: &SteeringProfile,
    sampling: &SamplingConfig,
    mut sink: impl Write,
) -> Result<DatasetSummary> {
    if filt.is_empty() {
        return Err(Error::EmptyInput);
    }
    profile.validate(model.n_layers())?;
    let pairs: Vec<PreferencePair> = filt
        .records
        .par_iter()
        .map(|r| generate_pair(model, r, directions, profile, sampling))
        .collect::<Result<_>>()?;

    let mut summary = DatasetSummary::default();
    for p in &pairs {
        let line = PairLine::from(p).to_line()?;
        sink.write_all(line.as_bytes())
            .and_then(|_| sink.write_all(b"\n"))
            .map_err(Error::SinkWriteError)?;
        summary.pairs += 1;
        summary.total_passes += p.pass_count;
        *summary
            .per_criterion
            .entry(p.criterion.clone())
            .or_default() += 1;
        summary.identical_pairs += usize::from(p.chosen == p.rejected);
    }
    sink.flush().map_err(Error::SinkWriteError)?;
    Ok(summary)
}
