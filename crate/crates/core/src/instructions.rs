//! Instruction synthesis, inherent-consistency scoring and filtering.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::directions::DirectionSet;
use crate::error::{Error, Result};
use crate::runtime::{
    forward_capture, generate_with, FinishReason, LayerRepresentations, ModelBundle,
    SamplingConfig, SamplingMode,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Assignment {
    pub criterion: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstructionRecord {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assigned: Option<Assignment>,
}

impl InstructionRecord {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            scores: None,
            assigned: None,
        }
    }

    /// The overall consistency, i.e. the assigned criterion's score.
    pub fn consistency(&self) -> Option<f64> {
        self.assigned.as_ref().map(|a| a.score)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetRole {
    Feat,
    Raw,
    Filt,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstructionSet {
    pub role: SetRole,
    pub records: Vec<InstructionRecord>,
}

impl InstructionSet {
    pub fn new(role: SetRole, records: Vec<InstructionRecord>) -> Result<Self> {
        let set = Self { role, records };
        set.validate()?;
        Ok(set)
    }

    /// Records with ids `{prefix}-000000`, `{prefix}-000001`, ...
    pub fn from_texts(role: SetRole, prefix: &str, texts: &[String]) -> Self {
        let records = texts
            .iter()
            .enumerate()
            .map(|(i, t)| InstructionRecord::new(format!("{prefix}-{i:06}"), t.clone()))
            .collect();
        Self { role, records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn texts(&self) -> Vec<String> {
        self.records.iter().map(|r| r.text.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::InvalidInstructionSet(format!(
                    "duplicate id `{}`",
                    r.id
                )));
            }
            if let Some(a) = &r.assigned {
                let best = r
                    .scores
                    .as_ref()
                    .and_then(|s| s.values().copied().reduce(f64::max));
                if best.is_some_and(|b| b != a.score) {
                    return Err(Error::InvalidInstructionSet(format!(
                        "`{}`: assigned score is not the maximum score",
                        r.id
                    )));
                }
            } else if self.role == SetRole::Filt {
                return Err(Error::InvalidInstructionSet(format!(
                    "`{}` in a filtered set has no assignment",
                    r.id
                )));
            }
        }
        Ok(())
    }

    /// One JSON document per line.
    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n").map_err(Error::SinkWriteError)?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_jsonl(&mut out)?;
        Ok(out)
    }

    pub fn read_jsonl(role: SetRole, r: impl BufRead) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))?;
            let rec: InstructionRecord = serde_json::from_str(&line)
                .map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))?;
            records.push(rec);
        }
        Self::new(role, records)
    }

    pub fn save_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }

    pub fn load_file(role: SetRole, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_jsonl(role, std::io::BufReader::new(f))
    }
}

// ---------------------------------------------------------------------------
// synthesis

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub dedup: bool,
    /// Total attempts allowed are `n * attempts_per_record`.
    pub attempts_per_record: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            dedup: true,
            attempts_per_record: 4,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthReport {
    pub requested: usize,
    pub produced: usize,
    pub attempts: usize,
    pub empties: usize,
    pub duplicates: usize,
    /// Kept records that hit `max_tokens` before EOS.
    pub unterminated: usize,
}

fn attempt_seed(base: u64, attempt: u64) -> u64 {
    // splitmix64 finalizer over (base, attempt)
    let mut z = base ^ attempt.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sample `n` instructions by decoding continuations of `template` until EOS.
///
/// Attempt `k` samples with seed `mix(sampling.seed, k)`, so results depend
/// only on the seed and not on thread scheduling.
pub fn synth_instructions(
    model: &ModelBundle,
    template: &str,
    n: usize,
    sampling: &SamplingConfig,
    opts: &SynthOptions,
) -> Result<(InstructionSet, SynthReport)> {
    if n == 0 {
        return Err(Error::InvalidSampling("n must be at least 1".into()));
    }
    if sampling.mode != SamplingMode::Temperature {
        return Err(Error::InvalidSampling(
            "instruction synthesis needs temperature sampling".into(),
        ));
    }
    let prompt = model.tokenizer.encode_fresh(template);
    let budget = n.saturating_mul(opts.attempts_per_record.max(1));
    let mut report = SynthReport {
        requested: n,
        ..Default::default()
    };
    let mut seen = HashSet::new();
    let mut texts = Vec::with_capacity(n);

    while texts.len() < n && report.attempts < budget {
        let batch = (n - texts.len()).min(budget - report.attempts);
        let start = report.attempts as u64;
        let outs: Vec<(String, bool)> = (start..start + batch as u64)
            .into_par_iter()
            .map(|k| {
                let g = generate_with(
                    model,
                    &prompt,
                    &sampling.with_seed(attempt_seed(sampling.seed, k)),
                    None,
                    0,
                )?;
                let text = model.tokenizer.decode_lossy(&g.tokens)?;
                Ok((text.trim().to_string(), g.finish == FinishReason::MaxTokens))
            })
            .collect::<Result<_>>()?;
        report.attempts += batch;
        for (text, unterminated) in outs {
            if texts.len() == n {
                break;
            }
            if text.is_empty() {
                report.empties += 1;
            } else if opts.dedup && !seen.insert(text.clone()) {
                report.duplicates += 1;
            } else {
                report.unterminated += usize::from(unterminated);
                texts.push(text);
            }
        }
    }
    if texts.is_empty() {
        return Err(Error::RetryBudgetExhausted {
            attempts: report.attempts,
            empties: report.empties,
            duplicates: report.duplicates,
        });
    }
    report.produced = texts.len();
    Ok((
        InstructionSet::from_texts(SetRole::Raw, "raw", &texts),
        report,
    ))
}

// ---------------------------------------------------------------------------
// scoring

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// Raw dot products.
    #[default]
    Dot,
    /// Cosine similarity instead of the dot product at each layer.
    Cosine,
}

/// Mean over all layers of `<h^l, u^l>`.
pub fn consistency_score(reps: &LayerRepresentations, direction: &[Vec<f32>]) -> Result<f64> {
    consistency_score_with(reps, direction, ScoreMode::Dot)
}

pub fn consistency_score_with(
    reps: &LayerRepresentations,
    direction: &[Vec<f32>],
    mode: ScoreMode,
) -> Result<f64> {
    if reps.n_layers() != direction.len() || direction.is_empty() {
        return Err(Error::DimMismatch(format!(
            "{} representation layers vs {} direction layers",
            reps.n_layers(),
            direction.len()
        )));
    }
    let mut total = 0.0f64;
    for (l, (h, u)) in reps.layers.iter().zip(direction).enumerate() {
        if h.len() != u.len() {
            return Err(Error::DimMismatch(format!(
                "layer {}: {} vs {} dims",
                l + 1,
                h.len(),
                u.len()
            )));
        }
        let dot: f64 = h.iter().zip(u).map(|(&a, &b)| a as f64 * b as f64).sum();
        total += match mode {
            ScoreMode::Dot => dot,
            ScoreMode::Cosine => {
                let nh = h.iter().map(|&a| (a as f64).powi(2)).sum::<f64>().sqrt();
                let nu = u.iter().map(|&a| (a as f64).powi(2)).sum::<f64>().sqrt();
                if nh == 0.0 || nu == 0.0 {
                    0.0
                } else {
                    dot / (nh * nu)
                }
            }
        };
    }
    Ok(total / direction.len() as f64)
}

/// Highest-scoring criterion; ties go to the lexicographically smallest name.
pub fn assign_criterion(scores: &BTreeMap<String, f64>) -> Result<(String, f64)> {
    let mut best: Option<(&String, f64)> = None;
    for (name, &s) in scores {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((name, s));
        }
    }
    best.map(|(n, s)| (n.clone(), s)).ok_or(Error::EmptyScores)
}

/// Per-criterion scores for one instruction text.
pub fn score_text(
    model: &ModelBundle,
    directions: &DirectionSet,
    text: &str,
    mode: ScoreMode,
) -> Result<BTreeMap<String, f64>> {
    let reps = forward_capture(model, &model.tokenizer.instruction_tokens(text))?;
    directions
        .criteria()
        .map(|c| {
            let s = consistency_score_with(&reps, directions.get(c).unwrap(), mode)?;
            Ok((c.to_string(), s))
        })
        .collect()
}

/// Score every record against every criterion and assign its best one.
pub fn score_records(
    model: &ModelBundle,
    directions: &DirectionSet,
    records: &[InstructionRecord],
    mode: ScoreMode,
) -> Result<Vec<InstructionRecord>> {
    directions.check_model(model)?;
    records
        .par_iter()
        .map(|r| {
            let scores = score_text(model, directions, &r.text, mode)?;
            let (criterion, score) = assign_criterion(&scores)?;
            Ok(InstructionRecord {
                id: r.id.clone(),
                text: r.text.clone(),
                scores: Some(scores),
                assigned: Some(Assignment { criterion, score }),
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// filtering

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FilterMode {
    Threshold { theta: f64 },
    TopK { k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterPolicy {
    pub mode: FilterMode,
    #[serde(default)]
    pub dedup: bool,
    #[serde(default)]
    pub min_len: Option<usize>,
    #[serde(default)]
    pub max_len: Option<usize>,
    /// When set, the best score must beat the runner-up by at least this much.
    #[serde(default)]
    pub margin: Option<f64>,
    #[serde(default)]
    pub score_mode: ScoreMode,
}

impl FilterPolicy {
    pub fn top_k(k: usize) -> Self {
        Self::with_mode(FilterMode::TopK { k })
    }

    pub fn threshold(theta: f64) -> Self {
        Self::with_mode(FilterMode::Threshold { theta })
    }

    fn with_mode(mode: FilterMode) -> Self {
        Self {
            mode,
            dedup: false,
            min_len: None,
            max_len: None,
            margin: None,
            score_mode: ScoreMode::Dot,
        }
    }

    pub fn validate(&self, n_raw: usize) -> Result<()> {
        match self.mode {
            FilterMode::TopK { k } if k == 0 => {
                return Err(Error::InvalidPolicy("k must be at least 1".into()))
            }
            FilterMode::TopK { k } if k > n_raw => {
                return Err(Error::InvalidPolicy(format!(
                    "k = {k} exceeds the {n_raw} raw records"
                )))
            }
            FilterMode::Threshold { theta } if theta.is_nan() => {
                return Err(Error::InvalidPolicy("theta is NaN".into()))
            }
            _ => {}
        }
        if let (Some(lo), Some(hi)) = (self.min_len, self.max_len) {
            if lo > hi {
                return Err(Error::InvalidPolicy(format!("min_len {lo} > max_len {hi}")));
            }
        }
        if self.margin.is_some_and(|m| !(m >= 0.0)) {
            return Err(Error::InvalidPolicy("margin must be non-negative".into()));
        }
        Ok(())
    }

    fn admits_text(&self, text: &str) -> bool {
        let n = text.len();
        self.min_len.is_none_or(|lo| n >= lo) && self.max_len.is_none_or(|hi| n <= hi)
    }
}

fn runner_up_gap(scores: &BTreeMap<String, f64>) -> f64 {
    let mut v: Vec<f64> = scores.values().copied().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    match v.as_slice() {
        [a, b, ..] => a - b,
        _ => f64::INFINITY,
    }
}

fn by_consistency(a: &InstructionRecord, b: &InstructionRecord) -> std::cmp::Ordering {
    let sa = a.consistency().unwrap_or(f64::NEG_INFINITY);
    let sb = b.consistency().unwrap_or(f64::NEG_INFINITY);
    sb.total_cmp(&sa).then_with(|| a.id.cmp(&b.id))
}

/// Apply `policy` to already scored records.
///
/// Output is sorted by descending consistency, then id.
pub fn select_scored(
    scored: &[InstructionRecord],
    policy: &FilterPolicy,
) -> Result<InstructionSet> {
    policy.validate(scored.len())?;
    let mut kept: Vec<InstructionRecord> = Vec::with_capacity(scored.len());
    for r in scored {
        if r.assigned.is_none() {
            return Err(Error::MissingAssignment(r.id.clone()));
        }
        if let (Some(m), Some(s)) = (policy.margin, &r.scores) {
            if runner_up_gap(s) < m {
                continue;
            }
        }
        kept.push(r.clone());
    }
    kept.sort_by(by_consistency);
    match policy.mode {
        FilterMode::Threshold { theta } => kept.retain(|r| r.consistency().unwrap() >= theta),
        FilterMode::TopK { k } => kept.truncate(k),
    }
    InstructionSet::new(SetRole::Filt, kept)
}

/// Score `raw` against every criterion and keep the records `policy` selects.
pub fn filter_instructions(
    raw: &InstructionSet,
    directions: &DirectionSet,
    model: &ModelBundle,
    policy: &FilterPolicy,
) -> Result<InstructionSet> {
    policy.validate(raw.len())?;
    let mut seen = HashSet::new();
    let candidates: Vec<InstructionRecord> = raw
        .records
        .iter()
        .filter(|r| policy.admits_text(&r.text))
        .filter(|r| !policy.dedup || seen.insert(r.text.as_str()))
        .cloned()
        .collect();
    let scored = score_records(model, directions, &candidates, policy.score_mode)?;
    let mut policy = policy.clone();
    if let FilterMode::TopK { k } = policy.mode {
        policy.mode = FilterMode::TopK {
            k: k.min(scored.len()).max(1),
        };
    }
    if scored.is_empty() {
        return InstructionSet::new(SetRole::Filt, Vec::new());
    }
    select_scored(&scored, &policy)
}
