//! End-to-end driver: configuration, staged execution with persisted
//! artifacts, and the run manifest.
//!
//! Stages run in order and each one records a stamp holding the hash of its
//! inputs and of the files it wrote. A stage whose stamp still matches is
//! skipped, so reruns are cheap and interrupted runs resume where they
//! stopped.

use std::collections::BTreeMap;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{ngram_overlap, LeakageReport, DEFAULT_NGRAM};
use crate::directions::{
    default_prompt_pairs, extract_directions, ContrastivePromptPair, DirectionSet,
};
use crate::error::{Error, Result};
use crate::instructions::{
    filter_instructions, synth_instructions, FilterPolicy, InstructionSet, SetRole, SynthOptions,
};
use crate::preference::{build_dataset, read_pairs, DatasetSummary, SteeringProfile};
use crate::runtime::{ModelBundle, SamplingConfig};
use crate::toy::synthetic_instructions;
use crate::tuner::{
    best_gamma, gamma_sweep, pair_proportion, select_gammas, ConstantScorer, GammaChoice,
    LengthScorer, ProjectionScorer, Scorer, MIN_PROPORTION, NEGATIVE_GRID, POSITIVE_GRID,
};

pub const ENV_OUTPUT_DIR: &str = "PREFSTEER_OUTPUT_DIR";
pub const ENV_THREADS: &str = "PREFSTEER_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sizes {
    pub feat: usize,
    pub raw: usize,
    pub filt: usize,
}

impl Default for Sizes {
    fn default() -> Self {
        Self {
            feat: 1024,
            raw: 1_000_000,
            filt: 100_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    #[default]
    Projection,
    Length,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneConfig {
    #[serde(default = "positive_grid")]
    pub gamma_pos: Vec<f64>,
    #[serde(default = "negative_grid")]
    pub gamma_neg: Vec<f64>,
    #[serde(default = "min_prop")]
    pub min_prop: f64,
    /// Number of filtered instructions used for the sweeps.
    #[serde(default = "tune_sample")]
    pub sample: usize,
}

fn positive_grid() -> Vec<f64> {
    POSITIVE_GRID.to_vec()
}
fn negative_grid() -> Vec<f64> {
    NEGATIVE_GRID.to_vec()
}
fn min_prop() -> f64 {
    MIN_PROPORTION
}
fn tune_sample() -> usize {
    1000
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            gamma_pos: positive_grid(),
            gamma_neg: negative_grid(),
            min_prop: min_prop(),
            sample: tune_sample(),
        }
    }
}

fn default_generation() -> SamplingConfig {
    SamplingConfig::greedy(256)
}

fn default_synthesis() -> SamplingConfig {
    SamplingConfig::temperature(1.0, 128, 0)
}

fn default_attempts() -> usize {
    SynthOptions::default().attempts_per_record
}

fn default_true() -> bool {
    true
}

/// Run configuration. Every field but `model_path` and `output_dir` has a
/// default; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub model_path: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub sizes: Sizes,
    /// Feature instructions, one JSON record per line. When absent, `sizes.feat`
    /// instructions are drawn from the built-in phrase grammar.
    #[serde(default)]
    pub feat_path: Option<PathBuf>,
    /// Raw instructions; when absent they are synthesized from `template`.
    #[serde(default)]
    pub raw_path: Option<PathBuf>,
    /// Pre-query template; decoding starts right after it.
    #[serde(default)]
    pub template: String,
    #[serde(default = "default_prompt_pairs")]
    pub criteria: Vec<ContrastivePromptPair>,
    /// Defaults to top-k with `k = sizes.filt` and deduplication.
    #[serde(default)]
    pub filter: Option<FilterPolicy>,
    /// Defaults to the model-dependent layer interval and gammas 0.1 / -0.05.
    #[serde(default)]
    pub profile: Option<SteeringProfile>,
    #[serde(default = "default_generation")]
    pub sampling: SamplingConfig,
    #[serde(default = "default_synthesis")]
    pub synthesis: SamplingConfig,
    #[serde(default = "default_attempts")]
    pub attempts_per_record: usize,
    #[serde(default = "default_true")]
    pub dedup: bool,
    /// When present, gammas are chosen by sweep instead of taken from the
    /// profile.
    #[serde(default)]
    pub tune: Option<TuneConfig>,
    #[serde(default)]
    pub scorer: ScorerKind,
    /// Pins the projection scorer to one criterion; by default each
    /// instruction is scored along its own best criterion.
    #[serde(default)]
    pub scorer_criterion: Option<String>,
    /// Held-out texts to check the feature set against for n-gram overlap.
    #[serde(default)]
    pub leakage_test_path: Option<PathBuf>,
    #[serde(default = "default_ngram")]
    pub leakage_n: usize,
}

fn default_ngram() -> usize {
    DEFAULT_NGRAM
}

fn invalid(field: &str, msg: impl Into<String>) -> Error {
    Error::ConfigInvalid {
        field: field.to_string(),
        msg: msg.into(),
    }
}

impl PipelineConfig {
    pub fn new(model_path: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            model_path: model_path.into(),
            output_dir: output_dir.into(),
            seed: 0,
            threads: None,
            sizes: Sizes::default(),
            feat_path: None,
            raw_path: None,
            template: String::new(),
            criteria: default_prompt_pairs(),
            filter: None,
            profile: None,
            sampling: default_generation(),
            synthesis: default_synthesis(),
            attempts_per_record: default_attempts(),
            dedup: true,
            tune: None,
            scorer: ScorerKind::default(),
            scorer_criterion: None,
            leakage_test_path: None,
            leakage_n: DEFAULT_NGRAM,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| invalid("config", e.message()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Apply `PREFSTEER_OUTPUT_DIR` and `PREFSTEER_THREADS`.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(dir) = std::env::var(ENV_OUTPUT_DIR) {
            self.output_dir = dir.into();
        }
        if let Ok(t) = std::env::var(ENV_THREADS) {
            let n = t
                .parse::<usize>()
                .map_err(|_| invalid("threads", format!("{ENV_THREADS}={t} is not a count")))?;
            self.threads = Some(n);
        }
        Ok(())
    }

    pub fn filter_policy(&self) -> FilterPolicy {
        self.filter.clone().unwrap_or_else(|| FilterPolicy {
            dedup: true,
            ..FilterPolicy::top_k(self.sizes.filt)
        })
    }

    /// Checks that do not need the model.
    pub fn validate(&self) -> Result<()> {
        let s = &self.sizes;
        if s.feat < 2 {
            return Err(invalid(
                "sizes.feat",
                "need at least 2 feature instructions",
            ));
        }
        if s.raw == 0 {
            return Err(invalid("sizes.raw", "must be positive"));
        }
        if s.filt == 0 {
            return Err(invalid("sizes.filt", "must be positive"));
        }
        if s.filt > s.raw {
            return Err(invalid(
                "sizes.filt",
                format!("{} exceeds sizes.raw {}", s.filt, s.raw),
            ));
        }
        if self.threads == Some(0) {
            return Err(invalid("threads", "must be positive"));
        }
        if self.criteria.is_empty() {
            return Err(invalid("criteria", "at least one criterion is required"));
        }
        let mut names = std::collections::BTreeSet::new();
        for p in &self.criteria {
            p.validate()
                .map_err(|e| invalid("criteria", e.to_string()))?;
            if !names.insert(p.criterion.as_str()) {
                return Err(invalid(
                    "criteria",
                    format!("`{}` given twice", p.criterion),
                ));
            }
        }
        if let Some(f) = &self.filter {
            let n = if self.raw_path.is_some() {
                usize::MAX
            } else {
                s.raw
            };
            f.validate(n)
                .map_err(|e| invalid("filter", e.to_string()))?;
        }
        self.sampling
            .validate()
            .map_err(|e| invalid("sampling", e.to_string()))?;
        self.synthesis
            .validate()
            .map_err(|e| invalid("synthesis", e.to_string()))?;
        if self.attempts_per_record == 0 {
            return Err(invalid("attempts_per_record", "must be positive"));
        }
        if let Some(p) = &self.profile {
            if !(p.gamma_pos > p.gamma_neg) {
                return Err(invalid("profile.gamma_neg", "must be below gamma_pos"));
            }
        }
        if let Some(t) = &self.tune {
            if t.gamma_pos.is_empty() || t.gamma_pos.iter().any(|g| !(*g > 0.0)) {
                return Err(invalid("tune.gamma_pos", "needs positive values"));
            }
            if t.gamma_neg.is_empty() || t.gamma_neg.iter().any(|g| !(*g < 0.0)) {
                return Err(invalid("tune.gamma_neg", "needs negative values"));
            }
            if !(0.0..=1.0).contains(&t.min_prop) {
                return Err(invalid("tune.min_prop", "must be in [0, 1]"));
            }
            if t.sample == 0 {
                return Err(invalid("tune.sample", "must be positive"));
            }
        }
        if let Some(c) = &self.scorer_criterion {
            if !names.contains(c.as_str()) {
                return Err(invalid(
                    "scorer_criterion",
                    format!("unknown criterion `{c}`"),
                ));
            }
        }
        if self.leakage_n == 0 {
            return Err(invalid("leakage_n", "must be at least 1"));
        }
        for (field, path) in [
            ("model_path", Some(&self.model_path)),
            ("feat_path", self.feat_path.as_ref()),
            ("raw_path", self.raw_path.as_ref()),
            ("leakage_test_path", self.leakage_test_path.as_ref()),
        ] {
            if let Some(p) = path {
                if !p.exists() {
                    return Err(invalid(field, format!("{} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    /// The steering profile for `model`, checked against its depth.
    pub fn profile_for(&self, model: &ModelBundle) -> Result<SteeringProfile> {
        let n = model.n_layers();
        let p = self
            .profile
            .unwrap_or_else(|| SteeringProfile::default_for(n));
        if p.layer_lo == 0 {
            return Err(invalid("profile.layer_lo", "layers are numbered from 1"));
        }
        if p.layer_hi > n {
            return Err(invalid(
                "profile.layer_hi",
                format!("{} exceeds the model's {n} layers", p.layer_hi),
            ));
        }
        if p.layer_lo > p.layer_hi {
            return Err(invalid("profile.layer_lo", "must not exceed layer_hi"));
        }
        Ok(p)
    }

    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

// ---------------------------------------------------------------------------
// manifest

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
    /// Line count for line-oriented files, tensor count for containers.
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<Artifact>,
    pub wall_ms: u128,
    /// True when the stamp matched and nothing was recomputed.
    pub reused: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub model_hash: String,
    pub stages: Vec<StageRecord>,
    pub gammas: GammaChoice,
    pub summary: DatasetSummary,
}

impl RunManifest {
    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Stamp {
    input_hash: String,
    outputs: Vec<Artifact>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_hash(path: &Path) -> Result<String> {
    Ok(sha256_hex(
        &std::fs::read(path).map_err(|e| Error::io(path, e))?,
    ))
}

fn artifact(path: &Path) -> Result<Artifact> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let records = if path.extension().is_some_and(|e| e == "bin") {
        crate::container::Container::from_bytes(&bytes)?
            .tensors
            .len()
    } else {
        bytes.iter().filter(|&&b| b == b'\n').count()
    };
    Ok(Artifact {
        path: path.to_path_buf(),
        sha256: sha256_hex(&bytes),
        records,
    })
}

pub mod files {
    pub const FEAT: &str = "feat.jsonl";
    pub const DIRECTIONS: &str = "directions.bin";
    pub const RAW: &str = "raw.jsonl";
    pub const SYNTH_REPORT: &str = "synth_report.json";
    pub const FILT: &str = "filt.jsonl";
    pub const SWEEP_POS: &str = "sweep_pos.tsv";
    pub const SWEEP_NEG: &str = "sweep_neg.tsv";
    pub const PROPORTIONS: &str = "proportions.tsv";
    pub const GAMMAS: &str = "gammas.json";
    pub const PAIRS: &str = "pairs.jsonl";
    pub const DATASET_SUMMARY: &str = "dataset_summary.json";
    pub const LEAKAGE: &str = "leakage.json";
    pub const MANIFEST: &str = "manifest.json";
}

struct Runner<'a> {
    dir: &'a Path,
    stages: Vec<StageRecord>,
}

impl Runner<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn stamp_path(&self, stage: &str) -> PathBuf {
        self.dir.join(".stamps").join(format!("{stage}.json"))
    }

    fn fresh(&self, stage: &str, input_hash: &str) -> Option<Vec<Artifact>> {
        let bytes = std::fs::read(self.stamp_path(stage)).ok()?;
        let stamp: Stamp = serde_json::from_slice(&bytes).ok()?;
        if stamp.input_hash != input_hash {
            return None;
        }
        let intact = stamp
            .outputs
            .iter()
            .all(|a| file_hash(&a.path).is_ok_and(|h| h == a.sha256));
        intact.then_some(stamp.outputs)
    }

    /// Runs `body` unless the stage's stamp matches `key` and its outputs are
    /// intact. `body` must write exactly the files named in `outputs`.
    fn stage(
        &mut self,
        name: &str,
        key: &[&[u8]],
        inputs: &[PathBuf],
        outputs: &[&str],
        body: impl FnOnce() -> Result<()>,
    ) -> Result<()> {
        let start = Instant::now();
        let mut h = Sha256::new();
        h.update(name.as_bytes());
        for part in key {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part);
        }
        for p in inputs {
            h.update(file_hash(p)?.as_bytes());
        }
        let input_hash = hex::encode(h.finalize());

        let fail = |e: Error| Error::StageFailure {
            stage: name.to_string(),
            source: Box::new(e),
        };
        let (artifacts, reused) = match self.fresh(name, &input_hash) {
            Some(a) => (a, true),
            None => {
                body().map_err(fail)?;
                let a = outputs
                    .iter()
                    .map(|o| artifact(&self.path(o)))
                    .collect::<Result<Vec<_>>>()
                    .map_err(fail)?;
                let stamp = Stamp {
                    input_hash,
                    outputs: a.clone(),
                };
                let sp = self.stamp_path(name);
                write_json(&sp, &stamp).map_err(fail)?;
                (a, false)
            }
        };
        self.stages.push(StageRecord {
            name: name.to_string(),
            inputs: inputs.to_vec(),
            outputs: artifacts,
            wall_ms: start.elapsed().as_millis(),
            reused,
        });
        Ok(())
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn json_key<T: Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec(v).expect("key serializes")
}

pub fn make_scorer<'m>(
    kind: ScorerKind,
    model: &'m ModelBundle,
    directions: &DirectionSet,
    criterion: Option<&str>,
) -> Result<Box<dyn Scorer + 'm>> {
    Ok(match (kind, criterion) {
        (ScorerKind::Projection, Some(c)) => {
            Box::new(ProjectionScorer::pinned(model, directions, c)?)
        }
        (ScorerKind::Projection, None) => Box::new(ProjectionScorer::new(model, directions)?),
        (ScorerKind::Length, _) => Box::new(LengthScorer),
        (ScorerKind::Constant, _) => Box::new(ConstantScorer(0.0)),
    })
}

/// Run every stage, honoring `threads` if set.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunManifest> {
    config.validate()?;
    match config.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| invalid("threads", e.to_string()))?
            .install(|| run_stages(config)),
        None => run_stages(config),
    }
}

fn run_stages(config: &PipelineConfig) -> Result<RunManifest> {
    let dir = config.output_dir.as_path();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let model = ModelBundle::load_file(&config.model_path)?;
    let profile = config.profile_for(&model)?;
    let mut run = Runner {
        dir,
        stages: Vec::new(),
    };
    let model_path = config.model_path.clone();
    let seed = config.seed.to_le_bytes();

    // feature instructions
    let feat_path = run.path(files::FEAT);
    let mut feat_inputs = Vec::new();
    if let Some(p) = &config.feat_path {
        feat_inputs.push(p.clone());
    }
    run.stage(
        "feat-instructions",
        &[&json_key(&config.sizes.feat), &seed],
        &feat_inputs,
        &[files::FEAT],
        || {
            let set = match &config.feat_path {
                Some(p) => InstructionSet::load_file(SetRole::Feat, p)?,
                None => InstructionSet::from_texts(
                    SetRole::Feat,
                    "feat",
                    &synthetic_instructions(config.sizes.feat, config.seed),
                ),
            };
            set.save_file(&feat_path)
        },
    )?;

    // directions
    let dir_path = run.path(files::DIRECTIONS);
    run.stage(
        "extract-directions",
        &[&json_key(&config.criteria)],
        &[model_path.clone(), feat_path.clone()],
        &[files::DIRECTIONS],
        || {
            let feat = InstructionSet::load_file(SetRole::Feat, &feat_path)?;
            extract_directions(&model, &feat.texts(), &config.criteria)?.save_file(&dir_path)
        },
    )?;

    // raw instructions
    let raw_path = run.path(files::RAW);
    let synth_path = run.path(files::SYNTH_REPORT);
    match &config.raw_path {
        Some(p) => run.stage(
            "synth-instructions",
            &[],
            &[p.clone()],
            &[files::RAW],
            || InstructionSet::load_file(SetRole::Raw, p)?.save_file(&raw_path),
        )?,
        None => run.stage(
            "synth-instructions",
            &[
                config.template.as_bytes(),
                &json_key(&(
                    config.sizes.raw,
                    &config.synthesis,
                    config.attempts_per_record,
                    config.dedup,
                )),
                &seed,
            ],
            &[model_path.clone()],
            &[files::RAW, files::SYNTH_REPORT],
            || {
                let opts = SynthOptions {
                    dedup: config.dedup,
                    attempts_per_record: config.attempts_per_record,
                };
                let sampling = config
                    .synthesis
                    .with_seed(config.synthesis.seed ^ config.seed);
                let (set, report) = synth_instructions(
                    &model,
                    &config.template,
                    config.sizes.raw,
                    &sampling,
                    &opts,
                )?;
                set.save_file(&raw_path)?;
                write_json(&synth_path, &report)
            },
        )?,
    }

    // score and filter
    let policy = config.filter_policy();
    let filt_path = run.path(files::FILT);
    run.stage(
        "filter",
        &[&json_key(&policy)],
        &[model_path.clone(), dir_path.clone(), raw_path.clone()],
        &[files::FILT],
        || {
            let raw = InstructionSet::load_file(SetRole::Raw, &raw_path)?;
            let dirs = DirectionSet::load_file(&dir_path)?;
            let mut policy = policy.clone();
            if let crate::instructions::FilterMode::TopK { k } = &mut policy.mode {
                *k = (*k).min(raw.len());
            }
            filter_instructions(&raw, &dirs, &model, &policy)?.save_file(&filt_path)
        },
    )?;

    // steering strengths
    let gammas_path = run.path(files::GAMMAS);
    match &config.tune {
        None => run.stage(
            "tune-gamma",
            &[&json_key(&profile)],
            &[],
            &[files::GAMMAS],
            || {
                write_json(
                    &gammas_path,
                    &GammaChoice {
                        gamma_pos: profile.gamma_pos,
                        gamma_neg: profile.gamma_neg,
                    },
                )
            },
        )?,
        Some(tune) => {
            let (pos_path, neg_path, prop_path) = (
                run.path(files::SWEEP_POS),
                run.path(files::SWEEP_NEG),
                run.path(files::PROPORTIONS),
            );
            let criterion = config.scorer_criterion.clone();
            run.stage(
                "tune-gamma",
                &[&json_key(&(
                    tune,
                    &profile,
                    &config.sampling,
                    config.scorer,
                    &criterion,
                ))],
                &[model_path.clone(), dir_path.clone(), filt_path.clone()],
                &[
                    files::SWEEP_POS,
                    files::SWEEP_NEG,
                    files::PROPORTIONS,
                    files::GAMMAS,
                ],
                || {
                    let dirs = DirectionSet::load_file(&dir_path)?;
                    let filt = InstructionSet::load_file(SetRole::Filt, &filt_path)?;
                    let sample = &filt.records[..tune.sample.min(filt.len())];
                    let scorer = make_scorer(config.scorer, &model, &dirs, criterion.as_deref())?;
                    let layers = (profile.layer_lo, profile.layer_hi);
                    let args = (&model, sample, &dirs);
                    let pos = gamma_sweep(
                        args.0,
                        args.1,
                        args.2,
                        &tune.gamma_pos,
                        layers,
                        &*scorer,
                        &config.sampling,
                    )?;
                    let neg = gamma_sweep(
                        args.0,
                        args.1,
                        args.2,
                        &tune.gamma_neg,
                        layers,
                        &*scorer,
                        &config.sampling,
                    )?;
                    let best_pos = best_gamma(&pos);
                    let prop = pair_proportion(
                        args.0,
                        args.1,
                        args.2,
                        best_pos,
                        &tune.gamma_neg,
                        layers,
                        &*scorer,
                        &config.sampling,
                    )?;
                    pos.write_tsv(create(&pos_path)?)?;
                    neg.write_tsv(create(&neg_path)?)?;
                    prop.write_tsv(create(&prop_path)?)?;
                    let choice = select_gammas(&pos, &neg, &prop, tune.min_prop)?;
                    write_json(&gammas_path, &choice)
                },
            )?
        }
    }
    let gammas: GammaChoice = read_json(&gammas_path)?;
    let profile = SteeringProfile {
        gamma_pos: gammas.gamma_pos,
        gamma_neg: gammas.gamma_neg,
        ..profile
    };
    profile
        .validate(model.n_layers())
        .map_err(|e| invalid("profile", e.to_string()))?;

    // pairs
    let pairs_path = run.path(files::PAIRS);
    let summary_path = run.path(files::DATASET_SUMMARY);
    run.stage(
        "generate-pairs",
        &[&json_key(&(&profile, &config.sampling))],
        &[model_path.clone(), dir_path.clone(), filt_path.clone()],
        &[files::PAIRS, files::DATASET_SUMMARY],
        || {
            let dirs = DirectionSet::load_file(&dir_path)?;
            let filt = InstructionSet::load_file(SetRole::Filt, &filt_path)?;
            let summary = build_dataset(
                &model,
                &filt,
                &dirs,
                &profile,
                &config.sampling,
                BufWriter::new(create(&pairs_path)?),
            )?;
            write_json(&summary_path, &summary)
        },
    )?;
    let summary: DatasetSummary = read_json(&summary_path)?;

    // reports
    if let Some(test_path) = &config.leakage_test_path {
        let leak_path = run.path(files::LEAKAGE);
        run.stage(
            "reports",
            &[&json_key(&config.leakage_n)],
            &[feat_path.clone(), filt_path.clone(), test_path.clone()],
            &[files::LEAKAGE],
            || {
                let test = InstructionSet::load_file(SetRole::Raw, test_path)?;
                let mut train = InstructionSet::load_file(SetRole::Feat, &feat_path)?.texts();
                train.extend(InstructionSet::load_file(SetRole::Filt, &filt_path)?.texts());
                let report: LeakageReport = ngram_overlap(&train, &test.records, config.leakage_n)?;
                write_json(&leak_path, &report)
            },
        )?;
    }

    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config.hash(),
        model_hash: model.hash().to_string(),
        stages: run.stages,
        gammas,
        summary,
    };
    write_json(&dir.join(files::MANIFEST), &manifest)?;
    Ok(manifest)
}

fn create(path: &Path) -> Result<std::fs::File> {
    std::fs::File::create(path).map_err(|e| Error::io(path, e))
}

/// Re-read every stage output and check counts and hashes against the
/// manifest.
pub fn verify_manifest(manifest: &RunManifest) -> Result<()> {
    for stage in &manifest.stages {
        for a in &stage.outputs {
            let now = artifact(&a.path)?;
            if now != *a {
                return Err(Error::Parse(format!(
                    "{} changed since stage `{}` wrote it",
                    a.path.display(),
                    stage.name
                )));
            }
            let p = a.path.as_path();
            match p.file_name().and_then(|n| n.to_str()) {
                Some(files::PAIRS) => {
                    let f = std::fs::File::open(p).map_err(|e| Error::io(p, e))?;
                    read_pairs(std::io::BufReader::new(f))?;
                }
                Some(files::FEAT) | Some(files::RAW) | Some(files::FILT) => {
                    InstructionSet::load_file(SetRole::Raw, p)?;
                }
                Some(files::DIRECTIONS) => {
                    DirectionSet::load_file(p)?;
                }
                Some(n) if n.ends_with(".tsv") => {
                    crate::tuner::read_tsv_file::<BTreeMap<String, String>>(p)?;
                }
                _ => {
                    read_json::<serde_json::Value>(p)?;
                }
            }
        }
    }
    Ok(())
}
