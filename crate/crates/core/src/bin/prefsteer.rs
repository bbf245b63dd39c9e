//! Command-line front end. Each subcommand wraps one library operation.
//!
//! Exit codes: 0 success, 2 configuration error, 3 stage failure, 4 I/O
//! error. Failures print one JSON line on stderr.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use prefsteer::analysis::{
    dimensionwise_utest, layerwise_cosine, ngram_overlap, DEFAULT_ALPHA, DEFAULT_NGRAM,
};
use prefsteer::directions::{
    default_prompt_pairs, extract_directions, ContrastivePromptPair, DirectionSet,
};
use prefsteer::instructions::{
    filter_instructions, score_records, select_scored, synth_instructions, FilterMode,
    FilterPolicy, InstructionSet, ScoreMode, SetRole, SynthOptions,
};
use prefsteer::pipeline::{make_scorer, run_pipeline, PipelineConfig, ScorerKind};
use prefsteer::preference::{build_dataset, SteeringProfile};
use prefsteer::runtime::{ModelBundle, SamplingConfig};
use prefsteer::toy::{random_model, synthetic_instructions, ToySpec};
use prefsteer::tuner::{
    best_gamma, gamma_sweep, pair_proportion, read_tsv_file, select_gammas, GammaChoice,
    ProportionTable, SweepTable, MIN_PROPORTION, NEGATIVE_GRID, POSITIVE_GRID,
};
use prefsteer::{Error, Result};

#[derive(Parser)]
#[command(
    name = "prefsteer",
    version,
    about = "Preference pairs from steered decoding"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded random toy model.
    ToyModel {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        layers: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Extract per-layer criterion directions from feature instructions.
    ExtractDirections {
        #[command(flatten)]
        model: ModelArg,
        /// Feature instructions (JSON lines); defaults to the phrase grammar.
        #[arg(long)]
        feat: Option<PathBuf>,
        #[arg(long, default_value_t = 1024)]
        n_feat: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON array of {criterion, positive, negative}.
        #[arg(long)]
        prompts: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample raw instructions from a pre-query template.
    SynthInstructions {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value = "")]
        template: String,
        #[arg(long, default_value_t = 1.0)]
        temperature: f32,
        #[arg(long, default_value_t = 128)]
        max_tokens: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        no_dedup: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score instructions against every criterion and assign the best one.
    ScoreConsistency {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long)]
        directions: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        cosine: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Keep the best-aligned instructions.
    Filter {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "top_k")]
        policy: PolicyKind,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long)]
        margin: Option<f64>,
        #[arg(long)]
        dedup: bool,
        /// Score unscored input with this model and `--directions`.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        directions: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Choose the two steering strengths from sweep tables, or sweep first.
    TuneGamma(TuneArgs),
    /// Decode chosen and rejected responses for filtered instructions.
    GeneratePairs {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long)]
        directions: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// JSON document with gamma_pos and gamma_neg.
        #[arg(long)]
        gammas: Option<PathBuf>,
        #[arg(long, allow_hyphen_values = true)]
        gamma_pos: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        gamma_neg: Option<f64>,
        #[arg(long)]
        layer_lo: Option<usize>,
        #[arg(long)]
        layer_hi: Option<usize>,
        #[arg(long, default_value_t = 256)]
        max_tokens: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare two direction sets layer by layer and dimension by dimension.
    AnalyzeSensitivity {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Defaults to every criterion present in both sets.
        #[arg(long)]
        criterion: Option<String>,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Share of test records sharing a word n-gram with the training texts.
    CheckLeakage {
        #[arg(long, required = true)]
        train: Vec<PathBuf>,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, default_value_t = DEFAULT_NGRAM)]
        n: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every stage from a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct ModelArg {
    #[arg(long = "model")]
    path: PathBuf,
}

impl ModelArg {
    fn load(&self) -> Result<ModelBundle> {
        ModelBundle::load_file(&self.path)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyKind {
    #[value(name = "top_k", alias = "top-k")]
    TopK,
    Threshold,
}

#[derive(Args)]
struct TuneArgs {
    /// Positive sweep table (TSV: gamma, mean_reward[, std, n]).
    #[arg(long)]
    pos: Option<PathBuf>,
    #[arg(long)]
    neg: Option<PathBuf>,
    /// Proportion table (TSV: gamma_pos, gamma_neg, proportion).
    #[arg(long)]
    prop: Option<PathBuf>,
    #[arg(long, default_value_t = MIN_PROPORTION)]
    min_prop: f64,
    /// Sweep mode: compute the tables with this model first.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    directions: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ScorerArg::Projection)]
    scorer: ScorerArg,
    #[arg(long)]
    criterion: Option<String>,
    #[arg(long, default_value_t = 64)]
    max_tokens: usize,
    /// Directory for the computed tables in sweep mode.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Where to write the chosen gammas as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScorerArg {
    Projection,
    Length,
    Constant,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    Ok(BufWriter::new(
        File::create(path).map_err(|e| io_err(path, e))?,
    ))
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, v)?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|e| io_err(path, e))
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string(v)?);
    Ok(())
}

fn bad_arg(field: &str, msg: &str) -> Error {
    Error::ConfigInvalid {
        field: field.into(),
        msg: msg.into(),
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::ToyModel { out, layers, seed } => {
            let spec = ToySpec {
                n_layers: layers,
                ..ToySpec::small()
            };
            let m = random_model(&spec, seed);
            m.save_file(&out)?;
            print_json(&serde_json::json!({ "path": out, "hash": m.hash() }))
        }
        Command::ExtractDirections {
            model,
            feat,
            n_feat,
            seed,
            prompts,
            out,
        } => {
            let m = model.load()?;
            let texts = match feat {
                Some(p) => InstructionSet::load_file(SetRole::Feat, p)?.texts(),
                None => synthetic_instructions(n_feat, seed),
            };
            let pairs: Vec<ContrastivePromptPair> = match prompts {
                Some(p) => serde_json::from_slice(&std::fs::read(&p).map_err(|e| io_err(&p, e))?)?,
                None => default_prompt_pairs(),
            };
            let set = extract_directions(&m, &texts, &pairs)?;
            set.save_file(&out)?;
            print_json(&serde_json::json!({
                "criteria": set.criteria().collect::<Vec<_>>(),
                "n_layers": set.n_layers(),
                "n_feat": texts.len(),
            }))
        }
        Command::SynthInstructions {
            model,
            n,
            template,
            temperature,
            max_tokens,
            seed,
            no_dedup,
            out,
        } => {
            let m = model.load()?;
            let opts = SynthOptions {
                dedup: !no_dedup,
                ..SynthOptions::default()
            };
            let sampling = SamplingConfig::temperature(temperature, max_tokens, seed);
            let (set, report) = synth_instructions(&m, &template, n, &sampling, &opts)?;
            set.save_file(&out)?;
            print_json(&report)
        }
        Command::ScoreConsistency {
            model,
            directions,
            input,
            cosine,
            out,
        } => {
            let m = model.load()?;
            let dirs = DirectionSet::load_file(&directions)?;
            let raw = InstructionSet::load_file(SetRole::Raw, &input)?;
            let mode = if cosine {
                ScoreMode::Cosine
            } else {
                ScoreMode::Dot
            };
            let scored =
                InstructionSet::new(SetRole::Raw, score_records(&m, &dirs, &raw.records, mode)?)?;
            scored.save_file(&out)?;
            let mut per: BTreeMap<String, usize> = BTreeMap::new();
            for r in &scored.records {
                *per.entry(r.assigned.as_ref().unwrap().criterion.clone())
                    .or_default() += 1;
            }
            print_json(&serde_json::json!({ "records": scored.len(), "assigned": per }))
        }
        Command::Filter {
            input,
            policy,
            k,
            theta,
            margin,
            dedup,
            model,
            directions,
            out,
        } => {
            let mode = match policy {
                PolicyKind::TopK => FilterMode::TopK {
                    k: k.ok_or_else(|| bad_arg("k", "--policy top_k needs --k"))?,
                },
                PolicyKind::Threshold => FilterMode::Threshold {
                    theta: theta
                        .ok_or_else(|| bad_arg("theta", "--policy threshold needs --theta"))?,
                },
            };
            let policy = FilterPolicy {
                mode,
                dedup,
                margin,
                ..FilterPolicy::top_k(1)
            };
            let set = InstructionSet::load_file(SetRole::Raw, &input)?;
            let filt = match (model, directions) {
                (Some(m), Some(d)) => filter_instructions(
                    &set,
                    &DirectionSet::load_file(d)?,
                    &ModelBundle::load_file(m)?,
                    &policy,
                )?,
                (None, None) => {
                    let mut seen = std::collections::HashSet::new();
                    let recs: Vec<_> = set
                        .records
                        .into_iter()
                        .filter(|r| !policy.dedup || seen.insert(r.text.clone()))
                        .collect();
                    select_scored(&recs, &policy)?
                }
                _ => {
                    return Err(bad_arg(
                        "directions",
                        "--model and --directions go together",
                    ))
                }
            };
            filt.save_file(&out)?;
            print_json(&serde_json::json!({ "kept": filt.len() }))
        }
        Command::TuneGamma(args) => tune(args),
        Command::GeneratePairs {
            model,
            directions,
            input,
            gammas,
            gamma_pos,
            gamma_neg,
            layer_lo,
            layer_hi,
            max_tokens,
            out,
        } => {
            let m = model.load()?;
            let dirs = DirectionSet::load_file(&directions)?;
            let filt = InstructionSet::load_file(SetRole::Filt, &input)?;
            let mut profile = SteeringProfile::default_for(m.n_layers());
            if let Some(p) = gammas {
                let c: GammaChoice =
                    serde_json::from_slice(&std::fs::read(&p).map_err(|e| io_err(&p, e))?)?;
                profile.gamma_pos = c.gamma_pos;
                profile.gamma_neg = c.gamma_neg;
            }
            profile.gamma_pos = gamma_pos.unwrap_or(profile.gamma_pos);
            profile.gamma_neg = gamma_neg.unwrap_or(profile.gamma_neg);
            profile.layer_lo = layer_lo.unwrap_or(profile.layer_lo);
            profile.layer_hi = layer_hi.unwrap_or(profile.layer_hi);
            let summary = build_dataset(
                &m,
                &filt,
                &dirs,
                &profile,
                &SamplingConfig::greedy(max_tokens),
                create(&out)?,
            )?;
            print_json(&summary)
        }
        Command::AnalyzeSensitivity {
            a,
            b,
            criterion,
            alpha,
            out,
        } => {
            let a = DirectionSet::load_file(&a)?;
            let b = DirectionSet::load_file(&b)?;
            let criteria: Vec<String> = match criterion {
                Some(c) => vec![c],
                None => a
                    .criteria()
                    .filter(|c| b.contains(c))
                    .map(String::from)
                    .collect(),
            };
            let mut reports = Vec::new();
            for c in &criteria {
                let cos = layerwise_cosine(&a, &b, c)?;
                let ut = dimensionwise_utest(&a, &b, c, alpha)?;
                println!(
                    "{c}\tcos_mean={:.6}\tcos_max={:.6}\tcos_min={:.6}\tmin_p={:.6}\t{}",
                    cos.mean,
                    cos.max,
                    cos.min,
                    ut.min_p,
                    if ut.accept {
                        "no significant dimension"
                    } else {
                        "significant dimension found"
                    }
                );
                reports.push(serde_json::json!({ "cosine": cos, "utest": ut }));
            }
            match out {
                Some(p) => write_json(&p, &reports),
                None => Ok(()),
            }
        }
        Command::CheckLeakage {
            train,
            test,
            n,
            out,
        } => {
            let mut texts = Vec::new();
            for p in &train {
                texts.extend(InstructionSet::load_file(SetRole::Raw, p)?.texts());
            }
            let test = InstructionSet::load_file(SetRole::Raw, &test)?;
            let report = ngram_overlap(&texts, &test.records, n)?;
            println!(
                "n={}\tleaked_fraction={:.6}\tleaked={}/{}",
                report.n,
                report.leaked_fraction,
                report.leaked_ids.len(),
                report.n_test
            );
            match out {
                Some(p) => write_json(&p, &report),
                None => Ok(()),
            }
        }
        Command::Run { config } => {
            let mut cfg = PipelineConfig::load(&config)?;
            cfg.apply_env()?;
            let manifest = run_pipeline(&cfg)?;
            print_json(&serde_json::json!({
                "output_dir": cfg.output_dir,
                "pairs": manifest.summary.pairs,
                "total_passes": manifest.summary.total_passes,
                "gamma_pos": manifest.gammas.gamma_pos,
                "gamma_neg": manifest.gammas.gamma_neg,
            }))
        }
    }
}

fn tune(args: TuneArgs) -> Result<()> {
    let (pos, neg, prop) = match (&args.model, &args.pos) {
        (None, Some(pos)) => {
            let need = |p: &Option<PathBuf>, f: &str| {
                p.clone()
                    .ok_or_else(|| bad_arg(f, "table mode needs --pos, --neg and --prop"))
            };
            (
                SweepTable::new(read_tsv_file(pos)?)?,
                SweepTable::new(read_tsv_file(need(&args.neg, "neg")?)?)?,
                ProportionTable::new(read_tsv_file(need(&args.prop, "prop")?)?)?,
            )
        }
        (Some(model), None) => {
            let missing = |f: &str| bad_arg(f, "sweep mode needs --directions and --input");
            let m = ModelBundle::load_file(model)?;
            let dirs = DirectionSet::load_file(
                args.directions
                    .as_ref()
                    .ok_or_else(|| missing("directions"))?,
            )?;
            let filt = InstructionSet::load_file(
                SetRole::Filt,
                args.input.as_ref().ok_or_else(|| missing("input"))?,
            )?;
            let kind = match args.scorer {
                ScorerArg::Projection => ScorerKind::Projection,
                ScorerArg::Length => ScorerKind::Length,
                ScorerArg::Constant => ScorerKind::Constant,
            };
            let scorer = make_scorer(kind, &m, &dirs, args.criterion.as_deref())?;
            let p = SteeringProfile::default_for(m.n_layers());
            let layers = (p.layer_lo, p.layer_hi);
            let s = SamplingConfig::greedy(args.max_tokens);
            let pos = gamma_sweep(
                &m,
                &filt.records,
                &dirs,
                &POSITIVE_GRID,
                layers,
                &*scorer,
                &s,
            )?;
            let neg = gamma_sweep(
                &m,
                &filt.records,
                &dirs,
                &NEGATIVE_GRID,
                layers,
                &*scorer,
                &s,
            )?;
            let prop = pair_proportion(
                &m,
                &filt.records,
                &dirs,
                best_gamma(&pos),
                &NEGATIVE_GRID,
                layers,
                &*scorer,
                &s,
            )?;
            if let Some(dir) = &args.out_dir {
                pos.write_tsv(create(&dir.join("sweep_pos.tsv"))?)?;
                neg.write_tsv(create(&dir.join("sweep_neg.tsv"))?)?;
                prop.write_tsv(create(&dir.join("proportions.tsv"))?)?;
            }
            (pos, neg, prop)
        }
        _ => {
            return Err(bad_arg(
                "model",
                "give either --model (sweep) or --pos/--neg/--prop (tables)",
            ))
        }
    };
    let choice = select_gammas(&pos, &neg, &prop, args.min_prop)?;
    println!("({}, {})", choice.gamma_pos, choice.gamma_neg);
    match &args.out {
        Some(p) => write_json(p, &choice),
        None => Ok(()),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::ConfigInvalid { .. }
        | Error::InvalidConfig(_)
        | Error::InvalidPolicy(_)
        | Error::InvalidProfile(_)
        | Error::InvalidSampling(_)
        | Error::InvalidSteering(_)
        | Error::InvalidCriterion(_) => 2,
        Error::Io { .. } | Error::SinkWriteError(_) => 4,
        Error::StageFailure { source, .. } => match exit_code(source) {
            4 => 4,
            _ => 3,
        },
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            let stage = match &e {
                Error::StageFailure { stage, .. } => Some(stage.clone()),
                _ => None,
            };
            let line = serde_json::json!({
                "error": e.kind(),
                "stage": stage,
                "message": e.to_string(),
                "exit_code": code,
            });
            eprintln!("{line}");
            ExitCode::from(code)
        }
    }
}
