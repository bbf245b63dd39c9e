//! Steering-strength selection from reward sweeps, without training.
//!
//! The positive strength is the grid value with the highest mean reward. The
//! negative strength is chosen among values whose pairs are ordered correctly
//! (chosen reward strictly above rejected reward) for at least `min_prop` of
//! instructions; among those the highest mean reward wins, then the smaller
//! magnitude.

use std::io::{Read, Write};
use std::path::Path;

use rand::{seq::index, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::directions::DirectionSet;
use crate::error::{Error, Result};
use crate::instructions::{assign_criterion, score_text, InstructionRecord, ScoreMode};
use crate::preference::steered_response;
use crate::runtime::{capture_positions, ModelBundle, SamplingConfig};

/// Reward model interface. Implementations must be deterministic and return
/// finite values.
pub trait Scorer: Sync {
    fn name(&self) -> &str;
    fn score(&self, instruction: &str, response: &str) -> Result<f64>;
}

/// Always returns the same value.
#[derive(Debug, Clone, Copy)]
pub struct ConstantScorer(pub f64);

impl Scorer for ConstantScorer {
    fn name(&self) -> &str {
        "constant"
    }

    fn score(&self, _: &str, _: &str) -> Result<f64> {
        Ok(self.0)
    }
}

/// Response length in bytes.
#[derive(Debug, Clone, Copy)]
pub struct LengthScorer;

impl Scorer for LengthScorer {
    fn name(&self) -> &str {
        "length"
    }

    fn score(&self, _: &str, response: &str) -> Result<f64> {
        Ok(response.len() as f64)
    }
}

/// Mean projection of the final-layer representations of the response tokens
/// onto a criterion's final-layer direction. An empty response is scored at
/// the last prompt position.
///
/// Unless pinned to one criterion, the direction is that of the instruction's
/// own best criterion, assigned exactly as the filter assigns it.
pub struct ProjectionScorer<'m> {
    model: &'m ModelBundle,
    directions: DirectionSet,
    criterion: Option<String>,
}

impl<'m> ProjectionScorer<'m> {
    pub fn new(model: &'m ModelBundle, directions: &DirectionSet) -> Result<Self> {
        directions.check_model(model)?;
        if directions.criteria().next().is_none() {
            return Err(Error::InvalidCriterion("direction set is empty".into()));
        }
        Ok(Self {
            model,
            directions: directions.clone(),
            criterion: None,
        })
    }

    pub fn pinned(
        model: &'m ModelBundle,
        directions: &DirectionSet,
        criterion: &str,
    ) -> Result<Self> {
        if !directions.contains(criterion) {
            return Err(Error::MissingDirection(criterion.to_string()));
        }
        Ok(Self {
            criterion: Some(criterion.to_string()),
            ..Self::new(model, directions)?
        })
    }

    fn fail(&self, msg: String) -> Error {
        Error::ScorerFailure {
            scorer: self.name().into(),
            msg,
        }
    }
}

impl Scorer for ProjectionScorer<'_> {
    fn name(&self) -> &str {
        "projection"
    }

    fn score(&self, instruction: &str, response: &str) -> Result<f64> {
        let criterion = match &self.criterion {
            Some(c) => c.clone(),
            None => {
                let scores = score_text(self.model, &self.directions, instruction, ScoreMode::Dot)
                    .map_err(|e| self.fail(e.to_string()))?;
                assign_criterion(&scores)?.0
            }
        };
        let n = self.model.n_layers();
        let u = self
            .directions
            .layer(&criterion, n)
            .expect("criterion checked");

        let tok = &self.model.tokenizer;
        let mut tokens = tok.chat_prompt(instruction);
        let start = tokens.len();
        tokens.extend(tok.encode(response));
        let reps = capture_positions(self.model, &tokens).map_err(|e| self.fail(e.to_string()))?;
        let from = if start == tokens.len() {
            start - 1
        } else {
            start
        };
        let span = &reps[from..];
        let total: f64 = span
            .iter()
            .map(|r| {
                r.layer(n)
                    .iter()
                    .zip(u)
                    .map(|(&a, &b)| a as f64 * b as f64)
                    .sum::<f64>()
            })
            .sum();
        Ok(total / span.len() as f64)
    }
}

fn checked_score(scorer: &dyn Scorer, instruction: &str, response: &str) -> Result<f64> {
    let s = scorer.score(instruction, response)?;
    if !s.is_finite() {
        return Err(Error::ScorerFailure {
            scorer: scorer.name().into(),
            msg: format!("non-finite score {s}"),
        });
    }
    Ok(s)
}

// ---------------------------------------------------------------------------
// tables

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    Positive,
    Negative,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub mean_reward: f64,
    #[serde(default)]
    pub std: Option<f64>,
    #[serde(default = "one")]
    pub n: usize,
}

fn one() -> usize {
    1
}

/// Mean reward per steering strength, sorted by gamma.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn new(mut rows: Vec<SweepRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidTable("sweep table is empty".into()));
        }
        rows.sort_by(|a, b| a.gamma.total_cmp(&b.gamma));
        if rows.windows(2).any(|w| w[0].gamma == w[1].gamma) {
            return Err(Error::InvalidTable("duplicate gamma in sweep table".into()));
        }
        if let Some(r) = rows.iter().find(|r| r.n == 0 || !r.mean_reward.is_finite()) {
            return Err(Error::InvalidTable(format!(
                "bad row for gamma {}",
                r.gamma
            )));
        }
        Ok(Self { rows })
    }

    pub fn polarity(&self) -> Polarity {
        if self.rows.iter().all(|r| r.gamma > 0.0) {
            Polarity::Positive
        } else if self.rows.iter().all(|r| r.gamma < 0.0) {
            Polarity::Negative
        } else {
            Polarity::Mixed
        }
    }

    pub fn mean_for(&self, gamma: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| same_gamma(r.gamma, gamma))
            .map(|r| r.mean_reward)
    }

    pub fn write_tsv(&self, w: impl Write) -> Result<()> {
        write_tsv(&self.rows, w)
    }

    pub fn read_tsv(r: impl Read) -> Result<Self> {
        Self::new(read_tsv(r)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProportionRow {
    pub gamma_pos: f64,
    pub gamma_neg: f64,
    pub proportion: f64,
}

/// Share of instructions whose chosen response outscores the rejected one,
/// per negative strength, at a fixed positive strength.
#[derive(Debug, Clone, PartialEq)]
pub struct ProportionTable {
    pub gamma_pos: f64,
    pub rows: Vec<ProportionRow>,
}

impl ProportionTable {
    pub fn new(mut rows: Vec<ProportionRow>) -> Result<Self> {
        let gamma_pos = rows
            .first()
            .map(|r| r.gamma_pos)
            .ok_or_else(|| Error::InvalidTable("proportion table is empty".into()))?;
        if rows.iter().any(|r| !same_gamma(r.gamma_pos, gamma_pos)) {
            return Err(Error::InvalidTable("rows disagree on gamma_pos".into()));
        }
        if let Some(r) = rows.iter().find(|r| !(0.0..=1.0).contains(&r.proportion)) {
            return Err(Error::InvalidTable(format!(
                "proportion {} outside [0, 1]",
                r.proportion
            )));
        }
        rows.sort_by(|a, b| a.gamma_neg.total_cmp(&b.gamma_neg));
        if rows.windows(2).any(|w| w[0].gamma_neg == w[1].gamma_neg) {
            return Err(Error::InvalidTable("duplicate gamma_neg".into()));
        }
        Ok(Self { gamma_pos, rows })
    }

    pub fn write_tsv(&self, w: impl Write) -> Result<()> {
        write_tsv(&self.rows, w)
    }

    pub fn read_tsv(r: impl Read) -> Result<Self> {
        Self::new(read_tsv(r)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsampleRow {
    pub gamma: f64,
    pub mean_of_means: f64,
    pub std_of_means: f64,
}

pub fn write_tsv<T: Serialize>(rows: &[T], w: impl Write) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().delimiter(b'\t').from_writer(w);
    for r in rows {
        wr.serialize(r).map_err(|e| Error::Parse(e.to_string()))?;
    }
    wr.flush().map_err(Error::SinkWriteError)
}

pub fn read_tsv<T: for<'de> Deserialize<'de>>(r: impl Read) -> Result<Vec<T>> {
    csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .from_reader(r)
        .deserialize()
        .map(|row| row.map_err(|e| Error::Parse(e.to_string())))
        .collect()
}

pub fn read_tsv_file<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    read_tsv(std::fs::File::open(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_tsv_file<T: Serialize>(rows: &[T], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_tsv(
        rows,
        std::fs::File::create(path).map_err(|e| Error::io(path, e))?,
    )
}

/// The selected pair of strengths, persisted for the generation stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaChoice {
    pub gamma_pos: f64,
    pub gamma_neg: f64,
}

fn same_gamma(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

// ---------------------------------------------------------------------------
// sweeps

fn criterion_of(r: &InstructionRecord) -> Result<&str> {
    r.assigned
        .as_ref()
        .map(|a| a.criterion.as_str())
        .ok_or_else(|| Error::MissingAssignment(r.id.clone()))
}

/// Per-instruction rewards of responses steered at `gamma`.
pub fn steered_scores(
    model: &ModelBundle,
    instructions: &[InstructionRecord],
    directions: &DirectionSet,
    gamma: f64,
    layers: (usize, usize),
    scorer: &dyn Scorer,
    sampling: &SamplingConfig,
) -> Result<Vec<f64>> {
    instructions
        .par_iter()
        .map(|r| {
            let c = criterion_of(r)?;
            let resp = steered_response(
                model,
                directions,
                c,
                &r.text,
                layers,
                gamma as f32,
                sampling,
            )?;
            checked_score(scorer, &r.text, &resp)
        })
        .collect()
}

/// Rewards for each gamma of the grid, `(gamma, per-instruction rewards)`.
#[allow(clippy::too_many_arguments)]
pub fn sweep_scores(
    model: &ModelBundle,
    instructions: &[InstructionRecord],
    directions: &DirectionSet,
    gammas: &[f64],
    layers: (usize, usize),
    scorer: &dyn Scorer,
    sampling: &SamplingConfig,
) -> Result<Vec<(f64, Vec<f64>)>> {
    if instructions.is_empty() {
        return Err(Error::EmptyInput);
    }
    if gammas.is_empty() {
        return Err(Error::InvalidTable("empty gamma grid".into()));
    }
    gammas
        .iter()
        .map(|&g| {
            let s = steered_scores(model, instructions, directions, g, layers, scorer, sampling)?;
            Ok((g, s))
        })
        .collect()
}

fn mean_std(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = (xs.len() > 1)
        .then(|| (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt());
    (mean, std)
}

pub fn sweep_table(scores: &[(f64, Vec<f64>)]) -> Result<SweepTable> {
    SweepTable::new(
        scores
            .iter()
            .map(|(g, s)| {
                let (mean_reward, std) = mean_std(s);
                SweepRow {
                    gamma: *g,
                    mean_reward,
                    std,
                    n: s.len(),
                }
            })
            .collect(),
    )
}

/// Mean (and sample std) reward for one steered response per instruction at
/// every gamma of the grid.
#[allow(clippy::too_many_arguments)]
pub fn gamma_sweep(
    model: &ModelBundle,
    instructions: &[InstructionRecord],
    directions: &DirectionSet,
    gammas: &[f64],
    layers: (usize, usize),
    scorer: &dyn Scorer,
    sampling: &SamplingConfig,
) -> Result<SweepTable> {
    sweep_table(&sweep_scores(
        model,
        instructions,
        directions,
        gammas,
        layers,
        scorer,
        sampling,
    )?)
}

/// Fraction of positions where `chosen[i] > rejected[i]`; ties count against.
pub fn proportion_from_scores(chosen: &[f64], rejected: &[f64]) -> Result<f64> {
    if chosen.len() != rejected.len() || chosen.is_empty() {
        return Err(Error::DimMismatch(format!(
            "{} chosen vs {} rejected scores",
            chosen.len(),
            rejected.len()
        )));
    }
    let wins = chosen.iter().zip(rejected).filter(|(c, r)| c > r).count();
    Ok(wins as f64 / chosen.len() as f64)
}

#[allow(clippy::too_many_arguments)]
pub fn pair_proportion(
    model: &ModelBundle,
    instructions: &[InstructionRecord],
    directions: &DirectionSet,
    gamma_pos: f64,
    gamma_negs: &[f64],
    layers: (usize, usize),
    scorer: &dyn Scorer,
    sampling: &SamplingConfig,
) -> Result<ProportionTable> {
    if instructions.is_empty() {
        return Err(Error::EmptyInput);
    }
    let chosen = steered_scores(
        model,
        instructions,
        directions,
        gamma_pos,
        layers,
        scorer,
        sampling,
    )?;
    let rows = gamma_negs
        .iter()
        .map(|&g| {
            let rejected =
                steered_scores(model, instructions, directions, g, layers, scorer, sampling)?;
            Ok(ProportionRow {
                gamma_pos,
                gamma_neg: g,
                proportion: proportion_from_scores(&chosen, &rejected)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ProportionTable::new(rows)
}

// higher reward first, then smaller |gamma|
fn better(a: (f64, f64), b: (f64, f64)) -> bool {
    a.1 > b.1 || (a.1 == b.1 && a.0.abs() < b.0.abs())
}

/// Gamma with the highest mean reward; ties go to the smaller magnitude.
pub fn best_gamma(table: &SweepTable) -> f64 {
    let mut best = (table.rows[0].gamma, table.rows[0].mean_reward);
    for r in &table.rows[1..] {
        if better((r.gamma, r.mean_reward), best) {
            best = (r.gamma, r.mean_reward);
        }
    }
    best.0
}

/// Pick `(gamma_pos, gamma_neg)` from the three tables.
pub fn select_gammas(
    pos_table: &SweepTable,
    neg_table: &SweepTable,
    prop_table: &ProportionTable,
    min_prop: f64,
) -> Result<GammaChoice> {
    let gamma_pos = best_gamma(pos_table);
    if !same_gamma(prop_table.gamma_pos, gamma_pos) {
        return Err(Error::InvalidTable(format!(
            "proportions were computed at gamma_pos {}, but the positive sweep selects {gamma_pos}",
            prop_table.gamma_pos
        )));
    }

    let mut best_neg: Option<(f64, f64)> = None;
    for r in &prop_table.rows {
        if !(r.gamma_neg < 0.0) || r.proportion < min_prop {
            continue;
        }
        let mean = neg_table.mean_for(r.gamma_neg).ok_or_else(|| {
            Error::InvalidTable(format!("no mean reward for gamma_neg {}", r.gamma_neg))
        })?;
        let cand = (r.gamma_neg, mean);
        if best_neg.is_none_or(|b| better(cand, b)) {
            best_neg = Some(cand);
        }
    }
    let (gamma_neg, _) = best_neg.ok_or(Error::NoFeasibleNegative(min_prop))?;
    Ok(GammaChoice {
        gamma_pos,
        gamma_neg,
    })
}

fn summarize(means: &[f64]) -> (f64, f64) {
    let (m, s) = mean_std(means);
    (m, s.unwrap_or(0.0))
}

/// Mean and sample std of `reps` means of size-`k` subsets drawn without
/// replacement, per gamma. One ChaCha20 stream seeded with `seed` is consumed
/// in row order.
pub fn subsample_stats(
    scores: &[(f64, Vec<f64>)],
    k: usize,
    reps: usize,
    seed: u64,
) -> Result<Vec<SubsampleRow>> {
    if k == 0 || reps == 0 {
        return Err(Error::InvalidTable("k and reps must be positive".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    scores
        .iter()
        .map(|(gamma, s)| {
            if s.len() < k {
                return Err(Error::InsufficientSamples {
                    gamma: *gamma,
                    needed: k,
                    got: s.len(),
                });
            }
            let means: Vec<f64> = (0..reps)
                .map(|_| {
                    let idx = index::sample(&mut rng, s.len(), k);
                    idx.iter().map(|i| s[i]).sum::<f64>() / k as f64
                })
                .collect();
            let (mean_of_means, std_of_means) = summarize(&means);
            Ok(SubsampleRow {
                gamma: *gamma,
                mean_of_means,
                std_of_means,
            })
        })
        .collect()
}

/// `subsample_stats` for the proportion rule: each repetition draws one
/// index subset and compares chosen and rejected rewards on it.
pub fn subsample_proportions(
    chosen: &[f64],
    rejected: &[(f64, Vec<f64>)],
    k: usize,
    reps: usize,
    seed: u64,
) -> Result<Vec<SubsampleRow>> {
    if k == 0 || reps == 0 {
        return Err(Error::InvalidTable("k and reps must be positive".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rejected
        .iter()
        .map(|(gamma, r)| {
            if r.len() != chosen.len() {
                return Err(Error::DimMismatch("chosen/rejected lengths differ".into()));
            }
            if r.len() < k {
                return Err(Error::InsufficientSamples {
                    gamma: *gamma,
                    needed: k,
                    got: r.len(),
                });
            }
            let props: Vec<f64> = (0..reps)
                .map(|_| {
                    let idx = index::sample(&mut rng, r.len(), k);
                    idx.iter().filter(|&i| chosen[i] > r[i]).count() as f64 / k as f64
                })
                .collect();
            let (mean_of_means, std_of_means) = summarize(&props);
            Ok(SubsampleRow {
                gamma: *gamma,
                mean_of_means,
                std_of_means,
            })
        })
        .collect()
}

/// Positive grid used for the reference sweep.
pub const POSITIVE_GRID: [f64; 6] = [0.01, 0.03, 0.05, 0.1, 0.3, 0.5];
/// Negative grid used for the reference sweep.
pub const NEGATIVE_GRID: [f64; 6] = [-0.01, -0.03, -0.05, -0.1, -0.3, -0.5];
pub const MIN_PROPORTION: f64 = 0.9;

#[cfg(test)]
mod tests {
    use super::*;

    fn sweep(rows: &[(f64, f64)]) -> SweepTable {
        SweepTable::new(
            rows.iter()
                .map(|&(gamma, mean_reward)| SweepRow {
                    gamma,
                    mean_reward,
                    std: None,
                    n: 1,
                })
                .collect(),
        )
        .unwrap()
    }

    fn props(gp: f64, rows: &[(f64, f64)]) -> ProportionTable {
        ProportionTable::new(
            rows.iter()
                .map(|&(gamma_neg, proportion)| ProportionRow {
                    gamma_pos: gp,
                    gamma_neg,
                    proportion,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn infeasible_negative() {
        let pos = sweep(&[(0.1, 1.0)]);
        let neg = sweep(&[(-0.1, 0.5)]);
        let p = props(0.1, &[(-0.1, 0.85)]);
        assert!(matches!(
            select_gammas(&pos, &neg, &p, 0.9),
            Err(Error::NoFeasibleNegative(_))
        ));
    }

    #[test]
    fn ties_prefer_smaller_magnitude() {
        let pos = sweep(&[(0.1, 2.0), (0.3, 2.0)]);
        let neg = sweep(&[(-0.3, 1.0), (-0.1, 1.0)]);
        let p = props(0.1, &[(-0.3, 0.95), (-0.1, 0.95)]);
        let c = select_gammas(&pos, &neg, &p, 0.9).unwrap();
        assert_eq!((c.gamma_pos, c.gamma_neg), (0.1, -0.1));
    }

    #[test]
    fn mismatched_gamma_pos_is_rejected() {
        let pos = sweep(&[(0.1, 1.0), (0.3, 2.0)]);
        let neg = sweep(&[(-0.1, 0.5)]);
        let p = props(0.1, &[(-0.1, 0.95)]);
        assert!(matches!(
            select_gammas(&pos, &neg, &p, 0.9),
            Err(Error::InvalidTable(_))
        ));
    }

    #[test]
    fn table_validation() {
        assert!(SweepTable::new(vec![]).is_err());
        let dup = vec![
            SweepRow {
                gamma: 0.1,
                mean_reward: 1.0,
                std: None,
                n: 1,
            },
            SweepRow {
                gamma: 0.1,
                mean_reward: 2.0,
                std: None,
                n: 1,
            },
        ];
        assert!(SweepTable::new(dup).is_err());
        assert!(ProportionTable::new(vec![ProportionRow {
            gamma_pos: 0.1,
            gamma_neg: -0.1,
            proportion: 1.5
        }])
        .is_err());
        assert_eq!(sweep(&[(0.1, 1.0)]).polarity(), Polarity::Positive);
        assert_eq!(sweep(&[(-0.1, 1.0)]).polarity(), Polarity::Negative);
        assert_eq!(
            sweep(&[(-0.1, 1.0), (0.1, 1.0)]).polarity(),
            Polarity::Mixed
        );
    }

    #[test]
    fn tsv_roundtrip_and_minimal_columns() {
        let t = SweepTable::new(vec![
            SweepRow {
                gamma: 0.1,
                mean_reward: 17.624,
                std: Some(0.042),
                n: 20000,
            },
            SweepRow {
                gamma: 0.01,
                mean_reward: 17.435,
                std: None,
                n: 3,
            },
        ])
        .unwrap();
        let mut buf = Vec::new();
        t.write_tsv(&mut buf).unwrap();
        let back = SweepTable::read_tsv(buf.as_slice()).unwrap();
        assert_eq!(back, t);
        let mut again = Vec::new();
        back.write_tsv(&mut again).unwrap();
        assert_eq!(again, buf);

        let minimal = "gamma\tmean_reward\n0.1\t17.624\n-0.5\t1\n";
        let t = SweepTable::read_tsv(minimal.as_bytes()).unwrap();
        assert_eq!(t.rows[0].gamma, -0.5);
        assert_eq!(t.rows[1].n, 1);
    }

    #[test]
    fn proportions_count_ties_against() {
        assert_eq!(
            proportion_from_scores(&[1.0, 2.0, 3.0, 4.0], &[0.0, 2.0, 4.0, 3.0]).unwrap(),
            0.5
        );
        assert!(proportion_from_scores(&[], &[]).is_err());
    }

    #[test]
    fn subsample_edge_cases() {
        let constant = vec![(0.1, vec![3.0; 150])];
        let rows = subsample_stats(&constant, 100, 20, 1).unwrap();
        assert_eq!(rows[0].std_of_means, 0.0);
        assert_eq!(rows[0].mean_of_means, 3.0);

        let pop = vec![(0.1, (0..100).map(f64::from).collect::<Vec<_>>())];
        let rows = subsample_stats(&pop, 100, 10, 1).unwrap();
        assert!(rows[0].std_of_means.abs() < 1e-12);

        assert!(matches!(
            subsample_stats(&[(0.1, vec![1.0; 5])], 10, 3, 1),
            Err(Error::InsufficientSamples { .. })
        ));
        let a = subsample_stats(&pop, 10, 10, 7).unwrap();
        let b = subsample_stats(&pop, 10, 10, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn subsampled_proportions() {
        let chosen = vec![1.0; 50];
        let rejected = vec![(-0.1, vec![0.0; 50])];
        let rows = subsample_proportions(&chosen, &rejected, 10, 5, 3).unwrap();
        assert_eq!(rows[0].mean_of_means, 1.0);
        assert_eq!(rows[0].std_of_means, 0.0);
    }
}
