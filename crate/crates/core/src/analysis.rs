//! Comparison of two direction sets and n-gram leakage between corpora.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::directions::DirectionSet;
use crate::error::{Error, Result};
use crate::instructions::InstructionRecord;

/// Total sample size up to which p values come from exact enumeration.
pub const EXACT_LIMIT: usize = 12;
pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_NGRAM: usize = 13;

fn pair<'a>(
    a: &'a DirectionSet,
    b: &'a DirectionSet,
    criterion: &str,
) -> Result<(&'a [Vec<f32>], &'a [Vec<f32>])> {
    if a.n_layers() != b.n_layers() || a.d_model() != b.d_model() {
        return Err(Error::DimMismatch(format!(
            "direction sets are {}x{} and {}x{}",
            a.n_layers(),
            a.d_model(),
            b.n_layers(),
            b.d_model()
        )));
    }
    let missing = || Error::CriterionMissing(criterion.to_string());
    Ok((
        a.get(criterion).ok_or_else(missing)?,
        b.get(criterion).ok_or_else(missing)?,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineReport {
    pub criterion: String,
    /// One value per layer, layer 1 first.
    pub per_layer: Vec<f64>,
    pub mean: f64,
    pub max: f64,
    pub min: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerCosine {
    pub layer: usize,
    pub cosine: f64,
}

impl CosineReport {
    pub fn rows(&self) -> Vec<LayerCosine> {
        self.per_layer
            .iter()
            .enumerate()
            .map(|(i, &cosine)| LayerCosine {
                layer: i + 1,
                cosine,
            })
            .collect()
    }
}

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    let denom = (aa * bb).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        (ab / denom).clamp(-1.0, 1.0)
    }
}

pub fn layerwise_cosine(
    a: &DirectionSet,
    b: &DirectionSet,
    criterion: &str,
) -> Result<CosineReport> {
    let (la, lb) = pair(a, b, criterion)?;
    let per_layer: Vec<f64> = la.iter().zip(lb).map(|(x, y)| cosine(x, y)).collect();
    let mean = per_layer.iter().sum::<f64>() / per_layer.len() as f64;
    let max = per_layer.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = per_layer.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(CosineReport {
        criterion: criterion.to_string(),
        per_layer,
        mean,
        max,
        min,
    })
}

// ---------------------------------------------------------------------------
// Mann-Whitney U

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UTest {
    pub u: f64,
    pub p: f64,
}

/// Average ranks (1-based) of `values`, plus the tie group sizes.
fn average_ranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j hold ranks i+1..=j
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        ties.push(j - i);
        i = j;
    }
    (ranks, ties)
}

fn check(x: &[f64], y: &[f64]) -> Result<()> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptySample);
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::DimMismatch("sample contains NaN".into()));
    }
    Ok(())
}

/// U statistic of `x`: rank sum of `x` minus `nx(nx+1)/2`, with average ranks.
pub fn u_statistic(x: &[f64], y: &[f64]) -> Result<f64> {
    check(x, y)?;
    let all: Vec<f64> = x.iter().chain(y).copied().collect();
    let (ranks, _) = average_ranks(&all);
    let nx = x.len() as f64;
    Ok(ranks[..x.len()].iter().sum::<f64>() - nx * (nx + 1.0) / 2.0)
}

/// Two-sided p value by enumerating every assignment of the pooled ranks to
/// the `x` group. Feasible up to about 20 pooled values.
pub fn exact_p(x: &[f64], y: &[f64]) -> Result<UTest> {
    check(x, y)?;
    let n = x.len() + y.len();
    if n > 24 {
        return Err(Error::DimMismatch(format!(
            "{n} values is too many to enumerate"
        )));
    }
    let all: Vec<f64> = x.iter().chain(y).copied().collect();
    let (ranks, _) = average_ranks(&all);
    // doubled ranks are integers
    let r2: Vec<i64> = ranks.iter().map(|r| (r * 2.0).round() as i64).collect();
    let observed: i64 = r2[..x.len()].iter().sum();
    let (mut le, mut ge, mut total) = (0u64, 0u64, 0u64);
    for mask in 0u32..(1u32 << n) {
        if mask.count_ones() as usize != x.len() {
            continue;
        }
        let s: i64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| r2[i]).sum();
        total += 1;
        if s <= observed {
            le += 1;
        }
        if s >= observed {
            ge += 1;
        }
    }
    let nx = x.len() as f64;
    let u = observed as f64 / 2.0 - nx * (nx + 1.0) / 2.0;
    let p = (2.0 * le.min(ge) as f64 / total as f64).min(1.0);
    Ok(UTest { u, p })
}

/// Two-sided p value from the normal approximation with tie-corrected
/// variance and a 0.5 continuity correction.
pub fn normal_p(x: &[f64], y: &[f64]) -> Result<UTest> {
    check(x, y)?;
    let all: Vec<f64> = x.iter().chain(y).copied().collect();
    let (ranks, ties) = average_ranks(&all);
    let (nx, ny) = (x.len() as f64, y.len() as f64);
    let n = nx + ny;
    let u = ranks[..x.len()].iter().sum::<f64>() - nx * (nx + 1.0) / 2.0;
    let mu = nx * ny / 2.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum();
    let var = if n > 1.0 {
        nx * ny / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)))
    } else {
        0.0
    };
    if var <= 0.0 {
        return Ok(UTest { u, p: 1.0 });
    }
    let z = ((u - mu).abs() - 0.5) / var.sqrt();
    let sf = 1.0 - Normal::standard().cdf(z);
    Ok(UTest {
        u,
        p: (2.0 * sf).clamp(0.0, 1.0),
    })
}

/// Exact enumeration when `|x| + |y| <= EXACT_LIMIT`, normal approximation
/// otherwise.
pub fn mann_whitney_u(x: &[f64], y: &[f64]) -> Result<UTest> {
    if x.len() + y.len() <= EXACT_LIMIT {
        exact_p(x, y)
    } else {
        normal_p(x, y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UTestReport {
    pub criterion: String,
    pub alpha: f64,
    /// One entry per hidden dimension.
    pub dims: Vec<UTest>,
    pub min_p: f64,
    /// True when no dimension is significant at `alpha`.
    pub accept: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimRow {
    pub dim: usize,
    pub u: f64,
    pub p: f64,
}

impl UTestReport {
    pub fn rows(&self) -> Vec<DimRow> {
        self.dims
            .iter()
            .enumerate()
            .map(|(dim, t)| DimRow {
                dim,
                u: t.u,
                p: t.p,
            })
            .collect()
    }
}

/// For every dimension, compares the values it takes across the layers of
/// `a` with those across the layers of `b`.
pub fn dimensionwise_utest(
    a: &DirectionSet,
    b: &DirectionSet,
    criterion: &str,
    alpha: f64,
) -> Result<UTestReport> {
    let (la, lb) = pair(a, b, criterion)?;
    if la.len() < 2 {
        return Err(Error::DimMismatch(format!(
            "need at least 2 layers per sample, got {}",
            la.len()
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidTable(format!("alpha {alpha} outside (0, 1)")));
    }
    let dims = (0..a.d_model())
        .into_par_iter()
        .map(|d| {
            let x: Vec<f64> = la.iter().map(|l| l[d] as f64).collect();
            let y: Vec<f64> = lb.iter().map(|l| l[d] as f64).collect();
            mann_whitney_u(&x, &y)
        })
        .collect::<Result<Vec<_>>>()?;
    let min_p = dims.iter().map(|t| t.p).fold(f64::INFINITY, f64::min);
    Ok(UTestReport {
        criterion: criterion.to_string(),
        alpha,
        dims,
        min_p,
        accept: min_p > alpha,
    })
}

// ---------------------------------------------------------------------------
// leakage

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub n: usize,
    pub n_test: usize,
    pub leaked_fraction: f64,
    pub leaked_ids: Vec<String>,
}

fn words(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

fn ngrams(text: &str, n: usize) -> impl Iterator<Item = String> {
    let w = words(text);
    let count = (w.len() + 1).saturating_sub(n);
    (0..count)
        .map(move |i| w[i..i + n].join(" "))
        .collect::<Vec<_>>()
        .into_iter()
}

/// Marks a test record as leaked when any of its word n-grams also occurs in
/// the training texts. Words are whitespace-separated and lowercased.
pub fn ngram_overlap<S: AsRef<str> + Sync>(
    train: &[S],
    test: &[InstructionRecord],
    n: usize,
) -> Result<LeakageReport> {
    if n == 0 {
        return Err(Error::InvalidConfig(
            "n-gram order must be at least 1".into(),
        ));
    }
    if test.is_empty() {
        return Err(Error::EmptyInput);
    }
    let seen: HashSet<String> = train
        .par_iter()
        .flat_map_iter(|t| ngrams(t.as_ref(), n))
        .collect();
    let leaked_ids: Vec<String> = test
        .par_iter()
        .filter(|r| ngrams(&r.text, n).any(|g| seen.contains(&g)))
        .map(|r| r.id.clone())
        .collect();
    Ok(LeakageReport {
        n,
        n_test: test.len(),
        leaked_fraction: leaked_ids.len() as f64 / test.len() as f64,
        leaked_ids,
    })
}
