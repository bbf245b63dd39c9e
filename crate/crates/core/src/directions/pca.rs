//! First principal component by power iteration.
//!
//! The iteration runs on whichever of the covariance (`d x d`) or Gram
//! (`n x n`) matrix of the centered data is smaller; both share the top
//! eigenvalue, and a Gram eigenvector maps back through `X^T`. When that
//! matrix is small it is first raised to the 16th power by repeated squaring,
//! which turns an eigenvalue ratio `r` into `r^16` and keeps clustered spectra
//! within the iteration budget.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcaOptions {
    pub max_iter: usize,
    /// Stop once successive unit iterates are closer than this in Euclidean
    /// distance.
    pub tol: f64,
}

impl Default for PcaOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-8,
        }
    }
}

const SQUARING_MAX_DIM: usize = 512;
const SQUARINGS: usize = 4;

/// Unit eigenvector of the sample covariance of the mean-centered inputs with
/// the largest eigenvalue, oriented so the uncentered inputs project onto it
/// with non-negative mean.
pub fn pca_first_component(vectors: &[Vec<f32>]) -> Result<Vec<f32>> {
    pca_first_component_with(vectors, PcaOptions::default())
}

pub fn pca_first_component_with(vectors: &[Vec<f32>], opts: PcaOptions) -> Result<Vec<f32>> {
    let n = vectors.len();
    if n < 2 {
        return Err(Error::DegenerateInput(format!(
            "PCA needs at least 2 vectors, got {n}"
        )));
    }
    let d = vectors[0].len();
    if d == 0 {
        return Err(Error::DegenerateInput("vectors have zero length".into()));
    }
    if let Some(v) = vectors.iter().find(|v| v.len() != d) {
        return Err(Error::DimMismatch(format!(
            "PCA inputs have lengths {d} and {}",
            v.len()
        )));
    }

    let mut mean = vec![0.0f64; d];
    for v in vectors {
        for (m, &x) in mean.iter_mut().zip(v) {
            *m += x as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| v.iter().zip(&mean).map(|(&x, m)| x as f64 - m).collect())
        .collect();

    let total_var: f64 = centered.iter().flatten().map(|x| x * x).sum();
    let scale: f64 = vectors
        .iter()
        .flatten()
        .map(|&x| (x as f64) * (x as f64))
        .sum::<f64>()
        .max(f64::MIN_POSITIVE);
    if total_var <= 1e-24 * scale {
        return Err(Error::DegenerateInput(
            "all vectors are identical after centering".into(),
        ));
    }

    let use_gram = n < d;
    let m = if use_gram {
        // G = X X^T
        sym_from(n, |i, j| dot(&centered[i], &centered[j]))
    } else {
        // X^T X, the covariance up to 1/(n-1)
        sym_from(d, |a, b| centered.iter().map(|row| row[a] * row[b]).sum())
    };
    let top = top_eigenvector(m, opts)?;

    let mut u = if use_gram {
        let mut u = vec![0.0f64; d];
        for (w, row) in top.iter().zip(&centered) {
            for (ui, x) in u.iter_mut().zip(row) {
                *ui += w * x;
            }
        }
        normalize(&mut u);
        u
    } else {
        top
    };

    if dot(&u, &mean) < 0.0 {
        u.iter_mut().for_each(|x| *x = -*x);
    }
    Ok(u.into_iter().map(|x| x as f32).collect())
}

/// Dense symmetric matrix, row-major.
struct Sym {
    n: usize,
    data: Vec<f64>,
}

fn sym_from(n: usize, f: impl Fn(usize, usize) -> f64) -> Sym {
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = f(i, j);
            data[i * n + j] = v;
            data[j * n + i] = v;
        }
    }
    Sym { n, data }
}

impl Sym {
    fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        self.data
            .chunks_exact(self.n)
            .map(|row| dot(row, v))
            .collect()
    }

    fn square_normalized(&self) -> Sym {
        let n = self.n;
        let out = sym_from(n, |i, j| {
            dot(
                &self.data[i * n..(i + 1) * n],
                &self.data[j * n..(j + 1) * n],
            )
        });
        let norm = out.data.iter().map(|x| x * x).sum::<f64>().sqrt();
        Sym {
            n,
            data: out.data.into_iter().map(|x| x / norm).collect(),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

fn top_eigenvector(mut m: Sym, opts: PcaOptions) -> Result<Vec<f64>> {
    let n = m.n;
    if n <= SQUARING_MAX_DIM {
        for _ in 0..SQUARINGS {
            m = m.square_normalized();
        }
    }
    // start from the column with the largest diagonal entry
    let start = (0..n)
        .max_by(|&a, &b| m.data[a * n + a].total_cmp(&m.data[b * n + b]))
        .unwrap();
    let mut v = m.data[start * n..(start + 1) * n].to_vec();
    if normalize(&mut v) == 0.0 {
        return Err(Error::DegenerateInput("covariance operator is zero".into()));
    }
    for _ in 0..opts.max_iter {
        let mut w = m.mul_vec(&v);
        if normalize(&mut w) == 0.0 {
            return Err(Error::DegenerateInput(
                "power iterate collapsed to zero".into(),
            ));
        }
        let delta = w
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        v = w;
        if delta <= opts.tol {
            return Ok(v);
        }
    }
    Err(Error::NonConvergence(opts.max_iter))
}
