//! Reference arithmetic shared by the integration tests. Everything here is
//! written independently of the crate's runtime: full-sequence attention with
//! an explicit causal mask, f64 throughout.

#![allow(dead_code)]

use prefsteer::container::{Container, Tensor};
use prefsteer::runtime::{ModelBundle, ModelConfig, VOCAB_SIZE};

pub fn config(
    n_layers: usize,
    d_model: usize,
    n_heads: usize,
    d_ff: usize,
    max_seq_len: usize,
) -> ModelConfig {
    ModelConfig {
        n_layers,
        d_model,
        n_heads,
        d_ff,
        vocab_size: VOCAB_SIZE,
        max_seq_len,
        layer_norm_eps: 1e-5,
        tied_embeddings: false,
    }
}

/// Model whose tensors are filled by `init(name, index)`.
pub fn hand_set(cfg: &ModelConfig, init: impl Fn(&str, usize) -> f32) -> ModelBundle {
    let mut c = Container::new();
    c.meta
        .insert("config".into(), serde_json::to_value(cfg).unwrap());
    for (name, shape) in cfg.schema() {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|i| init(&name, i)).collect();
        c.insert(name, Tensor::new(shape, data).unwrap());
    }
    ModelBundle::from_container(&c).unwrap()
}

/// Deterministic "hand-set" weights: small irregular values from a fixed
/// formula, layer-norm gains near 1.
pub fn patterned(cfg: &ModelConfig) -> ModelBundle {
    hand_set(cfg, |name, i| {
        let salt = name
            .bytes()
            .fold(0u32, |a, b| a.wrapping_mul(31).wrapping_add(b as u32));
        let t = (i as f32 + 1.0) * 0.618 + (salt % 97) as f32 * 0.11;
        if name.ends_with(".g") {
            1.0 + 0.1 * t.sin()
        } else if name.ends_with(".b") || name.ends_with("b1") || name.ends_with("b2") {
            0.05 * t.cos()
        } else {
            0.4 * t.sin() * (0.7 * t).cos()
        }
    })
}

fn tensor(m: &Container, name: &str) -> (Vec<usize>, Vec<f64>) {
    let t = m.tensor(name).unwrap();
    (t.shape.clone(), t.data.iter().map(|&x| x as f64).collect())
}

fn matmul(x: &[Vec<f64>], w: &[f64], cols: usize) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| {
            (0..cols)
                .map(|j| {
                    row.iter()
                        .enumerate()
                        .map(|(i, v)| v * w[i * cols + j])
                        .sum()
                })
                .collect()
        })
        .collect()
}

fn ln(x: &[f64], g: &[f64], b: &[f64], eps: f64) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    x.iter()
        .zip(g.iter().zip(b))
        .map(|(v, (g, b))| (v - mean) / (var + eps).sqrt() * g + b)
        .collect()
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

/// Block outputs for every position: `out[l][p]`, l = 0 for block 1.
/// `steer` adds `gamma * u` to block `l` output at positions `>= from`.
pub fn reference_forward(
    model: &ModelBundle,
    tokens: &[u32],
    steer: Option<(&[(usize, Vec<f64>)], f64, usize)>,
) -> Vec<Vec<Vec<f64>>> {
    let c = model.to_container();
    let cfg = &model.config;
    let (d, h) = (cfg.d_model, cfg.n_heads);
    let hd = d / h;
    let eps = cfg.layer_norm_eps as f64;
    let (_, emb) = tensor(&c, "tok_emb");
    let (_, pos) = tensor(&c, "pos_emb");
    let mut x: Vec<Vec<f64>> = tokens
        .iter()
        .enumerate()
        .map(|(p, &t)| {
            (0..d)
                .map(|j| emb[t as usize * d + j] + pos[p * d + j])
                .collect()
        })
        .collect();
    let t_len = tokens.len();
    let mut outs = Vec::new();
    for l in 0..cfg.n_layers {
        let get = |n: &str| tensor(&c, &format!("layers.{l}.{n}")).1;
        let a: Vec<Vec<f64>> = x
            .iter()
            .map(|r| ln(r, &get("ln1.g"), &get("ln1.b"), eps))
            .collect();
        let q = matmul(&a, &get("attn.wq"), d);
        let k = matmul(&a, &get("attn.wk"), d);
        let v = matmul(&a, &get("attn.wv"), d);
        let mut o = vec![vec![0.0; d]; t_len];
        for head in 0..h {
            let r = head * hd..(head + 1) * hd;
            for i in 0..t_len {
                let mut s: Vec<f64> = (0..t_len)
                    .map(|j| {
                        if j > i {
                            f64::NEG_INFINITY
                        } else {
                            r.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (hd as f64).sqrt()
                        }
                    })
                    .collect();
                let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = s.iter().map(|v| (v - m).exp()).sum();
                s.iter_mut().for_each(|v| *v = (*v - m).exp() / z);
                for c in r.clone() {
                    o[i][c] = (0..t_len).map(|j| s[j] * v[j][c]).sum();
                }
            }
        }
        let proj = matmul(&o, &get("attn.wo"), d);
        for (xr, pr) in x.iter_mut().zip(&proj) {
            xr.iter_mut().zip(pr).for_each(|(a, b)| *a += b);
        }
        let m: Vec<Vec<f64>> = x
            .iter()
            .map(|r| ln(r, &get("ln2.g"), &get("ln2.b"), eps))
            .collect();
        let b1 = get("mlp.b1");
        let b2 = get("mlp.b2");
        let hidden: Vec<Vec<f64>> = matmul(&m, &get("mlp.w1"), cfg.d_ff)
            .into_iter()
            .map(|r| r.iter().zip(&b1).map(|(v, b)| gelu(v + b)).collect())
            .collect();
        let mlp = matmul(&hidden, &get("mlp.w2"), d);
        for (xr, mr) in x.iter_mut().zip(&mlp) {
            xr.iter_mut()
                .zip(mr.iter().zip(&b2))
                .for_each(|(a, (m, b))| *a += m + b);
        }
        if let Some((dirs, gamma, from)) = steer {
            if let Some((_, u)) = dirs.iter().find(|(layer, _)| *layer == l + 1) {
                for xr in x.iter_mut().skip(from) {
                    xr.iter_mut().zip(u).for_each(|(a, u)| *a += gamma * u);
                }
            }
        }
        outs.push(x.clone());
    }
    outs
}

/// Logits at the final position of the reference forward pass.
pub fn reference_logits(model: &ModelBundle, last_hidden: &[f64]) -> Vec<f64> {
    let c = model.to_container();
    let (_, g) = tensor(&c, "ln_f.g");
    let (_, b) = tensor(&c, "ln_f.b");
    let name = if model.config.tied_embeddings {
        "tok_emb"
    } else {
        "unemb"
    };
    let (_, w) = tensor(&c, name);
    let h = ln(last_hidden, &g, &b, model.config.layer_norm_eps as f64);
    let d = h.len();
    (0..VOCAB_SIZE)
        .map(|t| (0..d).map(|j| w[t * d + j] * h[j]).sum())
        .collect()
}

pub fn max_abs_diff(a: &[f32], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (*x as f64 - y).abs())
        .fold(0.0, f64::max)
}

/// Top eigenvector of the sample covariance of centered `vectors`, from a
/// dense symmetric eigendecomposition.
pub fn eigen_oracle(vectors: &[Vec<f32>]) -> Vec<f64> {
    let n = vectors.len();
    let d = vectors[0].len();
    let mean: Vec<f64> = (0..d)
        .map(|j| vectors.iter().map(|v| v[j] as f64).sum::<f64>() / n as f64)
        .collect();
    let x = nalgebra::DMatrix::from_fn(n, d, |i, j| vectors[i][j] as f64 - mean[j]);
    let cov = x.transpose() * &x / (n as f64 - 1.0);
    let eig = nalgebra::SymmetricEigen::new(cov);
    let (best, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    eig.eigenvectors.column(best).iter().copied().collect()
}

pub fn abs_cosine(a: &[f32], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * y).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).abs()
}

/// Mean projection of the uncentered inputs onto `u`.
pub fn mean_projection(vectors: &[Vec<f32>], u: &[f32]) -> f64 {
    vectors
        .iter()
        .map(|v| {
            v.iter()
                .zip(u)
                .map(|(a, b)| *a as f64 * *b as f64)
                .sum::<f64>()
        })
        .sum::<f64>()
        / vectors.len() as f64
}

/// Two-sided Mann-Whitney p by walking every way of labelling the pooled
/// values, with U counted pairwise (ties worth one half) rather than by ranks.
pub fn permutation_p(x: &[f64], y: &[f64]) -> (f64, f64) {
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let n = pooled.len();
    let nx = x.len();
    // U doubled so it stays integral
    let u2 = |xs: &[f64], ys: &[f64]| -> i64 {
        let mut s = 0;
        for a in xs {
            for b in ys {
                s += if a > b {
                    2
                } else if a == b {
                    1
                } else {
                    0
                };
            }
        }
        s
    };
    let observed = u2(x, y);
    let (mut le, mut ge, mut total) = (0u64, 0u64, 0u64);
    let mut chosen = Vec::with_capacity(nx);
    fn walk(
        start: usize,
        chosen: &mut Vec<usize>,
        nx: usize,
        pooled: &[f64],
        f: &mut dyn FnMut(&[usize]),
    ) {
        if chosen.len() == nx {
            f(chosen);
            return;
        }
        for i in start..pooled.len() {
            chosen.push(i);
            walk(i + 1, chosen, nx, pooled, f);
            chosen.pop();
        }
    }
    walk(0, &mut chosen, nx, &pooled, &mut |idx: &[usize]| {
        let xs: Vec<f64> = idx.iter().map(|&i| pooled[i]).collect();
        let ys: Vec<f64> = (0..n)
            .filter(|i| !idx.contains(i))
            .map(|i| pooled[i])
            .collect();
        let s = u2(&xs, &ys);
        total += 1;
        le += u64::from(s <= observed);
        ge += u64::from(s >= observed);
    });
    let p = (2.0 * le.min(ge) as f64 / total as f64).min(1.0);
    (observed as f64 / 2.0, p)
}
