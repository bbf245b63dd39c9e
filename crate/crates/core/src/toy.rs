//! Seeded toy models and synthetic instruction text for tests, examples and
//! desk-scale runs.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::container::{Container, Tensor};
use crate::directions::DirectionSet;
use crate::runtime::{ModelBundle, ModelConfig, EOS, VOCAB_SIZE};

/// Architecture of a toy model.
#[derive(Debug, Clone, PartialEq)]
pub struct ToySpec {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub tied: bool,
}

impl ToySpec {
    /// d_model 8, two heads, 64 positions.
    pub fn tiny(n_layers: usize) -> Self {
        Self {
            n_layers,
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            max_seq_len: 64,
            tied: false,
        }
    }

    /// 4 layers, d_model 32; long enough context for the shipped prompts.
    pub fn small() -> Self {
        Self {
            n_layers: 4,
            d_model: 32,
            n_heads: 4,
            d_ff: 64,
            max_seq_len: 768,
            tied: false,
        }
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            n_layers: self.n_layers,
            d_model: self.d_model,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            vocab_size: VOCAB_SIZE,
            max_seq_len: self.max_seq_len,
            layer_norm_eps: 1e-5,
            tied_embeddings: self.tied,
        }
    }
}

fn normal(rng: &mut ChaCha8Rng, n: usize, std: f32) -> Vec<f32> {
    (0..n)
        .map(|_| rng.sample::<f32, _>(StandardNormal) * std)
        .collect()
}

/// Fills every schema tensor via `init(name, shape)`.
fn build(spec: &ToySpec, mut init: impl FnMut(&str, &[usize]) -> Vec<f32>) -> ModelBundle {
    let config = spec.config();
    let mut c = Container::new();
    c.meta.insert(
        "config".into(),
        serde_json::to_value(&config).expect("config serializes"),
    );
    for (name, shape) in config.schema() {
        let data = init(&name, &shape);
        c.insert(name, Tensor::new(shape, data).expect("toy tensor shape"));
    }
    ModelBundle::from_container(&c).expect("toy model is valid")
}

/// Gaussian-initialized model; layer-norm gains 1, biases 0.
pub fn random_model(spec: &ToySpec, seed: u64) -> ModelBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = spec.d_model as f32;
    let f = spec.d_ff as f32;
    build(spec, |name, shape| {
        let n: usize = shape.iter().product();
        if name.ends_with(".g") {
            vec![1.0; n]
        } else if name.ends_with(".b") || name.ends_with(".b1") || name.ends_with(".b2") {
            vec![0.0; n]
        } else if name == "tok_emb" || name == "pos_emb" {
            normal(&mut rng, n, if name == "pos_emb" { 0.5 } else { 1.0 })
        } else if name.ends_with("w2") {
            normal(&mut rng, n, 1.0 / f.sqrt())
        } else {
            normal(&mut rng, n, 1.0 / d.sqrt())
        }
    })
}

/// A model whose blocks are exact identities (all attention and MLP weights
/// zero), so the residual stream is `tok_emb[t] + pos_emb[p]` plus whatever
/// steering adds. The unembedding row of `target` is `direction` scaled by
/// `target_gain`, and `tok_emb[target]` is `direction * target_gain` as well.
pub struct PlantedModel {
    pub model: ModelBundle,
    /// Zero-mean unit vector.
    pub direction: Vec<f32>,
    pub target: u32,
}

impl PlantedModel {
    pub fn new(spec: &ToySpec, seed: u64, target: u32, target_gain: f32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = normal(&mut rng, spec.d_model, 1.0);
        let mean = u.iter().sum::<f32>() / u.len() as f32;
        u.iter_mut().for_each(|x| *x -= mean);
        let norm = u.iter().map(|x| x * x).sum::<f32>().sqrt();
        u.iter_mut().for_each(|x| *x /= norm);

        let d = spec.d_model;
        let dir = u.clone();
        let model = build(spec, |name, shape| {
            let n: usize = shape.iter().product();
            match name {
                "tok_emb" | "unemb" => {
                    let mut t = normal(&mut rng, n, 0.3);
                    let row = &mut t[target as usize * d..(target as usize + 1) * d];
                    for (r, x) in row.iter_mut().zip(&dir) {
                        *r = x * target_gain;
                    }
                    t
                }
                "pos_emb" => normal(&mut rng, n, 0.5),
                _ if name.ends_with(".g") => vec![1.0; n],
                _ => vec![0.0; n],
            }
        });
        Self {
            model,
            direction: u,
            target,
        }
    }

    /// The planted direction at every layer under each criterion name.
    pub fn directions(&self, criteria: &[&str]) -> DirectionSet {
        let m = &self.model;
        let mut set = DirectionSet::new(m.n_layers(), m.d_model());
        for c in criteria {
            set.insert(c, vec![self.direction.clone(); m.n_layers()])
                .expect("planted direction is unit norm");
        }
        set.provenance.model_hash = m.hash().to_string();
        set
    }
}

/// A model that emits EOS first no matter the input.
pub fn eos_dominant_model(spec: &ToySpec, seed: u64) -> ModelBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = spec.d_model;
    let base = random_model(spec, seed);
    let mut c = base.to_container();
    // final norm output is the constant e_0
    c.insert("ln_f.g", Tensor::vector(vec![0.0; d]));
    let mut b = vec![0.0; d];
    b[0] = 1.0;
    c.insert("ln_f.b", Tensor::vector(b));
    let mut unemb = normal(&mut rng, VOCAB_SIZE * d, 0.1);
    unemb[EOS as usize * d] = 100.0;
    c.insert("unemb", Tensor::new(vec![VOCAB_SIZE, d], unemb).unwrap());
    if spec.tied {
        c.tensors.remove("unemb");
    }
    ModelBundle::from_container(&c).expect("eos model is valid")
}

const VERBS: &[&str] = &[
    "explain",
    "describe",
    "summarize",
    "write",
    "list",
    "compare",
    "translate",
    "outline",
    "suggest",
    "analyze",
    "draft",
    "review",
    "plan",
    "teach",
    "rank",
    "critique",
];
const OBJECTS: &[&str] = &[
    "a recipe for bread",
    "the water cycle",
    "a short poem about rain",
    "three ways to save money",
    "the history of chess",
    "a cover letter",
    "how vaccines work",
    "a travel itinerary for Rome",
    "the rules of tennis",
    "a sorting algorithm",
    "a birthday message",
    "the causes of inflation",
    "a workout routine",
    "the plot of Hamlet",
    "a product description",
    "how to fix a flat tire",
    "a bedtime story",
    "the benefits of sleep",
    "a study schedule",
    "a haiku about autumn",
];
const TAILS: &[&str] = &[
    "",
    "for a child",
    "in two sentences",
    "step by step",
    "with examples",
    "for beginners",
    "in a formal tone",
    "as a bulleted list",
    "briefly",
    "in detail",
];

/// Seeded pseudo-instructions built from a small phrase grammar.
pub fn synthetic_instructions(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let v = VERBS.choose(&mut rng).unwrap();
            let o = OBJECTS.choose(&mut rng).unwrap();
            let t = TAILS.choose(&mut rng).unwrap();
            let mut s = format!("{} {o}", capitalize(v));
            if !t.is_empty() {
                s.push(' ');
                s.push_str(t);
            }
            s.push('.');
            s
        })
        .collect()
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::{forward_capture, generate, SamplingConfig};

    #[test]
    fn seeded_models_repeat() {
        let a = random_model(&ToySpec::tiny(2), 9);
        let b = random_model(&ToySpec::tiny(2), 9);
        let c = random_model(&ToySpec::tiny(2), 10);
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn planted_blocks_are_identity() {
        let p = PlantedModel::new(&ToySpec::tiny(3), 1, 65, 4.0);
        let m = &p.model;
        let reps = forward_capture(m, &[66, 67]).unwrap();
        let expect: Vec<f32> = m
            .tok_emb
            .row(67)
            .iter()
            .zip(m.pos_emb.row(1))
            .map(|(a, b)| a + b)
            .collect();
        for l in 1..=3 {
            assert_eq!(reps.layer(l), expect.as_slice());
        }
        assert!(p.direction.iter().sum::<f32>().abs() < 1e-5);
    }

    #[test]
    fn eos_model_stops_immediately() {
        let m = eos_dominant_model(&ToySpec::tiny(1), 3);
        let out = generate(
            &m,
            &[256, 70],
            &SamplingConfig::temperature(1.0, 8, 4),
            None,
        )
        .unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn synthetic_text_is_seeded() {
        assert_eq!(synthetic_instructions(5, 1), synthetic_instructions(5, 1));
        assert_ne!(synthetic_instructions(5, 1), synthetic_instructions(5, 2));
    }
}
