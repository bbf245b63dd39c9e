//! Minimal deterministic decoder-only transformer.

mod forward;
mod model;
mod sampling;
mod tokenizer;

pub use forward::{
    capture_positions, forward_capture, gelu, generate, generate_with, layer_norm, softmax,
    FinishReason, Generation, LayerRepresentations, Session, SteeringSpec,
};
pub use model::{LayerWeights, Matrix, ModelBundle, ModelConfig};
pub use sampling::{argmax, SamplingConfig, SamplingMode};
pub use tokenizer::{ByteTokenizer, BOS, EOS, SEP, VOCAB_SIZE};
